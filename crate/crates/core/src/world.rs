//! Read-only simulation snapshot shared by sequencing, control and the
//! human driver model.

use std::sync::Arc;

use crate::geometry::{RoundaboutLayout, Segment, SegmentRole};
use crate::vehicle::{VehicleId, VehicleLimits, VehicleState};

#[derive(Debug, Clone)]
pub struct World {
    layout: Arc<RoundaboutLayout>,
    limits: VehicleLimits,
    /// Kept sorted by id.
    vehicles: Vec<VehicleState>,
    pub time: f64,
}

impl World {
    pub fn new(layout: Arc<RoundaboutLayout>, limits: VehicleLimits) -> Self {
        Self {
            layout,
            limits,
            vehicles: Vec::new(),
            time: 0.0,
        }
    }

    pub fn layout(&self) -> &RoundaboutLayout {
        &self.layout
    }

    pub fn shared_layout(&self) -> Arc<RoundaboutLayout> {
        Arc::clone(&self.layout)
    }

    pub fn limits(&self) -> &VehicleLimits {
        &self.limits
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    /// Inserts or replaces a vehicle.
    pub fn insert(&mut self, vehicle: VehicleState) {
        match self.vehicles.binary_search_by_key(&vehicle.id, |v| v.id) {
            Ok(i) => self.vehicles[i] = vehicle,
            Err(i) => self.vehicles.insert(i, vehicle),
        }
    }

    pub fn remove(&mut self, id: VehicleId) -> Option<VehicleState> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| self.vehicles.remove(i))
    }

    /// Vehicles on `segment`, front first. Equal positions order by id.
    pub fn on_segment(&self, segment: Segment) -> Vec<&VehicleState> {
        let mut out: Vec<&VehicleState> = self.vehicles.iter().filter(|v| v.segment() == segment).collect();
        out.sort_by(|a, b| b.x.total_cmp(&a.x).then(a.id.cmp(&b.id)));
        out
    }

    /// Rearmost vehicle on `segment`.
    pub fn last_on_segment(&self, segment: Segment) -> Option<&VehicleState> {
        self.on_segment(segment).last().copied()
    }

    /// Nearest vehicle ahead along `id`'s own route, with the
    /// center-to-center gap.
    pub fn physical_predecessor(&self, id: VehicleId) -> Option<(VehicleId, f64)> {
        let me = self.get(id)?;
        let route = &me.route;
        for index in me.seg_index..route.num_segments() {
            let segment = route.segment(index);
            let ahead = self
                .on_segment(segment)
                .into_iter()
                .filter(|o| o.id != id && (index > me.seg_index || ahead_of(o, me)))
                .last();
            if let Some(o) = ahead {
                let gap = route.segment_start(index) + o.x - (route.segment_start(me.seg_index) + me.x);
                return Some((o.id, gap));
            }
        }
        None
    }

    /// Members of control zone `cz`, split by road and ordered front first.
    pub fn merging_group(&self, cz: usize) -> MergingGroup {
        let collect = |segment| {
            self.on_segment(segment)
                .into_iter()
                .map(|v| GroupMember {
                    id: v.id,
                    kind: v.kind,
                    role: v.role(),
                    x: v.x,
                    v: v.v,
                    length: v.segment_length(),
                    aggressiveness: v.aggressiveness_or_zero(),
                })
                .collect()
        };
        MergingGroup {
            cz,
            curve: collect(Segment::Curve(cz)),
            entry: collect(Segment::Entry(cz)),
        }
    }
}

fn ahead_of(other: &VehicleState, me: &VehicleState) -> bool {
    other.x > me.x || (other.x == me.x && other.id < me.id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember {
    pub id: VehicleId,
    pub kind: crate::vehicle::VehicleKind,
    pub role: SegmentRole,
    pub x: f64,
    pub v: f64,
    /// Length of the member's current segment.
    pub length: f64,
    pub aggressiveness: f64,
}

impl GroupMember {
    pub fn distance_to_mp(&self) -> f64 {
        self.length - self.x
    }
}

/// Vehicles inside one control zone, each road ordered front first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergingGroup {
    pub cz: usize,
    pub curve: Vec<GroupMember>,
    pub entry: Vec<GroupMember>,
}

impl MergingGroup {
    pub fn len(&self) -> usize {
        self.curve.len() + self.entry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curve.is_empty() && self.entry.is_empty()
    }

    pub fn member(&self, id: VehicleId) -> Option<&GroupMember> {
        self.curve.iter().chain(&self.entry).find(|m| m.id == id)
    }

    pub fn road(&self, role: SegmentRole) -> &[GroupMember] {
        match role {
            SegmentRole::Curve => &self.curve,
            SegmentRole::Entry => &self.entry,
        }
    }

    pub fn ids(&self, role: SegmentRole) -> Vec<VehicleId> {
        self.road(role).iter().map(|m| m.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{hdv_effective_leader, IdmParams, VehicleKind};

    fn world() -> World {
        World::new(
            Arc::new(RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap()),
            VehicleLimits::default(),
        )
    }

    fn place(w: &mut World, id: VehicleId, kind: VehicleKind, origin: usize, exit: usize, seg: usize, x: f64, v: f64) {
        let route = Arc::new(w.layout().route(origin, exit).unwrap());
        let mut s = VehicleState::spawn(id, kind, route, 0.0, v, 0.0);
        s.seg_index = seg;
        s.x = x;
        s.d = s.route.segment_start(seg) + x;
        w.insert(s);
    }

    #[test]
    fn predecessor_same_segment() {
        let mut w = world();
        place(&mut w, 1, VehicleKind::Cav, 0, 2, 0, 10.0, 10.0);
        place(&mut w, 2, VehicleKind::Cav, 0, 2, 0, 30.0, 10.0);
        assert_eq!(w.physical_predecessor(1), Some((2, 20.0)));
        assert_eq!(w.physical_predecessor(2), None);
    }

    #[test]
    fn predecessor_next_segment() {
        let mut w = world();
        place(&mut w, 1, VehicleKind::Cav, 0, 2, 0, 55.0, 10.0);
        // vehicle from origin 1 already on the ring, on Curve(1)
        place(&mut w, 2, VehicleKind::Cav, 2, 1, 2, 5.0, 10.0);
        let (id, gap) = w.physical_predecessor(1).unwrap();
        assert_eq!(id, 2);
        assert!((gap - 10.0).abs() < 1e-12);
    }

    #[test]
    fn entry_vehicles_are_not_predecessors_of_ring_traffic() {
        let mut w = world();
        place(&mut w, 1, VehicleKind::Cav, 2, 1, 1, 10.0, 10.0);
        place(&mut w, 2, VehicleKind::Cav, 1, 2, 0, 50.0, 10.0);
        assert_eq!(w.physical_predecessor(1), None);
    }

    #[test]
    fn group_ordering() {
        let mut w = world();
        place(&mut w, 3, VehicleKind::Hdv, 2, 1, 1, 10.0, 10.0);
        place(&mut w, 1, VehicleKind::Cav, 2, 1, 1, 40.0, 10.0);
        place(&mut w, 4, VehicleKind::Cav, 0, 1, 0, 20.0, 10.0);
        let g = w.merging_group(0);
        assert_eq!(g.ids(SegmentRole::Curve), vec![1, 3]);
        assert_eq!(g.ids(SegmentRole::Entry), vec![4]);
    }

    #[test]
    fn hdv_leader_examples() {
        let p = IdmParams::default();
        let mut w = world();
        place(&mut w, 1, VehicleKind::Hdv, 0, 1, 0, 10.0, 10.0);
        assert!(hdv_effective_leader(&w, 1, &p).is_none());

        // conflicting ring vehicle 20 m from the merging point
        place(&mut w, 2, VehicleKind::Cav, 2, 1, 1, 40.0, 10.0);
        let l = hdv_effective_leader(&w, 1, &p).unwrap();
        assert_eq!(l.id, Some(2));
        assert!(l.is_virtual);
        assert!((l.gap - 30.0).abs() < 1e-12);

        // closer physical leader wins
        place(&mut w, 3, VehicleKind::Hdv, 0, 1, 0, 25.0, 8.0);
        let l = hdv_effective_leader(&w, 1, &p).unwrap();
        assert_eq!(l.id, Some(3));
        assert!(!l.is_virtual);
        assert!((l.gap - 15.0).abs() < 1e-12);
    }

    #[test]
    fn ring_hdv_keeps_priority_over_late_entry() {
        let p = IdmParams::default();
        let mut w = world();
        place(&mut w, 1, VehicleKind::Hdv, 2, 1, 1, 30.0, 10.0);
        place(&mut w, 2, VehicleKind::Hdv, 0, 1, 0, 35.0, 10.0);
        // the entry driver arrives later and yields, the ring driver does not
        assert!(hdv_effective_leader(&w, 1, &p).is_none());
        assert_eq!(hdv_effective_leader(&w, 2, &p).unwrap().id, Some(1));
    }

    #[test]
    fn hdv_holds_at_line_when_conflict_arrives_first() {
        let p = IdmParams::default();
        let mut w = world();
        place(&mut w, 1, VehicleKind::Hdv, 0, 1, 0, 50.0, 1.0);
        place(&mut w, 2, VehicleKind::Cav, 2, 1, 1, 30.0, 15.0);
        let l = hdv_effective_leader(&w, 1, &p).unwrap();
        assert!(l.is_virtual);
        assert_eq!(l.speed, 0.0);
        assert!((l.gap - 10.0).abs() < 1e-12);
    }
}
