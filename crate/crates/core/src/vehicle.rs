//! Vehicle state, the shared double-integrator plant and the IDM driver
//! used for human-driven vehicles.

use serde::{Deserialize, Serialize};

use crate::geometry::{RoadPosition, Segment, SegmentRole, SharedRoute};
use crate::world::World;

pub type VehicleId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VehicleKind {
    Cav,
    Hdv,
}

impl VehicleKind {
    pub fn label(self) -> &'static str {
        match self {
            VehicleKind::Cav => "CAV",
            VehicleKind::Hdv => "HDV",
        }
    }
}

/// Speed, input and safety limits shared by all vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Reaction time φ used by the speed-dependent gaps.
    pub phi: f64,
    /// Center-to-center standstill offset δ.
    pub delta: f64,
    /// Vehicle height, for the rollover condition.
    pub height: f64,
    pub half_width: f64,
    pub gravity: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 20.0,
            u_min: -4.0,
            u_max: 4.0,
            phi: 1.8,
            delta: 0.0,
            height: 1.5,
            half_width: 0.9,
            gravity: 9.81,
        }
    }
}

impl VehicleLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_max > self.v_min && self.v_min >= 0.0) {
            return Err("need v_max > v_min >= 0".into());
        }
        if !(self.u_max > 0.0 && self.u_min < 0.0) {
            return Err("need u_max > 0 > u_min".into());
        }
        if !(self.phi > 0.0 && self.height > 0.0 && self.half_width > 0.0 && self.gravity > 0.0) {
            return Err("phi, height, half_width and gravity must be positive".into());
        }
        if self.delta < 0.0 {
            return Err("delta must be non-negative".into());
        }
        Ok(())
    }

    /// Largest control magnitude, used to normalize the energy term.
    pub fn u_scale_sq(&self) -> f64 {
        self.u_max.powi(2).max(self.u_min.powi(2))
    }

    pub fn clamp_speed(&self, v: f64) -> f64 {
        v.clamp(self.v_min, self.v_max)
    }

    pub fn clamp_input(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    #[serde(skip)]
    pub route: SharedRoute,
    /// Index of the current segment within `route`.
    pub seg_index: usize,
    /// Distance from the start of the current segment.
    pub x: f64,
    pub v: f64,
    /// Distance travelled since the route origin.
    pub d: f64,
    /// Time the vehicle entered the roundabout.
    pub t0: f64,
    /// Aggressiveness in [-1, 1]; only human drivers carry one.
    pub aggressiveness: Option<f64>,
}

impl VehicleState {
    pub fn spawn(
        id: VehicleId,
        kind: VehicleKind,
        route: SharedRoute,
        t0: f64,
        speed: f64,
        aggressiveness: f64,
    ) -> Self {
        Self {
            id,
            kind,
            route,
            seg_index: 0,
            x: 0.0,
            v: speed,
            d: 0.0,
            t0,
            aggressiveness: (kind == VehicleKind::Hdv).then_some(aggressiveness.clamp(-1.0, 1.0)),
        }
    }

    pub fn segment(&self) -> Segment {
        self.route.segment(self.seg_index)
    }

    pub fn role(&self) -> SegmentRole {
        self.segment().role()
    }

    pub fn cz(&self) -> usize {
        self.segment().cz()
    }

    pub fn position(&self) -> RoadPosition {
        RoadPosition::new(self.segment(), self.x)
    }

    pub fn segment_length(&self) -> f64 {
        self.route.segment_length(self.seg_index)
    }

    /// `L_i - x_i`: distance left to the next merging point.
    pub fn distance_to_mp(&self) -> f64 {
        self.segment_length() - self.x
    }

    /// True when the next merging point is where this vehicle leaves.
    pub fn in_final_cz(&self) -> bool {
        self.route.is_last_segment(self.seg_index)
    }

    pub fn curvature(&self) -> f64 {
        self.route.curvature_ahead(self.d)
    }

    pub fn aggressiveness_or_zero(&self) -> f64 {
        self.aggressiveness.unwrap_or(0.0)
    }
}

/// A merging point passed during one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpCrossing {
    pub mp: usize,
    /// Road the vehicle arrived on.
    pub role: SegmentRole,
    /// Seconds into the step at which the crossing happened.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    pub applied_u: f64,
    pub speed_clamped: bool,
    pub crossings: Vec<MpCrossing>,
    pub exited: bool,
}

/// Forward-Euler step with zero-order-hold input: `x' = x + T v`,
/// `v' = v + T u`. Overflow past a segment end carries into the next one.
pub fn step_dynamics(state: &VehicleState, u: f64, dt: f64, limits: &VehicleLimits) -> StepOutcome {
    let applied_u = limits.clamp_input(u);
    let raw_v = state.v + dt * applied_u;
    let v = limits.clamp_speed(raw_v);
    let travel = dt * state.v;

    let mut next = state.clone();
    next.v = v;
    next.d = state.d + travel;
    next.x = state.x + travel;

    let mut crossings = Vec::new();
    let mut to_boundary = state.segment_length() - state.x;
    let mut exited = false;
    while next.x >= next.segment_length() {
        let len = next.segment_length();
        let segment = next.segment();
        let offset = if state.v > 0.0 { to_boundary / state.v } else { 0.0 };
        crossings.push(MpCrossing {
            mp: segment.cz(),
            role: segment.role(),
            offset,
        });
        next.x -= len;
        if next.route.is_last_segment(next.seg_index) {
            exited = true;
            break;
        }
        next.seg_index += 1;
        to_boundary += next.segment_length();
    }

    StepOutcome {
        state: next,
        applied_u,
        speed_clamped: raw_v != v,
        crossings,
        exited,
    }
}

/// Car-following parameters for human drivers, plus the gap-acceptance
/// rule they use at merging points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub exponent: f64,
    /// Relative change of the desired speed per unit aggressiveness.
    pub speed_aggressiveness: f64,
    /// Time margin a driver needs to merge ahead of a conflicting vehicle.
    pub accepted_gap: f64,
    /// Relative shrink of `accepted_gap` per unit aggressiveness.
    pub gap_aggressiveness: f64,
    /// Speed floor for arrival-time estimates at merging points.
    pub crawl_speed: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 2.0,
            comfortable_decel: 3.0,
            exponent: 4.0,
            speed_aggressiveness: 0.1,
            accepted_gap: 1.5,
            gap_aggressiveness: 0.3,
            crawl_speed: 1.0,
        }
    }
}

impl IdmParams {
    pub fn desired_speed(&self, limits: &VehicleLimits, aggressiveness: f64) -> f64 {
        (limits.v_max * (1.0 + self.speed_aggressiveness * aggressiveness)).min(limits.v_max)
    }

    pub fn accepted_gap_for(&self, aggressiveness: f64) -> f64 {
        self.accepted_gap * (1.0 - self.gap_aggressiveness * aggressiveness)
    }

    fn arrival_time(&self, distance: f64, speed: f64) -> f64 {
        distance.max(0.0) / speed.max(self.crawl_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmResponse {
    pub accel: f64,
    /// Leader gap was non-positive.
    pub overlap: bool,
}

/// IDM acceleration `a [1 - (v/v0)^δ - (s*/s)^2]`, clamped to the input
/// limits. `leader` is `(gap, leader_speed)`; `None` means free road.
pub fn idm_acceleration(
    speed: f64,
    desired_speed: f64,
    leader: Option<(f64, f64)>,
    params: &IdmParams,
    limits: &VehicleLimits,
) -> IdmResponse {
    let free = 1.0 - (speed / desired_speed).powf(params.exponent);
    let accel = match leader {
        None => params.max_accel * free,
        Some((gap, _)) if gap <= 0.0 => {
            return IdmResponse {
                accel: limits.u_min,
                overlap: true,
            }
        }
        Some((gap, leader_speed)) => {
            let closing = speed - leader_speed;
            let desired_gap = params.min_gap
                + (speed * params.time_headway
                    + speed * closing / (2.0 * (params.max_accel * params.comfortable_decel).sqrt()))
                .max(0.0);
            params.max_accel * (free - (desired_gap / gap).powi(2))
        }
    };
    IdmResponse {
        accel: limits.clamp_input(accel),
        overlap: false,
    }
}

/// Leader a human driver reacts to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub id: Option<VehicleId>,
    pub gap: f64,
    pub speed: f64,
    /// Conflicting vehicle at the next merging point projected onto the lane.
    pub is_virtual: bool,
}

/// The more constraining of the physical predecessor and a virtual leader
/// derived from gap acceptance at the next merging point.
///
/// On an entry road the driver yields to a conflicting ring vehicle unless
/// it reaches the merging point at least `accepted_gap` earlier. On the ring
/// the driver only yields to entry vehicles that are that far ahead in
/// time, so exactly one of two equally aggressive drivers gives way.
pub fn hdv_effective_leader(world: &World, id: VehicleId, params: &IdmParams) -> Option<Leader> {
    let me = world.get(id)?;
    let physical = world.physical_predecessor(id).map(|(pid, gap)| Leader {
        id: Some(pid),
        gap,
        speed: world.get(pid).map_or(0.0, |p| p.v),
        is_virtual: false,
    });

    let my_distance = me.distance_to_mp();
    let my_arrival = params.arrival_time(my_distance, me.v);
    let margin = params.accepted_gap_for(me.aggressiveness_or_zero());
    let other_segment = match me.segment() {
        Segment::Entry(k) => Segment::Curve(k),
        Segment::Curve(k) => Segment::Entry(k),
    };

    let mut best = physical;
    for other in world.on_segment(other_segment) {
        let other_distance = other.distance_to_mp();
        let other_arrival = params.arrival_time(other_distance, other.v);
        let yields = match me.role() {
            SegmentRole::Entry => other_arrival < my_arrival + margin,
            SegmentRole::Curve => other_arrival + margin < my_arrival,
        };
        if !yields {
            continue;
        }
        let projected = my_distance - other_distance;
        let candidate = if projected > 0.0 {
            Leader {
                id: Some(other.id),
                gap: projected,
                speed: other.v,
                is_virtual: true,
            }
        } else {
            // conflicting vehicle is behind us but arrives first: hold at the line
            Leader {
                id: Some(other.id),
                gap: my_distance.max(1e-3),
                speed: 0.0,
                is_virtual: true,
            }
        };
        if best.map_or(true, |b| candidate.gap < b.gap) {
            best = Some(candidate);
        }
    }
    best
}

/// Control a human driver applies this step.
pub fn hdv_control(world: &World, id: VehicleId, params: &IdmParams) -> IdmResponse {
    let Some(me) = world.get(id) else {
        return IdmResponse {
            accel: 0.0,
            overlap: false,
        };
    };
    let limits = world.limits();
    let leader = hdv_effective_leader(world, id, params);
    let response = idm_acceleration(
        me.v,
        params.desired_speed(limits, me.aggressiveness_or_zero()),
        leader.map(|l| (l.gap, l.speed)),
        params,
        limits,
    );
    IdmResponse {
        overlap: response.overlap && leader.is_some_and(|l| !l.is_virtual),
        ..response
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::RoundaboutLayout;

    fn layout() -> Arc<RoundaboutLayout> {
        Arc::new(RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap())
    }

    fn vehicle(id: VehicleId, kind: VehicleKind, origin: usize, exit: usize) -> VehicleState {
        let route = Arc::new(layout().route(origin, exit).unwrap());
        VehicleState::spawn(id, kind, route, 0.0, 10.0, 0.0)
    }

    #[test]
    fn constant_velocity_step() {
        let s = vehicle(0, VehicleKind::Cav, 0, 1);
        let out = step_dynamics(&s, 0.0, 0.1, &VehicleLimits::default());
        assert!((out.state.x - 1.0).abs() < 1e-12);
        assert_eq!(out.state.v, 10.0);
        assert!(out.crossings.is_empty());
    }

    #[test]
    fn accelerating_step() {
        let s = vehicle(0, VehicleKind::Cav, 0, 1);
        let out = step_dynamics(&s, 4.0, 0.1, &VehicleLimits::default());
        assert!((out.state.x - 1.0).abs() < 1e-12);
        assert!((out.state.v - 10.4).abs() < 1e-12);
    }

    #[test]
    fn overflow_carries_into_next_segment() {
        let mut s = vehicle(0, VehicleKind::Cav, 0, 1);
        s.x = 59.95;
        s.d = 59.95;
        let out = step_dynamics(&s, 0.0, 0.1, &VehicleLimits::default());
        assert_eq!(out.state.seg_index, 1);
        assert_eq!(out.state.segment(), Segment::Curve(1));
        assert!((out.state.x - 0.95).abs() < 1e-9);
        assert_eq!(out.crossings.len(), 1);
        assert_eq!(out.crossings[0].mp, 0);
        assert_eq!(out.crossings[0].role, SegmentRole::Entry);
        assert!((out.crossings[0].offset - 0.005).abs() < 1e-9);
        assert!(!out.exited);
    }

    #[test]
    fn leaving_through_exit() {
        let mut s = vehicle(0, VehicleKind::Cav, 0, 1);
        s.seg_index = 1;
        s.x = 59.5;
        s.d = 119.5;
        let out = step_dynamics(&s, 0.0, 0.1, &VehicleLimits::default());
        assert!(out.exited);
        assert_eq!(out.crossings[0].mp, 1);
        assert_eq!(out.crossings[0].role, SegmentRole::Curve);
    }

    #[test]
    fn input_and_speed_clamps() {
        let limits = VehicleLimits::default();
        let mut s = vehicle(0, VehicleKind::Cav, 0, 1);
        s.v = 19.9;
        let out = step_dynamics(&s, 10.0, 0.1, &limits);
        assert_eq!(out.applied_u, 4.0);
        assert_eq!(out.state.v, 20.0);
        assert!(out.speed_clamped);
        s.v = 0.1;
        let out = step_dynamics(&s, -4.0, 0.1, &limits);
        assert_eq!(out.state.v, 0.0);
        assert!(out.speed_clamped);
    }

    #[test]
    fn distance_consistency_over_many_steps() {
        let limits = VehicleLimits::default();
        let mut s = vehicle(0, VehicleKind::Cav, 1, 1);
        for step in 0..300 {
            let u = if step % 50 < 25 { 1.0 } else { -1.0 };
            let out = step_dynamics(&s, u, 0.1, &limits);
            if out.exited {
                break;
            }
            s = out.state;
            let completed = s.route.segment_start(s.seg_index);
            assert!((s.d - s.x - completed).abs() < 1e-9);
            assert!(s.x >= 0.0 && s.x <= s.segment_length());
        }
    }

    #[test]
    fn idm_free_flow_equilibrium() {
        let p = IdmParams::default();
        let r = idm_acceleration(15.0, 15.0, None, &p, &VehicleLimits::default());
        assert_eq!(r.accel, 0.0);
    }

    #[test]
    fn idm_standstill_equilibrium() {
        let p = IdmParams::default();
        let r = idm_acceleration(0.0, 15.0, Some((p.min_gap, 0.0)), &p, &VehicleLimits::default());
        assert!(r.accel.abs() < 1e-12);
    }

    #[test]
    fn idm_hand_computed() {
        let p = IdmParams::default();
        let r = idm_acceleration(10.0, 15.0, Some((30.0, 10.0)), &p, &VehicleLimits::default());
        // hand evaluation: s* = 2 + 15 = 17
        let expected = 2.0 * (1.0 - (10.0f64 / 15.0).powi(4) - (17.0f64 / 30.0).powi(2));
        assert!((r.accel - expected).abs() < 1e-12);
        assert!((r.accel - 0.963).abs() < 1e-3);
    }

    #[test]
    fn idm_overlap_brakes() {
        let p = IdmParams::default();
        let limits = VehicleLimits::default();
        let r = idm_acceleration(10.0, 15.0, Some((0.0, 5.0)), &p, &limits);
        assert_eq!(r.accel, limits.u_min);
        assert!(r.overlap);
    }

    #[test]
    fn idm_desired_speed_capped() {
        let p = IdmParams::default();
        let limits = VehicleLimits::default();
        assert_eq!(p.desired_speed(&limits, 0.0), 20.0);
        assert_eq!(p.desired_speed(&limits, 1.0), 20.0);
        assert!((p.desired_speed(&limits, -1.0) - 18.0).abs() < 1e-12);
        assert!(p.accepted_gap_for(1.0) < p.accepted_gap_for(0.0));
    }

    proptest::proptest! {
        #[test]
        fn idm_bounded_and_monotone(
            v in 0.0f64..20.0,
            gap in 0.1f64..200.0,
            lead in 0.0f64..20.0,
            extra_gap in 0.0f64..20.0,
            extra_lead in 0.0f64..5.0,
        ) {
            let p = IdmParams::default();
            let limits = VehicleLimits::default();
            let base = idm_acceleration(v, 20.0, Some((gap, lead)), &p, &limits).accel;
            proptest::prop_assert!(base >= limits.u_min && base <= limits.u_max);
            let wider = idm_acceleration(v, 20.0, Some((gap + extra_gap, lead)), &p, &limits).accel;
            proptest::prop_assert!(wider >= base - 1e-12);
            // faster leader means lower closing speed
            let faster = idm_acceleration(v, 20.0, Some((gap, lead + extra_lead)), &p, &limits).accel;
            proptest::prop_assert!(faster >= base - 1e-12);
        }
    }
}
