//! Single-lane roundabout topology.
//!
//! Every control zone `k` owns two segments that both end at merging point
//! `M_k`: the straight entry road `Entry(k)` and the ring arc `Curve(k)`
//! that runs from `M_{k-1}` to `M_k`. Traffic circulates in increasing zone
//! index. Exit `E_k` branches off the ring right after `M_k`, so a route
//! from origin `o` to exit `e` is `Entry(o), Curve(o+1), ..., Curve(e)`;
//! `e == o` is a full loop.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const RADIUS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("a roundabout needs at least two entries, got {0}")]
    TooFewEntries(usize),
    #[error("expected {expected} {what} lengths, got {got}")]
    LengthCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("segment lengths must be strictly positive and finite")]
    NonPositiveLength,
    #[error("ring radius {radius} m does not close a ring of circumference {circumference} m")]
    RadiusMismatch { radius: f64, circumference: f64 },
    #[error("entry/exit index {0} out of range")]
    BadIndex(usize),
    #[error("position {d} m is outside a route of length {length} m")]
    OutOfRoute { d: f64, length: f64 },
    #[error("no forward path from {from} to {to}")]
    Disconnected { from: Segment, to: Segment },
    #[error("{a} and {b} do not feed the same merging point from different roads")]
    NotConflicting { a: Segment, b: Segment },
}

/// Road role inside a control zone. The discriminants match the usual
/// `c_i` convention: 0 on the ring, 1 on an entry road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentRole {
    Curve = 0,
    Entry = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Entry(usize),
    Curve(usize),
}

impl Segment {
    /// Control zone (and merging point) this segment feeds.
    pub fn cz(self) -> usize {
        match self {
            Segment::Entry(k) | Segment::Curve(k) => k,
        }
    }

    pub fn role(self) -> SegmentRole {
        match self {
            Segment::Entry(_) => SegmentRole::Entry,
            Segment::Curve(_) => SegmentRole::Curve,
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Entry(k) => write!(f, "entry{k}"),
            Segment::Curve(k) => write!(f, "curve{k}"),
        }
    }
}

/// A point on the road network: segment plus distance from its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadPosition {
    pub segment: Segment,
    pub x: f64,
}

impl RoadPosition {
    pub fn new(segment: Segment, x: f64) -> Self {
        Self { segment, x }
    }
}

/// Serializable layout description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub num_entries: usize,
    pub entry_lengths: Vec<f64>,
    pub curve_lengths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_radius: Option<f64>,
}

impl LayoutConfig {
    pub fn symmetric(num_entries: usize, entry_length: f64, curve_length: f64) -> Self {
        Self {
            num_entries,
            entry_lengths: vec![entry_length; num_entries],
            curve_lengths: vec![curve_length; num_entries],
            ring_radius: None,
        }
    }
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self::symmetric(3, 60.0, 60.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundaboutLayout {
    entry_lengths: Vec<f64>,
    curve_lengths: Vec<f64>,
    ring_radius: f64,
    /// Arc coordinate of `M_k`, measured from `M_{N-1}` (which sits at 0).
    mp_arc: Vec<f64>,
    circumference: f64,
}

impl RoundaboutLayout {
    pub fn new(config: &LayoutConfig) -> Result<Self, GeometryError> {
        let n = config.num_entries;
        if n < 2 {
            return Err(GeometryError::TooFewEntries(n));
        }
        for (what, lengths) in [
            ("entry", &config.entry_lengths),
            ("curve", &config.curve_lengths),
        ] {
            if lengths.len() != n {
                return Err(GeometryError::LengthCount {
                    what,
                    expected: n,
                    got: lengths.len(),
                });
            }
            if lengths.iter().any(|l| !l.is_finite() || *l <= 0.0) {
                return Err(GeometryError::NonPositiveLength);
            }
        }

        let mut mp_arc = Vec::with_capacity(n);
        let mut acc = 0.0;
        for len in &config.curve_lengths {
            acc += len;
            mp_arc.push(acc);
        }
        let circumference = acc;
        let derived = circumference / (2.0 * PI);
        let ring_radius = match config.ring_radius {
            Some(r) => {
                if !r.is_finite() || r <= 0.0 || (2.0 * PI * r - circumference).abs() > RADIUS_TOLERANCE {
                    return Err(GeometryError::RadiusMismatch {
                        radius: r,
                        circumference,
                    });
                }
                r
            }
            None => derived,
        };

        Ok(Self {
            entry_lengths: config.entry_lengths.clone(),
            curve_lengths: config.curve_lengths.clone(),
            ring_radius,
            mp_arc,
            circumference,
        })
    }

    pub fn symmetric(num_entries: usize, entry_length: f64, curve_length: f64) -> Result<Self, GeometryError> {
        Self::new(&LayoutConfig::symmetric(num_entries, entry_length, curve_length))
    }

    pub fn to_config(&self) -> LayoutConfig {
        LayoutConfig {
            num_entries: self.num_entries(),
            entry_lengths: self.entry_lengths.clone(),
            curve_lengths: self.curve_lengths.clone(),
            ring_radius: Some(self.ring_radius),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.entry_lengths.len()
    }

    pub fn ring_radius(&self) -> f64 {
        self.ring_radius
    }

    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    pub fn mp_arc_position(&self, k: usize) -> f64 {
        self.mp_arc[k] % self.circumference
    }

    pub fn next_cz(&self, k: usize) -> usize {
        (k + 1) % self.num_entries()
    }

    pub fn segment_length(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Entry(k) => self.entry_lengths[k],
            Segment::Curve(k) => self.curve_lengths[k],
        }
    }

    pub fn segment_curvature(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Entry(_) => 0.0,
            Segment::Curve(_) => 1.0 / self.ring_radius,
        }
    }

    pub fn max_curvature(&self) -> f64 {
        1.0 / self.ring_radius
    }

    /// Arc coordinate where a curve segment starts.
    fn curve_start(&self, k: usize) -> f64 {
        (self.mp_arc[k] - self.curve_lengths[k]).rem_euclid(self.circumference)
    }

    /// Along-road distance from the start of `from` to the start of `to`,
    /// following traffic direction. This is the `ΔL` offset of the rear-end
    /// gap definition.
    pub fn forward_distance(&self, from: Segment, to: Segment) -> Result<f64, GeometryError> {
        if from == to {
            return Ok(0.0);
        }
        let Segment::Curve(target) = to else {
            return Err(GeometryError::Disconnected { from, to });
        };
        let target_start = self.curve_start(target);
        let (origin_arc, lead_in) = match from {
            Segment::Entry(k) => (self.mp_arc_position(k), self.entry_lengths[k]),
            Segment::Curve(k) => (self.curve_start(k), 0.0),
        };
        Ok(lead_in + (target_start - origin_arc).rem_euclid(self.circumference))
    }

    pub fn route(&self, origin: usize, exit: usize) -> Result<Route, GeometryError> {
        let n = self.num_entries();
        if origin >= n {
            return Err(GeometryError::BadIndex(origin));
        }
        if exit >= n {
            return Err(GeometryError::BadIndex(exit));
        }
        let ring_segments = (exit + n - origin - 1) % n + 1;
        let mut segments = vec![Segment::Entry(origin)];
        let mut mp_chain = vec![origin];
        for step in 1..=ring_segments {
            let k = (origin + step) % n;
            segments.push(Segment::Curve(k));
            mp_chain.push(k);
        }
        let lengths: Vec<f64> = segments.iter().map(|s| self.segment_length(*s)).collect();
        let curvatures = segments.iter().map(|s| self.segment_curvature(*s)).collect();
        let mut starts = Vec::with_capacity(lengths.len());
        let mut acc = 0.0;
        for len in &lengths {
            starts.push(acc);
            acc += len;
        }
        Ok(Route {
            origin,
            exit,
            segments,
            lengths,
            starts,
            curvatures,
            mp_chain,
            total_length: acc,
        })
    }
}

/// Ordered path of segments from an origin to an exit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub origin: usize,
    pub exit: usize,
    pub segments: Vec<Segment>,
    lengths: Vec<f64>,
    starts: Vec<f64>,
    curvatures: Vec<f64>,
    /// Merging points crossed, in order. The last one is the exit.
    pub mp_chain: Vec<usize>,
    total_length: f64,
}

pub type SharedRoute = Arc<Route>;

impl Route {
    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment(&self, index: usize) -> Segment {
        self.segments[index]
    }

    pub fn segment_length(&self, index: usize) -> f64 {
        self.lengths[index]
    }

    pub fn segment_start(&self, index: usize) -> f64 {
        self.starts[index]
    }

    pub fn is_last_segment(&self, index: usize) -> bool {
        index + 1 == self.segments.len()
    }

    /// Index of the segment containing route distance `d`, using half-open
    /// intervals `[start, end)`. `d == total_length` maps to one past the
    /// last segment (the vehicle has left through its exit).
    pub fn segment_index_at(&self, d: f64) -> Result<usize, GeometryError> {
        if !(0.0..=self.total_length).contains(&d) {
            return Err(GeometryError::OutOfRoute {
                d,
                length: self.total_length,
            });
        }
        Ok(self.starts.partition_point(|start| *start <= d) - 1 + usize::from(d == self.total_length))
    }

    /// Curvature at route distance `d`. Boundaries take the curvature of the
    /// segment being entered; at the exit that is the straight exit road.
    pub fn curvature_at(&self, d: f64) -> Result<f64, GeometryError> {
        let index = self.segment_index_at(d)?;
        Ok(self.curvatures.get(index).copied().unwrap_or(0.0))
    }

    /// Curvature for look-ahead use: distances past the exit see a straight road.
    pub fn curvature_ahead(&self, d: f64) -> f64 {
        self.curvature_at(d.clamp(0.0, self.total_length)).unwrap_or(0.0)
    }
}

/// Rear-end gap `z = x_p + ΔL - x_i` from a follower to the vehicle ahead.
pub fn gap_to_predecessor(
    layout: &RoundaboutLayout,
    follower: RoadPosition,
    leader: RoadPosition,
) -> Result<f64, GeometryError> {
    let offset = layout.forward_distance(follower.segment, leader.segment)?;
    Ok(leader.x + offset - follower.x)
}

/// Merging gap `z = (L_i - x_i) - (L_m - x_m)` between two vehicles heading
/// to the same merging point from different roads.
pub fn gap_to_merging_conflict(
    layout: &RoundaboutLayout,
    vehicle: RoadPosition,
    conflict: RoadPosition,
) -> Result<f64, GeometryError> {
    if vehicle.segment.cz() != conflict.segment.cz() || vehicle.segment.role() == conflict.segment.role() {
        return Err(GeometryError::NotConflicting {
            a: vehicle.segment,
            b: conflict.segment,
        });
    }
    let own = layout.segment_length(vehicle.segment) - vehicle.x;
    let other = layout.segment_length(conflict.segment) - conflict.x;
    Ok(own - other)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpDistance {
    pub distance: f64,
    /// The next merging point is where the vehicle leaves the roundabout.
    pub is_exit: bool,
}

pub fn remaining_to_next_mp(route: &Route, segment_index: usize, x: f64) -> MpDistance {
    MpDistance {
        distance: route.segment_length(segment_index) - x,
        is_exit: route.is_last_segment(segment_index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> RoundaboutLayout {
        RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap()
    }

    #[test]
    fn symmetric_ring_closes() {
        let l = layout();
        assert!((l.circumference() - 180.0).abs() < 1e-12);
        assert!((2.0 * PI * l.ring_radius() - 180.0).abs() < 1e-9);
        assert!((l.ring_radius() - 28.647_889_756_541_16).abs() < 1e-9);
    }

    #[test]
    fn curvature_entry_and_ring() {
        let l = layout();
        let route = l.route(0, 2).unwrap();
        assert_eq!(route.curvature_at(10.0).unwrap(), 0.0);
        let ring = route.curvature_at(90.0).unwrap();
        assert!((ring - 2.0 * PI / 180.0).abs() < 1e-12);
        assert!((ring - 0.034_906_6).abs() < 1e-7);
    }

    #[test]
    fn boundary_takes_entered_segment() {
        let l = layout();
        let route = l.route(0, 2).unwrap();
        assert_eq!(route.segment_index_at(60.0).unwrap(), 1);
        assert!(route.curvature_at(60.0).unwrap() > 0.0);
        assert_eq!(route.curvature_at(0.0).unwrap(), 0.0);
        // exit boundary: straight exit road
        assert_eq!(route.curvature_at(route.total_length()).unwrap(), 0.0);
    }

    #[test]
    fn curvature_out_of_range_is_error() {
        let route = layout().route(1, 2).unwrap();
        assert!(matches!(route.curvature_at(-0.1), Err(GeometryError::OutOfRoute { .. })));
        assert!(route.curvature_at(route.total_length() + 1e-6).is_err());
    }

    #[test]
    fn routes_cover_expected_segments() {
        let l = layout();
        let r = l.route(0, 1).unwrap();
        assert_eq!(r.segments, vec![Segment::Entry(0), Segment::Curve(1)]);
        assert_eq!(r.mp_chain, vec![0, 1]);
        assert_eq!(r.total_length(), 120.0);
        let full = l.route(2, 2).unwrap();
        assert_eq!(
            full.segments,
            vec![Segment::Entry(2), Segment::Curve(0), Segment::Curve(1), Segment::Curve(2)]
        );
        assert_eq!(full.total_length(), 240.0);
        assert!(l.route(3, 0).is_err());
    }

    #[test]
    fn route_length_is_sum_of_segments() {
        let l = RoundaboutLayout::new(&LayoutConfig {
            num_entries: 4,
            entry_lengths: vec![50.0, 60.0, 70.0, 80.0],
            curve_lengths: vec![30.0, 40.0, 50.0, 60.0],
            ring_radius: None,
        })
        .unwrap();
        for o in 0..4 {
            for e in 0..4 {
                let r = l.route(o, e).unwrap();
                let sum: f64 = r.segments.iter().map(|s| l.segment_length(*s)).sum();
                assert!((sum - r.total_length()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_segment_gap() {
        let l = layout();
        let z = gap_to_predecessor(
            &l,
            RoadPosition::new(Segment::Curve(1), 10.0),
            RoadPosition::new(Segment::Curve(1), 30.0),
        )
        .unwrap();
        assert_eq!(z, 20.0);
    }

    #[test]
    fn gap_across_segments() {
        let l = layout();
        // curve1 -> curve2: ΔL = 60
        let z = gap_to_predecessor(
            &l,
            RoadPosition::new(Segment::Curve(1), 55.0),
            RoadPosition::new(Segment::Curve(2), 5.0),
        )
        .unwrap();
        assert!((z - 10.0).abs() < 1e-12);
        // entry0 -> curve1 also starts right at M_0
        let z = gap_to_predecessor(
            &l,
            RoadPosition::new(Segment::Entry(0), 55.0),
            RoadPosition::new(Segment::Curve(1), 5.0),
        )
        .unwrap();
        assert!((z - 10.0).abs() < 1e-12);
        // two arcs ahead
        let z = gap_to_predecessor(
            &l,
            RoadPosition::new(Segment::Curve(0), 0.0),
            RoadPosition::new(Segment::Curve(2), 0.0),
        )
        .unwrap();
        assert!((z - 120.0).abs() < 1e-9);
    }

    #[test]
    fn gap_to_entry_road_is_disconnected() {
        let l = layout();
        let err = gap_to_predecessor(
            &l,
            RoadPosition::new(Segment::Curve(0), 0.0),
            RoadPosition::new(Segment::Entry(1), 0.0),
        );
        assert!(matches!(err, Err(GeometryError::Disconnected { .. })));
    }

    #[test]
    fn merging_gap_examples() {
        let l = layout();
        let z = |xi: f64, xm: f64| {
            gap_to_merging_conflict(
                &l,
                RoadPosition::new(Segment::Entry(0), xi),
                RoadPosition::new(Segment::Curve(0), xm),
            )
            .unwrap()
        };
        assert_eq!(z(20.0, 30.0), 10.0);
        assert_eq!(z(25.0, 25.0), 0.0);
        assert_eq!(z(0.0, 60.0), 60.0);
        // antisymmetric when both roads have equal length
        let swapped = gap_to_merging_conflict(
            &l,
            RoadPosition::new(Segment::Curve(0), 30.0),
            RoadPosition::new(Segment::Entry(0), 20.0),
        )
        .unwrap();
        assert_eq!(swapped, -10.0);
    }

    #[test]
    fn merging_gap_rejects_same_road() {
        let l = layout();
        let err = gap_to_merging_conflict(
            &l,
            RoadPosition::new(Segment::Entry(0), 1.0),
            RoadPosition::new(Segment::Entry(0), 2.0),
        );
        assert!(matches!(err, Err(GeometryError::NotConflicting { .. })));
        assert!(gap_to_merging_conflict(
            &l,
            RoadPosition::new(Segment::Entry(0), 1.0),
            RoadPosition::new(Segment::Curve(1), 2.0),
        )
        .is_err());
    }

    #[test]
    fn remaining_distance() {
        let r = layout().route(0, 1).unwrap();
        assert_eq!(remaining_to_next_mp(&r, 0, 10.0).distance, 50.0);
        assert_eq!(remaining_to_next_mp(&r, 0, 60.0).distance, 0.0);
        assert_eq!(remaining_to_next_mp(&r, 0, 59.5).distance, 0.5);
        assert!(!remaining_to_next_mp(&r, 0, 0.0).is_exit);
        assert!(remaining_to_next_mp(&r, 1, 0.0).is_exit);
    }

    #[test]
    fn explicit_radius_must_close_ring() {
        let mut cfg = LayoutConfig::default();
        cfg.ring_radius = Some(180.0 / (2.0 * PI));
        assert!(RoundaboutLayout::new(&cfg).is_ok());
        cfg.ring_radius = Some(30.0);
        assert!(matches!(
            RoundaboutLayout::new(&cfg),
            Err(GeometryError::RadiusMismatch { .. })
        ));
    }

    #[test]
    fn invalid_layouts() {
        assert_eq!(
            RoundaboutLayout::symmetric(1, 60.0, 60.0),
            Err(GeometryError::TooFewEntries(1))
        );
        assert_eq!(
            RoundaboutLayout::symmetric(3, 0.0, 60.0),
            Err(GeometryError::NonPositiveLength)
        );
        let cfg = LayoutConfig {
            num_entries: 3,
            entry_lengths: vec![60.0; 2],
            curve_lengths: vec![60.0; 3],
            ring_radius: None,
        };
        assert!(matches!(
            RoundaboutLayout::new(&cfg),
            Err(GeometryError::LengthCount { .. })
        ));
    }

    #[test]
    fn layout_config_json_round_trip() {
        let json = r#"{"num_entries":3,"entry_lengths":[60,60,60],"curve_lengths":[60,60,60]}"#;
        let cfg: LayoutConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, LayoutConfig::default());
    }
}
