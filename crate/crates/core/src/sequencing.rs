//! Merging-order enumeration, the safe-sequence filter and predecessor
//! assignment for one control zone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Segment, SegmentRole};
use crate::vehicle::{VehicleId, VehicleKind};
use crate::world::{GroupMember, MergingGroup, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafePolicyParams {
    /// Baseline distance threshold for an average driver.
    pub delta_j: f64,
    /// Sensitivity of the threshold to aggressiveness.
    pub eta: f64,
}

impl Default for SafePolicyParams {
    fn default() -> Self {
        Self {
            delta_j: 10.0,
            eta: 5.0,
        }
    }
}

impl SafePolicyParams {
    /// `g(a) = δ_j + η a³`
    pub fn threshold(&self, aggressiveness: f64) -> f64 {
        self.delta_j + self.eta * aggressiveness.powi(3)
    }
}

/// Which vehicles get to merge ahead of which.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Safe sequencing: a CAV may only lead a cross-road HDV with enough room.
    Ss,
    /// Baseline: entry CAVs always yield to ring HDVs.
    Bs,
    /// No CAVs at all.
    Hdv,
}

impl Policy {
    pub fn label(self) -> &'static str {
        match self {
            Policy::Ss => "ss",
            Policy::Bs => "bs",
            Policy::Hdv => "hdv",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(Policy::Ss),
            "bs" => Ok(Policy::Bs),
            "hdv" | "hdv-only" => Ok(Policy::Hdv),
            other => Err(format!("unknown policy '{other}' (expected ss, bs or hdv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Assignment {
    pub ip: Option<VehicleId>,
    pub im: Option<VehicleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sequence {
    pub cz: usize,
    pub order: Vec<VehicleId>,
    pub assignments: BTreeMap<VehicleId, Assignment>,
}

/// All interleavings of the two roads that keep each road's order.
/// Curve vehicles are placed first when branching, so the first result is
/// always every curve vehicle followed by every entry vehicle.
pub fn enumerate_feasible(curve: &[VehicleId], entry: &[VehicleId]) -> Vec<Vec<VehicleId>> {
    fn go(curve: &[VehicleId], entry: &[VehicleId], prefix: &mut Vec<VehicleId>, out: &mut Vec<Vec<VehicleId>>) {
        if curve.is_empty() && entry.is_empty() {
            out.push(prefix.clone());
            return;
        }
        if let Some((&head, rest)) = curve.split_first() {
            prefix.push(head);
            go(rest, entry, prefix, out);
            prefix.pop();
        }
        if let Some((&head, rest)) = entry.split_first() {
            prefix.push(head);
            go(curve, rest, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(curve, entry, &mut Vec::with_capacity(curve.len() + entry.len()), &mut out);
    out
}

/// `n choose k`, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Groups with more interleavings than this are searched locally instead
/// of enumerated.
pub const FULL_ENUMERATION_LIMIT: u64 = 4096;

/// A complete order of `group` that keeps the relative order of `previous`
/// where it can and otherwise lets the vehicle closer to the merging point
/// go first.
pub fn base_order(group: &MergingGroup, previous: &[VehicleId]) -> Vec<VehicleId> {
    let rank: BTreeMap<VehicleId, usize> = previous.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let (mut c, mut e) = (0, 0);
    let mut out = Vec::with_capacity(group.len());
    while c < group.curve.len() || e < group.entry.len() {
        let take_curve = match (group.curve.get(c), group.entry.get(e)) {
            (Some(_), None) => true,
            (None, _) => false,
            (Some(a), Some(b)) => match (rank.get(&a.id), rank.get(&b.id)) {
                (Some(ra), Some(rb)) => ra < rb,
                _ => a.distance_to_mp() <= b.distance_to_mp(),
            },
        };
        if take_curve {
            out.push(group.curve[c].id);
            c += 1;
        } else {
            out.push(group.entry[e].id);
            e += 1;
        }
    }
    out
}

/// Up to `cap` road-order-preserving orders nearest to `base` in swap
/// distance, found breadth-first over swaps of adjacent vehicles from
/// different roads. `base` comes first.
pub fn neighborhood_orders(base: &[VehicleId], group: &MergingGroup, cap: usize) -> Vec<Vec<VehicleId>> {
    let mut seen: std::collections::BTreeSet<Vec<VehicleId>> = std::collections::BTreeSet::new();
    let mut queue = std::collections::VecDeque::from([base.to_vec()]);
    seen.insert(base.to_vec());
    let mut out = Vec::new();
    while let Some(order) = queue.pop_front() {
        out.push(order.clone());
        if out.len() >= cap {
            break;
        }
        for k in 0..order.len().saturating_sub(1) {
            if role_of(group, order[k]) == role_of(group, order[k + 1]) {
                continue;
            }
            let mut next = order.clone();
            next.swap(k, k + 1);
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    out
}

/// Whether CAV `i` can be ordered directly ahead of HDV `j` from the other
/// road without influencing it.
pub fn merge_ahead_permitted(i: &GroupMember, j: &GroupMember, phi: f64, params: &SafePolicyParams) -> bool {
    let z_ji = j.distance_to_mp() - i.distance_to_mp();
    z_ji - phi * (j.v - i.v * i.x / i.length) >= params.threshold(j.aggressiveness)
}

fn role_of(group: &MergingGroup, id: VehicleId) -> Option<SegmentRole> {
    group.member(id).map(|m| m.role)
}

/// First vehicle after position `pos` in `order` that comes from the other road.
fn next_cross(order: &[VehicleId], pos: usize, group: &MergingGroup) -> Option<VehicleId> {
    let role = role_of(group, order[pos])?;
    order[pos + 1..].iter().copied().find(|&id| role_of(group, id) != Some(role))
}

/// CAV-ahead-of-HDV placements in `order` that fail the distance test.
pub fn ss_violations(order: &[VehicleId], group: &MergingGroup, phi: f64, params: &SafePolicyParams) -> usize {
    let mut count = 0;
    for (pos, &id) in order.iter().enumerate() {
        let Some(i) = group.member(id) else { continue };
        if i.kind != VehicleKind::Cav {
            continue;
        }
        let Some(j) = next_cross(order, pos, group).and_then(|j| group.member(j)) else {
            continue;
        };
        if j.kind == VehicleKind::Hdv && !merge_ahead_permitted(i, j, phi, params) {
            count += 1;
        }
    }
    count
}

/// Entry CAVs ordered ahead of curve HDVs.
pub fn bs_violations(order: &[VehicleId], group: &MergingGroup) -> usize {
    let mut count = 0;
    for (pos, &id) in order.iter().enumerate() {
        let Some(i) = group.member(id) else { continue };
        if i.kind != VehicleKind::Cav || i.role != SegmentRole::Entry {
            continue;
        }
        count += order[pos + 1..]
            .iter()
            .filter_map(|&j| group.member(j))
            .filter(|j| j.kind == VehicleKind::Hdv && j.role == SegmentRole::Curve)
            .count();
    }
    count
}

/// Removes every order that places a CAV directly ahead of an HDV from the
/// other road when the HDV is too close to ignore. The HDV is the first
/// cross-road vehicle behind the CAV, i.e. the one that would merge right
/// after it.
pub fn filter_safe(
    sequences: &[Vec<VehicleId>],
    group: &MergingGroup,
    phi: f64,
    params: &SafePolicyParams,
) -> Vec<Vec<VehicleId>> {
    sequences
        .iter()
        .filter(|order| ss_violations(order, group, phi, params) == 0)
        .cloned()
        .collect()
}

/// Keeps only orders where every entry CAV is behind every curve HDV.
pub fn filter_baseline(sequences: &[Vec<VehicleId>], group: &MergingGroup) -> Vec<Vec<VehicleId>> {
    sequences
        .iter()
        .filter(|order| bs_violations(order, group) == 0)
        .cloned()
        .collect()
}

/// Policy-dependent candidate set. When no order passes the filter, the
/// orders with the fewest violations are returned instead, so the result
/// is never empty.
pub fn filter_for_policy(
    policy: Policy,
    sequences: &[Vec<VehicleId>],
    group: &MergingGroup,
    phi: f64,
    params: &SafePolicyParams,
) -> FilterOutcome {
    let score = |order: &Vec<VehicleId>| match policy {
        Policy::Ss => ss_violations(order, group, phi, params),
        Policy::Bs => bs_violations(order, group),
        Policy::Hdv => 0,
    };
    let scores: Vec<usize> = sequences.iter().map(score).collect();
    let best = scores.iter().copied().min().unwrap_or(0);
    FilterOutcome {
        candidates: sequences
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == best)
            .map(|(o, _)| o.clone())
            .collect(),
        relaxed: best > 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub candidates: Vec<Vec<VehicleId>>,
    /// No order satisfied the policy; these are the least violating ones.
    pub relaxed: bool,
}

/// Number of vehicle pairs ordered differently in `a` and `b`. Vehicles
/// missing from `b` are ignored.
pub fn swap_distance(a: &[VehicleId], b: &[VehicleId]) -> usize {
    let rank: BTreeMap<VehicleId, usize> = b.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let ranks: Vec<usize> = a.iter().filter_map(|id| rank.get(id).copied()).collect();
    let mut count = 0;
    for i in 0..ranks.len() {
        for j in i + 1..ranks.len() {
            if ranks[i] > ranks[j] {
                count += 1;
            }
        }
    }
    count
}

/// Keeps at most `cap` candidates, preferring those closest to `current`.
/// Enumeration order is preserved among the survivors.
pub fn prune_candidates(candidates: Vec<Vec<VehicleId>>, current: &[VehicleId], cap: usize) -> Vec<Vec<VehicleId>> {
    if candidates.len() <= cap {
        return candidates;
    }
    let mut ranked: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(idx, c)| (swap_distance(c, current), idx))
        .collect();
    ranked.sort();
    let mut keep: Vec<usize> = ranked.into_iter().take(cap).map(|(_, idx)| idx).collect();
    keep.sort_unstable();
    let mut slots: Vec<Option<Vec<VehicleId>>> = candidates.into_iter().map(Some).collect();
    keep.into_iter().filter_map(|idx| slots[idx].take()).collect()
}

/// Derives `i_p` and `i_m` for every member of `order`.
pub fn assign_ip_im(order: &[VehicleId], group: &MergingGroup, world: &World) -> Sequence {
    let n = world.layout().num_entries();
    let mut assignments = BTreeMap::new();
    let mut last_by_role: BTreeMap<SegmentRole, VehicleId> = BTreeMap::new();
    let mut nearest_other: BTreeMap<SegmentRole, VehicleId> = BTreeMap::new();

    for &id in order {
        let Some(member) = group.member(id) else { continue };
        let role = member.role;
        let im = nearest_other.get(&role).copied();
        let ip = match last_by_role.get(&role) {
            Some(&prev) => Some(prev),
            None => {
                let final_cz = world.get(id).is_some_and(|v| v.in_final_cz());
                if final_cz {
                    None
                } else {
                    (1..n).find_map(|step| {
                        world
                            .last_on_segment(Segment::Curve((group.cz + step) % n))
                            .map(|v| v.id)
                    })
                }
            }
        };
        assignments.insert(id, Assignment { ip, im });
        last_by_role.insert(role, id);
        let other = match role {
            SegmentRole::Curve => SegmentRole::Entry,
            SegmentRole::Entry => SegmentRole::Curve,
        };
        nearest_other.insert(other, id);
    }

    Sequence {
        cz: group.cz,
        order: order.to_vec(),
        assignments,
    }
}

/// Result of scoring one candidate.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    /// `f64::INFINITY` when some CAV could not be planned.
    pub cost: f64,
    pub payload: T,
}

#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub index: usize,
    pub cost: f64,
    pub all_infeasible: bool,
    pub evaluations: Vec<Evaluation<T>>,
}

/// Lowest-cost candidate; ties go to the earliest. With every candidate
/// infeasible the first one is returned and flagged.
pub fn select_optimal<T>(evaluations: Vec<Evaluation<T>>) -> Selection<T> {
    assert!(!evaluations.is_empty(), "select_optimal needs at least one candidate");
    let mut index = 0;
    for (k, e) in evaluations.iter().enumerate() {
        if e.cost < evaluations[index].cost {
            index = k;
        }
    }
    let cost = evaluations[index].cost;
    Selection {
        index,
        cost,
        all_infeasible: !cost.is_finite(),
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use super::*;
    use crate::geometry::RoundaboutLayout;
    use crate::vehicle::{VehicleLimits, VehicleState};

    fn member(id: VehicleId, kind: VehicleKind, role: SegmentRole, x: f64, v: f64) -> GroupMember {
        GroupMember {
            id,
            kind,
            role,
            x,
            v,
            length: 60.0,
            aggressiveness: 0.0,
        }
    }

    fn brute_force(curve: &[VehicleId], entry: &[VehicleId]) -> BTreeSet<Vec<VehicleId>> {
        fn perms(items: &[VehicleId]) -> Vec<Vec<VehicleId>> {
            if items.is_empty() {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.to_vec();
                let head = rest.remove(i);
                for mut p in perms(&rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let all: Vec<VehicleId> = curve.iter().chain(entry).copied().collect();
        perms(&all)
            .into_iter()
            .filter(|p| {
                let keep = |road: &[VehicleId]| {
                    let sub: Vec<VehicleId> = p.iter().copied().filter(|id| road.contains(id)).collect();
                    sub == road
                };
                keep(curve) && keep(entry)
            })
            .collect()
    }

    #[test]
    fn worked_example_enumeration() {
        let got: BTreeSet<_> = enumerate_feasible(&[0, 1], &[4]).into_iter().collect();
        let want: BTreeSet<_> = [vec![4, 0, 1], vec![0, 4, 1], vec![0, 1, 4]].into_iter().collect();
        assert_eq!(got, want);
        assert_eq!(enumerate_feasible(&[0, 1], &[4])[0], vec![0, 1, 4]);
    }

    #[test]
    fn trivial_enumerations() {
        assert_eq!(enumerate_feasible(&[], &[7]), vec![vec![7]]);
        assert_eq!(enumerate_feasible(&[], &[]), vec![Vec::<VehicleId>::new()]);
    }

    #[test]
    fn counts_match_binomial_and_brute_force() {
        for n0 in 0..=4usize {
            for n1 in 0..=(6 - n0) {
                let curve: Vec<_> = (0..n0).collect();
                let entry: Vec<_> = (10..10 + n1).collect();
                let got = enumerate_feasible(&curve, &entry);
                assert_eq!(got.len() as u64, binomial((n0 + n1) as u64, n0 as u64));
                let set: BTreeSet<_> = got.into_iter().collect();
                assert_eq!(set, brute_force(&curve, &entry));
            }
        }
        assert_eq!(enumerate_feasible(&[0, 1, 2], &[3, 4]).len(), 10);
    }

    #[test]
    fn neighborhood_is_nearest_first() {
        let group = MergingGroup {
            cz: 0,
            curve: (0..3).map(|i| member(i, VehicleKind::Cav, SegmentRole::Curve, 50.0 - 10.0 * i as f64, 8.0)).collect(),
            entry: (10..13).map(|i| member(i, VehicleKind::Cav, SegmentRole::Entry, 45.0 - 10.0 * (i - 10) as f64, 8.0)).collect(),
        };
        let base = base_order(&group, &[]);
        assert_eq!(base, vec![0, 10, 1, 11, 2, 12]);
        let all = enumerate_feasible(&[0, 1, 2], &[10, 11, 12]);
        let near = neighborhood_orders(&base, &group, 8);
        assert_eq!(near[0], base);
        assert_eq!(near.len(), 8);
        let worst = near.iter().map(|o| swap_distance(o, &base)).max().unwrap();
        let closer = all.iter().filter(|o| swap_distance(o, &base) < worst).count();
        // every strictly closer order is included
        assert!(near.iter().filter(|o| swap_distance(o, &base) < worst).count() == closer);
        for o in &near {
            assert!(all.contains(o));
        }
        // the whole space is reached without a cap
        assert_eq!(neighborhood_orders(&base, &group, usize::MAX).len(), all.len());
        // previous ranks win over distance
        assert_eq!(base_order(&group, &[10, 0, 11, 1, 12, 2]), vec![10, 0, 11, 1, 12, 2]);
    }

    #[test]
    fn binomial_saturates() {
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
        assert_eq!(binomial(200, 100), u64::MAX);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(10, 10), 1);
        assert_eq!(binomial(10, 5), 252);
    }

    #[test]
    fn eq10_worked_value() {
        let p = SafePolicyParams::default();
        let i = member(4, VehicleKind::Cav, SegmentRole::Entry, 40.0, 10.0);
        // z_{j,i} = 30
        let j = member(1, VehicleKind::Hdv, SegmentRole::Curve, 10.0, 12.0);
        let lhs = (j.distance_to_mp() - i.distance_to_mp()) - 1.8 * (12.0 - 10.0 * 40.0 / 60.0);
        assert!((lhs - 20.4).abs() < 1e-9);
        assert!(merge_ahead_permitted(&i, &j, 1.8, &p));
    }

    #[test]
    fn eq10_static_and_conservative_driver() {
        let p = SafePolicyParams::default();
        let i = member(4, VehicleKind::Cav, SegmentRole::Entry, 40.0, 0.0);
        let j = member(1, VehicleKind::Hdv, SegmentRole::Curve, 30.0, 0.0);
        // z = 30 - 20 = 10 = g
        assert!(merge_ahead_permitted(&i, &j, 1.8, &p));
        let j_close = member(1, VehicleKind::Hdv, SegmentRole::Curve, 30.5, 0.0);
        assert!(!merge_ahead_permitted(&i, &j_close, 1.8, &p));

        let eq = SafePolicyParams { delta_j: 5.0, eta: 5.0 };
        assert_eq!(eq.threshold(-1.0), 0.0);
        let mut timid = member(1, VehicleKind::Hdv, SegmentRole::Curve, 40.0, 0.0);
        timid.aggressiveness = -1.0;
        assert!(merge_ahead_permitted(&i, &timid, 1.8, &eq));
    }

    fn worked_group(permitted: bool) -> MergingGroup {
        // CAV 0 and HDV 1 on the curve, CAV 4 on the entry
        let hdv_x = if permitted { 5.0 } else { 35.0 };
        MergingGroup {
            cz: 1,
            curve: vec![
                member(0, VehicleKind::Cav, SegmentRole::Curve, 50.0, 10.0),
                member(1, VehicleKind::Hdv, SegmentRole::Curve, hdv_x, 10.0),
            ],
            entry: vec![member(4, VehicleKind::Cav, SegmentRole::Entry, 40.0, 10.0)],
        }
    }

    #[test]
    fn worked_example_filter() {
        let all = enumerate_feasible(&[0, 1], &[4]);
        let p = SafePolicyParams::default();
        let violated: BTreeSet<_> = filter_safe(&all, &worked_group(false), 1.8, &p).into_iter().collect();
        assert_eq!(violated, [vec![0, 1, 4], vec![4, 0, 1]].into_iter().collect());
        let ok: BTreeSet<_> = filter_safe(&all, &worked_group(true), 1.8, &p).into_iter().collect();
        assert_eq!(ok.len(), 3);
    }

    #[test]
    fn all_cav_group_unfiltered() {
        let g = MergingGroup {
            cz: 0,
            curve: vec![member(0, VehicleKind::Cav, SegmentRole::Curve, 50.0, 10.0)],
            entry: vec![member(1, VehicleKind::Cav, SegmentRole::Entry, 55.0, 10.0)],
        };
        let all = enumerate_feasible(&[0], &[1]);
        assert_eq!(filter_safe(&all, &g, 1.8, &SafePolicyParams::default()), all);
        assert_eq!(filter_baseline(&all, &g), all);
    }

    #[test]
    fn baseline_yields_to_curve_hdv() {
        let g = MergingGroup {
            cz: 0,
            curve: vec![member(1, VehicleKind::Hdv, SegmentRole::Curve, 10.0, 10.0)],
            entry: vec![member(4, VehicleKind::Cav, SegmentRole::Entry, 55.0, 10.0)],
        };
        let all = enumerate_feasible(&[1], &[4]);
        assert_eq!(filter_baseline(&all, &g), vec![vec![1, 4]]);
    }

    #[test]
    fn relaxation_keeps_least_violating() {
        let g = worked_group(false);
        let all = enumerate_feasible(&[0, 1], &[4]);
        let out = filter_for_policy(Policy::Ss, &all, &g, 1.8, &SafePolicyParams::default());
        assert!(!out.relaxed);
        assert_eq!(out.candidates.len(), 2);
        let hdv_only = filter_for_policy(Policy::Hdv, &all, &g, 1.8, &SafePolicyParams::default());
        assert_eq!(hdv_only.candidates, all);
    }

    #[test]
    fn swap_distance_and_pruning() {
        assert_eq!(swap_distance(&[0, 1, 2], &[0, 1, 2]), 0);
        assert_eq!(swap_distance(&[2, 1, 0], &[0, 1, 2]), 3);
        assert_eq!(swap_distance(&[1, 0, 9], &[0, 1]), 1);
        let all = enumerate_feasible(&[0, 1, 2], &[3, 4]);
        let kept = prune_candidates(all.clone(), &[3, 0, 1, 2, 4], 3);
        assert_eq!(kept.len(), 3);
        assert!(kept.contains(&vec![3, 0, 1, 2, 4]));
        let positions: Vec<usize> = kept.iter().map(|k| all.iter().position(|a| a == k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    fn worked_world() -> World {
        let layout = Arc::new(RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap());
        let mut w = World::new(Arc::clone(&layout), VehicleLimits::default());
        let mut put = |id, origin, exit, seg, x| {
            let route = Arc::new(layout.route(origin, exit).unwrap());
            let mut s = VehicleState::spawn(id, VehicleKind::Cav, route, 0.0, 10.0, 0.0);
            s.seg_index = seg;
            s.x = x;
            s.d = s.route.segment_start(seg) + x;
            w.insert(s);
        };
        // CZ 1: vehicles 0 and 1 on Curve(1), vehicle 4 on Entry(1)
        put(0, 0, 1, 1, 50.0); // leaves at M_1
        put(1, 0, 2, 1, 30.0);
        put(4, 1, 0, 0, 40.0);
        // vehicle 3 on Curve(2)
        put(3, 1, 0, 1, 20.0);
        w
    }

    #[test]
    fn worked_example_assignments() {
        let w = worked_world();
        let g = w.merging_group(1);
        assert_eq!(g.ids(SegmentRole::Curve), vec![0, 1]);
        let seq = assign_ip_im(&[0, 1, 4], &g, &w);
        assert_eq!(seq.assignments[&4].im, Some(1));
        assert_eq!(seq.assignments[&4].ip, Some(3));
        assert_eq!(seq.assignments[&1].ip, Some(0));
        assert_eq!(seq.assignments[&1].im, None);
        assert_eq!(seq.assignments[&0], Assignment::default());

        let seq = assign_ip_im(&[4, 0, 1], &g, &w);
        assert_eq!(seq.assignments[&0].im, Some(4));
        assert_eq!(seq.assignments[&1].im, Some(4));
        assert_eq!(seq.assignments[&4].im, None);
    }

    #[test]
    fn lone_vehicle_has_no_neighbors() {
        let layout = Arc::new(RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap());
        let mut w = World::new(Arc::clone(&layout), VehicleLimits::default());
        let route = Arc::new(layout.route(0, 2).unwrap());
        w.insert(VehicleState::spawn(9, VehicleKind::Cav, route, 0.0, 10.0, 0.0));
        let g = w.merging_group(0);
        let seq = assign_ip_im(&[9], &g, &w);
        assert_eq!(seq.assignments[&9], Assignment::default());
    }

    #[test]
    fn selection_rules() {
        let ev = |c: f64| Evaluation { cost: c, payload: () };
        assert_eq!(select_optimal(vec![ev(3.2), ev(2.8)]).index, 1);
        assert_eq!(select_optimal(vec![ev(9.0)]).index, 0);
        assert_eq!(select_optimal(vec![ev(2.8), ev(2.8)]).index, 0);
        let inf = select_optimal(vec![ev(f64::INFINITY), ev(f64::INFINITY)]);
        assert_eq!(inf.index, 0);
        assert!(inf.all_infeasible);
    }

    fn arb_group() -> impl proptest::strategy::Strategy<Value = MergingGroup> {
        use proptest::prelude::*;
        let mem = (any::<bool>(), 0.0f64..60.0, 0.0f64..20.0, -1.0f64..1.0);
        (proptest::collection::vec(mem.clone(), 0..5), proptest::collection::vec(mem, 0..5)).prop_map(|(c, e)| {
            let build = |items: Vec<(bool, f64, f64, f64)>, role, base: usize| {
                let mut v: Vec<GroupMember> = items
                    .into_iter()
                    .enumerate()
                    .map(|(k, (cav, x, v, a))| GroupMember {
                        id: base + k,
                        kind: if cav { VehicleKind::Cav } else { VehicleKind::Hdv },
                        role,
                        x,
                        v,
                        length: 60.0,
                        aggressiveness: a,
                    })
                    .collect();
                v.sort_by(|a, b| b.x.total_cmp(&a.x));
                v
            };
            MergingGroup {
                cz: 0,
                curve: build(c, SegmentRole::Curve, 0),
                entry: build(e, SegmentRole::Entry, 100),
            }
        })
    }

    proptest::proptest! {
        #[test]
        fn filtered_orders_have_no_unsafe_pair(g in arb_group()) {
            let p = SafePolicyParams::default();
            let all = enumerate_feasible(&g.ids(SegmentRole::Curve), &g.ids(SegmentRole::Entry));
            for order in filter_safe(&all, &g, 1.8, &p) {
                for (pos, &id) in order.iter().enumerate() {
                    let i = g.member(id).unwrap();
                    if i.kind != VehicleKind::Cav { continue; }
                    if let Some(j) = order[pos + 1..].iter().map(|&j| g.member(j).unwrap()).find(|j| j.role != i.role) {
                        if j.kind == VehicleKind::Hdv {
                            proptest::prop_assert!(merge_ahead_permitted(i, j, 1.8, &p));
                        }
                    }
                }
            }
        }

        #[test]
        fn a_safe_order_always_exists(g in arb_group()) {
            let all = enumerate_feasible(&g.ids(SegmentRole::Curve), &g.ids(SegmentRole::Entry));
            proptest::prop_assert!(!filter_safe(&all, &g, 1.8, &SafePolicyParams::default()).is_empty());
            proptest::prop_assert!(!filter_baseline(&all, &g).is_empty());
        }

        #[test]
        fn assignment_relations(g in arb_group()) {
            let layout = Arc::new(RoundaboutLayout::symmetric(3, 60.0, 60.0).unwrap());
            let w = World::new(layout, VehicleLimits::default());
            let all = enumerate_feasible(&g.ids(SegmentRole::Curve), &g.ids(SegmentRole::Entry));
            for order in all {
                let seq = assign_ip_im(&order, &g, &w);
                proptest::prop_assert_eq!(seq.assignments.len(), order.len());
                for (pos, id) in order.iter().enumerate() {
                    let role = g.member(*id).unwrap().role;
                    let a = seq.assignments[id];
                    let cross_before = order[..pos].iter().rposition(|x| g.member(*x).unwrap().role != role);
                    proptest::prop_assert_eq!(a.im, cross_before.map(|p| order[p]));
                    let same_before = order[..pos].iter().rposition(|x| g.member(*x).unwrap().role == role);
                    if let Some(p) = same_before {
                        proptest::prop_assert_eq!(a.ip, Some(order[p]));
                    }
                }
            }
        }

        #[test]
        fn selection_scale_invariant(costs in proptest::collection::vec(0.0f64..100.0, 1..8), scale in 0.01f64..100.0) {
            let a = select_optimal(costs.iter().map(|&c| Evaluation { cost: c, payload: () }).collect()).index;
            let b = select_optimal(costs.iter().map(|&c| Evaluation { cost: c * scale, payload: () }).collect()).index;
            proptest::prop_assert_eq!(a, b);
        }
    }
}
