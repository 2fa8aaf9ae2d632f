//! Receding-horizon control of automated vehicles: a convex quadratic
//! program per vehicle with barrier-function safety rows, and the scoring
//! of merging sequences built on it.

mod constraints;
mod problem;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use constraints::*;
pub use problem::*;

use crate::geometry::{gap_to_predecessor, SharedRoute};
use crate::sequencing::Sequence;
use crate::vehicle::{VehicleId, VehicleKind, VehicleLimits, VehicleState};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub horizon: usize,
    /// Control and simulation step.
    pub time_step: f64,
    /// Weight of the speed-tracking term.
    pub lambda1: f64,
    /// Weight of the discomfort term.
    pub lambda2: f64,
    pub v_desired: f64,
    pub cbf: CbfParams,
    /// Re-linearize about each new solution until the plan settles.
    pub refine: bool,
    pub max_passes: usize,
    pub refine_tolerance: f64,
    /// Largest row violation accepted from the solver.
    pub constraint_tolerance: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            horizon: 10,
            time_step: 0.1,
            lambda1: 0.3,
            lambda2: 0.02,
            v_desired: 12.0,
            cbf: CbfParams::default(),
            refine: false,
            max_passes: 3,
            refine_tolerance: 1e-3,
            constraint_tolerance: 1e-6,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.time_step > 0.0) {
            return Err("time_step must be positive".into());
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err("objective weights must be positive".into());
        }
        if self.max_passes == 0 {
            return Err("max_passes must be at least 1".into());
        }
        self.cbf.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborRole {
    Predecessor,
    MergingConflict,
}

/// Predicted motion of a neighbor. Index `h` holds the state `h` steps
/// ahead; index 0 is the current state. Positions are measured from the
/// start of the neighbor's current segment and keep growing past its end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborPrediction {
    pub id: VehicleId,
    pub role: NeighborRole,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// A stored horizon plan of an automated vehicle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    /// Simulation step the plan was made at.
    pub step: u64,
    pub u: Vec<f64>,
    /// Speeds at plan steps `0..=H`.
    pub v: Vec<f64>,
    /// Route distances at plan steps `0..=H`.
    pub d: Vec<f64>,
}

impl Plan {
    pub fn from_solution(step: u64, d0: f64, solution: &MpcSolution) -> Self {
        let x0 = solution.x[0];
        Self {
            step,
            u: solution.u.clone(),
            v: solution.v.clone(),
            d: solution.x.iter().map(|x| d0 + x - x0).collect(),
        }
    }

    /// Plan inputs re-based at `step`, padded with zeros.
    pub fn shifted_inputs(&self, step: u64, horizon: usize) -> Vec<f64> {
        let k = step.saturating_sub(self.step) as usize;
        (0..horizon).map(|h| self.u.get(k + h).copied().unwrap_or(0.0)).collect()
    }
}

pub type PlanBook = BTreeMap<VehicleId, Plan>;

/// Replays a stored plan when there is one, otherwise rolls the vehicle
/// forward at constant speed.
pub fn predict_neighbor(
    vehicle: &VehicleState,
    role: NeighborRole,
    plan: Option<&Plan>,
    step: u64,
    horizon: usize,
    dt: f64,
) -> NeighborPrediction {
    let mut x = Vec::with_capacity(horizon + 1);
    let mut v = Vec::with_capacity(horizon + 1);
    let usable = plan.filter(|p| vehicle.kind == VehicleKind::Cav && (step.saturating_sub(p.step) as usize) < p.v.len());
    match usable {
        Some(plan) => {
            let k = step.saturating_sub(plan.step) as usize;
            let last = plan.v.len() - 1;
            let base = plan.d[k];
            for h in 0..=horizon {
                let idx = k + h;
                if idx <= last {
                    x.push(vehicle.x + plan.d[idx] - base);
                    v.push(plan.v[idx]);
                } else {
                    let extra = (idx - last) as f64 * dt * plan.v[last];
                    x.push(vehicle.x + plan.d[last] - base + extra);
                    v.push(plan.v[last]);
                }
            }
        }
        None => {
            for h in 0..=horizon {
                x.push(vehicle.x + h as f64 * dt * vehicle.v);
                v.push(vehicle.v);
            }
        }
    }
    NeighborPrediction {
        id: vehicle.id,
        role,
        x,
        v,
    }
}

/// Everything needed to pose the horizon program for one vehicle.
#[derive(Debug, Clone)]
pub struct MpcSetup {
    pub x0: f64,
    pub v0: f64,
    /// Route distance at the current state.
    pub d0: f64,
    pub own_length: f64,
    pub route: SharedRoute,
    pub kappa_max: f64,
    pub rear: Option<RearEndContext>,
    pub merge: Option<MergeContext>,
    /// Nominal inputs the nonlinear terms are frozen about.
    pub nominal_u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RearEndContext {
    pub prediction: NeighborPrediction,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct MergeContext {
    pub prediction: NeighborPrediction,
    pub conflict_length: f64,
}

impl MpcSetup {
    pub fn for_vehicle(vehicle: &VehicleState, kappa_max: f64, nominal_u: Vec<f64>) -> Self {
        Self {
            x0: vehicle.x,
            v0: vehicle.v,
            d0: vehicle.d,
            own_length: vehicle.segment_length(),
            route: vehicle.route.clone(),
            kappa_max,
            rear: None,
            merge: None,
            nominal_u,
        }
    }

    /// Nominal `(x, v, d)` at steps `0..=H`.
    pub fn nominal(&self, horizon: usize, dt: f64, limits: &VehicleLimits) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut x = vec![self.x0];
        let mut v = vec![self.v0];
        let mut d = vec![self.d0];
        for h in 0..horizon {
            let u = self.nominal_u.get(h).copied().unwrap_or(0.0);
            x.push(x[h] + dt * v[h]);
            d.push(d[h] + dt * v[h]);
            v.push(limits.clamp_speed(v[h] + dt * u));
        }
        (x, v, d)
    }
}

/// Poses the program for `setup` under the current nominal trajectory.
pub fn build_problem(setup: &MpcSetup, params: &ControllerParams, limits: &VehicleLimits) -> MpcProblem {
    let horizon = params.horizon;
    let dt = params.time_step;
    let (nx, nv, nd) = setup.nominal(horizon, dt, limits);
    let kappa_max = setup.kappa_max.max(f64::MIN_POSITIVE);
    let curvature_weights = (0..horizon)
        .map(|h| params.lambda2 * setup.route.curvature_ahead(nd[h + 1]) / (kappa_max * limits.v_max.powi(2)))
        .collect();

    let merge_steps = setup.merge.as_ref().map(|m| {
        match conflict_arrival_time(m.prediction.x[0], m.prediction.v[0], m.conflict_length) {
            Some(t) => (0..horizon).take_while(|h| (*h as f64) * dt < t).count(),
            None => horizon,
        }
    });

    let mut rows = Vec::new();
    for h in 0..horizon {
        rows.extend(build_speed_bounds(h, setup.v0, dt, horizon, limits));
        rows.extend(build_speed_cbfs(h, setup.v0, dt, horizon, limits, &params.cbf));
        if let Some(rear) = &setup.rear {
            rows.push(build_rear_end_cbf(
                h,
                setup.x0,
                setup.v0,
                rear.gap,
                &rear.prediction,
                dt,
                horizon,
                limits,
                &params.cbf,
            ));
        }
        if let (Some(merge), Some(active)) = (&setup.merge, merge_steps) {
            if h < active {
                rows.push(build_merging_clbf(
                    h,
                    setup.v0,
                    setup.own_length,
                    nx[h],
                    nv[h],
                    &merge.prediction,
                    merge.conflict_length,
                    dt,
                    horizon,
                    limits,
                    &params.cbf,
                ));
            }
        }
        rows.extend(build_lateral_cbf(
            h,
            setup.v0,
            setup.route.curvature_ahead(nd[h]),
            nv[h],
            dt,
            horizon,
            limits,
            &params.cbf,
        ));
    }

    MpcProblem {
        horizon,
        dt,
        x0: setup.x0,
        v0: setup.v0,
        limits: *limits,
        speed_weight: params.lambda1 / (limits.v_max - limits.v_min).powi(2),
        v_desired: params.v_desired,
        curvature_weights,
        rows,
        fallback_gain: params.cbf.k2,
        tolerance: params.constraint_tolerance,
    }
}

/// Solves for one vehicle, optionally re-linearizing about each solution.
pub fn solve_setup(setup: &MpcSetup, params: &ControllerParams, limits: &VehicleLimits) -> MpcSolution {
    let passes = if params.refine { params.max_passes } else { 1 };
    let mut current = setup.clone();
    let mut solution = assemble_and_solve(&build_problem(&current, params, limits));
    for pass in 1..passes {
        if solution.status != SolveStatus::Optimal {
            break;
        }
        let change = solution
            .u
            .iter()
            .zip(&current.nominal_u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < params.refine_tolerance {
            break;
        }
        current.nominal_u = solution.u.clone();
        let next = assemble_and_solve(&build_problem(&current, params, limits));
        solution = MpcSolution {
            passes: pass + 1,
            ..next
        };
    }
    solution
}

/// Scoring of one candidate order.
#[derive(Debug, Clone)]
pub struct SequenceEvaluation {
    /// Sum of automated-vehicle objectives; infinite if any was infeasible.
    pub cost: f64,
    pub solutions: BTreeMap<VehicleId, MpcSolution>,
    pub plans: BTreeMap<VehicleId, Plan>,
    pub infeasible: Vec<VehicleId>,
}

/// Plans every automated vehicle of `sequence` in order, feeding each fresh
/// plan into the predictions of the vehicles behind it.
pub fn evaluate_sequence(
    sequence: &Sequence,
    world: &World,
    plans: &PlanBook,
    step: u64,
    params: &ControllerParams,
) -> SequenceEvaluation {
    let limits = world.limits();
    let layout = world.layout();
    let kappa_max = layout.max_curvature();
    let mut fresh: BTreeMap<VehicleId, Plan> = BTreeMap::new();
    let mut solutions = BTreeMap::new();
    let mut infeasible = Vec::new();
    let mut cost = 0.0;

    let lookup = |fresh: &BTreeMap<VehicleId, Plan>, id: VehicleId| fresh.get(&id).or_else(|| plans.get(&id)).cloned();

    for &id in &sequence.order {
        let Some(ego) = world.get(id) else { continue };
        if ego.kind != VehicleKind::Cav {
            continue;
        }
        let assignment = sequence.assignments.get(&id).copied().unwrap_or_default();
        let nominal = plans
            .get(&id)
            .map(|p| p.shifted_inputs(step, params.horizon))
            .unwrap_or_else(|| vec![0.0; params.horizon]);
        let mut setup = MpcSetup::for_vehicle(ego, kappa_max, nominal);

        if let Some(pred) = assignment.ip.and_then(|p| world.get(p)) {
            if let Ok(gap) = gap_to_predecessor(layout, ego.position(), pred.position()) {
                let plan = lookup(&fresh, pred.id);
                setup.rear = Some(RearEndContext {
                    prediction: predict_neighbor(
                        pred,
                        NeighborRole::Predecessor,
                        plan.as_ref(),
                        step,
                        params.horizon,
                        params.time_step,
                    ),
                    gap,
                });
            }
        }
        if let Some(conflict) = assignment.im.and_then(|m| world.get(m)) {
            let plan = lookup(&fresh, conflict.id);
            setup.merge = Some(MergeContext {
                prediction: predict_neighbor(
                    conflict,
                    NeighborRole::MergingConflict,
                    plan.as_ref(),
                    step,
                    params.horizon,
                    params.time_step,
                ),
                conflict_length: conflict.segment_length(),
            });
        }

        let solution = solve_setup(&setup, params, limits);
        if solution.status == SolveStatus::Optimal {
            cost += solution.objective;
        } else {
            infeasible.push(id);
        }
        fresh.insert(id, Plan::from_solution(step, ego.d, &solution));
        solutions.insert(id, solution);
    }

    SequenceEvaluation {
        cost: if infeasible.is_empty() { cost } else { f64::INFINITY },
        solutions,
        plans: fresh,
        infeasible,
    }
}
