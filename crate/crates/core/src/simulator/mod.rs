//! Time-stepped simulation of mixed traffic through the roundabout.

mod arrivals;
mod config;
pub mod metrics;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use arrivals::{ArrivalProcess, PendingArrival};
pub use config::{AggressivenessRange, ConfigError, Demand, ScenarioConfig};
pub use metrics::{Crossing, EpisodeCounter, KindFilter, MetricsLedger, PetTracker, SummaryRow, VehicleRecord};
pub use trace::{Trace, TraceLevel};

use crate::controller::{evaluate_sequence, ObjectiveTerms, PlanBook, SequenceEvaluation, SolveStatus};
use crate::geometry::{RoundaboutLayout, Segment, SegmentRole};
use crate::sequencing::{
    assign_ip_im, base_order, binomial, enumerate_feasible, filter_for_policy, neighborhood_orders, prune_candidates,
    select_optimal, Evaluation, Sequence, FULL_ENUMERATION_LIMIT,
};
use crate::vehicle::{hdv_control, step_dynamics, VehicleId, VehicleKind, VehicleState};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResequenceKind {
    VehicleEntered,
    VehicleExited,
    CzChanged,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResequenceEvent {
    pub kind: ResequenceKind,
    pub time: f64,
    pub cz: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum TraceRecord<'a> {
    Arrival {
        t: f64,
        id: VehicleId,
        due: f64,
        origin: usize,
        exit: usize,
        kind: VehicleKind,
        aggressiveness: Option<f64>,
    },
    Exit {
        t: f64,
        id: VehicleId,
        travel_time: f64,
    },
    Resequence {
        t: f64,
        cz: usize,
        triggers: &'a [ResequenceKind],
        candidates: usize,
        relaxed: bool,
        order: &'a [VehicleId],
        cost: Option<f64>,
        all_infeasible: bool,
    },
    Pet {
        t: f64,
        mp: usize,
        leader: VehicleId,
        follower: VehicleId,
        pet: f64,
        critical: bool,
    },
    Solve {
        t: f64,
        id: VehicleId,
        status: SolveStatus,
        iterations: usize,
        passes: usize,
        objective: f64,
        max_violation: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        wall_time_us: Option<u64>,
    },
    Step {
        t: f64,
        vehicles: Vec<StepState>,
    },
}

#[derive(Debug, Clone, Serialize)]
struct StepState {
    id: VehicleId,
    segment: Segment,
    x: f64,
    v: f64,
    u: f64,
    unsafe_steps: u64,
    hard_decel_steps: u64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub ledger: MetricsLedger,
    pub trace: Vec<u8>,
    pub steps: u64,
    pub end_time: f64,
}

/// Runs `config` to completion.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    let mut sim = Simulation::new(config.clone())?;
    while !sim.is_finished() {
        sim.step();
    }
    Ok(sim.finish())
}

struct CzJob {
    cz: usize,
    triggers: Vec<ResequenceKind>,
    candidates: Vec<Sequence>,
    relaxed: bool,
}

pub struct Simulation {
    config: ScenarioConfig,
    world: World,
    arrivals: ArrivalProcess,
    plans: PlanBook,
    sequences: BTreeMap<usize, Sequence>,
    last_resequence: Vec<u64>,
    pending: Vec<ResequenceEvent>,
    pet: PetTracker,
    ledger: MetricsLedger,
    trace: Trace,
    step: u64,
    next_id: VehicleId,
    timeout_steps: u64,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let layout = Arc::new(config.build_layout()?);
        let n = layout.num_entries();
        let dt = config.controller.time_step;
        Ok(Self {
            world: World::new(layout, config.limits),
            arrivals: ArrivalProcess::new(config.seed, &config.arrival_rates, n, config.aggressiveness),
            plans: PlanBook::new(),
            sequences: BTreeMap::new(),
            last_resequence: vec![0; n],
            pending: Vec::new(),
            pet: PetTracker::new(config.pet_threshold, config.pet_critical_below),
            ledger: MetricsLedger::default(),
            trace: Trace::new(config.trace),
            step: 0,
            next_id: 0,
            timeout_steps: ((config.resequence_timeout / dt).round() as u64).max(1),
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn layout(&self) -> &RoundaboutLayout {
        self.world.layout()
    }

    pub fn ledger(&self) -> &MetricsLedger {
        &self.ledger
    }

    pub fn plans(&self) -> &PlanBook {
        &self.plans
    }

    pub fn sequence(&self, cz: usize) -> Option<&Sequence> {
        self.sequences.get(&cz)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.controller.time_step
    }

    pub fn queued_arrivals(&self) -> usize {
        self.arrivals.queued()
    }

    /// Done once arrivals have stopped and the roundabout is empty, or the
    /// drain allowance is used up.
    pub fn is_finished(&self) -> bool {
        let t = self.time();
        let eps = 1e-9;
        if t + eps >= self.config.duration + self.config.drain_limit {
            return true;
        }
        t + eps >= self.config.duration && self.world.is_empty() && self.arrivals.queued() == 0
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            end_time: self.time(),
            steps: self.step,
            ledger: self.ledger,
            trace: self.trace.into_bytes(),
            config: self.config,
        }
    }

    /// Places a vehicle at the start of entry road `origin` right away,
    /// bypassing the arrival process and admission check.
    pub fn spawn_vehicle(&mut self, kind: VehicleKind, origin: usize, exit: usize, aggressiveness: f64) -> VehicleId {
        let arrival = PendingArrival {
            due: self.time(),
            origin,
            exit,
            kind_draw: 0.0,
            aggressiveness,
        };
        self.admit(arrival, kind)
    }

    fn admit(&mut self, arrival: PendingArrival, kind: VehicleKind) -> VehicleId {
        let t = self.time();
        let id = self.next_id;
        self.next_id += 1;
        let route = Arc::new(
            self.world
                .layout()
                .route(arrival.origin, arrival.exit)
                .expect("arrival endpoints come from the layout"),
        );
        let vehicle = VehicleState::spawn(id, kind, route, t, self.config.spawn_speed, arrival.aggressiveness);
        let aggressiveness = vehicle.aggressiveness;
        self.world.insert(vehicle);
        self.ledger
            .vehicles
            .insert(id, VehicleRecord::new(id, kind, arrival.origin, arrival.exit, t));
        self.pending.push(ResequenceEvent {
            kind: ResequenceKind::VehicleEntered,
            time: t,
            cz: arrival.origin,
        });
        self.trace.emit(
            TraceLevel::Summary,
            &TraceRecord::Arrival {
                t,
                id,
                due: arrival.due,
                origin: arrival.origin,
                exit: arrival.exit,
                kind,
                aggressiveness,
            },
        );
        id
    }

    /// Whether a vehicle entering at `origin` now keeps the rear-end margin
    /// to the last vehicle already on that road.
    pub fn admission_open(&self, origin: usize) -> bool {
        let limits = self.world.limits();
        match self.world.last_on_segment(Segment::Entry(origin)) {
            None => true,
            Some(last) => last.x >= limits.phi * self.config.spawn_speed + limits.delta,
        }
    }

    fn process_arrivals(&mut self) {
        let t = self.time();
        self.arrivals.generate(t, self.config.duration);
        let penetration = self.config.effective_penetration();
        for origin in 0..self.arrivals.num_origins() {
            if self.arrivals.front(origin).is_none() || !self.admission_open(origin) {
                continue;
            }
            let arrival = self.arrivals.pop(origin).expect("front checked");
            let kind = if arrival.kind_draw < penetration {
                VehicleKind::Cav
            } else {
                VehicleKind::Hdv
            };
            self.admit(arrival, kind);
        }
    }

    /// Resequences every zone with a pending event or an expired timer and
    /// re-plans the stored order everywhere else.
    fn plan(&mut self) {
        let t = self.time();
        let n = self.world.layout().num_entries();
        let mut triggers: BTreeMap<usize, BTreeSet<ResequenceKind>> = BTreeMap::new();
        for event in self.pending.drain(..) {
            triggers.entry(event.cz).or_default().insert(event.kind);
        }
        for cz in 0..n {
            if self.step.saturating_sub(self.last_resequence[cz]) >= self.timeout_steps {
                triggers.entry(cz).or_default().insert(ResequenceKind::Timeout);
            }
        }

        let phi = self.world.limits().phi;
        let mut jobs = Vec::with_capacity(n);
        for cz in 0..n {
            let group = self.world.merging_group(cz);
            let current: Vec<VehicleId> = self.sequences.get(&cz).map(|s| s.order.clone()).unwrap_or_default();
            let mut members: Vec<VehicleId> = group.ids(SegmentRole::Curve);
            members.extend(group.ids(SegmentRole::Entry));
            let stale = {
                let mut a = members.clone();
                let mut b = current.clone();
                a.sort_unstable();
                b.sort_unstable();
                a != b
            };
            let mut cz_triggers: Vec<ResequenceKind> =
                triggers.get(&cz).map(|s| s.iter().copied().collect()).unwrap_or_default();
            if stale && cz_triggers.is_empty() {
                cz_triggers.push(ResequenceKind::CzChanged);
            }

            let (orders, relaxed) = if cz_triggers.is_empty() {
                (vec![current], false)
            } else {
                self.last_resequence[cz] = self.step;
                let cap = self.config.max_candidates;
                let count = binomial(group.len() as u64, group.curve.len() as u64);
                if count <= FULL_ENUMERATION_LIMIT {
                    let all = enumerate_feasible(&group.ids(SegmentRole::Curve), &group.ids(SegmentRole::Entry));
                    let filtered = filter_for_policy(self.config.policy, &all, &group, phi, &self.config.safe_policy);
                    (prune_candidates(filtered.candidates, &current, cap), filtered.relaxed)
                } else {
                    let near = neighborhood_orders(&base_order(&group, &current), &group, cap);
                    let filtered = filter_for_policy(self.config.policy, &near, &group, phi, &self.config.safe_policy);
                    (filtered.candidates, filtered.relaxed)
                }
            };
            let has_cav = group.curve.iter().chain(&group.entry).any(|m| m.kind == VehicleKind::Cav);
            let orders = if has_cav { orders } else { orders.into_iter().take(1).collect() };
            let candidates = orders.iter().map(|o| assign_ip_im(o, &group, &self.world)).collect();
            jobs.push(CzJob {
                cz,
                triggers: cz_triggers,
                candidates,
                relaxed,
            });
        }

        let flat: Vec<(usize, &Sequence)> = jobs
            .iter()
            .enumerate()
            .flat_map(|(j, job)| job.candidates.iter().map(move |c| (j, c)))
            .collect();
        let world = &self.world;
        let plans = &self.plans;
        let step = self.step;
        let params = &self.config.controller;
        let mut results: Vec<Option<SequenceEvaluation>> = flat
            .par_iter()
            .map(|(_, seq)| Some(evaluate_sequence(seq, world, plans, step, params)))
            .collect();

        let mut offset = 0;
        let mut new_plans = PlanBook::new();
        let mut solves = Vec::new();
        for job in jobs {
            let count = job.candidates.len();
            let evaluations: Vec<Evaluation<(Sequence, SequenceEvaluation)>> = job
                .candidates
                .into_iter()
                .zip(results[offset..offset + count].iter_mut())
                .map(|(seq, r)| {
                    let eval = r.take().expect("each result is used once");
                    Evaluation {
                        cost: eval.cost,
                        payload: (seq, eval),
                    }
                })
                .collect();
            offset += count;
            let resequenced = !job.triggers.is_empty();
            let selection = select_optimal(evaluations);
            let (sequence, eval) = selection.evaluations.into_iter().nth(selection.index).expect("selected").payload;
            if resequenced {
                self.ledger.resequences += 1;
                self.ledger.relaxed_filters += u64::from(job.relaxed);
                self.ledger.all_infeasible_selections += u64::from(selection.all_infeasible);
                self.trace.emit(
                    TraceLevel::Summary,
                    &TraceRecord::Resequence {
                        t,
                        cz: job.cz,
                        triggers: &job.triggers,
                        candidates: count,
                        relaxed: job.relaxed,
                        order: &sequence.order,
                        cost: selection.cost.is_finite().then_some(selection.cost),
                        all_infeasible: selection.all_infeasible,
                    },
                );
            }
            solves.extend(eval.solutions);
            new_plans.extend(eval.plans);
            self.sequences.insert(job.cz, sequence);
        }

        for (id, solution) in &solves {
            if let Some(record) = self.ledger.vehicles.get_mut(id) {
                record.infeasible.update(solution.status == SolveStatus::Infeasible);
            }
            self.trace.emit(
                TraceLevel::Full,
                &TraceRecord::Solve {
                    t,
                    id: *id,
                    status: solution.status,
                    iterations: solution.iterations,
                    passes: solution.passes,
                    objective: solution.objective,
                    max_violation: solution.max_violation,
                    wall_time_us: self.config.trace_wall_time.then_some(solution.wall_time_us),
                },
            );
        }
        self.plans = new_plans;
    }

    /// Advances the simulation by one control step.
    pub fn step(&mut self) {
        let t = self.time();
        let dt = self.config.controller.time_step;
        self.world.time = t;

        self.process_arrivals();
        self.plan();

        let controls: Vec<(VehicleId, f64, bool)> = self
            .world
            .vehicles()
            .iter()
            .map(|v| match v.kind {
                VehicleKind::Cav => {
                    let u = self.plans.get(&v.id).and_then(|p| p.u.first().copied()).unwrap_or(0.0);
                    (v.id, u, false)
                }
                VehicleKind::Hdv => {
                    let r = hdv_control(&self.world, v.id, &self.config.idm);
                    (v.id, r.accel, r.overlap)
                }
            })
            .collect();

        let limits = *self.world.limits();
        let kappa_max = self.world.layout().max_curvature();
        let ctrl = self.config.controller;
        let mut crossings = Vec::new();
        let mut exits = Vec::new();
        let mut next_states = Vec::with_capacity(controls.len());
        let mut applied = BTreeMap::new();
        for (id, u, overlap) in controls {
            let vehicle = self.world.get(id).expect("controlled vehicle exists");
            let kappa = vehicle.curvature();
            let outcome = step_dynamics(vehicle, u, dt, &limits);
            let record = self.ledger.vehicles.get_mut(&id).expect("every vehicle has a record");
            record.accumulate(outcome.applied_u, vehicle.v, kappa, dt);
            record.add_objective(
                ObjectiveTerms::evaluate(outcome.applied_u, vehicle.v, kappa, kappa_max, ctrl.v_desired, &limits)
                    .weighted(ctrl.lambda1, ctrl.lambda2),
            );
            record.hard_decel.update(metrics::is_hard_decel(outcome.applied_u, &limits));
            record.speed_clamps += u64::from(outcome.speed_clamped);
            record.overlaps += u64::from(overlap);
            record.distance = outcome.state.d.min(vehicle.route.total_length());
            applied.insert(id, outcome.applied_u);

            for c in &outcome.crossings {
                crossings.push((t + c.offset, id, c.mp, c.role));
            }
            let from_cz = vehicle.cz();
            if outcome.exited {
                let last = outcome.crossings.last().expect("exit crosses a merging point");
                exits.push((id, t + last.offset, last.mp));
            } else if outcome.state.cz() != from_cz {
                for cz in [from_cz, outcome.state.cz()] {
                    self.pending.push(ResequenceEvent {
                        kind: ResequenceKind::CzChanged,
                        time: t + dt,
                        cz,
                    });
                }
            }
            next_states.push(outcome);
        }
        for outcome in next_states {
            if !outcome.exited {
                self.world.insert(outcome.state);
            }
        }

        crossings.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (time, vehicle, mp, role) in crossings {
            if let Some(event) = self.pet.record(mp, Crossing { time, vehicle, role }) {
                self.ledger.pet_events += 1;
                if event.critical {
                    self.ledger.pet_critical += 1;
                    if let Some(r) = self.ledger.vehicles.get_mut(&event.follower) {
                        r.pet_critical += 1;
                    }
                }
                self.trace.emit(
                    TraceLevel::Summary,
                    &TraceRecord::Pet {
                        t: time,
                        mp,
                        leader: event.leader,
                        follower: event.follower,
                        pet: event.pet,
                        critical: event.critical,
                    },
                );
            }
        }

        for (id, tf, mp) in exits {
            self.world.remove(id);
            self.plans.remove(&id);
            let (origin, exit) = {
                let r = &self.ledger.vehicles[&id];
                (r.origin, r.exit)
            };
            let length = self.layout_route_length(origin, exit);
            let record = self.ledger.vehicles.get_mut(&id).expect("exiting vehicle has a record");
            record.tf = Some(tf);
            record.distance = length;
            let travel_time = tf - record.t0;
            self.pending.push(ResequenceEvent {
                kind: ResequenceKind::VehicleExited,
                time: t + dt,
                cz: mp,
            });
            self.trace.emit(TraceLevel::Summary, &TraceRecord::Exit { t: tf, id, travel_time });
        }

        let unsafe_tolerance = self.config.unsafe_tolerance;
        let ids: Vec<VehicleId> = self.world.vehicles().iter().map(|v| v.id).collect();
        for id in ids {
            let v = self.world.get(id).expect("listed vehicle").v;
            let violated = self
                .world
                .physical_predecessor(id)
                .is_some_and(|(_, gap)| metrics::is_unsafe(gap, v, &limits, unsafe_tolerance));
            if let Some(r) = self.ledger.vehicles.get_mut(&id) {
                r.unsafe_.update(violated);
            }
        }

        self.step += 1;
        if self.trace.enabled(TraceLevel::Full) {
            let vehicles = self
                .world
                .vehicles()
                .iter()
                .map(|v| {
                    let r = &self.ledger.vehicles[&v.id];
                    StepState {
                        id: v.id,
                        segment: v.segment(),
                        x: v.x,
                        v: v.v,
                        u: applied.get(&v.id).copied().unwrap_or(0.0),
                        unsafe_steps: r.unsafe_.steps,
                        hard_decel_steps: r.hard_decel.steps,
                    }
                })
                .collect();
            self.trace.emit(TraceLevel::Full, &TraceRecord::Step { t: self.time(), vehicles });
        }
    }

    fn layout_route_length(&self, origin: usize, exit: usize) -> f64 {
        self.world
            .layout()
            .route(origin, exit)
            .map(|r| r.total_length())
            .unwrap_or(0.0)
    }
}
