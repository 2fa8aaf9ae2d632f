use std::time::Instant;

use serde::Serialize;

use crate::vehicle::VehicleLimits;

use super::constraints::{build_input_bounds, LinearRow};

/// One horizon program in the decision vector `u_0..u_{H-1}`:
///
/// ```text
/// J(u) = Σ_h  u_h²/U² + w1 (v_{h+1} - v_d)² + w2_h v_{h+1}²
/// ```
///
/// subject to the input box and `rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub dt: f64,
    pub x0: f64,
    pub v0: f64,
    pub limits: VehicleLimits,
    /// `λ1 / (v_max - v_min)²`
    pub speed_weight: f64,
    pub v_desired: f64,
    /// `λ2 κ_{h+1} / (κ_max v_max²)` per step.
    pub curvature_weights: Vec<f64>,
    pub rows: Vec<LinearRow>,
    /// Speed-barrier gain used by the braking fallback.
    pub fallback_gain: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// No input satisfies all rows; the inputs are the braking fallback.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcSolution {
    pub u: Vec<f64>,
    /// Speeds at steps `0..=H`.
    pub v: Vec<f64>,
    /// Positions at steps `0..=H`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub passes: usize,
    /// Largest row violation of `u`.
    pub max_violation: f64,
    #[serde(skip)]
    pub wall_time_us: u64,
}

impl MpcProblem {
    /// Problem with only the input box; rows can be pushed afterwards.
    pub fn unconstrained(horizon: usize, dt: f64, v0: f64, limits: VehicleLimits, lambda1: f64, v_desired: f64) -> Self {
        Self {
            horizon,
            dt,
            x0: 0.0,
            v0,
            limits,
            speed_weight: lambda1 / (limits.v_max - limits.v_min).powi(2),
            v_desired,
            curvature_weights: vec![0.0; horizon],
            rows: Vec::new(),
            fallback_gain: 1.0,
            tolerance: 1e-6,
        }
    }

    pub fn speeds(&self, u: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.horizon + 1);
        v.push(self.v0);
        for (h, uh) in u.iter().enumerate() {
            v.push(v[h] + self.dt * uh);
        }
        v
    }

    pub fn positions(&self, u: &[f64]) -> Vec<f64> {
        let v = self.speeds(u);
        let mut x = Vec::with_capacity(self.horizon + 1);
        x.push(self.x0);
        for h in 0..self.horizon {
            x.push(x[h] + self.dt * v[h]);
        }
        x
    }

    /// Direct evaluation of the objective along the Euler rollout.
    pub fn objective(&self, u: &[f64]) -> f64 {
        let v = self.speeds(u);
        let u_scale = self.limits.u_scale_sq();
        (0..self.horizon)
            .map(|h| {
                let next = v[h + 1];
                u[h] * u[h] / u_scale
                    + self.speed_weight * (next - self.v_desired).powi(2)
                    + self.curvature_weights[h] * next * next
            })
            .sum()
    }

    /// Box rows followed by the problem rows.
    pub fn all_rows(&self) -> Vec<LinearRow> {
        let mut rows: Vec<LinearRow> = (0..self.horizon)
            .flat_map(|h| build_input_bounds(h, self.horizon, &self.limits))
            .collect();
        rows.extend(self.rows.iter().cloned());
        rows
    }

    pub fn max_violation(&self, u: &[f64]) -> f64 {
        self.all_rows().iter().map(|r| -r.slack(u)).fold(0.0, f64::max)
    }

    /// `Q`, `c` and the constant of `J(u) = ½ uᵀQu + cᵀu + const`.
    pub fn quadratic_form(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.horizon;
        let t = self.dt;
        let u_scale = self.limits.u_scale_sq();
        let weight = |h: usize| self.speed_weight + self.curvature_weights[h];
        // suffix sums of the per-step weights
        let mut tail = vec![0.0; n + 1];
        let mut tail_lin = vec![0.0; n + 1];
        for h in (0..n).rev() {
            tail[h] = tail[h + 1] + weight(h);
            tail_lin[h] = tail_lin[h + 1]
                + self.speed_weight * (self.v0 - self.v_desired)
                + self.curvature_weights[h] * self.v0;
        }
        let mut q = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let diag = if j == k { 1.0 / u_scale } else { 0.0 };
                q[j * n + k] = 2.0 * (diag + t * t * tail[j.max(k)]);
            }
        }
        let c = (0..n).map(|j| 2.0 * t * tail_lin[j]).collect();
        let constant = (0..n)
            .map(|h| self.speed_weight * (self.v0 - self.v_desired).powi(2) + self.curvature_weights[h] * self.v0 * self.v0)
            .sum();
        (q, c, constant)
    }

    /// Most negative inputs allowed by the box and the speed conditions.
    pub fn fallback_controls(&self) -> Vec<f64> {
        fallback_controls(self.v0, self.horizon, self.dt, self.fallback_gain, &self.limits)
    }
}

/// Maximal braking that keeps the speed-barrier and speed-bound conditions.
pub fn fallback_controls(v0: f64, horizon: usize, dt: f64, k2: f64, limits: &VehicleLimits) -> Vec<f64> {
    let mut v = v0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u = limits
            .u_min
            .max(-k2 * (v - limits.v_min))
            .max((limits.v_min - v) / dt)
            .min(limits.u_max);
        out.push(u);
        v += dt * u;
    }
    out
}

/// Solves the program with a dense dual active-set method.
pub fn assemble_and_solve(problem: &MpcProblem) -> MpcSolution {
    let start = Instant::now();
    let n = problem.horizon;
    let (mut q, c, _) = problem.quadratic_form();
    let rows = problem.all_rows();
    let mut a = Vec::with_capacity(rows.len() * n);
    let mut b = Vec::with_capacity(rows.len());
    for r in &rows {
        a.extend_from_slice(&r.a);
        b.push(r.b);
    }

    let solved = quadprog::solve_qp(&mut q, &c, &a, &b, 0, false);
    let (u, status, iterations) = match solved {
        Ok(sol) => {
            let u = sol.sol;
            if problem.max_violation(&u) <= problem.tolerance {
                (u, SolveStatus::Optimal, sol.iter)
            } else {
                (problem.fallback_controls(), SolveStatus::Infeasible, sol.iter)
            }
        }
        Err(_) => (problem.fallback_controls(), SolveStatus::Infeasible, 0),
    };

    MpcSolution {
        v: problem.speeds(&u),
        x: problem.positions(&u),
        objective: problem.objective(&u),
        max_violation: problem.max_violation(&u),
        u,
        status,
        iterations,
        passes: 1,
        wall_time_us: start.elapsed().as_micros() as u64,
    }
}

/// Per-step objective terms, each normalized to `[0, 1]` on the
/// admissible range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveTerms {
    pub energy: f64,
    pub speed: f64,
    pub curvature: f64,
}

impl ObjectiveTerms {
    pub fn evaluate(u: f64, v: f64, kappa: f64, kappa_max: f64, v_desired: f64, limits: &VehicleLimits) -> Self {
        Self {
            energy: u * u / limits.u_scale_sq(),
            speed: (v - v_desired).powi(2) / (limits.v_max - limits.v_min).powi(2),
            curvature: if kappa_max > 0.0 {
                kappa * v * v / (kappa_max * limits.v_max.powi(2))
            } else {
                0.0
            },
        }
    }

    pub fn weighted(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.energy + lambda1 * self.speed + lambda2 * self.curvature
    }
}
