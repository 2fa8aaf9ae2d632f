//! Linear-in-control constraint rows for the horizon program.
//!
//! Every row reads `a · u <= b` over the decision vector `u_0..u_{H-1}`.
//! Predicted speeds and positions are affine in `u` under the Euler model,
//! so the barrier conditions stay linear once the few nonlinear pieces are
//! frozen on a nominal trajectory.

use serde::{Deserialize, Serialize};

use crate::vehicle::VehicleLimits;

use super::NeighborPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    /// Gain of the finite-time term.
    pub p: f64,
    /// Exponent of the finite-time term, in (0, 1).
    pub q: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4: 1.0,
            k5: 1.0,
            p: 1.0,
            q: 0.5,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<(), String> {
        let gains = [self.k1, self.k2, self.k3, self.k4, self.k5, self.p];
        if gains.iter().any(|g| !(*g > 0.0)) {
            return Err("barrier gains must be positive".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err("q must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    InputMax,
    InputMin,
    SpeedMax,
    SpeedMin,
    SpeedCbfMax,
    SpeedCbfMin,
    RearEnd,
    Merging,
    Lateral,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRow {
    pub kind: RowKind,
    pub step: usize,
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearRow {
    pub fn new(kind: RowKind, step: usize, a: Vec<f64>, b: f64) -> Self {
        Self { kind, step, a, b }
    }

    pub fn lhs(&self, u: &[f64]) -> f64 {
        self.a.iter().zip(u).map(|(a, u)| a * u).sum()
    }

    /// `b - a·u`; negative means violated.
    pub fn slack(&self, u: &[f64]) -> f64 {
        self.b - self.lhs(u)
    }
}

/// `c + a·u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub c: f64,
    pub a: Vec<f64>,
}

impl Affine {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.c + self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>()
    }

    fn scaled(&self, k: f64) -> Affine {
        Affine {
            c: self.c * k,
            a: self.a.iter().map(|a| a * k).collect(),
        }
    }

    fn plus(&self, other: &Affine) -> Affine {
        Affine {
            c: self.c + other.c,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }

    fn add_input(mut self, step: usize, k: f64) -> Affine {
        self.a[step] += k;
        self
    }

    /// Row for `self >= 0`.
    fn nonnegative(&self, kind: RowKind, step: usize) -> LinearRow {
        LinearRow::new(kind, step, self.a.iter().map(|a| -a).collect(), self.c)
    }
}

/// `v_h = v_0 + T Σ_{k<h} u_k`
pub fn speed_affine(v0: f64, dt: f64, horizon: usize, h: usize) -> Affine {
    let mut a = vec![0.0; horizon];
    for ak in a.iter_mut().take(h) {
        *ak = dt;
    }
    Affine { c: v0, a }
}

/// `x_h = x_0 + h T v_0 + T² Σ_{k<h} (h-1-k) u_k`
pub fn position_affine(x0: f64, v0: f64, dt: f64, horizon: usize, h: usize) -> Affine {
    let mut a = vec![0.0; horizon];
    for (k, ak) in a.iter_mut().enumerate().take(h) {
        *ak = dt * dt * (h - 1 - k) as f64;
    }
    Affine {
        c: x0 + h as f64 * dt * v0,
        a,
    }
}

fn unit(horizon: usize, h: usize, k: f64) -> Affine {
    Affine {
        c: 0.0,
        a: vec![0.0; horizon],
    }
    .add_input(h, k)
}

/// Input box for step `h`.
pub fn build_input_bounds(h: usize, horizon: usize, limits: &VehicleLimits) -> [LinearRow; 2] {
    let e = unit(horizon, h, 1.0);
    [
        LinearRow::new(RowKind::InputMax, h, e.a.clone(), limits.u_max),
        LinearRow::new(RowKind::InputMin, h, e.a.iter().map(|a| -a).collect(), -limits.u_min),
    ]
}

/// Speed bounds on `v_{h+1}`.
pub fn build_speed_bounds(h: usize, v0: f64, dt: f64, horizon: usize, limits: &VehicleLimits) -> [LinearRow; 2] {
    let next = speed_affine(v0, dt, horizon, h + 1);
    let upper = Affine {
        c: limits.v_max - next.c,
        a: next.a.iter().map(|a| -a).collect(),
    };
    let lower = Affine {
        c: next.c - limits.v_min,
        a: next.a.clone(),
    };
    [
        upper.nonnegative(RowKind::SpeedMax, h),
        lower.nonnegative(RowKind::SpeedMin, h),
    ]
}

/// `-u + k1 (v_max - v) >= 0` and `u + k2 (v - v_min) >= 0` at step `h`.
pub fn build_speed_cbfs(
    h: usize,
    v0: f64,
    dt: f64,
    horizon: usize,
    limits: &VehicleLimits,
    cbf: &CbfParams,
) -> [LinearRow; 2] {
    let v = speed_affine(v0, dt, horizon, h);
    let upper = Affine {
        c: cbf.k1 * (limits.v_max - v.c),
        a: v.a.iter().map(|a| -cbf.k1 * a).collect(),
    }
    .add_input(h, -1.0);
    let lower = Affine {
        c: cbf.k2 * (v.c - limits.v_min),
        a: v.a.iter().map(|a| cbf.k2 * a).collect(),
    }
    .add_input(h, 1.0);
    [
        upper.nonnegative(RowKind::SpeedCbfMax, h),
        lower.nonnegative(RowKind::SpeedCbfMin, h),
    ]
}

/// `b3 = z - φ v - δ`
pub fn rear_end_barrier(gap: f64, v: f64, limits: &VehicleLimits) -> f64 {
    gap - limits.phi * v - limits.delta
}

/// `v_p - v - φ u + k3 b3 >= 0` at step `h`, with the gap propagated from
/// the current gap `gap0` and the predecessor's predicted motion.
#[allow(clippy::too_many_arguments)]
pub fn build_rear_end_cbf(
    h: usize,
    x0: f64,
    v0: f64,
    gap0: f64,
    pred: &NeighborPrediction,
    dt: f64,
    horizon: usize,
    limits: &VehicleLimits,
    cbf: &CbfParams,
) -> LinearRow {
    let v = speed_affine(v0, dt, horizon, h);
    let x = position_affine(x0, v0, dt, horizon, h);
    let pred_advance = pred.x[h] - pred.x[0];
    // z_h = gap0 + pred_advance - (x_h - x0)
    let gap = Affine {
        c: gap0 + pred_advance + x0 - x.c,
        a: x.a.iter().map(|a| -a).collect(),
    };
    let barrier = gap.plus(&v.scaled(-limits.phi)).plus(&Affine {
        c: -limits.delta,
        a: vec![0.0; horizon],
    });
    let expr = barrier
        .scaled(cbf.k3)
        .plus(&v.scaled(-1.0))
        .plus(&Affine {
            c: pred.v[h],
            a: vec![0.0; horizon],
        })
        .add_input(h, -limits.phi);
    expr.nonnegative(RowKind::RearEnd, h)
}

/// `b4 = (L_i - x_i) - (L_m - x_m) - (φ/L_m) x_m v_i - δ`
pub fn merging_barrier(own_remaining: f64, conflict_x: f64, conflict_length: f64, v: f64, limits: &VehicleLimits) -> f64 {
    own_remaining - (conflict_length - conflict_x) - limits.phi / conflict_length * conflict_x * v - limits.delta
}

/// Predicted time for the conflicting vehicle to reach its merging point;
/// `None` when it is too slow for a meaningful estimate.
pub fn conflict_arrival_time(conflict_x: f64, conflict_v: f64, conflict_length: f64) -> Option<f64> {
    (conflict_v >= 0.1).then(|| (conflict_length - conflict_x).max(0.0) / conflict_v)
}

/// Finite-time barrier row at step `h`:
/// `v_m - v - (φ/L_m)(x_m u + v_m v) + p sgn(b4)|b4|^q >= 0`.
/// Only the `|b4|^q` term is taken from the nominal trajectory
/// (`nominal_x`, `nominal_v` at step `h`).
#[allow(clippy::too_many_arguments)]
pub fn build_merging_clbf(
    h: usize,
    v0: f64,
    own_length: f64,
    nominal_x: f64,
    nominal_v: f64,
    conflict: &NeighborPrediction,
    conflict_length: f64,
    dt: f64,
    horizon: usize,
    limits: &VehicleLimits,
    cbf: &CbfParams,
) -> LinearRow {
    let xm = conflict.x[h].min(conflict_length);
    let vm = conflict.v[h];
    let ratio = limits.phi / conflict_length;
    let b4 = merging_barrier(own_length - nominal_x, xm, conflict_length, nominal_v, limits);
    let drive = cbf.p * b4.signum() * b4.abs().powf(cbf.q);
    let v = speed_affine(v0, dt, horizon, h);
    let expr = v
        .scaled(-(1.0 + ratio * vm))
        .plus(&Affine {
            c: vm + drive,
            a: vec![0.0; horizon],
        })
        .add_input(h, -ratio * xm);
    expr.nonnegative(RowKind::Merging, h)
}

/// `b5 = w g - κ v² h`
pub fn lateral_barrier(kappa: f64, v: f64, limits: &VehicleLimits) -> f64 {
    limits.half_width * limits.gravity - kappa * v * v * limits.height
}

/// Rollover row at step `h`, `-2κ h v u + k5 b5 >= 0`, with `v²` expanded
/// to first order about the nominal speed `nominal_v`. No row on straight road.
#[allow(clippy::too_many_arguments)]
pub fn build_lateral_cbf(
    h: usize,
    v0: f64,
    kappa: f64,
    nominal_v: f64,
    dt: f64,
    horizon: usize,
    limits: &VehicleLimits,
    cbf: &CbfParams,
) -> Option<LinearRow> {
    if kappa <= 0.0 {
        return None;
    }
    let v = speed_affine(v0, dt, horizon, h);
    let kh = kappa * limits.height;
    // v² ≈ 2 v̄ v - v̄²
    let expr = v
        .scaled(-2.0 * cbf.k5 * kh * nominal_v)
        .plus(&Affine {
            c: cbf.k5 * (limits.half_width * limits.gravity + kh * nominal_v * nominal_v),
            a: vec![0.0; horizon],
        })
        .add_input(h, -2.0 * kh * nominal_v);
    Some(expr.nonnegative(RowKind::Lateral, h))
}
