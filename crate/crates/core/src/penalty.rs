//! Relaxed logarithmic barriers for state constraints and the schedule that
//! tightens them between optimisation rounds.
//!
//! For a margin `z` (feasible when `z > 0`) the penalty is `-ln z` above the
//! relaxation parameter `delta` and the truncated exponential
//! `exp(1 - z/delta) - 1 - ln delta` below it. The two branches meet with
//! matching value and slope at `z = delta`, and the penalty is finite for
//! infeasible margins.

use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_problem, ControlProblem, PathConstraint, TerminalConstraint};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Weight and relaxation of one constraint's barrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams<T> {
    pub alpha: T,
    pub delta: T,
}

impl<T: Real> BarrierParams<T> {
    pub fn new(alpha: T, delta: T) -> Result<Self> {
        if !(alpha > T::zero()) || !(delta > T::zero()) {
            return Err(Error::InvalidConfig(
                "barrier alpha and delta must be positive".into(),
            ));
        }
        Ok(Self { alpha, delta })
    }
}

/// Relaxed barrier `P(z; delta)` (unweighted).
pub fn relaxed_log<T: Real>(z: T, delta: T) -> T {
    if z > delta {
        -z.ln()
    } else {
        (T::one() - z / delta).exp() - T::one() - delta.ln()
    }
}

/// `dP/dz`.
pub fn relaxed_log_deriv<T: Real>(z: T, delta: T) -> T {
    if z > delta {
        -z.recip()
    } else {
        -(T::one() - z / delta).exp() / delta
    }
}

/// Knobs of the outer barrier-tightening loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSchedule {
    /// Multiplicative decrease of `delta` per shrink, in `(0, 1)`.
    pub delta_rate: f64,
    /// Multiplicative increase of `alpha` on a stalled round, `> 1`.
    pub alpha_rate: f64,
    /// Desired penalty / objective ratio at the start of a round.
    pub target_ratio: f64,
    pub max_rounds: usize,
    /// Starting relaxation, in units of the scaled margin `h / scale`.
    pub initial_delta: f64,
    pub delta_floor: f64,
    /// A round is stalled when the relative loss decrease is below this.
    pub stall_tol: f64,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        Self {
            delta_rate: 0.7,
            alpha_rate: 2.0,
            target_ratio: 0.1,
            max_rounds: 12,
            initial_delta: 0.1,
            delta_floor: 1e-6,
            stall_tol: 1e-4,
        }
    }
}

impl BarrierSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("barrier schedule: {m}")));
        if !(self.delta_rate > 0.0 && self.delta_rate < 1.0) {
            return bad("delta_rate must lie in (0, 1)");
        }
        if !(self.alpha_rate > 1.0) {
            return bad("alpha_rate must exceed 1");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1");
        }
        if !(self.target_ratio > 0.0) || !(self.initial_delta > 0.0) || !(self.delta_floor > 0.0) {
            return bad("target_ratio, initial_delta and delta_floor must be positive");
        }
        Ok(())
    }
}

/// Outcome of one optimisation round, as seen by the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundReport<T> {
    /// Zero-based index of the round that just finished.
    pub round: usize,
    pub objective: T,
    pub penalty: T,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleStep<T> {
    Continue(Vec<BarrierParams<T>>),
    Terminate,
}

/// Tightens the barriers after a round.
///
/// Normally every `delta` is multiplied by `delta_rate`, repeatedly, until the
/// penalty share `penalty / |objective|` climbs back to `target_ratio`, the
/// penalty stops reacting to `delta` (all margins above it), or the floor is
/// reached. A stalled round multiplies every `alpha` by `alpha_rate` instead.
/// `penalty_at` evaluates the total weighted penalty for candidate params.
pub fn update_schedule<T, F>(
    state: &[BarrierParams<T>],
    report: &RoundReport<T>,
    sched: &BarrierSchedule,
    mut penalty_at: F,
) -> ScheduleStep<T>
where
    T: Real,
    F: FnMut(&[BarrierParams<T>]) -> T,
{
    if report.round + 1 >= sched.max_rounds {
        return ScheduleStep::Terminate;
    }
    let floor = T::lit(sched.delta_floor);
    let at_floor = state.iter().all(|p| p.delta <= floor);
    if report.stalled || at_floor {
        let alpha_rate = T::lit(sched.alpha_rate);
        return ScheduleStep::Continue(
            state
                .iter()
                .map(|p| BarrierParams {
                    alpha: p.alpha * alpha_rate,
                    delta: p.delta,
                })
                .collect(),
        );
    }

    let rate = T::lit(sched.delta_rate);
    let target = T::lit(sched.target_ratio);
    let scale = report.objective.abs().max(T::min_positive_value());
    let mut params = state.to_vec();
    let mut previous = report.penalty;
    loop {
        for p in &mut params {
            p.delta = (p.delta * rate).max(floor);
        }
        if params.iter().all(|p| p.delta <= floor) {
            break;
        }
        let penalty = penalty_at(&params);
        if !penalty.is_finite() || penalty / scale >= target {
            break;
        }
        let tol = T::lit(1e-12) * previous.abs().max(T::one());
        if (penalty - previous).abs() <= tol {
            break;
        }
        previous = penalty;
    }
    ScheduleStep::Continue(params)
}

/// Initial weights so that each constraint contributes an equal share of
/// `target_ratio * |objective|` at the starting policy.
///
/// `raw_penalties[i]` is the unweighted penalty of constraint `i` (integral
/// for path constraints, terminal value otherwise). A constraint whose raw
/// penalty is (nearly) zero is weighted as if it were one.
pub fn auto_scale_alpha<T: Real>(raw_penalties: &[T], objective: T, target_ratio: T) -> Vec<T> {
    let n = raw_penalties.len();
    if n == 0 {
        return Vec::new();
    }
    let share = target_ratio * objective.abs().max(T::lit(1e-8)) / T::from_usize(n).unwrap();
    raw_penalties
        .iter()
        .map(|&p| {
            let mag = p.abs();
            if mag > T::lit(1e-8) && mag.is_finite() {
                share / mag
            } else {
                share
            }
        })
        .collect()
}

/// A problem whose running and terminal costs carry the weighted barriers of
/// its constraints. Path constraints come first in `params`, then terminal.
#[derive(Debug, Clone)]
pub struct Penalized<P, T> {
    pub inner: P,
    params: Vec<BarrierParams<T>>,
}

pub fn penalized_problem<T: Real, P: ControlProblem<T>>(prob: P, params: &[BarrierParams<T>]) -> Result<Penalized<P, T>> {
    let expected = prob.path_constraints().len() + prob.terminal_constraints().len();
    if params.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "barrier parameters per constraint",
            expected,
            got: params.len(),
        });
    }
    Ok(Penalized {
        inner: prob,
        params: params.to_vec(),
    })
}

impl<P, T: Real> Penalized<P, T> {
    pub fn params(&self) -> &[BarrierParams<T>] {
        &self.params
    }
}

/// Unweighted barrier of one path constraint.
pub fn path_barrier<T: Real>(c: &PathConstraint<T>, x: &[T], u: &[T], delta: T) -> T {
    relaxed_log(c.margin(x, u) / c.scale, delta)
}

pub fn terminal_barrier<T: Real>(c: &TerminalConstraint<T>, x: &[T], delta: T) -> T {
    relaxed_log(c.margin(x) / c.scale, delta)
}

impl<T: Real, P: ControlProblem<T>> ControlProblem<T> for Penalized<P, T> {
    forward_problem!(inner);

    fn tf(&self) -> T {
        self.inner.tf()
    }

    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.inner.jac_x(t, x, u, out)
    }

    fn running_cost(&self, t: T, x: &[T], u: &[T]) -> T {
        self.inner
            .path_constraints()
            .iter()
            .zip(&self.params)
            .fold(self.inner.running_cost(t, x, u), |acc, (c, p)| {
                acc + p.alpha * path_barrier(c, x, u, p.delta)
            })
    }

    fn cost_partials(&self, t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        self.inner.cost_partials(t, x, u, lx, lu);
        let mut hx = vec![T::zero(); x.len()];
        let mut hu = vec![T::zero(); u.len()];
        for (c, p) in self.inner.path_constraints().iter().zip(&self.params) {
            let z = c.margin(x, u) / c.scale;
            let w = p.alpha * relaxed_log_deriv(z, p.delta) / c.scale;
            c.gradient(x, u, &mut hx, &mut hu);
            lx.iter_mut().zip(&hx).for_each(|(l, h)| *l = *l + w * *h);
            lu.iter_mut().zip(&hu).for_each(|(l, h)| *l = *l + w * *h);
        }
    }

    fn terminal_cost(&self, x: &[T]) -> T {
        let n_path = self.inner.path_constraints().len();
        self.inner
            .terminal_constraints()
            .iter()
            .zip(&self.params[n_path..])
            .fold(self.inner.terminal_cost(x), |acc, (c, p)| {
                acc + p.alpha * terminal_barrier(c, x, p.delta)
            })
    }

    fn terminal_cost_grad(&self, x: &[T], out: &mut [T]) {
        self.inner.terminal_cost_grad(x, out);
        let n_path = self.inner.path_constraints().len();
        let mut hx = vec![T::zero(); x.len()];
        for (c, p) in self.inner.terminal_constraints().iter().zip(&self.params[n_path..]) {
            let z = c.margin(x) / c.scale;
            let w = p.alpha * relaxed_log_deriv(z, p.delta) / c.scale;
            c.gradient(x, &mut hx);
            out.iter_mut().zip(&hx).for_each(|(o, h)| *o = *o + w * *h);
        }
    }

    fn path_constraints(&self) -> &[PathConstraint<T>] {
        self.inner.path_constraints()
    }

    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        self.inner.terminal_constraints()
    }
}
