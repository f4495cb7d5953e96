//! Fitting a policy to an open-loop reference before the real optimisation.

use serde::{Deserialize, Serialize};

use super::objective::PolicyObjective;
use super::optim::{minimize_logged, IterContext, OptimizerConfig};
use super::profile::ReferenceProfile;
use super::report::{Phase, RunReport};
use crate::dynamics::{forward_problem, ControlProblem, Windowed};
use crate::error::{Error, Result};
use crate::odeint::IntegratorConfig;
use crate::policy::PolicyNetwork;
use crate::scalar::Real;

/// Tracking problem `l = sum_i ((u_i - u_ref,i(t)) / (ub_i - lb_i))^2`,
/// no terminal cost and no constraints.
pub struct Tracking<P, T> {
    pub inner: P,
    profile: ReferenceProfile<T>,
    weight: Vec<T>,
}

impl<T: Real, P: ControlProblem<T>> Tracking<P, T> {
    pub fn new(inner: P, profile: ReferenceProfile<T>) -> Result<Self> {
        profile.validate(inner.n_u())?;
        let weight = inner
            .u_lb()
            .iter()
            .zip(inner.u_ub())
            .map(|(&l, &u)| T::one() / ((u - l) * (u - l)))
            .collect();
        Ok(Self { inner, profile, weight })
    }
}

impl<T: Real, P: ControlProblem<T>> ControlProblem<T> for Tracking<P, T> {
    forward_problem!(inner);

    fn tf(&self) -> T {
        self.inner.tf()
    }

    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.inner.jac_x(t, x, u, out)
    }

    fn running_cost(&self, t: T, _x: &[T], u: &[T]) -> T {
        let r = self.profile.eval(t);
        u.iter()
            .zip(&r)
            .zip(&self.weight)
            .fold(T::zero(), |s, ((&ui, &ri), &w)| s + w * (ui - ri) * (ui - ri))
    }

    fn cost_partials(&self, t: T, _x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        lx.fill(T::zero());
        let r = self.profile.eval(t);
        for i in 0..lu.len() {
            lu[i] = T::lit(2.0) * self.weight[i] * (u[i] - r[i]);
        }
    }

    fn terminal_cost(&self, _x: &[T]) -> T {
        T::zero()
    }

    fn terminal_cost_grad(&self, _x: &[T], out: &mut [T]) {
        out.fill(T::zero());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreconditionConfig {
    /// Fractions of the horizon, fitted in order.
    pub windows: Vec<f64>,
    pub optimizer: OptimizerConfig,
}

impl Default for PreconditionConfig {
    fn default() -> Self {
        Self {
            windows: vec![0.25, 0.5, 0.75, 1.0],
            optimizer: OptimizerConfig::adamw(0.02, 150),
        }
    }
}

impl PreconditionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() || self.windows.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::InvalidConfig("precondition windows must lie in (0, 1]".into()));
        }
        self.optimizer.validate()
    }
}

/// Fits `net` to `profile` on growing windows `[t0, t0 + w (tf - t0)]`.
pub fn precondition<T: Real>(
    prob: &dyn ControlProblem<T>,
    mut net: PolicyNetwork<T>,
    profile: &ReferenceProfile<T>,
    cfg: &PreconditionConfig,
    integrator: &IntegratorConfig<T>,
) -> Result<(PolicyNetwork<T>, RunReport<T>)> {
    cfg.validate()?;
    let mut report = RunReport::default();
    let (t0, tf) = (prob.t0(), prob.tf());
    for (k, &w) in cfg.windows.iter().enumerate() {
        let windowed = Windowed {
            inner: prob,
            t_end: t0 + T::lit(w) * (tf - t0),
        };
        let tracking = Tracking::new(windowed, profile.clone())?;
        let mut obj = PolicyObjective::new(&tracking, net.clone(), *integrator);
        let ctx = IterContext {
            phase: Phase::Precondition,
            round: k,
            ..Default::default()
        };
        let (theta, rep) = minimize_logged(&mut obj, &net.flatten(), &cfg.optimizer, ctx)?;
        net.unflatten(&theta)?;
        log::debug!("precondition window {w}: tracking cost {:?}", rep.best_cost);
        report.extend(rep);
    }
    Ok((net, report))
}
