use super::optim::Objective;
use crate::adjoint::{cost_breakdown, grad, simulate};
use crate::dynamics::ControlProblem;
use crate::error::Result;
use crate::odeint::IntegratorConfig;
use crate::penalty::BarrierParams;
use crate::policy::PolicyNetwork;
use crate::scalar::Real;

/// Closed-loop cost of a policy as a function of its flat parameters.
pub struct PolicyObjective<'a, T: Real> {
    prob: &'a dyn ControlProblem<T>,
    net: PolicyNetwork<T>,
    cfg: IntegratorConfig<T>,
    split: Option<(&'a dyn ControlProblem<T>, Vec<BarrierParams<T>>)>,
}

impl<'a, T: Real> PolicyObjective<'a, T> {
    /// `net` supplies the architecture; its parameters are overwritten.
    pub fn new(prob: &'a dyn ControlProblem<T>, net: PolicyNetwork<T>, cfg: IntegratorConfig<T>) -> Self {
        Self { prob, net, cfg, split: None }
    }

    /// Reports objective and penalty separately, evaluated on the unpenalised
    /// `base` problem with barrier parameters `params`.
    pub fn with_breakdown(mut self, base: &'a dyn ControlProblem<T>, params: Vec<BarrierParams<T>>) -> Self {
        self.split = Some((base, params));
        self
    }

    pub fn network(&self) -> &PolicyNetwork<T> {
        &self.net
    }
}

impl<T: Real> Objective<T> for PolicyObjective<'_, T> {
    fn value(&mut self, theta: &[T]) -> Result<T> {
        self.net.unflatten(theta)?;
        simulate(self.prob, &self.net, &self.cfg).map(|(_, c)| c)
    }

    fn value_grad(&mut self, theta: &[T]) -> Result<(T, Vec<T>)> {
        self.net.unflatten(theta)?;
        let g = grad(self.prob, &self.net, &self.cfg)?;
        Ok((g.cost, g.grad))
    }

    fn breakdown(&mut self, theta: &[T]) -> Option<(T, T)> {
        let (base, params) = self.split.as_ref()?;
        self.net.unflatten(theta).ok()?;
        let b = cost_breakdown(*base, &self.net, params, &self.cfg).ok()?;
        Some((b.objective, b.penalty(params)))
    }
}
