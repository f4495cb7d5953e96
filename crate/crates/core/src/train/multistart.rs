use serde::{Deserialize, Serialize};

use super::objective::PolicyObjective;
use super::optim::{minimize_logged, IterContext, OptimizerConfig};
use super::precondition::{precondition, PreconditionConfig};
use super::profile::{default_pool, ReferenceProfile};
use super::report::{Phase, RunReport};
use crate::adjoint::simulate;
use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};
use crate::odeint::IntegratorConfig;
use crate::policy::PolicyNetwork;
use crate::rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultistartConfig {
    pub n_starts: usize,
    /// Hidden layer widths; input and output sizes come from the problem.
    pub hidden: Vec<usize>,
    /// Levels of each random reference profile.
    pub segments: usize,
    /// Skipped when absent.
    pub precondition: Option<PreconditionConfig>,
    /// Optimisers applied in sequence to the unpenalised cost.
    pub stages: Vec<OptimizerConfig>,
    pub parallel: bool,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            n_starts: 1,
            hidden: vec![16, 16],
            segments: 4,
            precondition: Some(PreconditionConfig::default()),
            stages: vec![OptimizerConfig::adamw(0.01, 300), OptimizerConfig::lbfgs(200)],
            parallel: false,
        }
    }
}

impl MultistartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("need at least one start and non-empty hidden layers".into()));
        }
        if let Some(p) = &self.precondition {
            p.validate()?;
        }
        self.stages.iter().try_for_each(OptimizerConfig::validate)
    }
}

/// Layer widths `[n_x, hidden.., n_u]` for `prob`.
pub fn layer_sizes<T: Real>(prob: &dyn ControlProblem<T>, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(prob.n_x()).chain(hidden.iter().copied()).chain(std::iter::once(prob.n_u())).collect()
}

/// Glorot-initialised network for `prob` drawn from stream `stream` of `seed`.
pub fn init_network<T: Real>(prob: &dyn ControlProblem<T>, hidden: &[usize], seed: u64, stream: u64) -> Result<PolicyNetwork<T>> {
    let mut rng = rng::stream(seed, stream);
    PolicyNetwork::glorot(&layer_sizes(prob, hidden), prob.u_lb(), prob.u_ub(), &mut rng)?.with_input_scale(&prob.state_scale())
}

pub struct StartOutcome<T> {
    pub start: usize,
    pub net: PolicyNetwork<T>,
    pub cost: T,
    pub report: RunReport<T>,
}

pub struct MultistartOutcome<T> {
    pub best: usize,
    pub starts: Vec<Result<StartOutcome<T>>>,
}

impl<T> MultistartOutcome<T> {
    pub fn best(&self) -> &StartOutcome<T> {
        self.starts[self.best].as_ref().expect("best start succeeded")
    }

    pub fn into_best(mut self) -> StartOutcome<T> {
        self.starts.swap_remove(self.best).expect("best start succeeded")
    }
}

/// Preconditions and optimises the unpenalised cost of `prob` from one
/// initialisation.
pub fn run_start<T: Real>(
    prob: &dyn ControlProblem<T>,
    mut net: PolicyNetwork<T>,
    profile: &ReferenceProfile<T>,
    cfg: &MultistartConfig,
    integrator: &IntegratorConfig<T>,
) -> Result<(PolicyNetwork<T>, T, RunReport<T>)> {
    let mut report = RunReport::default();
    if let Some(pc) = &cfg.precondition {
        let (n, rep) = precondition(prob, net, profile, pc, integrator)?;
        net = n;
        report.extend(rep);
    }
    for (k, stage) in cfg.stages.iter().enumerate() {
        let mut obj = PolicyObjective::new(prob, net.clone(), *integrator);
        let ctx = IterContext {
            phase: Phase::Unconstrained,
            round: k,
            ..Default::default()
        };
        let (theta, rep) = minimize_logged(&mut obj, &net.flatten(), stage, ctx)?;
        net.unflatten(&theta)?;
        report.extend(rep);
    }
    let (_, cost) = simulate(prob, &net, integrator)?;
    report.best_cost = Some(cost);
    Ok((net, cost, report))
}

/// The default profile pool for `prob`: mid-range control first, then one
/// seeded random profile per further start.
pub fn pool_for<T: Real>(prob: &dyn ControlProblem<T>, cfg: &MultistartConfig, seed: u64) -> Vec<ReferenceProfile<T>> {
    default_pool(prob.u_lb(), prob.u_ub(), prob.t0(), prob.tf(), cfg.n_starts.saturating_sub(1), cfg.segments, seed)
}

/// Runs `n_starts` independent starts. Start `k` uses RNG stream `k` and
/// profile `k` of `pool` (cyclically). The result does not depend on
/// `parallel`.
pub fn multistart<T: Real>(
    prob: &dyn ControlProblem<T>,
    pool: &[ReferenceProfile<T>],
    cfg: &MultistartConfig,
    integrator: &IntegratorConfig<T>,
    seed: u64,
) -> Result<MultistartOutcome<T>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidConfig("profile pool is empty".into()));
    }
    for p in pool {
        p.validate(prob.n_u())?;
    }
    let n = cfg.n_starts;
    let one = |k: usize| -> Result<StartOutcome<T>> {
        let net = init_network(prob, &cfg.hidden, seed, k as u64)?;
        let (net, cost, mut report) = run_start(prob, net, &pool[k % pool.len()], cfg, integrator)?;
        report.seed = Some(seed);
        log::info!("start {k}: cost {cost:?}");
        Ok(StartOutcome { start: k, net, cost, report })
    };
    let one = |k: usize| {
        one(k).map_err(|e| {
            log::warn!("start {k} failed: {e}");
            e
        })
    };

    let starts: Vec<Result<StartOutcome<T>>> = if cfg.parallel && n > 1 {
        let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n);
        let mut slots: Vec<Option<Result<StartOutcome<T>>>> = (0..n).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let one = &one;
                    s.spawn(move || (w..n).step_by(workers).map(|k| (k, one(k))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("multistart worker panicked") {
                    slots[k] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every start ran")).collect()
    } else {
        (0..n).map(one).collect()
    };

    let best = starts
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.as_ref().ok().filter(|s| s.cost.is_finite()).map(|s| (k, s.cost)))
        .fold(None, |acc: Option<(usize, T)>, (k, c)| match acc {
            Some((_, bc)) if bc <= c => acc,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k)
        .ok_or(Error::AllStartsFailed(n))?;
    Ok(MultistartOutcome { best, starts })
}
