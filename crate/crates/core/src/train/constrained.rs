//! Barrier rounds with a tightening relaxation schedule.

use serde::{Deserialize, Serialize};

use super::objective::PolicyObjective;
use super::optim::{minimize_logged, IterContext, OptimizerConfig};
use super::report::{Phase, RoundRecord, RunReport, Termination};
use crate::adjoint::{cost_breakdown, simulate};
use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};
use crate::odeint::IntegratorConfig;
use crate::penalty::{auto_scale_alpha, penalized_problem, update_schedule, BarrierParams, BarrierSchedule, RoundReport, ScheduleStep};
use crate::policy::{Policy, PolicyNetwork};
use crate::scalar::Real;

/// Constraint margins of a closed-loop trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport<T> {
    pub labels: Vec<String>,
    /// Smallest raw margin `h` per constraint (path first, then terminal).
    pub min_margin: Vec<T>,
    /// The same divided by each constraint's scale.
    pub min_scaled_margin: Vec<T>,
    pub slack: f64,
    pub feasible: bool,
}

impl<T: Real> FeasibilityReport<T> {
    /// Largest scaled violation, zero when every margin is non-negative.
    pub fn max_violation(&self) -> T {
        self.min_scaled_margin.iter().fold(T::zero(), |m, &z| m.max(-z))
    }
}

/// Checks every constraint on `grid_points` equally spaced times; a
/// constraint passes when `h / scale >= -slack`.
pub fn check_feasibility<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    integrator: &IntegratorConfig<T>,
    grid_points: usize,
    slack: f64,
) -> Result<FeasibilityReport<T>> {
    let (traj, _) = simulate(prob, policy, integrator)?;
    let path = prob.path_constraints();
    let term = prob.terminal_constraints();
    let n_x = prob.n_x();
    let mut x = vec![T::zero(); n_x];
    let mut u = vec![T::zero(); prob.n_u()];
    let mut min_margin = vec![T::infinity(); path.len()];
    let n = grid_points.max(2);
    let (t0, tf) = (prob.t0(), prob.tf());
    for k in 0..n {
        let t = if k + 1 == n {
            tf
        } else {
            t0 + (tf - t0) * T::from_usize(k).unwrap() / T::from_usize(n - 1).unwrap()
        };
        traj.eval_into(t, &mut x)?;
        policy.forward_into(&x, &mut u);
        for (m, c) in min_margin.iter_mut().zip(path) {
            *m = m.min(c.margin(&x, &u));
        }
    }
    let xf = &traj.last()[..n_x];
    min_margin.extend(term.iter().map(|c| c.margin(xf)));
    let scales = path.iter().map(|c| c.scale).chain(term.iter().map(|c| c.scale));
    let min_scaled_margin: Vec<T> = min_margin.iter().zip(scales).map(|(&h, s)| h / s).collect();
    let feasible = min_scaled_margin.iter().all(|&z| z >= -T::lit(slack));
    Ok(FeasibilityReport {
        labels: path.iter().map(|c| c.label.clone()).chain(term.iter().map(|c| c.label.clone())).collect(),
        min_margin,
        min_scaled_margin,
        slack,
        feasible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstrainedConfig {
    pub schedule: BarrierSchedule,
    /// Optimiser run in every round.
    pub optimizer: OptimizerConfig,
    /// Fixed starting weight for every barrier; derived from the penalty
    /// share target when absent.
    pub initial_alpha: Option<f64>,
    pub grid_points: usize,
    pub slack: f64,
    /// Feasible rounds in a row without progress before stopping.
    pub stall_rounds: usize,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self {
            schedule: BarrierSchedule::default(),
            optimizer: OptimizerConfig::lbfgs(100),
            initial_alpha: None,
            grid_points: 1001,
            slack: 0.01,
            stall_rounds: 2,
        }
    }
}

impl ConstrainedConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if let Some(a) = self.initial_alpha {
            if !(a > 0.0) {
                return Err(Error::InvalidConfig("initial_alpha must be positive".into()));
            }
        }
        if self.grid_points < 2 || !(self.slack >= 0.0) || self.stall_rounds == 0 {
            return Err(Error::InvalidConfig("grid_points >= 2, slack >= 0 and stall_rounds >= 1 required".into()));
        }
        Ok(())
    }
}

pub struct ConstrainedOutcome<T> {
    /// Lowest-objective feasible round, else the least infeasible one.
    pub net: PolicyNetwork<T>,
    pub best_round: usize,
    pub objective: T,
    pub feasibility: FeasibilityReport<T>,
    pub report: RunReport<T>,
}

/// Runs barrier rounds from `net`. `on_round` sees every finished round with
/// its policy (for checkpointing).
pub fn solve_constrained<T: Real>(
    prob: &dyn ControlProblem<T>,
    mut net: PolicyNetwork<T>,
    cfg: &ConstrainedConfig,
    integrator: &IntegratorConfig<T>,
    mut on_round: impl FnMut(&RoundRecord<T>, &PolicyNetwork<T>),
) -> Result<ConstrainedOutcome<T>> {
    cfg.validate()?;
    let n_c = prob.path_constraints().len() + prob.terminal_constraints().len();
    let sched = &cfg.schedule;
    let delta0 = T::lit(sched.initial_delta);
    let mut params: Vec<BarrierParams<T>> = vec![BarrierParams { alpha: T::one(), delta: delta0 }; n_c];
    match cfg.initial_alpha {
        Some(a) => params.iter_mut().for_each(|p| p.alpha = T::lit(a)),
        None => {
            let b = cost_breakdown(prob, &net, &params, integrator)?;
            let alphas = auto_scale_alpha(&b.raw(), b.objective, T::lit(sched.target_ratio));
            params.iter_mut().zip(alphas).for_each(|(p, a)| p.alpha = a);
        }
    }

    let mut report = RunReport::default();
    let mut best: Option<(bool, T, T, usize, PolicyNetwork<T>, FeasibilityReport<T>)> = None;
    let mut stalled_run = 0;
    let mut round = 0;
    loop {
        let pen = penalized_problem(prob, &params)?;
        let mut obj = PolicyObjective::new(&pen, net.clone(), *integrator).with_breakdown(prob, params.clone());
        let ctx = IterContext {
            phase: Phase::Constrained,
            round,
            alpha_min: params.iter().map(|p| p.alpha).fold(T::infinity(), T::min),
            delta_max: params.iter().map(|p| p.delta).fold(T::zero(), T::max),
        };
        let (theta, rep) = minimize_logged(&mut obj, &net.flatten(), &cfg.optimizer, ctx)?;
        net.unflatten(&theta)?;

        let loss_start = rep.iterations.first().map_or(T::nan(), |r| r.cost);
        let loss = rep.best_cost.unwrap_or(loss_start);
        let stalled = !(loss_start - loss > T::lit(sched.stall_tol) * loss_start.abs().max(T::one()));
        let split = cost_breakdown(prob, &net, &params, integrator)?;
        let penalty = split.penalty(&params);
        let feas = check_feasibility(prob, &net, integrator, cfg.grid_points, cfg.slack)?;
        let record = RoundRecord {
            round,
            alpha: params.iter().map(|p| p.alpha).collect(),
            delta: params.iter().map(|p| p.delta).collect(),
            loss,
            objective: split.objective,
            penalty,
            stalled,
            min_scaled_margin: feas.min_scaled_margin.clone(),
            feasible: feas.feasible,
            termination: rep.termination,
        };
        log::info!(
            "round {round}: objective {:?}, penalty {:?}, feasible {}, min margins {:?}",
            split.objective,
            penalty,
            feas.feasible,
            feas.min_scaled_margin
        );
        let record_termination = record.termination;
        on_round(&record, &net);
        report.extend(rep);
        report.rounds.push(record);

        let violation = feas.max_violation();
        let feasible = feas.feasible;
        let better = match &best {
            None => true,
            Some((bf, bo, bv, ..)) => match (feas.feasible, *bf) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => split.objective < *bo,
                (false, false) => violation < *bv,
            },
        };
        if better {
            best = Some((feas.feasible, split.objective, violation, round, net.clone(), feas));
        }

        if n_c == 0 {
            // Nothing to tighten: a single plain minimisation.
            report.termination = record_termination;
            break;
        }
        // Stalling while infeasible is handled by the schedule (larger alpha).
        stalled_run = if stalled && feasible { stalled_run + 1 } else { 0 };
        if stalled_run >= cfg.stall_rounds {
            report.termination = Termination::Stalled;
            break;
        }
        let summary = RoundReport {
            round,
            objective: split.objective,
            penalty,
            stalled,
        };
        let next = update_schedule(&params, &summary, sched, |cand| {
            cost_breakdown(prob, &net, cand, integrator).map_or(T::infinity(), |b| b.penalty(cand))
        });
        match next {
            ScheduleStep::Continue(p) => params = p,
            ScheduleStep::Terminate => {
                report.termination = Termination::RoundBudget;
                break;
            }
        }
        round += 1;
    }

    let (_, objective, _, best_round, net, feasibility) = best.expect("at least one round ran");
    report.best_cost = Some(objective);
    Ok(ConstrainedOutcome {
        net,
        best_round,
        objective,
        feasibility,
        report,
    })
}
