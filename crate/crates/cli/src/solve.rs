use std::path::Path;

use anyhow::{Context, Result};
use ctrlode::adjoint::simulate;
use ctrlode::dynamics::ControlProblem;
use ctrlode::policy::{PolicyCheckpoint, PolicyNetwork};
use ctrlode::train::{
    check_feasibility, init_network, multistart, pool_for, precondition, solve_constrained, PreconditionConfig,
    ReferenceProfile, RoundRecord, Termination, Tracking,
};
use ctrlode::IntegratorConfigF64;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stage};
use crate::output::{self, LogRow};
use crate::problem::{self, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub label: String,
    /// Smallest margin `h` on the check grid (terminal value for terminal
    /// constraints); negative means violated.
    pub min_margin: f64,
    pub min_scaled_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub cost: Option<f64>,
    pub error: Option<String>,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedSummary {
    pub best_start: usize,
    pub cost: f64,
    pub starts: Vec<StartSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSummary {
    pub best_round: usize,
    pub objective: f64,
    pub termination: Termination,
    pub rounds: Vec<RoundRecord<f64>>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub ctrlode_version: String,
    pub problem: String,
    pub stage: Stage,
    pub seed: u64,
    /// Tracking cost after a `precondition` run, otherwise the objective.
    pub final_cost: f64,
    /// Cost of the returned policy without barriers.
    pub objective: f64,
    /// Absent for problems without constraints.
    pub feasible: Option<bool>,
    pub constraints: Vec<ConstraintSummary>,
    pub terminal_state: Vec<f64>,
    pub precondition_cost: Option<f64>,
    pub unconstrained: Option<UnconstrainedSummary>,
    pub constrained: Option<ConstrainedSummary>,
    pub config: RunConfig,
}

pub struct SolveOutcome {
    pub summary: Summary,
    /// Constraints were enforced and the result violates them.
    pub infeasible: bool,
}

fn load_profiles(cfg: &RunConfig) -> Result<Option<Vec<ReferenceProfile<f64>>>> {
    if let Some(p) = &cfg.profiles {
        return Ok(Some(p.clone()));
    }
    let Some(path) = &cfg.profile_file else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading profile file {}", path.display()))?;
    let list = serde_json::from_str(&text).with_context(|| format!("parsing profile file {}", path.display()))?;
    Ok(Some(list))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNetwork<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ck = PolicyCheckpoint::from_json(&text).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(PolicyNetwork::from_checkpoint(&ck)?)
}

/// Runs the configured stage and writes all outputs to `cfg.output.dir`.
pub fn run(cfg: &RunConfig) -> Result<SolveOutcome> {
    let problem = problem::build(&cfg.problem)?;
    let prob = problem.as_dyn();
    let integ = cfg.integrator.resolve(cfg.problem.name)?;
    cfg.multistart.validate()?;
    cfg.barrier.validate()?;
    let out = &cfg.output.dir;
    let ck_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display()))?;
    output::write_json(&out.join("config.json"), cfg)?;

    let pool = match load_profiles(cfg)? {
        Some(p) if p.is_empty() => anyhow::bail!("profiles: the list is empty"),
        Some(p) => p,
        None => pool_for(prob, &cfg.multistart, cfg.seed),
    };
    for (k, p) in pool.iter().enumerate() {
        p.validate(prob.n_u()).with_context(|| format!("profiles[{k}]"))?;
    }
    let n_c = prob.path_constraints().len() + prob.terminal_constraints().len();
    let seed = Some(cfg.seed);

    let mut logs: Vec<(usize, ctrlode::train::IterRecord<f64>)> = Vec::new();
    let mut precondition_cost = None;
    let mut unconstrained = None;
    let mut constrained = None;
    let mut final_cost = None;

    let fresh = |prob: &dyn ControlProblem<f64>| -> Result<PolicyNetwork<f64>> {
        Ok(init_network(prob, &cfg.multistart.hidden, cfg.seed, 0)?)
    };
    let precondition_fresh = |logs: &mut Vec<_>| -> Result<(PolicyNetwork<f64>, f64)> {
        let pc = cfg.multistart.precondition.clone().unwrap_or_else(PreconditionConfig::default);
        let (net, rep) = precondition(prob, fresh(prob)?, &pool[0], &pc, &integ).context("stage precondition")?;
        logs.extend(rep.iterations.iter().map(|r| (0, *r)));
        let tracking = Tracking::new(prob, pool[0].clone())?;
        let (_, cost) = simulate(&tracking, &net, &integ)?;
        Ok((net, cost))
    };

    let net = match cfg.stage {
        Stage::Precondition => {
            let (net, cost) = precondition_fresh(&mut logs)?;
            output::write_checkpoint(&ck_dir.join("precondition.json"), &net, seed)?;
            final_cost = Some(cost);
            net
        }
        Stage::Unconstrained | Stage::Full | Stage::Constrained => {
            let (mut net, mut start) = (None, 0);
            if cfg.stage != Stage::Constrained {
                let ms = multistart(prob, &pool, &cfg.multistart, &integ, cfg.seed).context("stage unconstrained")?;
                let mut starts = Vec::new();
                for (k, s) in ms.starts.iter().enumerate() {
                    match s {
                        Ok(s) => {
                            logs.extend(s.report.iterations.iter().map(|r| (k, *r)));
                            starts.push(StartSummary {
                                start: k,
                                cost: Some(s.cost),
                                error: None,
                                termination: Some(s.report.termination),
                            });
                        }
                        Err(e) => starts.push(StartSummary {
                            start: k,
                            cost: None,
                            error: Some(e.to_string()),
                            termination: None,
                        }),
                    }
                }
                let best = ms.into_best();
                log::info!("unconstrained: best start {} with cost {}", best.start, best.cost);
                output::write_checkpoint(&ck_dir.join("unconstrained.json"), &best.net, seed)?;
                unconstrained = Some(UnconstrainedSummary {
                    best_start: best.start,
                    cost: best.cost,
                    starts,
                });
                start = best.start;
                net = Some(best.net);
            }
            let run_barrier = cfg.stage == Stage::Constrained || (cfg.stage == Stage::Full && n_c > 0);
            if run_barrier {
                let init = match (net, &cfg.init_checkpoint) {
                    (_, Some(path)) => load_checkpoint(path)?,
                    (Some(n), None) => n,
                    (None, None) => {
                        let (n, cost) = precondition_fresh(&mut logs)?;
                        precondition_cost = Some(cost);
                        n
                    }
                };
                let round_ck = cfg.output.round_checkpoints;
                let mut ck_err = Ok(());
                let res = solve_constrained(prob, init, &cfg.barrier, &integ, |rec, n| {
                    if round_ck && ck_err.is_ok() {
                        ck_err = output::write_checkpoint(&ck_dir.join(format!("round_{:02}.json", rec.round)), n, seed);
                    }
                })
                .context("stage constrained")?;
                ck_err?;
                logs.extend(res.report.iterations.iter().map(|r| (start, *r)));
                constrained = Some(ConstrainedSummary {
                    best_round: res.best_round,
                    objective: res.objective,
                    termination: res.report.termination,
                    rounds: res.report.rounds.clone(),
                });
                res.net
            } else {
                net.expect("multistart ran")
            }
        }
    };

    output::write_checkpoint(&out.join("policy.json"), &net, seed)?;
    let rows: Vec<LogRow> = logs.iter().map(|(s, r)| LogRow { start: *s, rec: r }).collect();
    output::write_convergence(&out.join("convergence.csv"), &rows, cfg.output.wall_clock)?;
    let (sn, cn) = (problem.state_names(), problem.control_names());
    output::write_trajectory(&out.join("trajectory.csv"), prob, &net, &integ, cfg.output.trajectory_points, sn, cn)?;
    output::write_controls(&out.join("controls.csv"), prob, &net, &integ, cn)?;

    let (traj, objective) = simulate(prob, &net, &integ)?;
    let feas = check_feasibility(prob, &net, &integ, cfg.barrier.grid_points, cfg.barrier.slack)?;
    let constraints = feas
        .labels
        .iter()
        .zip(&feas.min_margin)
        .zip(&feas.min_scaled_margin)
        .map(|((label, &m), &z)| ConstraintSummary {
            label: label.clone(),
            min_margin: m,
            min_scaled_margin: z,
        })
        .collect();
    let feasible = (n_c > 0).then_some(feas.feasible);
    let enforced = constrained.is_some() && n_c > 0;
    let summary = Summary {
        format_version: output::FORMAT_VERSION,
        ctrlode_version: env!("CARGO_PKG_VERSION").to_string(),
        problem: prob.name().to_string(),
        stage: cfg.stage,
        seed: cfg.seed,
        final_cost: final_cost.unwrap_or(objective),
        objective,
        feasible,
        constraints,
        terminal_state: traj.last()[..prob.n_x()].to_vec(),
        precondition_cost,
        unconstrained,
        constrained,
        config: cfg.clone(),
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(SolveOutcome {
        infeasible: enforced && !feas.feasible,
        summary,
    })
}

/// Integrator configuration of `cfg` for its problem.
pub fn integrator(cfg: &RunConfig) -> Result<IntegratorConfigF64> {
    cfg.integrator.resolve(cfg.problem.name)
}

/// The policy given by `checkpoint`, or the network a run with `cfg` would
/// start from.
pub fn policy_for(problem: &Problem, cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PolicyNetwork<f64>> {
    let net = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => init_network(problem.as_dyn(), &cfg.multistart.hidden, cfg.seed, 0)?,
    };
    ctrlode::dynamics::check_compatible(problem.as_dyn(), &net)?;
    Ok(net)
}
