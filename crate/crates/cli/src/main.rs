use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ctrlode::policy::Policy;

mod config;
mod diag;
mod output;
mod problem;
mod solve;

use config::{RunConfig, Stage};

/// Train neural feedback policies for optimal control problems.
#[derive(Parser)]
#[command(name = "ctrlode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value` edit of the configuration (JSON value or bare string).
    #[arg(long = "override", short = 'O', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = config::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline and write trajectories, logs and checkpoints.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Overrides `stage`.
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
    },
    /// Fit a fresh policy to the first reference profile only.
    Precondition {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop phase portrait of a two-state problem as CSV.
    Portrait {
        #[command(flatten)]
        common: Common,
        /// Policy to plot; a fresh network from the seed when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "-2,2")]
        x1_range: (f64, f64),
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "-2,2")]
        x2_range: (f64, f64),
        /// Grid points per axis.
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        #[arg(long, default_value_t = 16)]
        streamlines: usize,
        /// Integration time of each streamline.
        #[arg(long, default_value_t = 2.0)]
        stream_time: f64,
        /// Samples per streamline and along the trajectory.
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Compare adjoint gradients with finite differences and quadrature.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `gradcheck.directions`.
        #[arg(long)]
        directions: Option<usize>,
        #[arg(long, hide = true)]
        corrupt_jacobian: Option<f64>,
    },
    /// Print the metadata of a policy checkpoint.
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StageArg {
    Precondition,
    Unconstrained,
    Constrained,
    Full,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Precondition => Stage::Precondition,
            StageArg::Unconstrained => Stage::Unconstrained,
            StageArg::Constrained => Stage::Constrained,
            StageArg::Full => Stage::Full,
        }
    }
}

const EXIT_INFEASIBLE: u8 = 2;

fn solve(cfg: RunConfig) -> Result<ExitCode> {
    let outcome = solve::run(&cfg)?;
    let s = &outcome.summary;
    println!("problem      {}", s.problem);
    println!("objective    {}", output::num(s.objective));
    if cfg.stage == Stage::Precondition {
        println!("tracking     {}", output::num(s.final_cost));
    }
    for c in &s.constraints {
        println!("margin       {} : {}", c.label, output::num(c.min_margin));
    }
    if let Some(f) = s.feasible {
        println!("feasible     {f}");
    }
    println!("output       {}", cfg.output.dir.display());
    if outcome.infeasible {
        eprintln!("result violates the constraints beyond the allowed slack");
        return Ok(ExitCode::from(EXIT_INFEASIBLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { common, stage } => {
            let mut cfg = common.load()?;
            if let Some(s) = stage {
                cfg.stage = s.into();
            }
            solve(cfg)
        }
        Command::Precondition { common } => {
            let mut cfg = common.load()?;
            cfg.stage = Stage::Precondition;
            solve(cfg)
        }
        Command::Portrait {
            common,
            checkpoint,
            x1_range,
            x2_range,
            resolution,
            streamlines,
            stream_time,
            points,
        } => {
            let cfg = common.load()?;
            let problem = problem::build(&cfg.problem)?;
            let net = solve::policy_for(&problem, &cfg, checkpoint.as_deref())?;
            let spec = diag::PortraitSpec {
                x1: x1_range,
                x2: x2_range,
                resolution,
                streamlines,
                stream_time,
                stream_points: points,
            };
            let rows = diag::portrait(problem.as_dyn(), &net, &solve::integrator(&cfg)?, &spec)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join("portrait.csv");
            output::write_portrait(&path, &rows)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            common,
            checkpoint,
            directions,
            corrupt_jacobian,
        } => {
            let mut cfg = common.load()?;
            if let Some(d) = directions {
                cfg.gradcheck.directions = d;
            }
            let problem = problem::build(&cfg.problem)?;
            let net = solve::policy_for(&problem, &cfg, checkpoint.as_deref())?;
            let r = diag::gradcheck(problem.as_dyn(), &net, &cfg, corrupt_jacobian)?;
            let tol = cfg.gradcheck.tolerance;
            let pass = r.fd_rel_err <= tol && r.quad_rel_err <= tol;
            println!("problem      {}", problem.as_dyn().name());
            println!("parameters   {}", net.n_params());
            println!("directions   {}", r.directions);
            println!("fd_rel_err   {:e}", r.fd_rel_err);
            println!("quad_rel_err {:e}", r.quad_rel_err);
            println!("tolerance    {tol:e}");
            println!("result       {}", if pass { "PASS" } else { "FAIL" });
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Inspect { checkpoint } => {
            print!("{}", diag::inspect(&checkpoint)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTRLODE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
