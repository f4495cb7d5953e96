//! Files written by the solver. Each CSV starts with a `# ctrlode <kind> v1`
//! comment line so that readers can detect format changes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use ctrlode::adjoint::simulate;
use ctrlode::dynamics::ControlProblem;
use ctrlode::policy::{Policy, PolicyNetwork};
use ctrlode::train::IterRecord;
use ctrlode::IntegratorConfigF64;

pub const FORMAT_VERSION: u32 = 1;

/// Shortest representation that parses back to the same bits.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn csv_file(path: &Path, kind: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# ctrlode {kind} v{FORMAT_VERSION}")?;
    Ok(csv::Writer::from_writer(w))
}

/// Iteration log row with the start index it belongs to.
pub struct LogRow<'a> {
    pub start: usize,
    pub rec: &'a IterRecord<f64>,
}

pub fn write_convergence(path: &Path, rows: &[LogRow], wall_clock: bool) -> Result<()> {
    let mut w = csv_file(path, "convergence")?;
    w.write_record([
        "phase", "start", "round", "iter", "cost", "objective", "penalty", "grad_inf_norm", "alpha_min", "delta_max",
        "wall_ms",
    ])?;
    for LogRow { start, rec: r } in rows {
        let wall = if wall_clock { r.wall_ms } else { 0.0 };
        w.write_record([
            r.phase.as_str().to_string(),
            start.to_string(),
            r.round.to_string(),
            r.iter.to_string(),
            num(r.cost),
            num(r.objective),
            num(r.penalty),
            num(r.grad_inf),
            num(r.alpha_min),
            num(r.delta_max),
            num(wall),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Closed-loop states and controls on `points` equally spaced times.
pub fn write_trajectory(
    path: &Path,
    prob: &dyn ControlProblem<f64>,
    net: &PolicyNetwork<f64>,
    integ: &IntegratorConfigF64,
    points: usize,
    state_names: &[&str],
    control_names: &[&str],
) -> Result<()> {
    let (traj, _) = simulate(prob, net, integ)?;
    let n_x = prob.n_x();
    let mut w = csv_file(path, "trajectory")?;
    w.write_record(std::iter::once("t").chain(state_names.iter().copied()).chain(control_names.iter().copied()))?;
    let n = points.max(2);
    let (t0, tf) = (prob.t0(), prob.tf());
    let mut y = vec![0.0; n_x + 1];
    let mut u = vec![0.0; prob.n_u()];
    for k in 0..n {
        let t = if k + 1 == n { tf } else { t0 + (tf - t0) * k as f64 / (n - 1) as f64 };
        traj.eval_into(t, &mut y)?;
        net.forward_into(&y[..n_x], &mut u);
        w.write_record(std::iter::once(t).chain(y[..n_x].iter().copied()).chain(u.iter().copied()).map(num))?;
    }
    w.flush()?;
    Ok(())
}

/// Controls at the accepted integrator steps.
pub fn write_controls(
    path: &Path,
    prob: &dyn ControlProblem<f64>,
    net: &PolicyNetwork<f64>,
    integ: &IntegratorConfigF64,
    control_names: &[&str],
) -> Result<()> {
    let (traj, _) = simulate(prob, net, integ)?;
    let n_x = prob.n_x();
    let mut w = csv_file(path, "controls")?;
    w.write_record(std::iter::once("t").chain(control_names.iter().copied()))?;
    let mut u = vec![0.0; prob.n_u()];
    for (k, &t) in traj.mesh().iter().enumerate() {
        net.forward_into(&traj.state(k)[..n_x], &mut u);
        w.write_record(std::iter::once(t).chain(u.iter().copied()).map(num))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a phase portrait: `series` names the grid, a streamline or the
/// optimised trajectory.
pub struct PortraitRow {
    pub series: String,
    pub x1: f64,
    pub x2: f64,
    pub dx1: f64,
    pub dx2: f64,
}

pub fn write_portrait(path: &Path, rows: &[PortraitRow]) -> Result<()> {
    let mut w = csv_file(path, "portrait")?;
    w.write_record(["series", "x1", "x2", "dx1", "dx2"])?;
    for r in rows {
        w.write_record([r.series.clone(), num(r.x1), num(r.x2), num(r.dx1), num(r.dx2)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, net: &PolicyNetwork<f64>, seed: Option<u64>) -> Result<()> {
    std::fs::write(path, net.to_checkpoint(seed).to_json()).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
