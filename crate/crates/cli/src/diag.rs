//! Diagnostics: phase portraits, gradient checks and checkpoint inspection.

use std::path::Path;

use anyhow::{bail, Result};
use ctrlode::adjoint::{gradient_check, simulate, GradCheck};
use ctrlode::dynamics::{closed_loop_rhs, ControlProblem, CorruptedJacobian};
use ctrlode::odeint::integrate;
use ctrlode::penalty::{penalized_problem, BarrierParams};
use ctrlode::policy::{Policy, PolicyCheckpoint, PolicyNetwork};
use ctrlode::{rng, Error, IntegratorConfigF64};

use crate::config::RunConfig;
use crate::output::PortraitRow;

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitSpec {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub resolution: usize,
    /// Streamlines seeded evenly along the border of the window.
    pub streamlines: usize,
    pub stream_time: f64,
    pub stream_points: usize,
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        bail!("{name} range needs finite lo < hi, got {lo},{hi}");
    }
    Ok(())
}

fn lerp((lo, hi): (f64, f64), k: usize, n: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Point at arc-length fraction `s` in `[0, 1)` along the window border.
fn border_point(spec: &PortraitSpec, s: f64) -> [f64; 2] {
    let (a, b) = spec.x1;
    let (c, d) = spec.x2;
    let (w, h) = (b - a, d - c);
    let mut l = s * 2.0 * (w + h);
    if l < w {
        return [a + l, c];
    }
    l -= w;
    if l < h {
        return [b, c + l];
    }
    l -= h;
    if l < w {
        return [b - l, d];
    }
    [a, d - (l - w)]
}

/// Closed-loop field on a `resolution x resolution` grid, streamlines and
/// the trajectory from the problem's initial state.
pub fn portrait(
    prob: &dyn ControlProblem<f64>,
    net: &PolicyNetwork<f64>,
    integ: &IntegratorConfigF64,
    spec: &PortraitSpec,
) -> Result<Vec<PortraitRow>> {
    if prob.n_x() != 2 {
        return Err(Error::DimensionMismatch {
            what: "phase portrait states",
            expected: 2,
            got: prob.n_x(),
        }
        .into());
    }
    if spec.resolution == 0 {
        bail!("portrait resolution must be at least 1");
    }
    check_range("x1", spec.x1)?;
    check_range("x2", spec.x2)?;
    let rhs = closed_loop_rhs(prob, net)?;
    let t0 = prob.t0();
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<PortraitRow>, series: &str, x: &[f64]| {
        let mut dx = [0.0; 2];
        rhs(t0, x, &mut dx);
        rows.push(PortraitRow {
            series: series.to_string(),
            x1: x[0],
            x2: x[1],
            dx1: dx[0],
            dx2: dx[1],
        });
    };
    let n = spec.resolution;
    for i in 0..n {
        for j in 0..n {
            push(&mut rows, "grid", &[lerp(spec.x1, i, n), lerp(spec.x2, j, n)]);
        }
    }

    let points = spec.stream_points.max(2);
    for k in 0..spec.streamlines {
        let seed = border_point(spec, k as f64 / spec.streamlines as f64);
        let field = closed_loop_rhs(prob, net)?;
        match integrate(field, &seed, (t0, t0 + spec.stream_time), integ) {
            Ok(traj) => {
                let name = format!("stream_{k}");
                let mut x = [0.0; 2];
                for p in 0..points {
                    traj.eval_into(lerp((t0, t0 + spec.stream_time), p, points), &mut x)?;
                    push(&mut rows, &name, &x);
                }
            }
            Err(e) => log::warn!("streamline {k} from {seed:?} skipped: {e}"),
        }
    }

    let (traj, _) = simulate(prob, net, integ)?;
    let mut y = vec![0.0; 3];
    for p in 0..points {
        traj.eval_into(lerp((t0, prob.tf()), p, points), &mut y)?;
        push(&mut rows, "trajectory", &y[..2]);
    }
    Ok(rows)
}

/// Checks the adjoint gradient of the barrier-augmented problem.
/// `corrupt_jacobian` shifts every `df/dx` entry, which must make the check
/// fail.
pub fn gradcheck(
    prob: &dyn ControlProblem<f64>,
    net: &PolicyNetwork<f64>,
    cfg: &RunConfig,
    corrupt_jacobian: Option<f64>,
) -> Result<GradCheck<f64>> {
    let gc = &cfg.gradcheck;
    let integ = IntegratorConfigF64::with_tolerances(gc.rtol, gc.atol);
    integ.validate()?;
    let corrupted;
    let target: &dyn ControlProblem<f64> = match corrupt_jacobian {
        Some(shift) => {
            corrupted = CorruptedJacobian { inner: prob, shift };
            &corrupted
        }
        None => prob,
    };
    let n_c = prob.path_constraints().len() + prob.terminal_constraints().len();
    let params = vec![BarrierParams::new(gc.alpha, gc.delta)?; n_c];
    let pen = penalized_problem(target, &params)?;
    let mut rng = rng::stream(cfg.seed, rng::DIAGNOSTIC_STREAM);
    Ok(gradient_check(&pen, net, &integ, gc.directions, gc.fd_step, &mut rng)?)
}

/// Human-readable description of a checkpoint file.
pub fn inspect(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    let ck = PolicyCheckpoint::from_json(&text)?;
    let net = PolicyNetwork::<f64>::from_checkpoint(&ck)?;
    let theta = &ck.params;
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k:<14}{v}\n"));
    line("format", format!("v{}", ck.format_version));
    line("layers", format!("{:?}", ck.layer_sizes));
    line("activations", ck.activations.join(", "));
    line("parameters", net.n_params().to_string());
    line("lower bounds", format!("{:?}", ck.lb));
    line("upper bounds", format!("{:?}", ck.ub));
    line("input scale", format!("{:?}", ck.input_scale));
    line("seed", ck.seed.map_or("-".into(), |v| v.to_string()));
    line("|theta|_2", format!("{norm:.6e}"));
    line("|theta|_inf", format!("{max:.6e}"));
    Ok(s)
}
