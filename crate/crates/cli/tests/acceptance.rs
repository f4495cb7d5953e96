//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails. `cargo test -p ctrlode-cli --test
//! acceptance` (release-like optimisation comes from the test profile).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ctrlode::dynamics::{make_bioreactor, make_vdp, BioreactorParams, ControlProblem};
use ctrlode::odeint::{integrate, IntegratorConfig};
use ctrlode::penalty::{relaxed_log, relaxed_log_deriv};
use ctrlode::policy::{Policy, PolicyNetwork};
use ctrlode::rng;
use ctrlode::train::init_network;
use rand::Rng as _;
use serde_json::Value;

const VDP_FREE_OPT: f64 = 2.87;
const VDP_CONSTRAINED_OPT: f64 = 2.953;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ctrlode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlode"))
        .args(args)
        .env("CTRLODE_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Runs `solve` on a catalog config into `out` and returns the exit code,
/// the summary and the elapsed time.
fn solve(config: &str, out: &Path) -> (Option<i32>, Option<Value>, Duration) {
    let _ = std::fs::remove_dir_all(out);
    let start = Instant::now();
    let cfg = configs().join(config);
    let o = ctrlode(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    let summary = std::fs::read_to_string(out.join("summary.json")).ok().and_then(|s| serde_json::from_str(&s).ok());
    (o.status.code(), summary, elapsed)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().skip(1);
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn vdp_unconstrained() -> Verdict {
    let (code, s, t) = solve("vdp_unconstrained.json", &scratch().join("vdp_unconstrained"));
    let Some(s) = s else {
        return verdict(false, format!("no summary (exit {code:?})"));
    };
    let j = s["objective"].as_f64().unwrap();
    let rel = (j - VDP_FREE_OPT).abs() / VDP_FREE_OPT;
    let ok = code == Some(0) && j <= 2.93 && rel <= 0.02 && t.as_secs_f64() < 300.0;
    verdict(ok, format!("J = {j:.5} (<= 2.93, {:.2}% from {VDP_FREE_OPT}), {:.1} s (< 300 s)", 100.0 * rel, t.as_secs_f64()))
}

fn vdp_constrained() -> Verdict {
    let out = scratch().join("vdp");
    let (code, s, t) = solve("vdp.json", &out);
    let Some(s) = s else {
        return verdict(false, format!("no summary (exit {code:?})"));
    };
    let j = s["objective"].as_f64().unwrap();
    let rel = (j - VDP_CONSTRAINED_OPT).abs() / VDP_CONSTRAINED_OPT;
    // Independent of the solver's own check: 1001 uniform points of trajectory.csv.
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    let x1 = header.iter().position(|h| h == "x1").unwrap();
    let min_margin = rows.iter().map(|r| r[x1] + 0.4).fold(f64::INFINITY, f64::min);
    let ok = code == Some(0) && rel <= 0.02 && rows.len() == 1001 && min_margin >= -0.01 && t.as_secs_f64() < 600.0;
    verdict(
        ok,
        format!(
            "J = {j:.5} ({:.2}% from {VDP_CONSTRAINED_OPT}), min(x1 + 0.4) = {min_margin:.5} on {} points, {:.1} s (< 600 s)",
            100.0 * rel,
            rows.len(),
            t.as_secs_f64()
        ),
    )
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["vdp", "bioreactor"] {
        let o = ctrlode(&["gradcheck", "-O", &format!("problem.name={name}")]);
        let text = String::from_utf8_lossy(&o.stdout).into_owned();
        let field = |k: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(k))
                .and_then(|v| v.trim().parse::<f64>().ok())
                .unwrap_or(f64::NAN)
        };
        let (fd, quad) = (field("fd_rel_err"), field("quad_rel_err"));
        ok &= o.status.success() && fd <= 1e-4 && quad <= 1e-4;
        details.push(format!("{name}: fd {fd:.1e}, quadrature {quad:.1e}"));
    }
    let t = start.elapsed().as_secs_f64();
    ok &= t < 120.0;
    verdict(ok, format!("{} (<= 1e-4), {t:.1} s (< 120 s)", details.join("; ")))
}

fn penalty_properties() -> Verdict {
    let mut worst_jump = 0.0f64;
    let mut worst_slope_jump = 0.0f64;
    let mut monotone = true;
    for delta in [1e-6, 1e-3, 0.1, 0.5, 1.0, 10.0] {
        let below = delta * (1.0 - f64::EPSILON);
        let above = delta * (1.0 + f64::EPSILON);
        // Both branches at the switch point.
        worst_jump = worst_jump.max((relaxed_log(below, delta) - relaxed_log(above, delta)).abs());
        worst_jump = worst_jump.max((relaxed_log(delta, delta) + delta.ln()).abs());
        let slope = (relaxed_log_deriv(below, delta) - relaxed_log_deriv(above, delta)).abs();
        worst_slope_jump = worst_slope_jump.max(slope * delta);
        let zs: Vec<f64> = (0..=4000).map(|k| -3.0 * delta + 6.0 * delta * k as f64 / 4000.0).collect();
        monotone &= zs.windows(2).all(|w| relaxed_log(w[1], delta) < relaxed_log(w[0], delta));
        monotone &= zs.iter().all(|&z| relaxed_log_deriv(z, delta) < 0.0);
    }
    let delta = 1e-6;
    let limit = (0..=600)
        .map(|k| 10f64.powf(-5.0 + 6.0 * k as f64 / 600.0))
        .map(|z| (relaxed_log(z, delta) + z.ln()).abs())
        .fold(0.0f64, f64::max);
    let ok = worst_jump <= 1e-10 && worst_slope_jump <= 1e-10 && monotone && limit <= 1e-5;
    verdict(
        ok,
        format!(
            "value jump {worst_jump:.1e}, relative slope jump {worst_slope_jump:.1e} (<= 1e-10), monotone {monotone}, \
             |P + ln z| at delta 1e-6 over z in [1e-5, 10]: {limit:.1e} (<= 1e-5)"
        ),
    )
}

fn bound_violations(prob: &dyn ControlProblem<f64>, seed: u64, samples: usize) -> usize {
    let mut net: PolicyNetwork<f64> = init_network(prob, &[16, 16], seed, 0).unwrap();
    let mut rng = rng::stream(seed, rng::DIAGNOSTIC_STREAM);
    let mut theta = vec![0.0; net.n_params()];
    let mut x = vec![0.0; prob.n_x()];
    let mut u = vec![0.0; prob.n_u()];
    let mut bad = 0;
    for _ in 0..samples {
        let spread = 10f64.powf(rng.gen_range(-2.0..2.0));
        theta.iter_mut().for_each(|v| *v = rng.gen_range(-spread..spread));
        net.set_params(&theta).unwrap();
        x.iter_mut().for_each(|v| *v = rng.gen_range(-1e3..1e3));
        net.forward_into(&x, &mut u);
        let inside = u
            .iter()
            .zip(prob.u_lb().iter().zip(prob.u_ub()))
            .all(|(v, (l, h))| v.is_finite() && v >= l && v <= h);
        bad += usize::from(!inside);
    }
    bad
}

fn bound_safety() -> Verdict {
    let vdp = bound_violations(&make_vdp::<f64>(), 1, 10_000);
    let bio = bound_violations(&make_bioreactor::<f64>(BioreactorParams::default(), 240.0), 2, 10_000);
    verdict(vdp == 0 && bio == 0, format!("violations: vdp {vdp} / 10000, bioreactor {bio} / 10000"))
}

fn bioreactor() -> Verdict {
    let out = scratch().join("bioreactor");
    let (code, s, t) = solve("bioreactor.json", &out);
    let Some(s) = s else {
        return verdict(false, format!("no summary (exit {code:?})"));
    };
    let rounds = s["constrained"]["rounds"].as_array().map_or(0, Vec::len);
    // With no unconstrained optimiser stages the multistart result is the
    // preconditioned policy; its cost is -C_qc(t_f).
    let stages_empty = s["config"]["multistart"]["stages"].as_array().is_some_and(Vec::is_empty);
    let qc_pre = -s["unconstrained"]["cost"].as_f64().unwrap();
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    let col = |n: &str| header.iter().position(|h| h == n).unwrap();
    let (cx, cn, cq) = (col("c_x"), col("c_n"), col("c_qc"));
    let max_cn = rows.iter().map(|r| r[cn]).fold(f64::NEG_INFINITY, f64::max);
    let max_ratio = rows.iter().map(|r| 0.011 * r[cx] - r[cq]).fold(f64::NEG_INFINITY, f64::max);
    let last = rows.last().unwrap();
    let (cn_f, qc_f) = (last[cn], last[cq]);
    let gain = qc_f / qc_pre - 1.0;
    let ok = code == Some(0)
        && stages_empty
        && (1..=12).contains(&rounds)
        && max_cn <= 808.0
        && max_ratio <= 0.303
        && cn_f <= 151.5
        && gain >= 0.10
        && t.as_secs_f64() < 1200.0;
    verdict(
        ok,
        format!(
            "{rounds} rounds, max C_N {max_cn:.2} (<= 808), max 0.011 C_X - C_qc {max_ratio:.4} (<= 0.303), \
             C_N(tf) {cn_f:.2} (<= 151.5), C_qc(tf) {qc_f:.4} vs preconditioned {qc_pre:.4} (+{:.1}%, >= 10%), {:.1} s (< 1200 s)",
            100.0 * gain,
            t.as_secs_f64()
        ),
    )
}

fn integrator_suite() -> Verdict {
    let start = Instant::now();
    let growth = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0];
    let decay = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0];
    let osc = |_t: f64, x: &[f64], dx: &mut [f64]| {
        dx[0] = x[1];
        dx[1] = -x[0];
    };
    let cfg = |tol: f64| IntegratorConfig::with_tolerances(tol, tol);
    let e = std::f64::consts::E;
    let mut fails = Vec::new();

    let x1 = integrate(growth, &[1.0], (0.0, 1.0), &cfg(1e-10)).unwrap().last()[0];
    if (x1 - e).abs() >= 1e-8 {
        fails.push(format!("exp growth error {:.1e}", (x1 - e).abs()));
    }
    let x0 = integrate(growth, &[e], (1.0, 0.0), &cfg(1e-10)).unwrap().last()[0];
    if (x0 - 1.0).abs() >= 1e-8 {
        fails.push(format!("backward growth error {:.1e}", (x0 - 1.0).abs()));
    }
    let x0 = integrate(decay, &[1.0 / e], (1.0, 0.0), &cfg(1e-10)).unwrap().last()[0];
    if (x0 - 1.0).abs() >= 1e-8 {
        fails.push(format!("backward decay error {:.1e}", (x0 - 1.0).abs()));
    }
    let mut previous = f64::INFINITY;
    let mut tol = 1e-6;
    while tol >= 1e-12 {
        let err = (integrate(growth, &[1.0], (0.0, 1.0), &cfg(tol)).unwrap().last()[0] - e).abs();
        if err > previous {
            fails.push(format!("error grew at tol {tol:.1e}"));
        }
        previous = err;
        tol *= 0.5;
    }
    for tol in [1e-6, 1e-8, 1e-10] {
        let start = [1.0, 0.5];
        let fwd = integrate(osc, &start, (0.0, 2.0), &cfg(tol)).unwrap();
        let back = integrate(osc, fwd.last(), (2.0, 0.0), &cfg(tol)).unwrap();
        let dev = back.last().iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dev > 10.0 * (tol + tol * 1.0) {
            fails.push(format!("round trip at {tol:.0e} off by {dev:.1e}"));
        }
    }
    let traj = integrate(growth, &[1.0], (0.0, 1.0), &cfg(1e-8)).unwrap();
    let end_err = (traj.last()[0] - e).abs();
    let dense = (0..100)
        .map(|k| (k as f64 + 0.5) / 100.0)
        .map(|t| (traj.eval(t).unwrap()[0] - t.exp()).abs())
        .fold(0.0, f64::max);
    if dense >= 100.0 * end_err.max(f64::EPSILON) {
        fails.push(format!("dense output error {dense:.1e} vs endpoint {end_err:.1e}"));
    }
    let t = start.elapsed().as_secs_f64();
    let ok = fails.is_empty() && t < 10.0;
    let what = if fails.is_empty() { "all analytic checks hold".to_string() } else { fails.join("; ") };
    verdict(ok, format!("{what}, {t:.2} s (< 10 s)"))
}

fn determinism() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for (config, first) in [
        ("vdp_unconstrained.json", "vdp_unconstrained"),
        ("vdp.json", "vdp"),
        ("bioreactor.json", "bioreactor"),
    ] {
        let a = scratch().join(first).join("convergence.csv");
        let again = scratch().join(format!("{first}_again"));
        solve(config, &again);
        let (x, y) = (std::fs::read(&a).ok(), std::fs::read(again.join("convergence.csv")).ok());
        let same = x.is_some() && x == y;
        ok &= same;
        details.push(format!("{config}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    verdict(ok, details.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 vdp unconstrained optimum", vdp_unconstrained),
        ("2 vdp constrained optimum", vdp_constrained),
        ("3 gradient check on both problems", gradients),
        ("4 relaxed barrier properties", penalty_properties),
        ("5 control bound safety", bound_safety),
        ("6 bioreactor constraints and improvement", bioreactor),
        ("7 integrator analytic suite", integrator_suite),
        ("8 deterministic convergence logs", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "{} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
