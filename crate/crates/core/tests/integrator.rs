use ctrlode::odeint::{integrate, IntegratorConfig};
use ctrlode::rng;
use rand::Rng as _;

fn growth(_t: f64, x: &[f64], dx: &mut [f64]) {
    dx[0] = x[0];
}

fn oscillator(_t: f64, x: &[f64], dx: &mut [f64]) {
    dx[0] = x[1];
    dx[1] = -x[0];
}

fn cfg(tol: f64) -> IntegratorConfig<f64> {
    IntegratorConfig::with_tolerances(tol, tol)
}

#[test]
fn endpoint_error_shrinks_with_tolerance() {
    let e = std::f64::consts::E;
    let mut previous = f64::INFINITY;
    // Asymptotic regime only: with three or four steps the clipped final step
    // decides the error and halving the tolerance can move it either way.
    let mut tol = 1e-6;
    while tol >= 1e-12 {
        let x1 = integrate(growth, &[1.0], (0.0, 1.0), &cfg(tol)).unwrap().last()[0];
        let err = (x1 - e).abs();
        assert!(err <= previous, "tol {tol:e}: error {err:e} above {previous:e}");
        previous = err;
        tol *= 0.5;
    }
    let x1 = integrate(growth, &[1.0], (0.0, 1.0), &cfg(1e-10)).unwrap().last()[0];
    assert!((x1 - e).abs() < 1e-8);
}

#[test]
fn forward_then_backward_recovers_initial_state() {
    for tol in [1e-6, 1e-8, 1e-10] {
        let x0 = [1.0, 0.5];
        let fwd = integrate(oscillator, &x0, (0.0, 2.0), &cfg(tol)).unwrap();
        let back = integrate(oscillator, fwd.last(), (2.0, 0.0), &cfg(tol)).unwrap();
        let norm = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.last().iter().zip(&x0) {
            assert!((a - b).abs() <= 10.0 * (tol + tol * norm), "tol {tol:e}: {a} vs {b}");
        }
    }
}

#[test]
fn dense_output_tracks_analytic_solution() {
    let traj = integrate(growth, &[1.0], (0.0, 1.0), &cfg(1e-8)).unwrap();
    let end_err = (traj.last()[0] - std::f64::consts::E).abs();
    let mut rng = rng::stream(0, rng::DIAGNOSTIC_STREAM);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t: f64 = rng.gen_range(0.0..1.0);
        worst = worst.max((traj.eval(t).unwrap()[0] - t.exp()).abs());
    }
    assert!(worst < 100.0 * end_err, "interior {worst:e} vs endpoint {end_err:e}");
    assert!((traj.eval(0.5).unwrap()[0] - 0.5f64.exp()).abs() < 1e-5);
}

#[test]
fn backward_mesh_is_decreasing_and_starts_exactly() {
    let x0 = [0.3, -0.7];
    let traj = integrate(oscillator, &x0, (3.0, -1.0), &cfg(1e-8)).unwrap();
    assert_eq!(traj.first(), &x0);
    assert!(traj.mesh().windows(2).all(|w| w[1] < w[0]));
    assert_eq!(*traj.mesh().last().unwrap(), -1.0);
    let (c, s) = (4.0f64.cos(), 4.0f64.sin());
    // Rotation back by 4 time units.
    let expected = [c * x0[0] - s * x0[1], s * x0[0] + c * x0[1]];
    for (a, b) in traj.last().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-6);
    }
}
