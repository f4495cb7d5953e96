use ctrlode::adjoint::simulate;
use ctrlode::dynamics::{make_vdp, ControlProblem};
use ctrlode::odeint::IntegratorConfig;
use ctrlode::policy::PolicyNetwork;
use ctrlode::train::*;

fn integ() -> IntegratorConfig<f64> {
    IntegratorConfig::default()
}

fn quick_multistart(n_starts: usize) -> MultistartConfig {
    MultistartConfig {
        n_starts,
        precondition: Some(PreconditionConfig {
            optimizer: OptimizerConfig::adamw(0.02, 60),
            ..Default::default()
        }),
        stages: vec![OptimizerConfig::adamw(0.01, 80), OptimizerConfig::lbfgs(40)],
        ..Default::default()
    }
}

fn max_tracking_error(net: &PolicyNetwork<f64>, prob: &dyn ControlProblem<f64>, target: f64) -> f64 {
    let (traj, _) = simulate(prob, net, &integ()).unwrap();
    (0..=500)
        .map(|k| {
            let t = prob.tf() * k as f64 / 500.0;
            let x = traj.eval(t).unwrap();
            (net.forward(&x[..2]).unwrap()[0] - target).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn preconditioning_tracks_constant_reference() {
    let prob = make_vdp::<f64>();
    let net = init_network(&prob, &[16, 16], 4, 0).unwrap();
    let profile = ReferenceProfile::Constant { value: vec![0.35] };
    let (fitted, report) = precondition(&prob, net, &profile, &PreconditionConfig::default(), &integ()).unwrap();
    let err = max_tracking_error(&fitted, &prob, 0.35);
    assert!(err <= 0.05, "max tracking error {err}");
    assert!(report.iterations.iter().all(|r| r.phase == Phase::Precondition));
    assert_eq!(report.iterations.last().unwrap().round, 3);
}

#[test]
fn mid_range_network_already_tracks_mid_range() {
    let prob = make_vdp::<f64>();
    let net = PolicyNetwork::zeros(&[2, 16, 16, 1], prob.u_lb(), prob.u_ub()).unwrap();
    let profile = ReferenceProfile::Constant { value: vec![0.35] };
    let tracking = Tracking::new(&prob, profile.clone()).unwrap();
    let (_, j) = simulate(&tracking, &net, &integ()).unwrap();
    assert!(j.abs() < 1e-20);
    // A single full-horizon window is a valid schedule.
    let cfg = PreconditionConfig {
        windows: vec![1.0],
        optimizer: OptimizerConfig::adamw(0.01, 3),
    };
    let (_, rep) = precondition(&prob, net, &profile, &cfg, &integ()).unwrap();
    assert_eq!(rep.termination, Termination::GradTol);
}

#[test]
fn multistart_is_deterministic_and_parallel_safe() {
    let prob = make_vdp::<f64>().unconstrained();
    let cfg = quick_multistart(3);
    let a = multistart(&prob, &pool_for(&prob, &cfg, 21), &cfg, &integ(), 21).unwrap();
    let b = multistart(&prob, &pool_for(&prob, &cfg, 21), &cfg, &integ(), 21).unwrap();
    let c = multistart(&prob, &pool_for(&prob, &cfg, 21), &MultistartConfig { parallel: true, ..cfg.clone() }, &integ(), 21).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.best, c.best);
    for ((x, y), z) in a.starts.iter().zip(&b.starts).zip(&c.starts) {
        let (x, y, z) = (x.as_ref().unwrap(), y.as_ref().unwrap(), z.as_ref().unwrap());
        let costs = |s: &StartOutcome<f64>| s.report.iterations.iter().map(|r| r.cost.to_bits()).collect::<Vec<_>>();
        assert_eq!(costs(x), costs(y));
        assert_eq!(costs(x), costs(z));
        assert_eq!(x.net.flatten(), z.net.flatten());
    }
    let d = multistart(&prob, &pool_for(&prob, &cfg, 22), &cfg, &integ(), 22).unwrap();
    assert_ne!(a.best().cost, d.best().cost);
}

#[test]
fn single_start_equals_direct_run() {
    let prob = make_vdp::<f64>().unconstrained();
    let cfg = quick_multistart(1);
    let ms = multistart(&prob, &pool_for(&prob, &cfg, 5), &cfg, &integ(), 5).unwrap();
    let net = init_network(&prob, &cfg.hidden, 5, 0).unwrap();
    let mid = ReferenceProfile::Constant { value: vec![0.35] };
    let (direct, cost, _) = run_start(&prob, net, &mid, &cfg, &integ()).unwrap();
    assert_eq!(ms.best, 0);
    assert_eq!(ms.best().cost, cost);
    assert_eq!(ms.best().net.flatten(), direct.flatten());
}

#[test]
fn unconstrained_problem_is_a_single_minimisation() {
    let prob = make_vdp::<f64>().unconstrained();
    let net = init_network(&prob, &[8], 1, 0).unwrap();
    let cfg = ConstrainedConfig {
        optimizer: OptimizerConfig::lbfgs(15),
        ..Default::default()
    };
    let out = solve_constrained(&prob, net.clone(), &cfg, &integ(), |_, _| {}).unwrap();
    let mut obj = PolicyObjective::new(&prob, net.clone(), integ());
    let (theta, rep) = minimize(&mut obj, &net.flatten(), &cfg.optimizer).unwrap();
    assert_eq!(out.report.rounds.len(), 1);
    assert_eq!(out.net.flatten(), theta);
    assert_eq!(out.objective, rep.best_cost.unwrap());
    assert!(out.feasibility.feasible);
}

/// Iterations until the first feasible round within 2% of the constrained
/// optimum, if any.
fn iterations_to_target(out: &ConstrainedOutcome<f64>) -> Option<usize> {
    let mut total = 0;
    for r in &out.report.rounds {
        total += out.report.iterations.iter().filter(|it| it.round == r.round).count();
        if r.feasible && (r.objective - 2.953).abs() <= 0.02 * 2.953 {
            return Some(total);
        }
    }
    None
}

#[test]
fn barrier_rounds_reduce_violation_and_profit_from_warm_start() {
    let free = make_vdp::<f64>().unconstrained();
    let prob = make_vdp::<f64>();
    let warm = multistart(&free, &pool_for(&free, &MultistartConfig::default(), 0), &MultistartConfig::default(), &integ(), 0).unwrap().into_best();
    let cfg = ConstrainedConfig::default();
    let out = solve_constrained(&prob, warm.net, &cfg, &integ(), |_, _| {}).unwrap();

    let violations: Vec<f64> = out.report.rounds.iter().map(|r| (-r.min_scaled_margin[0]).max(0.0)).collect();
    for w in violations.windows(2).skip(1) {
        assert!(w[1] <= w[0], "violation grew: {violations:?}");
    }
    for r in &out.report.rounds {
        let best: Vec<f64> = out.report.iterations.iter().filter(|it| it.round == r.round).map(|it| it.cost).collect();
        let running: Vec<f64> = best.iter().scan(f64::INFINITY, |m, &c| {
            *m = m.min(c);
            Some(*m)
        }).collect();
        assert!(running.windows(2).all(|w| w[1] <= w[0]));
    }
    let deltas: Vec<f64> = out.report.rounds.iter().map(|r| r.delta[0]).collect();
    let alphas: Vec<f64> = out.report.rounds.iter().map(|r| r.alpha[0]).collect();
    for k in 1..deltas.len() {
        assert!(deltas[k] <= deltas[k - 1] && alphas[k] >= alphas[k - 1]);
        assert!(deltas[k] < deltas[k - 1] || alphas[k] > alphas[k - 1]);
    }

    let warm_iters = iterations_to_target(&out).expect("warm start reaches the target");
    let cold_net = init_network(&prob, &[16, 16], 0, 0).unwrap();
    let cold = solve_constrained(&prob, cold_net, &cfg, &integ(), |_, _| {}).unwrap();
    match iterations_to_target(&cold) {
        Some(cold_iters) => assert!(warm_iters < cold_iters, "warm {warm_iters} vs cold {cold_iters}"),
        None => {}
    }
}
