//! Cost and parameter gradient of a closed-loop Bolza problem.
//!
//! The forward pass integrates the state together with a running-cost
//! accumulator and keeps the dense interpolant. The backward pass integrates
//! the costate `lambda' = -H_x` from `lambda(t_f) = phi_x(x(t_f))` jointly
//! with the quadrature block `q' = -H_theta`, `q(t_f) = 0`; the gradient is
//! `q(t_0)`. With `w = f_u^T lambda + l_u` every evaluation needs one policy
//! VJP:
//!
//! ```text
//! H_x     = f_x^T lambda + l_x + (dpi/dx)^T w
//! H_theta = (dpi/dtheta)^T w
//! ```

use crate::dynamics::{check_compatible, ControlProblem};
use crate::error::{Error, Result};
use crate::odeint::{integrate, IntegratorConfig, IntegratorStats, Trajectory};
use crate::penalty::{path_barrier, terminal_barrier, BarrierParams};
use crate::policy::Policy;
use crate::quadrature::{integrate_pieces, QuadratureConfig};
use crate::scalar::{all_finite, Real};

/// Cost, gradient and diagnostics of one adjoint evaluation.
#[derive(Debug, Clone)]
pub struct GradientResult<T> {
    pub cost: T,
    pub grad: Vec<T>,
    /// Forward solution of `[x; accumulated running cost]`.
    pub forward: Trajectory<T>,
    pub adjoint_steps: usize,
    /// Costate at the initial time.
    pub lambda0: Vec<T>,
    pub forward_stats: IntegratorStats,
    pub backward_stats: IntegratorStats,
}

/// Integrates the closed loop and the running cost; returns the augmented
/// trajectory `[x; c]` and `J = c(t_f) + phi(x(t_f))`.
pub fn simulate<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<(Trajectory<T>, T)> {
    check_compatible(prob, policy)?;
    let n_x = prob.n_x();
    let mut u = vec![T::zero(); prob.n_u()];
    let rhs = |t: T, y: &[T], dy: &mut [T]| {
        let x = &y[..n_x];
        policy.forward_into(x, &mut u);
        prob.dynamics(t, x, &u, &mut dy[..n_x]);
        dy[n_x] = prob.running_cost(t, x, &u);
    };
    let mut y0 = prob.x0().to_vec();
    y0.push(T::zero());
    let traj = integrate(rhs, &y0, (prob.t0(), prob.tf()), cfg)?;
    let end = traj.last();
    let cost = end[n_x] + prob.terminal_cost(&end[..n_x]);
    Ok((traj, cost))
}

/// Objective and unweighted barrier contributions of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown<T> {
    /// Cost of the problem without barriers.
    pub objective: T,
    /// `int P(h_i / s_i; delta_i) dt` per path constraint.
    pub path: Vec<T>,
    /// `P(h_j(x(t_f)) / s_j; delta_j)` per terminal constraint.
    pub terminal: Vec<T>,
}

impl<T: Real> CostBreakdown<T> {
    pub fn raw(&self) -> Vec<T> {
        self.path.iter().chain(&self.terminal).copied().collect()
    }

    /// `sum_i alpha_i * raw_i`.
    pub fn penalty(&self, params: &[BarrierParams<T>]) -> T {
        self.raw()
            .iter()
            .zip(params)
            .fold(T::zero(), |s, (&r, p)| s + p.alpha * r)
    }
}

/// Splits the cost of `prob` into objective and per-constraint barrier terms
/// evaluated with the relaxations in `params` (weights are ignored).
pub fn cost_breakdown<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    params: &[BarrierParams<T>],
    cfg: &IntegratorConfig<T>,
) -> Result<CostBreakdown<T>> {
    check_compatible(prob, policy)?;
    let path = prob.path_constraints();
    let term = prob.terminal_constraints();
    if params.len() != path.len() + term.len() {
        return Err(Error::DimensionMismatch {
            what: "barrier parameters per constraint",
            expected: path.len() + term.len(),
            got: params.len(),
        });
    }
    let n_x = prob.n_x();
    let mut u = vec![T::zero(); prob.n_u()];
    let rhs = |t: T, y: &[T], dy: &mut [T]| {
        let x = &y[..n_x];
        policy.forward_into(x, &mut u);
        prob.dynamics(t, x, &u, &mut dy[..n_x]);
        dy[n_x] = prob.running_cost(t, x, &u);
        for (i, (c, p)) in path.iter().zip(params).enumerate() {
            dy[n_x + 1 + i] = path_barrier(c, x, &u, p.delta);
        }
    };
    let mut y0 = prob.x0().to_vec();
    y0.resize(n_x + 1 + path.len(), T::zero());
    let traj = integrate(rhs, &y0, (prob.t0(), prob.tf()), cfg)?;
    let end = traj.last();
    let xf = &end[..n_x];
    Ok(CostBreakdown {
        objective: end[n_x] + prob.terminal_cost(xf),
        path: end[n_x + 1..].to_vec(),
        terminal: term
            .iter()
            .zip(&params[path.len()..])
            .map(|(c, p)| terminal_barrier(c, xf, p.delta))
            .collect(),
    })
}

/// Scratch buffers for Hamiltonian partials.
struct Hamiltonian<'a, T: Real> {
    prob: &'a dyn ControlProblem<T>,
    policy: &'a dyn Policy<T>,
    forward: &'a Trajectory<T>,
    x: Vec<T>,
    u: Vec<T>,
    fx: Vec<T>,
    fu: Vec<T>,
    lx: Vec<T>,
    lu: Vec<T>,
    w: Vec<T>,
    gx: Vec<T>,
}

impl<'a, T: Real> Hamiltonian<'a, T> {
    fn new(prob: &'a dyn ControlProblem<T>, policy: &'a dyn Policy<T>, forward: &'a Trajectory<T>) -> Self {
        let (n, m) = (prob.n_x(), prob.n_u());
        Self {
            prob,
            policy,
            forward,
            x: vec![T::zero(); n],
            u: vec![T::zero(); m],
            fx: vec![T::zero(); n * n],
            fu: vec![T::zero(); n * m],
            lx: vec![T::zero(); n],
            lu: vec![T::zero(); m],
            w: vec![T::zero(); m],
            gx: vec![T::zero(); n],
        }
    }

    /// Writes `H_x` into `hx` and `H_theta` into `htheta` at time `t`.
    fn partials(&mut self, t: T, lambda: &[T], hx: &mut [T], htheta: &mut [T]) {
        let (n, m) = (self.x.len(), self.u.len());
        self.forward.eval_clamped(t, &mut self.x);
        self.policy.forward_into(&self.x, &mut self.u);
        self.prob.jac_x(t, &self.x, &self.u, &mut self.fx);
        self.prob.jac_u(t, &self.x, &self.u, &mut self.fu);
        self.prob.cost_partials(t, &self.x, &self.u, &mut self.lx, &mut self.lu);
        for k in 0..m {
            let mut s = self.lu[k];
            for i in 0..n {
                s = s + lambda[i] * self.fu[i * m + k];
            }
            self.w[k] = s;
        }
        self.policy.vjp_into(&self.x, &self.w, &mut self.gx, htheta);
        for j in 0..n {
            let mut s = self.lx[j] + self.gx[j];
            for i in 0..n {
                s = s + lambda[i] * self.fx[i * n + j];
            }
            hx[j] = s;
        }
    }
}

fn backward_error(e: Error) -> Error {
    match e {
        Error::NonFiniteState { t } => Error::NonFiniteAdjoint { t },
        other => other,
    }
}

fn terminal_costate<T: Real>(prob: &dyn ControlProblem<T>, forward: &Trajectory<T>) -> Vec<T> {
    let n_x = prob.n_x();
    let mut lambda_f = vec![T::zero(); n_x];
    prob.terminal_cost_grad(&forward.last()[..n_x], &mut lambda_f);
    lambda_f
}

/// Adjoint gradient with the backward pass using the forward tolerances.
pub fn grad<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<GradientResult<T>> {
    grad_with(prob, policy, cfg, cfg)
}

pub fn grad_with<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    forward_cfg: &IntegratorConfig<T>,
    backward_cfg: &IntegratorConfig<T>,
) -> Result<GradientResult<T>> {
    let (forward, cost) = simulate(prob, policy, forward_cfg)?;
    let n_x = prob.n_x();
    let n_p = policy.n_params();

    let mut y_f = terminal_costate(prob, &forward);
    y_f.resize(n_x + n_p, T::zero());

    let mut ham = Hamiltonian::new(prob, policy, &forward);
    let rhs = |t: T, y: &[T], dy: &mut [T]| {
        let (hx, htheta) = dy.split_at_mut(n_x);
        ham.partials(t, &y[..n_x], hx, htheta);
        dy.iter_mut().for_each(|v| *v = -*v);
    };
    let backward = integrate(rhs, &y_f, (prob.tf(), prob.t0()), backward_cfg).map_err(backward_error)?;
    let end = backward.last();
    if !all_finite(end) {
        return Err(Error::NonFiniteAdjoint {
            t: prob.t0().to_f64_lossy(),
        });
    }
    Ok(GradientResult {
        cost,
        grad: end[n_x..].to_vec(),
        lambda0: end[..n_x].to_vec(),
        adjoint_steps: backward.n_steps(),
        forward_stats: forward.stats(),
        backward_stats: backward.stats(),
        forward,
    })
}

/// Gradient by integrating the costate alone, then applying adaptive
/// Gauss-Kronrod quadrature to `H_theta` over the merged forward/backward
/// meshes. Independent of the extended-system quadrature in [`grad`].
pub fn grad_via_quadrature<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    cfg: &IntegratorConfig<T>,
    quad: &QuadratureConfig<T>,
) -> Result<Vec<T>> {
    let (forward, _) = simulate(prob, policy, cfg)?;
    let n_x = prob.n_x();
    let n_p = policy.n_params();
    let lambda_f = terminal_costate(prob, &forward);

    let mut scratch = vec![T::zero(); n_p];
    let costate = {
        let mut ham = Hamiltonian::new(prob, policy, &forward);
        let rhs = |t: T, lam: &[T], dl: &mut [T]| {
            ham.partials(t, lam, dl, &mut scratch);
            dl.iter_mut().for_each(|v| *v = -*v);
        };
        integrate(rhs, &lambda_f, (prob.tf(), prob.t0()), cfg).map_err(backward_error)?
    };

    let mut breaks: Vec<T> = forward.mesh().iter().chain(costate.mesh()).copied().collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite mesh"));
    breaks.dedup();

    let mut ham = Hamiltonian::new(prob, policy, &forward);
    let mut lam = vec![T::zero(); n_x];
    let mut hx = vec![T::zero(); n_x];
    let (g, _) = integrate_pieces(
        |t: T, out: &mut [T]| {
            costate.eval_clamped(t, &mut lam);
            ham.partials(t, &lam, &mut hx, out);
        },
        &breaks,
        n_p,
        quad,
    );
    if !all_finite(&g) {
        return Err(Error::NonFiniteAdjoint {
            t: prob.t0().to_f64_lossy(),
        });
    }
    Ok(g)
}

/// Costate trajectory `lambda(t)` from `t_f` back to `t_0` (diagnostics).
pub fn costate<T: Real>(
    prob: &dyn ControlProblem<T>,
    policy: &dyn Policy<T>,
    forward: &Trajectory<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    let n_p = policy.n_params();
    let lambda_f = terminal_costate(prob, forward);
    let mut scratch = vec![T::zero(); n_p];
    let mut ham = Hamiltonian::new(prob, policy, forward);
    let rhs = |t: T, lam: &[T], dl: &mut [T]| {
        ham.partials(t, lam, dl, &mut scratch);
        dl.iter_mut().for_each(|v| *v = -*v);
    };
    integrate(rhs, &lambda_f, (prob.tf(), prob.t0()), cfg).map_err(backward_error)
}

/// Agreement of the adjoint gradient with two independent oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    /// Largest relative error of `grad . d` against central differences.
    pub fd_rel_err: T,
    /// Relative infinity-norm distance to [`grad_via_quadrature`].
    pub quad_rel_err: T,
    pub directions: usize,
}

/// Compares [`grad`] with central differences of [`simulate`] along
/// `n_directions` random unit directions (drawn from `rng`) and with the
/// quadrature variant. The policy's parameters are restored afterwards.
pub fn gradient_check<T: Real, P: Policy<T> + Clone>(
    prob: &dyn ControlProblem<T>,
    policy: &P,
    cfg: &IntegratorConfig<T>,
    n_directions: usize,
    fd_step: T,
    rng: &mut crate::rng::Rng,
) -> Result<GradCheck<T>> {
    use rand::Rng as _;
    if n_directions == 0 {
        return Err(Error::InvalidConfig("gradient check needs at least one direction".into()));
    }
    let g = grad(prob, policy, cfg)?;
    let theta = policy.params();
    let mut probe = policy.clone();
    let mut fd_rel_err = T::zero();
    for _ in 0..n_directions {
        let mut d: Vec<T> = (0..theta.len()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        let norm = d.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        d.iter_mut().for_each(|v| *v = *v / norm);
        let mut at = |sign: T| -> Result<T> {
            let shifted: Vec<T> = theta.iter().zip(&d).map(|(&t, &di)| t + sign * fd_step * di).collect();
            probe.set_params(&shifted)?;
            simulate(prob, &probe, cfg).map(|(_, c)| c)
        };
        let fd = (at(T::one())? - at(-T::one())?) / (T::lit(2.0) * fd_step);
        let ad = crate::scalar::dot(&g.grad, &d);
        let denom = fd.abs().max(ad.abs()).max(T::min_positive_value());
        fd_rel_err = fd_rel_err.max((fd - ad).abs() / denom);
    }
    let gq = grad_via_quadrature(prob, policy, cfg, &QuadratureConfig::default())?;
    let diff = g.grad.iter().zip(&gq).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    let scale = crate::scalar::inf_norm(&g.grad).max(T::min_positive_value());
    Ok(GradCheck {
        fd_rel_err,
        quad_rel_err: diff / scale,
        directions: n_directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_vdp, CorruptedJacobian, VanDerPol};
    use crate::policy::PolicyNetwork;
    use crate::rng;

    /// `x' = u x` with `phi = w x(t_f)`; a constant policy `u = theta` turns
    /// it into `x' = theta x`.
    struct Growth {
        w: f64,
    }

    const GROWTH: Growth = Growth { w: 1.0 };

    impl ControlProblem<f64> for Growth {
        fn name(&self) -> &str {
            "growth"
        }
        fn n_x(&self) -> usize {
            1
        }
        fn n_u(&self) -> usize {
            1
        }
        fn x0(&self) -> &[f64] {
            &[1.0]
        }
        fn t0(&self) -> f64 {
            0.0
        }
        fn tf(&self) -> f64 {
            1.0
        }
        fn u_lb(&self) -> &[f64] {
            &[-10.0]
        }
        fn u_ub(&self) -> &[f64] {
            &[10.0]
        }
        fn dynamics(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
            dx[0] = u[0] * x[0];
        }
        fn jac_x(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = u[0];
        }
        fn jac_u(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = x[0];
        }
        fn running_cost(&self, _t: f64, _x: &[f64], _u: &[f64]) -> f64 {
            0.0
        }
        fn cost_partials(&self, _t: f64, _x: &[f64], _u: &[f64], lx: &mut [f64], lu: &mut [f64]) {
            lx[0] = 0.0;
            lu[0] = 0.0;
        }
        fn terminal_cost(&self, x: &[f64]) -> f64 {
            self.w * x[0]
        }
        fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = self.w;
        }
    }

    #[derive(Clone)]
    struct ConstantPolicy(f64);

    impl Policy<f64> for ConstantPolicy {
        fn n_inputs(&self) -> usize {
            1
        }
        fn n_outputs(&self) -> usize {
            1
        }
        fn n_params(&self) -> usize {
            1
        }
        fn forward_into(&self, _x: &[f64], u: &mut [f64]) {
            u[0] = self.0;
        }
        fn vjp_into(&self, _x: &[f64], w: &[f64], gx: &mut [f64], gtheta: &mut [f64]) {
            gx[0] = 0.0;
            gtheta[0] = w[0];
        }
        fn params(&self) -> Vec<f64> {
            vec![self.0]
        }
        fn set_params(&mut self, theta: &[f64]) -> Result<()> {
            self.0 = theta[0];
            Ok(())
        }
    }

    fn tight() -> IntegratorConfig<f64> {
        IntegratorConfig::with_tolerances(1e-10, 1e-12)
    }

    fn random_vdp_net(seed: u64) -> PolicyNetwork<f64> {
        let p = make_vdp::<f64>();
        PolicyNetwork::glorot_seeded(&[2, 16, 16, 1], p.u_lb(), p.u_ub(), seed).unwrap()
    }

    #[test]
    fn scalar_growth_cost_and_gradient() {
        let pol = ConstantPolicy(0.5);
        let (_, cost) = simulate(&GROWTH, &pol, &tight()).unwrap();
        assert!((cost - 0.5f64.exp()).abs() < 1e-6);
        let g = grad(&GROWTH, &pol, &tight()).unwrap();
        assert!((g.grad[0] - 1.6487212707001282).abs() < 1e-5, "{}", g.grad[0]);
        let gq = grad_via_quadrature(&GROWTH, &pol, &tight(), &QuadratureConfig::default()).unwrap();
        assert!((gq[0] - g.grad[0]).abs() < 1e-6);
        // lambda(t) = exp(theta (1 - t)), so lambda(0) = e^theta.
        assert!((g.lambda0[0] - 0.5f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn no_cost_means_no_gradient() {
        let pol = ConstantPolicy(0.3);
        let g = grad(&Growth { w: 0.0 }, &pol, &tight()).unwrap();
        assert_eq!(g.grad, vec![0.0]);
        let gq = grad_via_quadrature(&Growth { w: 0.0 }, &pol, &tight(), &QuadratureConfig::default()).unwrap();
        assert_eq!(gq, vec![0.0]);
    }

    #[test]
    fn costate_starts_at_terminal_gradient() {
        let prob = VanDerPol::<f64>::new(-0.4);
        let net = random_vdp_net(3);
        let (fwd, _) = simulate(&prob, &net, &tight()).unwrap();
        let lam = costate(&prob, &net, &fwd, &tight()).unwrap();
        let mut expected = vec![0.0; 2];
        prob.terminal_cost_grad(&fwd.last()[..2], &mut expected);
        assert_eq!(lam.first(), &expected[..]);
    }

    #[test]
    fn cost_matches_running_cost_quadrature() {
        let prob = make_vdp::<f64>().unconstrained();
        let net = random_vdp_net(5);
        let (fwd, cost) = simulate(&prob, &net, &tight()).unwrap();
        let mut x = vec![0.0; 3];
        let (q, _) = integrate_pieces(
            |t, out: &mut [f64]| {
                fwd.eval_clamped(t, &mut x);
                let u = net.forward(&x[..2]).unwrap();
                out[0] = prob.running_cost(t, &x[..2], &u);
            },
            fwd.mesh(),
            1,
            &QuadratureConfig::default(),
        );
        assert!((q[0] - cost).abs() <= 1e-8 * cost.abs().max(1.0), "{} vs {cost}", q[0]);
        assert!(cost >= 0.0);
    }

    #[test]
    fn vdp_gradient_matches_coordinate_differences() {
        let prob = make_vdp::<f64>().unconstrained();
        let net = random_vdp_net(11);
        let cfg = tight();
        let g = grad(&prob, &net, &cfg).unwrap();
        assert_eq!(g.grad.len(), 337);
        let theta = net.flatten();
        let scale = crate::scalar::inf_norm(&g.grad);
        let mut rng = rng::stream(11, rng::DIAGNOSTIC_STREAM);
        use rand::Rng as _;
        for _ in 0..20 {
            let k = rng.gen_range(0..theta.len());
            let h = 1e-4;
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let jp = simulate(&prob, &net.with_params(&plus).unwrap(), &cfg).unwrap().1;
            let jm = simulate(&prob, &net.with_params(&minus).unwrap(), &cfg).unwrap().1;
            let fd = (jp - jm) / (2.0 * h);
            let err = (fd - g.grad[k]).abs() / fd.abs().max(g.grad[k].abs()).max(1e-3 * scale);
            assert!(err <= 1e-4, "coordinate {k}: adjoint {} vs fd {fd}", g.grad[k]);
        }
    }

    #[test]
    fn gradient_check_passes_and_detects_corruption() {
        let prob = make_vdp::<f64>();
        let net = random_vdp_net(2);
        let mut rng = rng::stream(2, rng::DIAGNOSTIC_STREAM);
        let ok = gradient_check(&prob, &net, &tight(), 5, 1e-4, &mut rng).unwrap();
        assert!(ok.fd_rel_err <= 1e-4 && ok.quad_rel_err <= 1e-4, "{ok:?}");

        let bad = CorruptedJacobian { inner: make_vdp::<f64>(), shift: 0.5 };
        let res = gradient_check(&bad, &net, &tight(), 5, 1e-4, &mut rng).unwrap();
        assert!(res.fd_rel_err > 1e-2, "{res:?}");
        assert!(gradient_check(&prob, &net, &tight(), 0, 1e-4, &mut rng).is_err());
    }
}
