//! First-order optimisers over a flat parameter vector.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{IterRecord, Phase, RunReport, Termination};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, inf_norm, Real};

/// Something that can be minimised: a cost with its gradient.
pub trait Objective<T: Real> {
    fn value(&mut self, theta: &[T]) -> Result<T>;
    fn value_grad(&mut self, theta: &[T]) -> Result<(T, Vec<T>)>;

    /// `(objective, penalty)` split of the cost, reported in the log.
    fn breakdown(&mut self, _theta: &[T]) -> Option<(T, T)> {
        None
    }
}

/// Adapts a closure returning `(cost, grad)`.
pub struct FnObjective<F>(pub F);

impl<T: Real, F: FnMut(&[T]) -> Result<(T, Vec<T>)>> Objective<T> for FnObjective<F> {
    fn value(&mut self, theta: &[T]) -> Result<T> {
        (self.0)(theta).map(|(c, _)| c)
    }
    fn value_grad(&mut self, theta: &[T]) -> Result<(T, Vec<T>)> {
        (self.0)(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// AdamW learning rate, or the L-BFGS first-step length in the
    /// infinity norm.
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    pub grad_norm_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adamw(0.01, 500)
    }
}

impl OptimizerConfig {
    pub fn adamw(step_size: f64, max_iters: usize) -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            memory: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            max_iters,
            grad_norm_tol: 1e-8,
        }
    }

    pub fn lbfgs(max_iters: usize) -> Self {
        Self {
            kind: OptimizerKind::Lbfgs,
            step_size: 0.1,
            ..Self::adamw(0.1, max_iters)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("optimizer: {m}")));
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.kind == OptimizerKind::Lbfgs && self.memory == 0 {
            return bad("L-BFGS memory must be at least 1");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Labels attached to every logged iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct IterContext<T> {
    pub phase: Phase,
    pub round: usize,
    pub alpha_min: T,
    pub delta_max: T,
}

struct Logger<T> {
    ctx: IterContext<T>,
    start: Instant,
    report: RunReport<T>,
    best: Option<(T, Vec<T>)>,
}

impl<T: Real> Logger<T> {
    fn new(ctx: IterContext<T>) -> Self {
        Self {
            ctx,
            start: Instant::now(),
            report: RunReport::default(),
            best: None,
        }
    }

    fn record<O: Objective<T> + ?Sized>(&mut self, obj: &mut O, iter: usize, theta: &[T], cost: T, grad: &[T]) {
        let (objective, penalty) = obj.breakdown(theta).unwrap_or((cost, T::zero()));
        self.report.iterations.push(IterRecord {
            phase: self.ctx.phase,
            round: self.ctx.round,
            iter,
            cost,
            objective,
            penalty,
            grad_inf: inf_norm(grad),
            alpha_min: self.ctx.alpha_min,
            delta_max: self.ctx.delta_max,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        if self.best.as_ref().map_or(true, |(b, _)| cost < *b) {
            self.best = Some((cost, theta.to_vec()));
        }
    }

    fn finish(mut self, termination: Termination, fallback: &[T]) -> (Vec<T>, RunReport<T>) {
        self.report.termination = termination;
        match self.best {
            Some((c, theta)) => {
                self.report.best_cost = Some(c);
                (theta, self.report)
            }
            None => (fallback.to_vec(), self.report),
        }
    }
}

fn checked<T: Real>(res: Result<(T, Vec<T>)>, iter: usize) -> Result<(T, Vec<T>)> {
    match res {
        Ok((c, g)) if c.is_finite() && all_finite(&g) => Ok((c, g)),
        Ok((c, _)) => Err(Error::Objective {
            iter,
            source: Box::new(Error::NonFiniteState { t: c.to_f64_lossy() }),
        }),
        Err(e) => Err(Error::Objective {
            iter,
            source: Box::new(e),
        }),
    }
}

/// Minimises `objective` from `theta0`; returns the best iterate seen.
pub fn minimize<T: Real, O: Objective<T> + ?Sized>(objective: &mut O, theta0: &[T], cfg: &OptimizerConfig) -> Result<(Vec<T>, RunReport<T>)> {
    minimize_logged(objective, theta0, cfg, IterContext::default())
}

pub fn minimize_logged<T: Real, O: Objective<T> + ?Sized>(
    objective: &mut O,
    theta0: &[T],
    cfg: &OptimizerConfig,
    ctx: IterContext<T>,
) -> Result<(Vec<T>, RunReport<T>)> {
    cfg.validate()?;
    match cfg.kind {
        OptimizerKind::Adamw => adamw(objective, theta0, cfg, ctx),
        OptimizerKind::Lbfgs => lbfgs(objective, theta0, cfg, ctx),
    }
}

fn adamw<T: Real, O: Objective<T> + ?Sized>(obj: &mut O, theta0: &[T], cfg: &OptimizerConfig, ctx: IterContext<T>) -> Result<(Vec<T>, RunReport<T>)> {
    let n = theta0.len();
    let mut log = Logger::new(ctx);
    let mut theta = theta0.to_vec();
    let mut m = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps, wd) = (T::lit(cfg.step_size), T::lit(cfg.eps), T::lit(cfg.weight_decay));
    let tol = T::lit(cfg.grad_norm_tol);
    let mut b1t = T::one();
    let mut b2t = T::one();

    for k in 0..cfg.max_iters {
        let (cost, g) = match checked(obj.value_grad(&theta), k) {
            Ok(r) => r,
            Err(e) if k == 0 => return Err(e),
            Err(e) => {
                log::warn!("adamw stopped at iteration {k}: {e}");
                return Ok(log.finish(Termination::NonFinite { iter: k }, theta0));
            }
        };
        log.record(obj, k, &theta, cost, &g);
        if inf_norm(&g) <= tol {
            return Ok(log.finish(Termination::GradTol, theta0));
        }
        b1t = b1t * b1;
        b2t = b2t * b2;
        for i in 0..n {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = m[i] / (T::one() - b1t);
            let vh = v[i] / (T::one() - b2t);
            theta[i] = theta[i] - lr * (mh / (vh.sqrt() + eps) + wd * theta[i]);
        }
    }
    Ok(log.finish(Termination::MaxIters, theta0))
}

fn lbfgs<T: Real, O: Objective<T> + ?Sized>(obj: &mut O, theta0: &[T], cfg: &OptimizerConfig, ctx: IterContext<T>) -> Result<(Vec<T>, RunReport<T>)> {
    let n = theta0.len();
    let mut log = Logger::new(ctx);
    let mut theta = theta0.to_vec();
    let (mut cost, mut g) = checked(obj.value_grad(&theta), 0)?;
    let tol = T::lit(cfg.grad_norm_tol);
    let c1 = T::lit(cfg.armijo);
    let shrink = T::lit(cfg.backtrack);
    let mut s_hist: Vec<Vec<T>> = Vec::new();
    let mut y_hist: Vec<Vec<T>> = Vec::new();
    let mut rho: Vec<T> = Vec::new();

    for k in 0..cfg.max_iters {
        log.record(obj, k, &theta, cost, &g);
        if inf_norm(&g) <= tol {
            return Ok(log.finish(Termination::GradTol, theta0));
        }
        if k + 1 == cfg.max_iters {
            break;
        }

        // Two-loop recursion for d = -H g.
        let mut q = g.clone();
        let mut a = vec![T::zero(); s_hist.len()];
        for j in (0..s_hist.len()).rev() {
            a[j] = rho[j] * dot(&s_hist[j], &q);
            q.iter_mut().zip(&y_hist[j]).for_each(|(qi, yi)| *qi = *qi - a[j] * *yi);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi = *qi * gamma);
        }
        for j in 0..s_hist.len() {
            let b = rho[j] * dot(&y_hist[j], &q);
            q.iter_mut().zip(&s_hist[j]).for_each(|(qi, si)| *qi = *qi + (a[j] - b) * *si);
        }
        let mut d: Vec<T> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) || !all_finite(&d) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if s_hist.is_empty() {
            (T::lit(cfg.step_size) / inf_norm(&d)).min(T::one())
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<T> = theta.iter().zip(&d).map(|(&t, &di)| t + step * di).collect();
            if let Ok((c, gt)) = checked(obj.value_grad(&trial), k + 1) {
                if c <= cost + c1 * step * slope {
                    accepted = Some((trial, c, gt));
                    break;
                }
            }
            step = step * shrink;
        }
        let Some((trial, c_new, g_new)) = accepted else {
            log::debug!("l-bfgs line search failed at iteration {k}");
            return Ok(log.finish(Termination::LineSearchFailed { iter: k }, theta0));
        };

        let s: Vec<T> = trial.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-10) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(T::one() / sy);
        }
        theta = trial;
        cost = c_new;
        g = g_new;
        debug_assert_eq!(theta.len(), n);
    }
    Ok(log.finish(Termination::MaxIters, theta0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(c: Vec<f64>) -> FnObjective<impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> {
        FnObjective(move |th: &[f64]| {
            let g: Vec<f64> = th.iter().zip(&c).map(|(t, ci)| 2.0 * (t - ci)).collect();
            Ok((th.iter().zip(&c).map(|(t, ci)| (t - ci).powi(2)).sum(), g))
        })
    }

    fn rosenbrock() -> FnObjective<impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> {
        FnObjective(|th: &[f64]| {
            let (x, y) = (th[0], th[1]);
            let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
            Ok((f, g))
        })
    }

    #[test]
    fn adamw_finds_quadratic_minimum() {
        let c = vec![1.5, -0.5, 3.0];
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::adamw(0.05, 2000)
        };
        let (th, rep) = minimize(&mut quadratic(c.clone()), &[0.0; 3], &cfg).unwrap();
        let dist = th.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= 1e-3, "distance {dist}");
        assert!(!rep.iterations.is_empty());
    }

    #[test]
    fn zero_gradient_converges_immediately() {
        for cfg in [OptimizerConfig::adamw(0.1, 50), OptimizerConfig::lbfgs(50)] {
            let (th, rep) = minimize(&mut quadratic(vec![2.0, 2.0]), &[2.0, 2.0], &cfg).unwrap();
            assert_eq!(th, vec![2.0, 2.0]);
            assert_eq!(rep.termination, Termination::GradTol);
            assert_eq!(rep.iterations.len(), 1);
        }
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let cfg = OptimizerConfig {
            grad_norm_tol: 1e-10,
            ..OptimizerConfig::lbfgs(200)
        };
        let (th, rep) = minimize(&mut rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        let cost = rep.best_cost.unwrap();
        assert!(cost < 1e-6, "cost {cost} after {} iterations", rep.iterations.len());
        assert!((th[0] - 1.0).abs() < 1e-2 && (th[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn best_iterate_is_returned() {
        // A large AdamW step makes the last iterates worse than the best one.
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::adamw(0.9, 40)
        };
        let (th, rep) = minimize(&mut quadratic(vec![0.1]), &[0.0], &cfg).unwrap();
        let best = rep.iterations.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
        assert_eq!(rep.best_cost, Some(best));
        assert!(((th[0] - 0.1f64).powi(2) - best).abs() < 1e-15);
    }

    #[test]
    fn objective_errors_carry_iteration() {
        let mut calls = 0;
        let mut obj = FnObjective(|th: &[f64]| {
            calls += 1;
            if calls > 3 {
                Err(Error::NonFiniteState { t: 0.0 })
            } else {
                Ok((th[0] * th[0], vec![2.0 * th[0]]))
            }
        });
        let (_, rep) = minimize(&mut obj, &[1.0], &OptimizerConfig::adamw(0.1, 10)).unwrap();
        assert_eq!(rep.termination, Termination::NonFinite { iter: 3 });

        let mut failing = FnObjective(|_: &[f64]| -> Result<(f64, Vec<f64>)> { Err(Error::NonFiniteState { t: 0.0 }) });
        let err = minimize(&mut failing, &[1.0], &OptimizerConfig::adamw(0.1, 10)).unwrap_err();
        assert!(matches!(err, Error::Objective { iter: 0, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut obj = quadratic(vec![0.0]);
        let bad = OptimizerConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(minimize(&mut obj, &[0.0], &bad).is_err());
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(minimize(&mut obj, &[0.0], &bad).is_err());
    }
}
