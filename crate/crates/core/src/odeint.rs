//! Adaptive Dormand-Prince 5(4) integration with dense output.
//!
//! The same stepper handles forward (`t_a < t_b`) and backward (`t_a > t_b`)
//! runs; for backward runs the step size is negative and the stored mesh is
//! decreasing. Every accepted step keeps the coefficients of the standard
//! 4th-order continuous extension so the solution can be evaluated anywhere
//! inside the span.

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

/// Tolerances and step-size knobs for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step magnitude. `None` selects it automatically.
    pub h_init: Option<T>,
    /// Maximum step magnitude. `None` means the span length.
    pub h_max: Option<T>,
    /// Budget of attempted (accepted + rejected) steps.
    pub max_steps: usize,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            rtol: T::lit(1e-6),
            atol: T::lit(1e-8),
            h_init: None,
            h_max: None,
            max_steps: 100_000,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn with_tolerances(rtol: T, atol: T) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !pos(self.rtol) || !pos(self.atol) {
            return Err(Error::InvalidConfig(
                "integrator tolerances must be positive and finite".into(),
            ));
        }
        if self.h_max.is_some_and(|h| !pos(h)) || self.h_init.is_some_and(|h| !pos(h)) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counters collected during one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Dense-output solution of an initial value problem.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    dim: usize,
    mesh: Vec<T>,
    /// Flat `mesh.len() * dim` state storage.
    states: Vec<T>,
    /// Per step: four `dim`-blocks of continuous-extension coefficients.
    interp: Vec<T>,
    stats: IntegratorStats,
}

impl<T: Real> Trajectory<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> &[T] {
        &self.mesh
    }

    pub fn t0(&self) -> T {
        self.mesh[0]
    }

    pub fn tf(&self) -> T {
        self.mesh[self.mesh.len() - 1]
    }

    pub fn n_points(&self) -> usize {
        self.mesh.len()
    }

    pub fn n_steps(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn first(&self) -> &[T] {
        self.state(0)
    }

    pub fn last(&self) -> &[T] {
        self.state(self.mesh.len() - 1)
    }

    pub fn stats(&self) -> IntegratorStats {
        self.stats
    }

    fn increasing(&self) -> bool {
        self.tf() >= self.t0()
    }

    fn bounds(&self) -> (T, T) {
        let (a, b) = (self.t0(), self.tf());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Interpolated state at `t`. Mesh points return the stored state exactly.
    pub fn eval(&self, t: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Writes the first `out.len()` components of the interpolated state.
    pub fn eval_into(&self, t: T, out: &mut [T]) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain {
                t: t.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        self.eval_unchecked(t, out);
        Ok(())
    }

    /// Like [`eval_into`](Self::eval_into) but clamps `t` into the span.
    /// Stage times of a final step can overshoot the span by an ulp.
    pub fn eval_clamped(&self, t: T, out: &mut [T]) {
        let (lo, hi) = self.bounds();
        self.eval_unchecked(t.max(lo).min(hi), out);
    }

    fn locate(&self, t: T) -> usize {
        let n = self.mesh.len();
        let idx = if self.increasing() {
            self.mesh.partition_point(|&m| m <= t)
        } else {
            self.mesh.partition_point(|&m| m >= t)
        };
        // idx is the first mesh point strictly past t; the step starts one before.
        idx.saturating_sub(1).min(n.saturating_sub(2))
    }

    fn eval_unchecked(&self, t: T, out: &mut [T]) {
        let m = out.len().min(self.dim);
        if self.mesh.len() == 1 {
            out[..m].copy_from_slice(&self.state(0)[..m]);
            return;
        }
        let k = self.locate(t);
        if t == self.mesh[k] {
            out[..m].copy_from_slice(&self.state(k)[..m]);
            return;
        }
        if t == self.mesh[k + 1] {
            out[..m].copy_from_slice(&self.state(k + 1)[..m]);
            return;
        }
        let (ta, tb) = (self.mesh[k], self.mesh[k + 1]);
        let s = (t - ta) / (tb - ta);
        let s1 = T::one() - s;
        let y0 = self.state(k);
        let base = k * 4 * self.dim;
        let r = &self.interp[base..base + 4 * self.dim];
        let d = self.dim;
        for i in 0..m {
            out[i] = y0[i] + s * (r[i] + s1 * (r[d + i] + s * (r[2 * d + i] + s1 * r[3 * d + i])));
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension (Hairer, Norsett & Wanner, DOPRI5 `contd5`).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

struct Tableau<T> {
    c: [T; 4],
    a: [T; 20],
    e: [T; 6],
    d: [T; 6],
}

impl<T: Real> Tableau<T> {
    fn new() -> Self {
        let l = T::lit;
        Self {
            c: [l(C2), l(C3), l(C4), l(C5)],
            a: [
                l(A21),
                l(A31),
                l(A32),
                l(A41),
                l(A42),
                l(A43),
                l(A51),
                l(A52),
                l(A53),
                l(A54),
                l(A61),
                l(A62),
                l(A63),
                l(A64),
                l(A65),
                l(A71),
                l(A73),
                l(A74),
                l(A75),
                l(A76),
            ],
            e: [l(E1), l(E3), l(E4), l(E5), l(E6), l(E7)],
            d: [l(D1), l(D3), l(D4), l(D5), l(D6), l(D7)],
        }
    }
}

fn err_norm<T: Real>(err: &[T], y0: &[T], y1: &[T], rtol: T, atol: T) -> T {
    let n = err.len();
    if n == 0 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let sk = atol + rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sk;
        acc = acc + r * r;
    }
    (acc / T::from_usize(n).unwrap()).sqrt()
}

fn initial_step<T, F>(rhs: &mut F, t: T, y0: &[T], f0: &[T], dir: T, cfg: &IntegratorConfig<T>, h_max: T, stats: &mut IntegratorStats) -> T
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]),
{
    let n = y0.len();
    let zeros = vec![T::zero(); n];
    let d0 = err_norm(y0, &zeros, y0, cfg.rtol, cfg.atol);
    let d1 = err_norm(f0, &zeros, y0, cfg.rtol, cfg.atol);
    let tiny = T::lit(1e-5);
    let mut h0 = if d0 < tiny || d1 < tiny {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    h0 = h0.min(h_max);
    let y1: Vec<T> = y0.iter().zip(f0).map(|(&y, &f)| y + dir * h0 * f).collect();
    let mut f1 = vec![T::zero(); n];
    rhs(t + dir * h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let df: Vec<T> = f1.iter().zip(f0).map(|(&a, &b)| a - b).collect();
    let d2 = err_norm(&df, &zeros, y0, cfg.rtol, cfg.atol) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / dm).powf(T::lit(0.2))
    };
    (T::lit(100.0) * h0).min(h1).min(h_max)
}

/// Integrates `dx/dt = rhs(t, x)` from `span.0` to `span.1`.
///
/// `rhs(t, x, dx)` must overwrite `dx`. The span may run backward in time.
pub fn integrate<T, F>(mut rhs: F, x0: &[T], span: (T, T), cfg: &IntegratorConfig<T>) -> Result<Trajectory<T>>
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]),
{
    cfg.validate()?;
    let (ta, tb) = span;
    if !ta.is_finite() || !tb.is_finite() || ta == tb {
        return Err(Error::InvalidConfig(format!(
            "integration span [{ta}, {tb}] must be finite and non-empty"
        )));
    }
    if !all_finite(x0) {
        return Err(Error::NonFiniteState {
            t: ta.to_f64_lossy(),
        });
    }
    let n = x0.len();
    let tab = Tableau::<T>::new();
    let dir = if tb > ta { T::one() } else { -T::one() };
    let length = (tb - ta).abs();
    let h_max = cfg.h_max.unwrap_or(length).min(length);

    let mut stats = IntegratorStats::default();
    let mut mesh = vec![ta];
    let mut states = x0.to_vec();
    let mut interp = Vec::new();

    let mut t = ta;
    let mut y = x0.to_vec();
    let mut k1 = vec![T::zero(); n];
    rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;

    let mut h = match cfg.h_init {
        Some(h) => h.min(h_max),
        None => initial_step(&mut rhs, t, &y, &k1, dir, cfg, h_max, &mut stats),
    };

    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut k5 = vec![T::zero(); n];
    let mut k6 = vec![T::zero(); n];
    let mut k7 = vec![T::zero(); n];
    let mut ys = vec![T::zero(); n];
    let mut y1 = vec![T::zero(); n];
    let mut err = vec![T::zero(); n];
    let mut just_rejected = false;
    let a = &tab.a;
    let eps = T::epsilon();

    loop {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::StepBudgetExceeded {
                max_steps: cfg.max_steps,
                t: t.to_f64_lossy(),
            });
        }
        let remaining = (tb - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h <= T::lit(16.0) * eps * t.abs().max(T::one()) {
            return Err(Error::StepSizeUnderflow {
                t: t.to_f64_lossy(),
                h: h.to_f64_lossy(),
            });
        }
        let hs = dir * h;
        let t_new = if last { tb } else { t + hs };

        for i in 0..n {
            ys[i] = y[i] + hs * a[0] * k1[i];
        }
        rhs(t + hs * tab.c[0], &ys, &mut k2);
        for i in 0..n {
            ys[i] = y[i] + hs * (a[1] * k1[i] + a[2] * k2[i]);
        }
        rhs(t + hs * tab.c[1], &ys, &mut k3);
        for i in 0..n {
            ys[i] = y[i] + hs * (a[3] * k1[i] + a[4] * k2[i] + a[5] * k3[i]);
        }
        rhs(t + hs * tab.c[2], &ys, &mut k4);
        for i in 0..n {
            ys[i] = y[i] + hs * (a[6] * k1[i] + a[7] * k2[i] + a[8] * k3[i] + a[9] * k4[i]);
        }
        rhs(t + hs * tab.c[3], &ys, &mut k5);
        for i in 0..n {
            ys[i] = y[i]
                + hs * (a[10] * k1[i] + a[11] * k2[i] + a[12] * k3[i] + a[13] * k4[i] + a[14] * k5[i]);
        }
        rhs(t_new, &ys, &mut k6);
        for i in 0..n {
            y1[i] = y[i]
                + hs * (a[15] * k1[i] + a[16] * k3[i] + a[17] * k4[i] + a[18] * k5[i] + a[19] * k6[i]);
        }
        rhs(t_new, &y1, &mut k7);
        stats.rhs_evals += 6;

        let e = &tab.e;
        for i in 0..n {
            err[i] = hs
                * (e[0] * k1[i] + e[1] * k3[i] + e[2] * k4[i] + e[3] * k5[i] + e[4] * k6[i] + e[5] * k7[i]);
        }
        let en = err_norm(&err, &y, &y1, cfg.rtol, cfg.atol);

        if !en.is_finite() || !all_finite(&y1) || !all_finite(&k7) {
            // A trial step into a blow-up region; retry smaller before giving up.
            stats.rejected += 1;
            if h <= T::lit(1e-10) * length {
                return Err(Error::NonFiniteState {
                    t: t.to_f64_lossy(),
                });
            }
            h = h * T::lit(FAC_MIN);
            just_rejected = true;
            continue;
        }

        let mut fac = if en == T::zero() {
            T::lit(FAC_MAX)
        } else {
            (T::lit(SAFETY) * en.powf(T::lit(-0.2)))
                .max(T::lit(FAC_MIN))
                .min(T::lit(FAC_MAX))
        };

        if en <= T::one() {
            stats.accepted += 1;
            let d = &tab.d;
            let base = interp.len();
            interp.resize(base + 4 * n, T::zero());
            for i in 0..n {
                let r2 = y1[i] - y[i];
                let r3 = hs * k1[i] - r2;
                let r4 = r2 - hs * k7[i] - r3;
                let r5 = hs
                    * (d[0] * k1[i] + d[1] * k3[i] + d[2] * k4[i] + d[3] * k5[i] + d[4] * k6[i] + d[5] * k7[i]);
                interp[base + i] = r2;
                interp[base + n + i] = r3;
                interp[base + 2 * n + i] = r4;
                interp[base + 3 * n + i] = r5;
            }
            mesh.push(t_new);
            states.extend_from_slice(&y1);
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last {
                break;
            }
            if just_rejected {
                fac = fac.min(T::one());
            }
            just_rejected = false;
            h = (h * fac).min(h_max);
        } else {
            stats.rejected += 1;
            just_rejected = true;
            h = h * fac.min(T::one());
        }
    }

    Ok(Trajectory {
        dim: n,
        mesh,
        states,
        interp,
        stats,
    })
}
