//! Adaptive Gauss-Kronrod (7, 15) quadrature of vector-valued integrands.

use crate::scalar::{inf_norm, Real};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig<T> {
    pub rtol: T,
    pub atol: T,
    pub max_depth: usize,
}

impl<T: Real> Default for QuadratureConfig<T> {
    fn default() -> Self {
        Self {
            rtol: T::lit(1e-10),
            atol: T::lit(1e-13),
            max_depth: 30,
        }
    }
}

fn kronrod<T, F>(f: &mut F, a: T, b: T, dim: usize, fx: &mut [T]) -> (Vec<T>, T)
where
    T: Real,
    F: FnMut(T, &mut [T]),
{
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let mut k = vec![T::zero(); dim];
    let mut g = vec![T::zero(); dim];
    let mut add = |node: T, wk: f64, wg: Option<f64>, fx: &mut [T], f: &mut F| {
        f(node, fx);
        for i in 0..dim {
            k[i] = k[i] + T::lit(wk) * fx[i];
            if let Some(w) = wg {
                g[i] = g[i] + T::lit(w) * fx[i];
            }
        }
    };
    add(mid, WGK[7], Some(WG[3]), fx, f);
    for j in 0..7 {
        let wg = (j % 2 == 1).then(|| WG[j / 2]);
        let dx = half * T::lit(XGK[j]);
        add(mid - dx, WGK[j], wg, fx, f);
        add(mid + dx, WGK[j], wg, fx, f);
    }
    let mut err = T::zero();
    for i in 0..dim {
        k[i] = k[i] * half;
        g[i] = g[i] * half;
        err = err.max((k[i] - g[i]).abs());
    }
    (k, err)
}

fn adapt<T, F>(f: &mut F, a: T, b: T, dim: usize, cfg: &QuadratureConfig<T>, depth: usize, fx: &mut [T], evals: &mut usize) -> Vec<T>
where
    T: Real,
    F: FnMut(T, &mut [T]),
{
    let (k, err) = kronrod(f, a, b, dim, fx);
    *evals += 15;
    let tol = cfg.atol.max(cfg.rtol * inf_norm(&k));
    if err <= tol || depth >= cfg.max_depth {
        return k;
    }
    let m = (a + b) * T::lit(0.5);
    let mut left = adapt(f, a, m, dim, cfg, depth + 1, fx, evals);
    let right = adapt(f, m, b, dim, cfg, depth + 1, fx, evals);
    left.iter_mut().zip(right).for_each(|(l, r)| *l = *l + r);
    left
}

/// Integrates `f` over each consecutive pair of `breaks` (sorted, ascending)
/// and returns the sum together with the number of integrand evaluations.
pub fn integrate_pieces<T, F>(mut f: F, breaks: &[T], dim: usize, cfg: &QuadratureConfig<T>) -> (Vec<T>, usize)
where
    T: Real,
    F: FnMut(T, &mut [T]),
{
    let mut total = vec![T::zero(); dim];
    let mut fx = vec![T::zero(); dim];
    let mut evals = 0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let part = adapt(&mut f, w[0], w[1], dim, cfg, 0, &mut fx, &mut evals);
        total.iter_mut().zip(part).for_each(|(t, p)| *t = *t + p);
    }
    (total, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let cfg = QuadratureConfig::default();
        let (v, _) = integrate_pieces(
            |t: f64, out: &mut [f64]| {
                out[0] = t.powi(5);
                out[1] = t.exp();
            },
            &[0.0, 0.5, 2.0],
            2,
            &cfg,
        );
        assert!((v[0] - 64.0 / 6.0).abs() < 1e-12);
        assert!((v[1] - (2.0f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kink_is_resolved_adaptively() {
        let cfg = QuadratureConfig::default();
        let (v, evals) = integrate_pieces(|t: f64, out: &mut [f64]| out[0] = (t - 0.3).abs(), &[0.0, 1.0], 1, &cfg);
        assert!((v[0] - (0.045 + 0.245)).abs() < 1e-9);
        assert!(evals > 15);
    }
}
