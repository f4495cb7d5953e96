//! Open-loop reference controls used to precondition a policy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, PROFILE_STREAM};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReferenceProfile<T> {
    Constant { value: Vec<T> },
    /// Equal-length segments over `[t0, tf]`.
    PiecewiseConstant { t0: T, tf: T, values: Vec<Vec<T>> },
    /// Linear interpolation through `(times[k], values[k])`, held constant
    /// outside the table.
    Tabulated { times: Vec<T>, values: Vec<Vec<T>> },
}

impl<T: Real> ReferenceProfile<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { value } => value.len(),
            Self::PiecewiseConstant { values, .. } | Self::Tabulated { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, n_u: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("reference profile: {m}")));
        match self {
            Self::Constant { value } if value.len() != n_u => return bad("wrong control dimension"),
            Self::PiecewiseConstant { t0, tf, values } => {
                if values.is_empty() || !(tf > t0) {
                    return bad("needs at least one segment over a positive span");
                }
                if values.iter().any(|v| v.len() != n_u) {
                    return bad("wrong control dimension");
                }
            }
            Self::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad("times and values must be non-empty and equally long");
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("times must be strictly increasing");
                }
                if values.iter().any(|v| v.len() != n_u) {
                    return bad("wrong control dimension");
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn eval_into(&self, t: T, out: &mut [T]) {
        match self {
            Self::Constant { value } => out.copy_from_slice(value),
            Self::PiecewiseConstant { t0, tf, values } => {
                let n = values.len();
                let frac = ((t - *t0) / (*tf - *t0)).max(T::zero());
                let k = (frac * T::from_usize(n).unwrap()).floor().to_usize().unwrap_or(n - 1).min(n - 1);
                out.copy_from_slice(&values[k]);
            }
            Self::Tabulated { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    out.copy_from_slice(&values[0]);
                } else if t >= times[last] {
                    out.copy_from_slice(&values[last]);
                } else {
                    let k = times.partition_point(|&s| s <= t) - 1;
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = values[k][i] + w * (values[k + 1][i] - values[k][i]);
                    }
                }
            }
        }
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(t, &mut out);
        out
    }
}

/// Mid-range constant control followed by `n_random` piecewise-constant
/// profiles with `segments` levels drawn uniformly inside the bounds.
pub fn default_pool<T: Real>(lb: &[T], ub: &[T], t0: T, tf: T, n_random: usize, segments: usize, seed: u64) -> Vec<ReferenceProfile<T>> {
    let mid = lb.iter().zip(ub).map(|(&l, &u)| (l + u) * T::lit(0.5)).collect();
    let mut pool = vec![ReferenceProfile::Constant { value: mid }];
    let mut rng = rng::stream(seed, PROFILE_STREAM);
    for _ in 0..n_random {
        let values = (0..segments.max(1))
            .map(|_| lb.iter().zip(ub).map(|(&l, &u)| l + (u - l) * T::lit(rng.gen::<f64>())).collect())
            .collect();
        pool.push(ReferenceProfile::PiecewiseConstant { t0, tf, values });
    }
    pool
}
