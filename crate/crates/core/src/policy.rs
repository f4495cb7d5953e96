//! Dense state-feedback policy `u = pi(x; theta)`.
//!
//! Hidden layers use `tanh`; the output layer maps a logistic sigmoid onto
//! the control box, `u_i = lb_i + (ub_i - lb_i) * sigmoid(z_i)`, so every
//! parameter vector yields admissible controls. Inputs are divided by a
//! fixed per-state scale before entering the first layer.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{all_finite, Real};

/// Behaviour the gradient engine needs from a parametrised feedback law.
pub trait Policy<T: Real>: Send + Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn n_params(&self) -> usize;

    /// Writes `pi(x)` into `u`. Dimensions are the caller's responsibility.
    fn forward_into(&self, x: &[T], u: &mut [T]);

    /// Writes `w^T dpi/dx` into `gx` and `w^T dpi/dtheta` into `gtheta`,
    /// sharing one forward sweep.
    fn vjp_into(&self, x: &[T], w: &[T], gx: &mut [T], gtheta: &mut [T]);

    fn params(&self) -> Vec<T>;
    fn set_params(&mut self, theta: &[T]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    ScaledSigmoid,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::ScaledSigmoid => "scaled_sigmoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    fn affine(&self, input: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.n_in..(r + 1) * self.n_in];
            *o = row
                .iter()
                .zip(input)
                .fold(self.bias[r], |s, (&w, &x)| s + w * x);
        }
    }
}

/// Logistic function evaluated without overflow for large `|z|`.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork<T> {
    layers: Vec<DenseLayer<T>>,
    lb: Vec<T>,
    ub: Vec<T>,
    input_scale: Vec<T>,
}

fn check_shape<T: Real>(sizes: &[usize], lb: &[T], ub: &[T]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::InvalidShape(
            "need an input, at least one hidden layer and an output layer".into(),
        ));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidShape(format!("layer {i} has zero width")));
    }
    let n_u = sizes[sizes.len() - 1];
    if lb.len() != n_u || ub.len() != n_u {
        return Err(Error::DimensionMismatch {
            what: "control bounds",
            expected: n_u,
            got: lb.len().min(ub.len()),
        });
    }
    if lb.iter().zip(ub).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
        return Err(Error::InvalidShape("control bounds must satisfy lb < ub".into()));
    }
    Ok(())
}

impl<T: Real> PolicyNetwork<T> {
    /// Network of the given layer sizes (`[n_x, hidden..., n_u]`) with every
    /// weight and bias set to zero.
    pub fn zeros(sizes: &[usize], lb: &[T], ub: &[T]) -> Result<Self> {
        check_shape(sizes, lb, ub)?;
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                n_in: w[0],
                n_out: w[1],
                weights: vec![T::zero(); w[0] * w[1]],
                bias: vec![T::zero(); w[1]],
                activation: if i == last {
                    Activation::ScaledSigmoid
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Ok(Self {
            layers,
            lb: lb.to_vec(),
            ub: ub.to_vec(),
            input_scale: vec![T::one(); sizes[0]],
        })
    }

    /// Glorot-uniform weights with gain 5/3 on tanh layers and 1 on the
    /// sigmoid output layer; zero biases.
    pub fn glorot(sizes: &[usize], lb: &[T], ub: &[T], rng: &mut rng::Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, lb, ub)?;
        for layer in &mut net.layers {
            let gain = match layer.activation {
                Activation::Tanh => 5.0 / 3.0,
                Activation::ScaledSigmoid => 1.0,
            };
            let b = glorot_bound(layer.n_in, layer.n_out, gain);
            for w in &mut layer.weights {
                let r: f64 = rng.gen();
                *w = T::lit(b * (2.0 * r - 1.0));
            }
        }
        Ok(net)
    }

    pub fn glorot_seeded(sizes: &[usize], lb: &[T], ub: &[T], seed: u64) -> Result<Self> {
        Self::glorot(sizes, lb, ub, &mut rng::stream(seed, 0))
    }

    pub fn with_input_scale(mut self, scale: &[T]) -> Result<Self> {
        if scale.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                what: "input scale",
                expected: self.n_inputs(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidShape("input scales must be positive".into()));
        }
        self.input_scale = scale.to_vec();
        Ok(self)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn lower_bounds(&self) -> &[T] {
        &self.lb
    }

    pub fn upper_bounds(&self) -> &[T] {
        &self.ub
    }

    pub fn input_scale(&self) -> &[T] {
        &self.input_scale
    }

    /// Flat parameter vector: layer by layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn unflatten(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn with_params(&self, theta: &[T]) -> Result<Self> {
        let mut net = self.clone();
        net.unflatten(theta)?;
        Ok(net)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                what: "policy input",
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_covector(&self, w: &[T]) -> Result<()> {
        if w.len() != self.n_outputs() {
            return Err(Error::DimensionMismatch {
                what: "control covector",
                expected: self.n_outputs(),
                got: w.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut u = vec![T::zero(); self.n_outputs()];
        self.forward_into(x, &mut u);
        Ok(u)
    }

    /// `w^T dpi/dx`.
    pub fn vjp_input(&self, x: &[T], w: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.check_covector(w)?;
        let mut gx = vec![T::zero(); self.n_inputs()];
        let mut gt = vec![T::zero(); self.n_params()];
        self.vjp_into(x, w, &mut gx, &mut gt);
        Ok(gx)
    }

    /// `w^T dpi/dtheta`, flattened like [`flatten`](Self::flatten).
    pub fn vjp_params(&self, x: &[T], w: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.check_covector(w)?;
        let mut gx = vec![T::zero(); self.n_inputs()];
        let mut gt = vec![T::zero(); self.n_params()];
        self.vjp_into(x, w, &mut gx, &mut gt);
        Ok(gt)
    }

    /// Layer outputs for every layer; index 0 is the scaled input. The last
    /// entry holds the raw sigmoid values, not the mapped controls.
    fn activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(
            x.iter()
                .zip(&self.input_scale)
                .map(|(&xi, &s)| xi / s)
                .collect::<Vec<_>>(),
        );
        for layer in &self.layers {
            let mut z = vec![T::zero(); layer.n_out];
            layer.affine(acts.last().unwrap(), &mut z);
            match layer.activation {
                Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::ScaledSigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
            acts.push(z);
        }
        acts
    }

    pub fn to_checkpoint(&self, seed: Option<u64>) -> PolicyCheckpoint {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        PolicyCheckpoint {
            format_version: PolicyCheckpoint::FORMAT_VERSION,
            layer_sizes: self.layer_sizes(),
            activations: self.layers.iter().map(|l| l.activation.name().to_string()).collect(),
            lb: f(&self.lb),
            ub: f(&self.ub),
            input_scale: f(&self.input_scale),
            params: f(&self.flatten()),
            seed,
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        if ck.format_version != PolicyCheckpoint::FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let g = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let mut net = Self::zeros(&ck.layer_sizes, &g(&ck.lb), &g(&ck.ub))?;
        let expected: Vec<&str> = net.layers.iter().map(|l| l.activation.name()).collect();
        if ck.activations.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::Checkpoint(format!(
                "activations {:?} do not match the supported layout {:?}",
                ck.activations, expected
            )));
        }
        net = net.with_input_scale(&g(&ck.input_scale))?;
        net.unflatten(&g(&ck.params))?;
        Ok(net)
    }
}

impl<T: Real> Policy<T> for PolicyNetwork<T> {
    fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn forward_into(&self, x: &[T], u: &mut [T]) {
        debug_assert_eq!(x.len(), self.n_inputs());
        let acts = self.activations(x);
        let s = acts.last().unwrap();
        for i in 0..u.len() {
            let v = self.lb[i] + (self.ub[i] - self.lb[i]) * s[i];
            u[i] = v.max(self.lb[i]).min(self.ub[i]);
        }
    }

    fn vjp_into(&self, x: &[T], w: &[T], gx: &mut [T], gtheta: &mut [T]) {
        debug_assert_eq!(gtheta.len(), self.n_params());
        let acts = self.activations(x);
        let nl = self.layers.len();

        // Covector with respect to the pre-activation of the output layer.
        let s = &acts[nl];
        let mut delta: Vec<T> = (0..s.len())
            .map(|i| w[i] * (self.ub[i] - self.lb[i]) * s[i] * (T::one() - s[i]))
            .collect();

        let mut off = gtheta.len();
        for li in (0..nl).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            off -= layer.weights.len() + layer.bias.len();
            let (gw, gb) = gtheta[off..off + layer.weights.len() + layer.bias.len()].split_at_mut(layer.weights.len());
            gb.copy_from_slice(&delta);
            for r in 0..layer.n_out {
                let row = &mut gw[r * layer.n_in..(r + 1) * layer.n_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g = delta[r] * a;
                }
            }
            // Pull back through the weights.
            let mut back = vec![T::zero(); layer.n_in];
            for r in 0..layer.n_out {
                let row = &layer.weights[r * layer.n_in..(r + 1) * layer.n_in];
                for (b, &wv) in back.iter_mut().zip(row) {
                    *b = *b + delta[r] * wv;
                }
            }
            if li > 0 {
                // Hidden layers are tanh: d tanh = 1 - a^2.
                for (b, &a) in back.iter_mut().zip(input) {
                    *b = *b * (T::one() - a * a);
                }
            }
            delta = back;
        }
        for ((g, d), s) in gx.iter_mut().zip(&delta).zip(&self.input_scale) {
            *g = *d / *s;
        }
    }

    fn params(&self) -> Vec<T> {
        self.flatten()
    }

    fn set_params(&mut self, theta: &[T]) -> Result<()> {
        if !all_finite(theta) {
            return Err(Error::InvalidConfig("non-finite policy parameters".into()));
        }
        self.unflatten(theta)
    }
}

/// Half-width of the Glorot-uniform interval.
pub fn glorot_bound(n_in: usize, n_out: usize, gain: f64) -> f64 {
    gain * (6.0 / (n_in + n_out) as f64).sqrt()
}

/// Serialised form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<String>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
    pub seed: Option<u64>,
}

impl PolicyCheckpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
