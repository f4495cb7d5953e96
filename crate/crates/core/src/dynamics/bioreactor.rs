use serde::{Deserialize, Serialize};

use super::{ControlProblem, PathConstraint, TerminalConstraint};
use crate::scalar::Real;

/// Kinetic constants of the photo-bioreactor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BioreactorParams {
    pub u_m: f64,
    pub u_d: f64,
    pub k_n: f64,
    pub y_nx: f64,
    pub k_m: f64,
    pub k_d: f64,
    pub k_s: f64,
    pub k_i: f64,
    pub k_sq: f64,
    pub k_iq: f64,
    pub k_np: f64,
}

impl Default for BioreactorParams {
    fn default() -> Self {
        Self {
            u_m: 0.0572,
            u_d: 0.0,
            k_n: 393.1,
            y_nx: 504.5,
            k_m: 0.00016,
            k_d: 0.281,
            k_s: 178.9,
            k_i: 447.1,
            k_sq: 23.51,
            k_iq: 800.0,
            k_np: 16.89,
        }
    }
}

/// Fed-batch photo-production of a bioproduct.
///
/// States `(C_X, C_N, C_qc)`: biomass, nitrate and product concentration.
/// Controls `(I, F_N)`: light intensity and nitrate inflow. The product at
/// the end of the batch is maximised (`phi = -C_qc(t_f)`), subject to
/// `C_N <= 800`, `0.011 C_X - C_qc <= 0.3` along the path and
/// `C_N(t_f) <= 150`.
#[derive(Debug, Clone)]
pub struct Bioreactor<T> {
    pub params: BioreactorParams,
    pub x0: [T; 3],
    pub tf: T,
    pub u_lb: [T; 2],
    pub u_ub: [T; 2],
    pub state_scale: [T; 3],
    path: Vec<PathConstraint<T>>,
    terminal: Vec<TerminalConstraint<T>>,
}

pub fn make_bioreactor<T: Real>(params: BioreactorParams, tf: T) -> Bioreactor<T> {
    let path = vec![
        PathConstraint::new(
            "C_N <= 800",
            T::lit(800.0),
            |x: &[T], _u: &[T]| T::lit(800.0) - x[1],
            |_x: &[T], _u: &[T], hx: &mut [T], hu: &mut [T]| {
                hx.copy_from_slice(&[T::zero(), -T::one(), T::zero()]);
                hu.iter_mut().for_each(|v| *v = T::zero());
            },
        ),
        PathConstraint::new(
            "0.011 C_X - C_qc <= 0.3",
            T::lit(0.3),
            |x: &[T], _u: &[T]| T::lit(0.3) - (T::lit(0.011) * x[0] - x[2]),
            |_x: &[T], _u: &[T], hx: &mut [T], hu: &mut [T]| {
                hx.copy_from_slice(&[-T::lit(0.011), T::zero(), T::one()]);
                hu.iter_mut().for_each(|v| *v = T::zero());
            },
        ),
    ];
    let terminal = vec![TerminalConstraint::new(
        "C_N(t_f) <= 150",
        T::lit(150.0),
        |x: &[T]| T::lit(150.0) - x[1],
        |_x: &[T], hx: &mut [T]| hx.copy_from_slice(&[T::zero(), -T::one(), T::zero()]),
    )];
    Bioreactor {
        params,
        x0: [T::one(), T::lit(150.0), T::zero()],
        tf,
        u_lb: [T::lit(120.0), T::zero()],
        u_ub: [T::lit(400.0), T::lit(40.0)],
        state_scale: [T::lit(10.0), T::lit(400.0), T::lit(0.1)],
        path,
        terminal,
    }
}

struct Rates<T> {
    /// Light response of growth, `I / (I + k_s + I^2 / k_i)`, and its slope.
    light: T,
    light_d: T,
    /// Nitrate limitation `C_N / (C_N + K_N)` and its slope.
    nitrate: T,
    nitrate_d: T,
    /// Light response of production and its slope.
    prod_light: T,
    prod_light_d: T,
}

impl<T: Real> Bioreactor<T> {
    /// The same model with every state constraint dropped.
    pub fn unconstrained(mut self) -> Self {
        self.path.clear();
        self.terminal.clear();
        self
    }

    fn rates(&self, x: &[T], u: &[T]) -> Rates<T> {
        let p = &self.params;
        let l = T::lit;
        let i = u[0];
        let d = i + l(p.k_s) + i * i / l(p.k_i);
        let dq = i + l(p.k_sq) + i * i / l(p.k_iq);
        let cn = x[1] + l(p.k_n);
        Rates {
            light: i / d,
            light_d: (l(p.k_s) - i * i / l(p.k_i)) / (d * d),
            nitrate: x[1] / cn,
            nitrate_d: l(p.k_n) / (cn * cn),
            prod_light: i / dq,
            prod_light_d: (l(p.k_sq) - i * i / l(p.k_iq)) / (dq * dq),
        }
    }
}

impl<T: Real> ControlProblem<T> for Bioreactor<T> {
    fn name(&self) -> &str {
        "bioreactor"
    }
    fn n_x(&self) -> usize {
        3
    }
    fn n_u(&self) -> usize {
        2
    }
    fn x0(&self) -> &[T] {
        &self.x0
    }
    fn t0(&self) -> T {
        T::zero()
    }
    fn tf(&self) -> T {
        self.tf
    }
    fn u_lb(&self) -> &[T] {
        &self.u_lb
    }
    fn u_ub(&self) -> &[T] {
        &self.u_ub
    }
    fn state_scale(&self) -> Vec<T> {
        self.state_scale.to_vec()
    }

    fn dynamics(&self, _t: T, x: &[T], u: &[T], dx: &mut [T]) {
        let p = &self.params;
        let l = T::lit;
        let r = self.rates(x, u);
        let growth = l(p.u_m) * x[0] * r.light * r.nitrate;
        dx[0] = growth - l(p.u_d) * x[0];
        dx[1] = -l(p.y_nx) * growth + u[1];
        dx[2] = l(p.k_m) * x[0] * r.prod_light - l(p.k_d) * x[2] / (x[1] + l(p.k_np));
    }

    fn jac_x(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        let p = &self.params;
        let l = T::lit;
        let r = self.rates(x, u);
        let um = l(p.u_m);
        let denom = x[1] + l(p.k_np);
        // Row 0: biomass.
        out[0] = um * r.light * r.nitrate - l(p.u_d);
        out[1] = um * x[0] * r.light * r.nitrate_d;
        out[2] = T::zero();
        // Row 1: nitrate.
        out[3] = -l(p.y_nx) * um * r.light * r.nitrate;
        out[4] = -l(p.y_nx) * um * x[0] * r.light * r.nitrate_d;
        out[5] = T::zero();
        // Row 2: product.
        out[6] = l(p.k_m) * r.prod_light;
        out[7] = l(p.k_d) * x[2] / (denom * denom);
        out[8] = -l(p.k_d) / denom;
    }

    fn jac_u(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        let p = &self.params;
        let l = T::lit;
        let r = self.rates(x, u);
        let dgrowth = l(p.u_m) * x[0] * r.light_d * r.nitrate;
        out[0] = dgrowth;
        out[1] = T::zero();
        out[2] = -l(p.y_nx) * dgrowth;
        out[3] = T::one();
        out[4] = l(p.k_m) * x[0] * r.prod_light_d;
        out[5] = T::zero();
    }

    fn running_cost(&self, _t: T, _x: &[T], _u: &[T]) -> T {
        T::zero()
    }

    fn cost_partials(&self, _t: T, _x: &[T], _u: &[T], lx: &mut [T], lu: &mut [T]) {
        lx.iter_mut().for_each(|v| *v = T::zero());
        lu.iter_mut().for_each(|v| *v = T::zero());
    }

    fn terminal_cost(&self, x: &[T]) -> T {
        -x[2]
    }

    fn terminal_cost_grad(&self, _x: &[T], out: &mut [T]) {
        out.copy_from_slice(&[T::zero(), T::zero(), -T::one()]);
    }

    fn path_constraints(&self) -> &[PathConstraint<T>] {
        &self.path
    }

    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        &self.terminal
    }
}
