use super::{ControlProblem, PathConstraint};
use crate::scalar::Real;

/// Controlled Van der Pol oscillator with a lower bound on `x1`.
///
/// `x1' = x1 (1 - x2^2) - x2 + u`, `x2' = x1`, running cost
/// `x1^2 + x2^2 + u^2` over `[0, 5]`, `x(0) = (0, 1)`, `-0.3 <= u <= 1`,
/// `x1 + 0.4 >= 0`.
#[derive(Debug, Clone)]
pub struct VanDerPol<T> {
    pub x0: [T; 2],
    pub tf: T,
    pub u_lb: [T; 1],
    pub u_ub: [T; 1],
    constraints: Vec<PathConstraint<T>>,
}

pub fn make_vdp<T: Real>() -> VanDerPol<T> {
    VanDerPol::new(T::lit(-0.4))
}

impl<T: Real> VanDerPol<T> {
    /// Problem with path constraint `x1 >= x1_min`.
    pub fn new(x1_min: T) -> Self {
        let constraint = PathConstraint::new(
            format!("x1 + {} >= 0", -x1_min),
            T::one(),
            move |x: &[T], _u: &[T]| x[0] - x1_min,
            |_x: &[T], _u: &[T], hx: &mut [T], hu: &mut [T]| {
                hx[0] = T::one();
                hx[1] = T::zero();
                hu[0] = T::zero();
            },
        );
        Self {
            x0: [T::zero(), T::one()],
            tf: T::lit(5.0),
            u_lb: [T::lit(-0.3)],
            u_ub: [T::one()],
            constraints: vec![constraint],
        }
    }

    /// The same system with the state constraint dropped.
    pub fn unconstrained(mut self) -> Self {
        self.constraints.clear();
        self
    }
}

impl<T: Real> ControlProblem<T> for VanDerPol<T> {
    fn name(&self) -> &str {
        "vdp"
    }
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
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

    fn dynamics(&self, _t: T, x: &[T], u: &[T], dx: &mut [T]) {
        dx[0] = x[0] * (T::one() - x[1] * x[1]) - x[1] + u[0];
        dx[1] = x[0];
    }

    fn jac_x(&self, _t: T, x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = T::one() - x[1] * x[1];
        out[1] = -T::lit(2.0) * x[0] * x[1] - T::one();
        out[2] = T::one();
        out[3] = T::zero();
    }

    fn jac_u(&self, _t: T, _x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1] = T::zero();
    }

    fn running_cost(&self, _t: T, x: &[T], u: &[T]) -> T {
        x[0] * x[0] + x[1] * x[1] + u[0] * u[0]
    }

    fn cost_partials(&self, _t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        let two = T::lit(2.0);
        lx[0] = two * x[0];
        lx[1] = two * x[1];
        lu[0] = two * u[0];
    }

    fn terminal_cost(&self, _x: &[T]) -> T {
        T::zero()
    }

    fn terminal_cost_grad(&self, _x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
    }

    fn path_constraints(&self) -> &[PathConstraint<T>] {
        &self.constraints
    }
}
