//! Optimal control problems in Bolza form.
//!
//! A problem supplies the dynamics `f(x, u, t)`, running cost `l(x, u, t)`,
//! terminal cost `phi(x)` and their exact partial derivatives, plus the state
//! constraints in margin form (`h >= 0` is feasible).

mod bioreactor;
mod vdp;

use std::fmt;
use std::sync::Arc;

pub use bioreactor::{make_bioreactor, Bioreactor, BioreactorParams};
pub use vdp::{make_vdp, VanDerPol};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::Real;

type MarginFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
type MarginGradFn<T> = Arc<dyn Fn(&[T], &[T], &mut [T], &mut [T]) + Send + Sync>;
type TerminalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type TerminalGradFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Path constraint `h(x, u) >= 0`.
#[derive(Clone)]
pub struct PathConstraint<T> {
    pub label: String,
    /// Characteristic magnitude of the margin; barriers see `h / scale`.
    pub scale: T,
    margin: MarginFn<T>,
    gradient: MarginGradFn<T>,
}

impl<T: Real> PathConstraint<T> {
    pub fn new(
        label: impl Into<String>,
        scale: T,
        margin: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], &[T], &mut [T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            scale,
            margin: Arc::new(margin),
            gradient: Arc::new(gradient),
        }
    }

    pub fn margin(&self, x: &[T], u: &[T]) -> T {
        (self.margin)(x, u)
    }

    /// Overwrites `hx` and `hu` with the partials of the margin.
    pub fn gradient(&self, x: &[T], u: &[T], hx: &mut [T], hu: &mut [T]) {
        (self.gradient)(x, u, hx, hu)
    }
}

impl<T> fmt::Debug for PathConstraint<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathConstraint").field("label", &self.label).finish()
    }
}

/// Terminal constraint `h(x(t_f)) >= 0`.
#[derive(Clone)]
pub struct TerminalConstraint<T> {
    pub label: String,
    pub scale: T,
    margin: TerminalFn<T>,
    gradient: TerminalGradFn<T>,
}

impl<T: Real> TerminalConstraint<T> {
    pub fn new(
        label: impl Into<String>,
        scale: T,
        margin: impl Fn(&[T]) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            scale,
            margin: Arc::new(margin),
            gradient: Arc::new(gradient),
        }
    }

    pub fn margin(&self, x: &[T]) -> T {
        (self.margin)(x)
    }

    pub fn gradient(&self, x: &[T], hx: &mut [T]) {
        (self.gradient)(x, hx)
    }
}

impl<T> fmt::Debug for TerminalConstraint<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalConstraint").field("label", &self.label).finish()
    }
}

/// Continuous-time Bolza problem with fixed initial state and final time.
///
/// Matrices are row-major: `jac_x` fills `n_x * n_x` entries with
/// `out[i * n_x + j] = df_i/dx_j`, `jac_u` fills `n_x * n_u`.
pub trait ControlProblem<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn x0(&self) -> &[T];
    fn t0(&self) -> T;
    fn tf(&self) -> T;
    fn u_lb(&self) -> &[T];
    fn u_ub(&self) -> &[T];

    /// Characteristic state magnitudes, used to normalise policy inputs.
    fn state_scale(&self) -> Vec<T> {
        vec![T::one(); self.n_x()]
    }

    fn dynamics(&self, t: T, x: &[T], u: &[T], dx: &mut [T]);
    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]);
    fn jac_u(&self, t: T, x: &[T], u: &[T], out: &mut [T]);

    fn running_cost(&self, t: T, x: &[T], u: &[T]) -> T;
    /// Overwrites `lx` and `lu` with the partials of the running cost.
    fn cost_partials(&self, t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]);

    fn terminal_cost(&self, x: &[T]) -> T;
    fn terminal_cost_grad(&self, x: &[T], out: &mut [T]);

    fn path_constraints(&self) -> &[PathConstraint<T>] {
        &[]
    }

    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        &[]
    }
}

/// Delegates the problem definition (everything except costs, constraints,
/// `tf` and `jac_x`) to a wrapped problem.
macro_rules! forward_problem {
    ($field:ident) => {
        fn name(&self) -> &str { self.$field.name() }
        fn n_x(&self) -> usize { self.$field.n_x() }
        fn n_u(&self) -> usize { self.$field.n_u() }
        fn x0(&self) -> &[T] { self.$field.x0() }
        fn t0(&self) -> T { self.$field.t0() }
        fn u_lb(&self) -> &[T] { self.$field.u_lb() }
        fn u_ub(&self) -> &[T] { self.$field.u_ub() }
        fn state_scale(&self) -> Vec<T> { self.$field.state_scale() }
        fn dynamics(&self, t: T, x: &[T], u: &[T], dx: &mut [T]) { self.$field.dynamics(t, x, u, dx) }
        fn jac_u(&self, t: T, x: &[T], u: &[T], out: &mut [T]) { self.$field.jac_u(t, x, u, out) }
    };
}
pub(crate) use forward_problem;

impl<T: Real, P: ControlProblem<T> + ?Sized> ControlProblem<T> for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn n_u(&self) -> usize {
        (**self).n_u()
    }
    fn x0(&self) -> &[T] {
        (**self).x0()
    }
    fn t0(&self) -> T {
        (**self).t0()
    }
    fn u_lb(&self) -> &[T] {
        (**self).u_lb()
    }
    fn u_ub(&self) -> &[T] {
        (**self).u_ub()
    }
    fn state_scale(&self) -> Vec<T> {
        (**self).state_scale()
    }
    fn dynamics(&self, t: T, x: &[T], u: &[T], dx: &mut [T]) {
        (**self).dynamics(t, x, u, dx)
    }
    fn jac_u(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        (**self).jac_u(t, x, u, out)
    }
    fn tf(&self) -> T {
        (**self).tf()
    }
    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        (**self).jac_x(t, x, u, out)
    }
    fn running_cost(&self, t: T, x: &[T], u: &[T]) -> T {
        (**self).running_cost(t, x, u)
    }
    fn cost_partials(&self, t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        (**self).cost_partials(t, x, u, lx, lu)
    }
    fn terminal_cost(&self, x: &[T]) -> T {
        (**self).terminal_cost(x)
    }
    fn terminal_cost_grad(&self, x: &[T], out: &mut [T]) {
        (**self).terminal_cost_grad(x, out)
    }
    fn path_constraints(&self) -> &[PathConstraint<T>] {
        (**self).path_constraints()
    }
    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        (**self).terminal_constraints()
    }
}

/// Checks that a policy's input/output sizes and bounds fit the problem.
pub fn check_compatible<T: Real>(prob: &dyn ControlProblem<T>, policy: &dyn Policy<T>) -> Result<()> {
    if policy.n_inputs() != prob.n_x() {
        return Err(Error::DimensionMismatch {
            what: "policy inputs vs problem states",
            expected: prob.n_x(),
            got: policy.n_inputs(),
        });
    }
    if policy.n_outputs() != prob.n_u() {
        return Err(Error::DimensionMismatch {
            what: "policy outputs vs problem controls",
            expected: prob.n_u(),
            got: policy.n_outputs(),
        });
    }
    Ok(())
}

/// Closed-loop vector field `(t, x) -> f(x, pi(x), t)`.
pub fn closed_loop_rhs<'a, T: Real>(
    prob: &'a dyn ControlProblem<T>,
    policy: &'a dyn Policy<T>,
) -> Result<impl Fn(T, &[T], &mut [T]) + 'a> {
    check_compatible(prob, policy)?;
    let n_u = prob.n_u();
    Ok(move |t: T, x: &[T], dx: &mut [T]| {
        let mut u = vec![T::zero(); n_u];
        policy.forward_into(x, &mut u);
        debug_assert!(u
            .iter()
            .zip(prob.u_lb().iter().zip(prob.u_ub()))
            .all(|(v, (l, h))| v >= l && v <= h));
        prob.dynamics(t, x, &u, dx);
    })
}

/// The same problem restricted to `[t0, t_end]`.
#[derive(Debug, Clone)]
pub struct Windowed<P, T> {
    pub inner: P,
    pub t_end: T,
}

impl<T: Real, P: ControlProblem<T>> ControlProblem<T> for Windowed<P, T> {
    forward_problem!(inner);
    fn tf(&self) -> T {
        self.t_end
    }
    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.inner.jac_x(t, x, u, out)
    }
    fn running_cost(&self, t: T, x: &[T], u: &[T]) -> T {
        self.inner.running_cost(t, x, u)
    }
    fn cost_partials(&self, t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        self.inner.cost_partials(t, x, u, lx, lu)
    }
    fn terminal_cost(&self, x: &[T]) -> T {
        self.inner.terminal_cost(x)
    }
    fn terminal_cost_grad(&self, x: &[T], out: &mut [T]) {
        self.inner.terminal_cost_grad(x, out)
    }
    fn path_constraints(&self) -> &[PathConstraint<T>] {
        self.inner.path_constraints()
    }
    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        self.inner.terminal_constraints()
    }
}

/// Test hook: the wrapped problem with every `df/dx` entry shifted by a
/// constant, leaving `f` itself untouched. Gradients computed through it are
/// wrong by construction.
#[doc(hidden)]
#[derive(Debug, Clone)]
pub struct CorruptedJacobian<P> {
    pub inner: P,
    pub shift: f64,
}

impl<T: Real, P: ControlProblem<T>> ControlProblem<T> for CorruptedJacobian<P> {
    forward_problem!(inner);
    fn tf(&self) -> T {
        self.inner.tf()
    }
    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.inner.jac_x(t, x, u, out);
        out.iter_mut().for_each(|v| *v = *v + T::lit(self.shift));
    }
    fn running_cost(&self, t: T, x: &[T], u: &[T]) -> T {
        self.inner.running_cost(t, x, u)
    }
    fn cost_partials(&self, t: T, x: &[T], u: &[T], lx: &mut [T], lu: &mut [T]) {
        self.inner.cost_partials(t, x, u, lx, lu)
    }
    fn terminal_cost(&self, x: &[T]) -> T {
        self.inner.terminal_cost(x)
    }
    fn terminal_cost_grad(&self, x: &[T], out: &mut [T]) {
        self.inner.terminal_cost_grad(x, out)
    }
    fn path_constraints(&self) -> &[PathConstraint<T>] {
        self.inner.path_constraints()
    }
    fn terminal_constraints(&self) -> &[TerminalConstraint<T>] {
        self.inner.terminal_constraints()
    }
}
