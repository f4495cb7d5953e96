//! Neural state-feedback policies for continuous-time optimal control.
//!
//! A dense network `u = pi(x; theta)` is embedded in the dynamics of a Bolza
//! problem, its gradient is obtained from the continuous adjoint equations,
//! and state constraints enter as relaxed logarithmic barriers that are
//! tightened between optimisation rounds.
//!
//! All numerics are generic over [`Real`]; the `*F64` aliases below are the
//! concrete types used by the command line front end.

pub mod adjoint;
pub mod dynamics;
pub mod error;
pub mod odeint;
pub mod penalty;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PolicyNetworkF64 = policy::PolicyNetwork<f64>;
pub type PolicyNetworkF32 = policy::PolicyNetwork<f32>;
pub type TrajectoryF64 = odeint::Trajectory<f64>;
pub type IntegratorConfigF64 = odeint::IntegratorConfig<f64>;
pub type GradientResultF64 = adjoint::GradientResult<f64>;
pub type BarrierParamsF64 = penalty::BarrierParams<f64>;
pub type VanDerPolF64 = dynamics::VanDerPol<f64>;
pub type BioreactorF64 = dynamics::Bioreactor<f64>;
pub type RunReportF64 = train::RunReport<f64>;
