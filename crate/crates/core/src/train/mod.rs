//! Optimisers and training pipelines: preconditioning toward reference
//! controls, multistart unconstrained training and barrier rounds.

mod constrained;
mod multistart;
mod objective;
mod optim;
mod precondition;
mod profile;
mod report;

pub use constrained::{check_feasibility, solve_constrained, ConstrainedConfig, ConstrainedOutcome, FeasibilityReport};
pub use multistart::{init_network, layer_sizes, multistart, pool_for, run_start, MultistartConfig, MultistartOutcome, StartOutcome};
pub use objective::PolicyObjective;
pub use optim::{minimize, minimize_logged, FnObjective, IterContext, Objective, OptimizerConfig, OptimizerKind};
pub use precondition::{precondition, PreconditionConfig, Tracking};
pub use profile::{default_pool, ReferenceProfile};
pub use report::{IterRecord, Phase, RoundRecord, RunReport, Termination};
