use serde::{Deserialize, Serialize};

/// Which stage of the pipeline produced an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Precondition,
    #[default]
    Unconstrained,
    Constrained,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Precondition => "precondition",
            Self::Unconstrained => "unconstrained",
            Self::Constrained => "constrained",
        }
    }
}

/// One logged optimiser iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord<T> {
    pub phase: Phase,
    pub round: usize,
    pub iter: usize,
    /// Loss being minimised (objective plus weighted barriers).
    pub cost: T,
    pub objective: T,
    pub penalty: T,
    pub grad_inf: T,
    pub alpha_min: T,
    pub delta_max: T,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Termination {
    #[default]
    MaxIters,
    GradTol,
    NonFinite {
        iter: usize,
    },
    LineSearchFailed {
        iter: usize,
    },
    /// Barrier schedule used up its rounds.
    RoundBudget,
    /// Consecutive rounds without progress.
    Stalled,
}

/// Summary of one barrier round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord<T> {
    pub round: usize,
    pub alpha: Vec<T>,
    pub delta: Vec<T>,
    pub loss: T,
    pub objective: T,
    pub penalty: T,
    pub stalled: bool,
    /// Smallest scaled margin `h / scale` per constraint on the check grid.
    pub min_scaled_margin: Vec<T>,
    pub feasible: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub iterations: Vec<IterRecord<T>>,
    pub rounds: Vec<RoundRecord<T>>,
    pub termination: Termination,
    pub best_cost: Option<T>,
    pub seed: Option<u64>,
}

impl<T> Default for RunReport<T> {
    fn default() -> Self {
        Self {
            iterations: Vec::new(),
            rounds: Vec::new(),
            termination: Termination::MaxIters,
            best_cost: None,
            seed: None,
        }
    }
}

impl<T: Copy + PartialOrd> RunReport<T> {
    /// Appends another run, renumbering nothing.
    pub fn extend(&mut self, other: RunReport<T>) {
        self.iterations.extend(other.iterations);
        self.rounds.extend(other.rounds);
        self.termination = other.termination;
        self.best_cost = match (self.best_cost, other.best_cost) {
            (Some(a), Some(b)) => Some(if b < a { b } else { a }),
            (a, b) => a.or(b),
        };
    }

    /// Running minimum of the logged cost.
    pub fn best_so_far(&self) -> Vec<T> {
        let mut out: Vec<T> = Vec::with_capacity(self.iterations.len());
        for r in &self.iterations {
            let next = match out.last() {
                Some(&b) if b <= r.cost => b,
                _ => r.cost,
            };
            out.push(next);
        }
        out
    }
}
