//! Client-to-model assignment.
//!
//! An instance asks for `required` participating clients, each running a set of
//! eligible models whose summed execution time fits the round deadline, so as to
//! maximize the summed pair scores. Pairs never selected before dominate: the
//! objective first counts them, then sums finite scores.
//!
//! Ties between optimal assignments resolve to the lexicographically smallest
//! matrix in row-major order (an unassigned cell sorts before an assigned one).

mod baselines;
mod brute_force;
mod exact;

pub use baselines::{select_greedy_per_model, select_random, select_round_robin};
pub use brute_force::{solve_brute_force, BRUTE_FORCE_LIMIT};
pub use exact::solve_exact;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::domain::{AssignmentMatrix, Objective, Score};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    /// Exact multi-model assignment.
    #[default]
    Flammable,
    Random,
    RoundRobin,
    Greedy,
}

impl SelectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectorKind::Flammable => "flammable",
            SelectorKind::Random => "random",
            SelectorKind::RoundRobin => "round_robin",
            SelectorKind::Greedy => "greedy",
        }
    }
}

/// One round's assignment problem. Rows are clients, columns active models.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionInstance {
    pub scores: Vec<Vec<Score>>,
    pub times: Vec<Vec<f64>>,
    pub eligible: Vec<Vec<bool>>,
    pub deadline: f64,
    pub required: usize,
    /// `Some(1)` forbids multi-model engagement.
    pub max_models_per_client: Option<usize>,
}

impl SelectionInstance {
    pub fn clients(&self) -> usize {
        self.scores.len()
    }

    pub fn models(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.clients(), self.models());
        if self.times.len() != n || self.eligible.len() != n {
            return Err(domain(
                "score, time and eligibility matrices differ in row count",
            ));
        }
        for i in 0..n {
            if self.scores[i].len() != m || self.times[i].len() != m || self.eligible[i].len() != m
            {
                return Err(domain(format!("row {i} has inconsistent column count")));
            }
            for j in 0..m {
                if let Score::Finite(s) = self.scores[i][j] {
                    if !s.is_finite() {
                        return Err(domain(format!("score ({i}, {j}) is not finite")));
                    }
                }
                if self.eligible[i][j] && !(self.times[i][j] > 0.0) {
                    return Err(domain(format!("time ({i}, {j}) must be positive")));
                }
            }
        }
        if m > 64 {
            return Err(domain("at most 64 models per instance are supported"));
        }
        if !(self.deadline > 0.0) {
            return Err(domain("deadline must be positive"));
        }
        if self.required == 0 {
            return Err(domain("required client count must be >= 1"));
        }
        if self.max_models_per_client == Some(0) {
            return Err(domain("max_models_per_client must be >= 1"));
        }
        Ok(())
    }

    /// Eligible and finishable within the deadline on its own.
    pub fn feasible(&self, client: usize, model: usize) -> bool {
        self.eligible[client][model] && self.times[client][model] <= self.deadline
    }

    pub fn has_feasible_model(&self, client: usize) -> bool {
        (0..self.models()).any(|j| self.feasible(client, j))
    }

    pub fn feasible_clients(&self) -> Vec<usize> {
        (0..self.clients())
            .filter(|&i| self.has_feasible_model(i))
            .collect()
    }

    /// Objective of `x`, summed in row-major order.
    pub fn objective_of(&self, x: &[Vec<bool>]) -> Objective {
        let mut obj = Objective::ZERO;
        for (i, row) in x.iter().enumerate() {
            for (j, &on) in row.iter().enumerate() {
                if on {
                    obj = obj + Objective::of(self.scores[i][j]);
                }
            }
        }
        obj
    }

    /// Checks the per-client deadline, eligibility and engagement limit, then the
    /// participant count (exactly `required`, or fewer when flagged relaxed).
    pub fn check(&self, a: &AssignmentMatrix) -> std::result::Result<(), String> {
        let (n, m) = (self.clients(), self.models());
        if a.x.len() != n || a.x.iter().any(|r| r.len() != m) {
            return Err("assignment shape mismatch".into());
        }
        for i in 0..n {
            let mut busy = 0.0;
            let mut count = 0;
            for j in 0..m {
                if a.x[i][j] {
                    if !self.eligible[i][j] {
                        return Err(format!("client {i} assigned ineligible model {j}"));
                    }
                    busy += self.times[i][j];
                    count += 1;
                }
            }
            if busy > self.deadline {
                return Err(format!(
                    "client {i} busy {busy} exceeds deadline {}",
                    self.deadline
                ));
            }
            if let Some(limit) = self.max_models_per_client {
                if count > limit {
                    return Err(format!("client {i} runs {count} models (limit {limit})"));
                }
            }
        }
        let participants = a.participants();
        let feasible = self.feasible_clients().len();
        let expected = self.required.min(feasible);
        if participants != expected {
            return Err(format!("{participants} participants, expected {expected}"));
        }
        if a.relaxed != (expected < self.required) {
            return Err(format!("relaxed flag {} is wrong", a.relaxed));
        }
        Ok(())
    }

    pub(crate) fn assignment(&self, x: Vec<Vec<bool>>, relaxed: bool) -> AssignmentMatrix {
        AssignmentMatrix {
            objective: self.objective_of(&x),
            x,
            times: self.times.clone(),
            deadline: self.deadline,
            relaxed,
        }
    }
}

/// Runs the selector named by `kind`. `rng` is only consumed by the randomized baselines.
pub fn select<R: rand::Rng + ?Sized>(
    kind: SelectorKind,
    instance: &SelectionInstance,
    rng: &mut R,
) -> Result<AssignmentMatrix> {
    match kind {
        SelectorKind::Flammable => solve_exact(instance),
        SelectorKind::Random => select_random(instance, rng),
        SelectorKind::RoundRobin => select_round_robin(instance, rng),
        SelectorKind::Greedy => select_greedy_per_model(instance),
    }
}
