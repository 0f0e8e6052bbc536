//! Stochastic and deterministic policies over the 32 actions.
//!
//! Every policy exposes a full probability vector per context, which is
//! what makes exact policy evaluation and importance weighting possible.
//! Sampling inverts the cumulative distribution with a single uniform
//! draw, skipping zero-mass actions so a boundary draw can never select an
//! action the policy forbids.

use rand::Rng;

use crate::env::{Action, Context, NUM_ACTIONS, NUM_CONTEXTS};
use crate::error::{Error, Result};
use crate::glm::LinearModel;

#[derive(Debug, Clone)]
pub enum Policy {
    /// Plays every action with probability 1/32.
    Uniform,
    /// Plays the model's highest-scoring action; ties break toward the
    /// lowest action index.
    Greedy(LinearModel),
    /// Greedy with probability 1 - epsilon, otherwise uniform. Every
    /// action keeps propensity at least epsilon/32.
    EpsilonGreedy { model: LinearModel, epsilon: f64 },
    /// Probabilities proportional to the model's predicted probability
    /// raised to `alpha`, floored at 1e-12 before exponentiation.
    /// `alpha = 0` is uniform; large `alpha` approaches greedy.
    Softmax { model: LinearModel, alpha: f64 },
    /// Explicit per-context probability table.
    Table(TablePolicy),
    /// Convex combination of other policies.
    Mixture(Vec<(f64, Policy)>),
}

/// Floor applied to predicted probabilities inside [`Policy::Softmax`].
pub const SOFTMAX_PROB_FLOOR: f64 = 1e-12;

impl Policy {
    pub fn uniform() -> Self {
        Policy::Uniform
    }

    pub fn greedy(model: LinearModel) -> Self {
        Policy::Greedy(model)
    }

    /// Requires `0 < epsilon <= 1`.
    pub fn epsilon_greedy(model: LinearModel, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 || epsilon > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        Ok(Policy::EpsilonGreedy { model, epsilon })
    }

    /// Requires finite `alpha >= 0`.
    pub fn softmax(model: LinearModel, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {alpha}"
            )));
        }
        Ok(Policy::Softmax { model, alpha })
    }

    /// Mixing weights must be finite and positive and sum to 1 within
    /// 1e-9; they are renormalized exactly on construction.
    pub fn mixture(components: Vec<(f64, Policy)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        let sum: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| !w.is_finite() || *w <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must be positive and sum to 1, got sum {sum}"
            )));
        }
        let normalized = components.into_iter().map(|(w, p)| (w / sum, p)).collect();
        Ok(Policy::Mixture(normalized))
    }

    /// Action distribution for one context. Entries are non-negative and
    /// sum to 1 up to rounding.
    pub fn probs(&self, x: Context) -> [f64; NUM_ACTIONS] {
        match self {
            Policy::Uniform => [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS],
            Policy::Greedy(model) => {
                let mut probs = [0.0; NUM_ACTIONS];
                probs[greedy_action(model, x).index()] = 1.0;
                probs
            }
            Policy::EpsilonGreedy { model, epsilon } => {
                let mut probs = [epsilon / NUM_ACTIONS as f64; NUM_ACTIONS];
                probs[greedy_action(model, x).index()] += 1.0 - epsilon;
                probs
            }
            Policy::Softmax { model, alpha } => {
                let mut probs = [0.0; NUM_ACTIONS];
                let mut total = 0.0;
                for (ai, p) in probs.iter_mut().enumerate() {
                    let predicted = model
                        .predict_prob(x, Action::from_index(ai))
                        .max(SOFTMAX_PROB_FLOOR);
                    *p = predicted.powf(*alpha);
                    total += *p;
                }
                for p in &mut probs {
                    *p /= total;
                }
                probs
            }
            Policy::Table(table) => table.row(x),
            Policy::Mixture(components) => {
                let mut probs = [0.0; NUM_ACTIONS];
                for (w, policy) in components {
                    let part = policy.probs(x);
                    for (acc, p) in probs.iter_mut().zip(part) {
                        *acc += w * p;
                    }
                }
                probs
            }
        }
    }

    /// Propensity of one action in one context.
    pub fn prob_of(&self, x: Context, a: Action) -> f64 {
        self.probs(x)[a.index()]
    }

    /// Draws an action with one uniform variate and returns it with its
    /// propensity.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: Context, rng: &mut R) -> (Action, f64) {
        let probs = self.probs(x);
        let u: f64 = rng.random();
        let idx = sample_from_probs(&probs, u);
        (Action::from_index(idx), probs[idx])
    }
}

/// Inverse-CDF selection that never lands on a zero-probability entry.
pub(crate) fn sample_from_probs(probs: &[f64; NUM_ACTIONS], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // u fell into the rounding sliver past the accumulated total.
    last_positive
}

/// Highest-scoring action under the model, lowest index on ties.
pub fn greedy_action(model: &LinearModel, x: Context) -> Action {
    let mut best = 0usize;
    let mut best_score = model.score(x, Action::from_index(0));
    for ai in 1..NUM_ACTIONS {
        let s = model.score(x, Action::from_index(ai));
        if s > best_score {
            best = ai;
            best_score = s;
        }
    }
    Action::from_index(best)
}

/// Explicit 128 x 32 probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    rows: Vec<f64>,
}

impl TablePolicy {
    /// Takes a flat context-major table; every row must be non-negative
    /// and sum to 1 within 1e-9. Rows are renormalized exactly.
    pub fn from_flat(mut rows: Vec<f64>) -> Result<Self> {
        if rows.len() != NUM_CONTEXTS * NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!(
                "expected {} table entries, got {}",
                NUM_CONTEXTS * NUM_ACTIONS,
                rows.len()
            )));
        }
        for xi in 0..NUM_CONTEXTS {
            let row = &mut rows[xi * NUM_ACTIONS..(xi + 1) * NUM_ACTIONS];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "table row {xi} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::PolicyNotNormalized { sum });
            }
            for p in row {
                *p /= sum;
            }
        }
        Ok(Self { rows })
    }

    /// Test hook: builds the table without any validation.
    #[cfg(test)]
    pub(crate) fn from_flat_unchecked(rows: Vec<f64>) -> Self {
        Self { rows }
    }

    pub fn row(&self, x: Context) -> [f64; NUM_ACTIONS] {
        let mut out = [0.0; NUM_ACTIONS];
        out.copy_from_slice(&self.rows[x.index() * NUM_ACTIONS..(x.index() + 1) * NUM_ACTIONS]);
        out
    }
}
