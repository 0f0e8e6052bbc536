//! Synthetic contextual-bandit environment with an exactly enumerable
//! ground truth.
//!
//! Contexts are 7-bit vectors (128 in total) drawn from a fixed softmax
//! distribution; actions are 5-bit vectors (32 in total). The true reward
//! probability for every (context, action) pair comes from a logistic model
//! whose feature map is deliberately richer than the one exposed to
//! learners: it adds the ten pairwise products of action bits and the
//! twenty-one pairwise products of context bits. Because the space is
//! finite, policy values are computed by exact enumeration rather than
//! Monte Carlo.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::sigmoid_prob;
use crate::policy::{Policy, TablePolicy};

/// Number of context bits.
pub const CONTEXT_BITS: usize = 7;
/// Number of distinct contexts, `2^CONTEXT_BITS`.
pub const NUM_CONTEXTS: usize = 1 << CONTEXT_BITS;
/// Number of action bits.
pub const ACTION_BITS: usize = 5;
/// Number of distinct actions, `2^ACTION_BITS`.
pub const NUM_ACTIONS: usize = 1 << ACTION_BITS;

/// Pairwise products of action bits (i < j) used only by the oracle.
pub const ACTION_PAIR_FEATURES: usize = ACTION_BITS * (ACTION_BITS - 1) / 2;

/// Pairwise products of context bits (i < j) used only by the oracle.
pub const CONTEXT_PAIR_FEATURES: usize = CONTEXT_BITS * (CONTEXT_BITS - 1) / 2;

/// Length of the oracle weight vector: context bits, action bits, all
/// context x action products, action-pair products, context-pair products,
/// and a bias term.
pub const ORACLE_DIM: usize = CONTEXT_BITS
    + ACTION_BITS
    + CONTEXT_BITS * ACTION_BITS
    + ACTION_PAIR_FEATURES
    + CONTEXT_PAIR_FEATURES
    + 1;

const ENV_SCHEMA_VERSION: u32 = 1;

// ── Contexts and actions ──────────────────────────────────────────────────

/// A context: 7 binary components.
///
/// Bit `i` of the index is component `i`, and the string form prints
/// component 0 first, so `Context::from_index(1)` displays as `"1000000"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Context {
    bits: [u8; CONTEXT_BITS],
}

/// An action: 5 binary components, same conventions as [`Context`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    bits: [u8; ACTION_BITS],
}

macro_rules! bit_vector_impl {
    ($name:ident, $len:expr, $count:expr, $label:literal) => {
        impl $name {
            /// Builds from explicit components; every entry must be 0 or 1.
            pub fn from_bits(bits: [u8; $len]) -> Result<Self> {
                if bits.iter().any(|&b| b > 1) {
                    return Err(Error::InvalidArgument(format!(
                        concat!($label, " bits must be 0 or 1, got {:?}"),
                        bits
                    )));
                }
                Ok(Self { bits })
            }

            /// Builds from an index in `0..{count}`.
            ///
            /// # Panics
            /// Panics if `index` is out of range.
            pub fn from_index(index: usize) -> Self {
                assert!(index < $count, concat!($label, " index out of range"));
                let mut bits = [0u8; $len];
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = ((index >> i) & 1) as u8;
                }
                Self { bits }
            }

            /// Parses the string form produced by `Display`, e.g. `"10010"`.
            pub fn parse(s: &str) -> Result<Self> {
                if s.len() != $len || !s.bytes().all(|b| b == b'0' || b == b'1') {
                    return Err(Error::InvalidArgument(format!(
                        concat!(
                            "expected ",
                            stringify!($len),
                            " ",
                            $label,
                            " bits, got {:?}"
                        ),
                        s
                    )));
                }
                let mut bits = [0u8; $len];
                for (i, b) in s.bytes().enumerate() {
                    bits[i] = b - b'0';
                }
                Ok(Self { bits })
            }

            /// Index in `0..{count}` with component `i` as binary digit `i`.
            pub fn index(&self) -> usize {
                self.bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| (b as usize) << i)
                    .sum()
            }

            pub fn bits(&self) -> &[u8; $len] {
                &self.bits
            }

            /// Component `i` as 0 or 1.
            pub fn bit(&self, i: usize) -> u8 {
                self.bits[i]
            }

            /// Iterates over the whole space in index order.
            pub fn all() -> impl Iterator<Item = Self> {
                (0..$count).map(Self::from_index)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                for &b in &self.bits {
                    write!(f, "{b}")?;
                }
                Ok(())
            }
        }
    };
}

bit_vector_impl!(Context, CONTEXT_BITS, NUM_CONTEXTS, "context");
bit_vector_impl!(Action, ACTION_BITS, NUM_ACTIONS, "action");

/// Flat index of a (context, action) pair in `0..NUM_CONTEXTS * NUM_ACTIONS`.
pub(crate) fn pair_index(x: Context, a: Action) -> usize {
    x.index() * NUM_ACTIONS + a.index()
}

// ── Configuration ─────────────────────────────────────────────────────────

/// Standard deviations (and one shift) of the independent normal draws that
/// define an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Spread of the 128 context logits.
    pub context_logit_sd: f64,
    /// Spread of the 7 context coefficients in the oracle.
    pub context_coef_sd: f64,
    /// Spread of the 5 action coefficients.
    pub action_coef_sd: f64,
    /// Spread of the 45 interaction coefficients (context x action and
    /// action-pair products).
    pub interaction_coef_sd: f64,
    /// Spread of the 21 context-pair coefficients. Together with the context
    /// main effects these put most of the score variance on the context, and
    /// they are invisible to learners, whose context features are linear.
    pub context_pair_coef_sd: f64,
    /// Spread of the oracle bias.
    pub bias_sd: f64,
    /// Additive shift of the oracle bias; negative values push reward rates
    /// toward click-like base rates.
    pub bias_shift: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            context_logit_sd: 1.0,
            context_coef_sd: 2.0,
            action_coef_sd: 1.0,
            interaction_coef_sd: 1.0,
            context_pair_coef_sd: 2.0,
            bias_sd: 0.7,
            bias_shift: -10.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let sds = [
            ("context_logit_sd", self.context_logit_sd),
            ("context_coef_sd", self.context_coef_sd),
            ("action_coef_sd", self.action_coef_sd),
            ("interaction_coef_sd", self.interaction_coef_sd),
            ("context_pair_coef_sd", self.context_pair_coef_sd),
            ("bias_sd", self.bias_sd),
        ];
        for (name, v) in sds {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.bias_shift.is_finite() {
            return Err(Error::InvalidConfig("bias_shift must be finite".into()));
        }
        Ok(())
    }
}

// ── Environment ───────────────────────────────────────────────────────────

/// A fully specified environment: context distribution plus the oracle
/// reward model, with the 128 x 32 reward table precomputed.
#[derive(Debug, Clone)]
pub struct Environment {
    seed: u64,
    config: EnvConfig,
    context_logits: Vec<f64>,
    oracle_weights: Vec<f64>,
    context_probs: Vec<f64>,
    context_cdf: Vec<f64>,
    reward_table: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDocument {
    schema_version: u32,
    seed: u64,
    config: EnvConfig,
    context_logits: Vec<f64>,
    oracle_weights: Vec<f64>,
}

/// Draws a fresh environment from `config` using a ChaCha stream seeded
/// with `seed`. Identical inputs reproduce the environment bit for bit.
///
/// Draw order is fixed: 128 context logits, then oracle weights in feature
/// order (7 context, 5 action, 35 context x action, 10 action-pair,
/// 21 context-pair, bias).
pub fn generate_environment(seed: u64, config: &EnvConfig) -> Result<Environment> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |sd: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * sd
    };

    let context_logits: Vec<f64> = (0..NUM_CONTEXTS)
        .map(|_| normal(config.context_logit_sd))
        .collect();

    let mut w = Vec::with_capacity(ORACLE_DIM);
    for _ in 0..CONTEXT_BITS {
        w.push(normal(config.context_coef_sd));
    }
    for _ in 0..ACTION_BITS {
        w.push(normal(config.action_coef_sd));
    }
    for _ in 0..CONTEXT_BITS * ACTION_BITS + ACTION_PAIR_FEATURES {
        w.push(normal(config.interaction_coef_sd));
    }
    for _ in 0..CONTEXT_PAIR_FEATURES {
        w.push(normal(config.context_pair_coef_sd));
    }

    // The bias absorbs the mean non-bias contribution over the uniform
    // (context, action) grid: each single bit averages 1/2 and each product
    // of two distinct bits averages 1/4. Centering pins the per-environment
    // mean log-odds at `bias_shift` plus a `bias_sd` draw, so base reward
    // rates stay in a controlled band instead of drifting with the luck of
    // the coefficient draws, while within-environment structure is untouched.
    let mut grid_mean = 0.0;
    for (idx, &coef) in w.iter().enumerate() {
        let single_bit = idx < CONTEXT_BITS + ACTION_BITS;
        grid_mean += coef * if single_bit { 0.5 } else { 0.25 };
    }
    w.push(normal(config.bias_sd) + config.bias_shift - grid_mean);

    Environment::from_parts(seed, config.clone(), context_logits, w)
}

impl Environment {
    /// Assembles an environment from explicit parameters, recomputing all
    /// cached tables. Lengths must be `NUM_CONTEXTS` and `ORACLE_DIM`.
    pub fn from_parts(
        seed: u64,
        config: EnvConfig,
        context_logits: Vec<f64>,
        oracle_weights: Vec<f64>,
    ) -> Result<Self> {
        if context_logits.len() != NUM_CONTEXTS {
            return Err(Error::InvalidArgument(format!(
                "expected {NUM_CONTEXTS} context logits, got {}",
                context_logits.len()
            )));
        }
        if oracle_weights.len() != ORACLE_DIM {
            return Err(Error::InvalidArgument(format!(
                "expected {ORACLE_DIM} oracle weights, got {}",
                oracle_weights.len()
            )));
        }
        if context_logits
            .iter()
            .chain(&oracle_weights)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "environment parameters must be finite".into(),
            ));
        }

        // Softmax with max subtraction; exact normalization so the
        // probabilities sum to 1 up to rounding of the final division.
        let max_logit = context_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut context_probs: Vec<f64> = context_logits
            .iter()
            .map(|l| (l - max_logit).exp())
            .collect();
        let total: f64 = context_probs.iter().sum();
        for p in &mut context_probs {
            *p /= total;
        }
        let mut context_cdf = Vec::with_capacity(NUM_CONTEXTS);
        let mut acc = 0.0;
        for &p in &context_probs {
            acc += p;
            context_cdf.push(acc);
        }

        let mut reward_table = vec![0.0; NUM_CONTEXTS * NUM_ACTIONS];
        for x in Context::all() {
            for a in Action::all() {
                let score = oracle_score(&oracle_weights, x, a);
                reward_table[pair_index(x, a)] = sigmoid_prob(score);
            }
        }

        Ok(Self {
            seed,
            config,
            context_logits,
            oracle_weights,
            context_probs,
            context_cdf,
            reward_table,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn context_logits(&self) -> &[f64] {
        &self.context_logits
    }

    pub fn oracle_weights(&self) -> &[f64] {
        &self.oracle_weights
    }

    /// Marginal probability of each context, in index order.
    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    /// True probability of a positive reward for the pair, always in (0, 1).
    pub fn true_reward_prob(&self, x: Context, a: Action) -> f64 {
        self.reward_table[pair_index(x, a)]
    }

    /// Draws a context from the marginal distribution (one uniform variate,
    /// inverted through the cached CDF).
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        let u: f64 = rng.random();
        let idx = self.context_cdf.partition_point(|&c| c <= u);
        Context::from_index(idx.min(NUM_CONTEXTS - 1))
    }

    /// Expected reward of `policy`, by exact enumeration over all 4096
    /// (context, action) pairs.
    ///
    /// Fails with [`Error::PolicyNotNormalized`] if the policy's action
    /// probabilities for some context sum to anything but 1 (tolerance 1e-9).
    pub fn policy_value(&self, policy: &Policy) -> Result<f64> {
        let mut value = 0.0;
        for x in Context::all() {
            let probs = policy.probs(x);
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::PolicyNotNormalized { sum });
            }
            let row = &self.reward_table[x.index() * NUM_ACTIONS..(x.index() + 1) * NUM_ACTIONS];
            let conditional: f64 = probs.iter().zip(row).map(|(p, r)| p * r).sum();
            value += self.context_probs[x.index()] * conditional;
        }
        Ok(value)
    }

    /// Value of the best deterministic policy (per-context argmax of the
    /// true reward), by enumeration.
    pub fn best_policy_value(&self) -> f64 {
        self.extremal_value(true)
    }

    /// Value of the worst deterministic policy.
    pub fn worst_policy_value(&self) -> f64 {
        self.extremal_value(false)
    }

    fn extremal_value(&self, best: bool) -> f64 {
        let mut value = 0.0;
        for x in 0..NUM_CONTEXTS {
            let row = &self.reward_table[x * NUM_ACTIONS..(x + 1) * NUM_ACTIONS];
            let pick = row.iter().cloned().fold(
                if best {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                |m, r| {
                    if best {
                        m.max(r)
                    } else {
                        m.min(r)
                    }
                },
            );
            value += self.context_probs[x] * pick;
        }
        value
    }

    /// Rescales `policy_value` so the best deterministic policy maps to 1
    /// and the worst to 0.
    ///
    /// Fails with [`Error::DegenerateEnvironment`] when the best-worst gap
    /// is below 1e-12.
    pub fn normalized_value(&self, policy: &Policy) -> Result<f64> {
        let value = self.policy_value(policy)?;
        let best = self.best_policy_value();
        let worst = self.worst_policy_value();
        let gap = best - worst;
        if gap < 1e-12 {
            return Err(Error::DegenerateEnvironment { gap });
        }
        Ok((value - worst) / gap)
    }

    /// Deterministic policy that plays the true-reward argmax in every
    /// context (ties broken toward the lowest action index).
    pub fn oracle_greedy_policy(&self) -> Policy {
        self.extremal_policy(true)
    }

    /// Deterministic policy that plays the true-reward argmin everywhere.
    pub fn oracle_worst_policy(&self) -> Policy {
        self.extremal_policy(false)
    }

    fn extremal_policy(&self, best: bool) -> Policy {
        let mut rows = vec![0.0; NUM_CONTEXTS * NUM_ACTIONS];
        for x in 0..NUM_CONTEXTS {
            let row = &self.reward_table[x * NUM_ACTIONS..(x + 1) * NUM_ACTIONS];
            let mut pick = 0usize;
            for (a, &r) in row.iter().enumerate() {
                let better = if best { r > row[pick] } else { r < row[pick] };
                if better {
                    pick = a;
                }
            }
            rows[x * NUM_ACTIONS + pick] = 1.0;
        }
        Policy::Table(TablePolicy::from_flat(rows).expect("one-hot rows are normalized"))
    }

    /// Serializes the defining parameters (not the caches) as JSON.
    pub fn to_json(&self) -> String {
        let doc = EnvDocument {
            schema_version: ENV_SCHEMA_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            context_logits: self.context_logits.clone(),
            oracle_weights: self.oracle_weights.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("environment document serializes")
    }

    /// Inverse of [`Environment::to_json`]; rebuilds all cached tables.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EnvDocument = serde_json::from_str(text)?;
        if doc.schema_version != ENV_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported environment schema_version {}",
                doc.schema_version
            )));
        }
        Self::from_parts(doc.seed, doc.config, doc.context_logits, doc.oracle_weights)
    }
}

/// Oracle linear score: context bits, action bits, context x action
/// products (context-major), action-pair products (i < j), context-pair
/// products (i < j), bias.
///
/// The first 47 features coincide with the full learner map; the ten
/// action-pair and twenty-one context-pair products are the oracle's
/// private extra capacity. The context pairs matter most: learners see the
/// context only through its 7 linear bits, so part of the context effect is
/// unmodelable for them, and any logging policy that targets its actions by
/// context lets that hidden effect contaminate a fitted reward model.
fn oracle_score(w: &[f64], x: Context, a: Action) -> f64 {
    let mut s = 0.0;
    let mut k = 0;
    for i in 0..CONTEXT_BITS {
        s += w[k] * f64::from(x.bit(i));
        k += 1;
    }
    for j in 0..ACTION_BITS {
        s += w[k] * f64::from(a.bit(j));
        k += 1;
    }
    for i in 0..CONTEXT_BITS {
        for j in 0..ACTION_BITS {
            s += w[k] * f64::from(x.bit(i) * a.bit(j));
            k += 1;
        }
    }
    for i in 0..ACTION_BITS {
        for j in (i + 1)..ACTION_BITS {
            s += w[k] * f64::from(a.bit(i) * a.bit(j));
            k += 1;
        }
    }
    for i in 0..CONTEXT_BITS {
        for j in (i + 1)..CONTEXT_BITS {
            s += w[k] * f64::from(x.bit(i) * x.bit(j));
            k += 1;
        }
    }
    s + w[k]
}
