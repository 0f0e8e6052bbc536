//! Offline learners: a direct reward model, the counterfactual sample
//! identification classifier in both variants, and a smoothed
//! importance-sampling policy-search baseline.
//!
//! The CSI idea in one paragraph: keep each positive logged row as a
//! target-1 example, pair it with counterfactual target-0 rows drawn from
//! the logging policy in the same context, and fit a classifier on the
//! pairing indicator. Under full logging support, the Bayes-optimal
//! classifier for this problem scores actions by
//! `sigmoid(log(r(x, a) / rbar(x)))` where `r` is the true reward
//! probability and `rbar` its logging-policy average, so its per-context
//! argmax is exactly the true best action. The classifier never divides by
//! a propensity, which is what the method buys over importance sampling.
//! `exact_csi_posterior` reproduces that Bayes posterior by brute-force
//! enumeration of the generating process so tests can verify the identity
//! numerically.

use rand::Rng;
use std::collections::BTreeMap;

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::glm::{
    train_logistic, FeatureMap, FitResult, LinearModel, PairFeatures, TrainConfig, TrainMeta,
    TrainRow,
};
use crate::numeric::sigmoid;
use crate::pipeline::{csi_transform_expect, csi_transform_sampling, LoggedSample};
use crate::policy::Policy;
use serde::{Deserialize, Serialize};

/// Which learner a benchmark cell trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Direct method: logistic reward model on the logged rows, played
    /// greedily.
    Dm,
    /// CSI with one sampled counterfactual action per positive.
    CsiSampling,
    /// CSI with the counterfactual expectation expanded over all actions.
    CsiExpect,
    /// Smoothed importance-sampling policy search.
    LsIps,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Dm => "dm",
            LearnerKind::CsiSampling => "csi_sampling",
            LearnerKind::CsiExpect => "csi_expect",
            LearnerKind::LsIps => "ls_ips",
        }
    }
}

/// Everything needed to train one learner.
#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub feature_map: FeatureMap,
    pub train: TrainConfig,
    /// Smoothing strength for [`LearnerKind::LsIps`]; unused otherwise.
    pub ls_lambda: Option<f64>,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            feature_map: FeatureMap::full(),
            train: TrainConfig::default(),
            ls_lambda: match kind {
                LearnerKind::LsIps => Some(0.1),
                _ => None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.kind == LearnerKind::LsIps {
            match self.ls_lambda {
                Some(l) if l.is_finite() && l > 0.0 => {}
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "ls_ips requires a finite positive ls_lambda, got {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Greedy exploitation of a trained model.
pub fn greedy_policy(model: &LinearModel) -> Policy {
    Policy::Greedy(model.clone())
}

/// Direct method: fits the reward probability on all logged rows.
pub fn train_dm(data: &[LoggedSample], spec: &LearnerSpec) -> Result<FitResult> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("logged dataset".into()));
    }
    let rows: Vec<TrainRow> = data
        .iter()
        .map(|r| TrainRow::new(r.context, r.action, r.reward))
        .collect();
    train_logistic(&rows, &spec.feature_map, &spec.train)
}

/// Which counterfactual transform feeds the CSI classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiVariant {
    Sampling,
    Expect,
}

/// Trains the CSI classifier. `rng` is consumed only by the sampling
/// variant; the expectation variant is deterministic given `data`.
///
/// Fails with [`Error::NoPositives`] when the dataset has no
/// positive-reward rows, since the transform would be empty.
pub fn train_csi<R: Rng + ?Sized>(
    data: &[LoggedSample],
    pi0: &Policy,
    variant: CsiVariant,
    spec: &LearnerSpec,
    rng: &mut R,
) -> Result<FitResult> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("logged dataset".into()));
    }
    let transformed = match variant {
        CsiVariant::Sampling => csi_transform_sampling(data, pi0, rng),
        CsiVariant::Expect => csi_transform_expect(data, pi0),
    };
    if transformed.is_empty() {
        return Err(Error::NoPositives);
    }
    let rows: Vec<TrainRow> = transformed
        .iter()
        .map(|e| TrainRow::weighted(e.context, e.action, e.target, e.weight))
        .collect();
    train_logistic(&rows, &spec.feature_map, &spec.train)
}

// ── Smoothed importance-sampling policy search ────────────────────────────

/// Result of [`train_ls_ips`]: the score model, the softmax policy it
/// induces, and the ascent trace.
#[derive(Debug, Clone)]
pub struct LsIpsFit {
    pub model: LinearModel,
    /// Softmax policy (alpha = 1) over the model's predicted probabilities;
    /// the quantity the objective actually optimizes.
    pub policy: Policy,
    pub meta: TrainMeta,
    /// Objective value at the start and after every accepted ascent step.
    pub objective_history: Vec<f64>,
}

/// Deduplicated positive rows of one context: (action index, propensity,
/// count).
type PositiveGroup = Vec<(usize, f64, f64)>;

/// Aggregated view of a logged dataset for the smoothed objective.
///
/// Only positive rows contribute to the objective and its gradient, and
/// rows sharing (context, action, propensity) are interchangeable, so they
/// collapse to counts. Keys are ordered, which keeps accumulation order
/// and therefore floating-point results deterministic.
struct LsProblem {
    feats: PairFeatures,
    dim: usize,
    n: f64,
    lambda: f64,
    by_context: Vec<(usize, PositiveGroup)>,
}

impl LsProblem {
    fn build(data: &[LoggedSample], fm: &FeatureMap, lambda: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("logged dataset".into()));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and positive, got {lambda}"
            )));
        }
        let mut counts: BTreeMap<(usize, usize, u64), f64> = BTreeMap::new();
        for row in data {
            if !row.propensity.is_finite() || row.propensity <= 0.0 || row.propensity > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "logged propensity must lie in (0, 1], got {}",
                    row.propensity
                )));
            }
            if row.reward {
                let key = (
                    row.context.index(),
                    row.action.index(),
                    row.propensity.to_bits(),
                );
                *counts.entry(key).or_insert(0.0) += 1.0;
            }
        }
        let mut by_context: Vec<(usize, PositiveGroup)> = Vec::new();
        for ((xi, ai, pbits), count) in counts {
            let propensity = f64::from_bits(pbits);
            match by_context.last_mut() {
                Some((last_xi, rows)) if *last_xi == xi => rows.push((ai, propensity, count)),
                _ => by_context.push((xi, vec![(ai, propensity, count)])),
            }
        }
        Ok(Self {
            feats: PairFeatures::build(fm),
            dim: fm.dim(),
            n: data.len() as f64,
            lambda,
            by_context,
        })
    }

    /// Per-action sigmoid scores and their sum for one context.
    fn context_sigmoids(&self, theta: &[f64], xi: usize) -> ([f64; NUM_ACTIONS], f64) {
        let mut g = [0.0; NUM_ACTIONS];
        let mut total = 0.0;
        for (ai, gi) in g.iter_mut().enumerate() {
            let s: f64 = self
                .feats
                .row(xi * NUM_ACTIONS + ai)
                .iter()
                .map(|&k| theta[k as usize])
                .sum();
            *gi = sigmoid(s);
            total += *gi;
        }
        (g, total)
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let mut j = 0.0;
        for (xi, rows) in &self.by_context {
            let (g, total) = self.context_sigmoids(theta, *xi);
            for &(ai, propensity, count) in rows {
                let pi_theta = g[ai] / total;
                j += count * (self.lambda * pi_theta / propensity).ln_1p() / self.lambda;
            }
        }
        j / self.n
    }

    fn objective_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut j = 0.0;
        let mut m = vec![0.0; self.dim];
        for (xi, rows) in &self.by_context {
            let (g, total) = self.context_sigmoids(theta, *xi);
            // m = sum_b pi_b (1 - g_b) phi_b, the common part of every
            // softmax-ratio derivative in this context.
            m.fill(0.0);
            for (bi, &gb) in g.iter().enumerate() {
                let coef = (gb / total) * (1.0 - gb);
                for &k in self.feats.row(xi * NUM_ACTIONS + bi) {
                    m[k as usize] += coef;
                }
            }
            let mut m_coef = 0.0;
            for &(ai, propensity, count) in rows {
                let pi_theta = g[ai] / total;
                j += count * (self.lambda * pi_theta / propensity).ln_1p() / self.lambda;
                let coef = count * pi_theta / (self.n * (propensity + self.lambda * pi_theta));
                for &k in self.feats.row(xi * NUM_ACTIONS + ai) {
                    grad[k as usize] += coef * (1.0 - g[ai]);
                }
                m_coef += coef;
            }
            for (gk, mk) in grad.iter_mut().zip(&m) {
                *gk -= m_coef * mk;
            }
        }
        j / self.n
    }
}

/// Maximizes the smoothed importance-sampling objective
/// `mean_i log(1 + lambda * (pi_theta(a_i | x_i) / p_i) * y_i) / lambda`
/// over softmax-policy scores by gradient ascent with Armijo backtracking
/// (the surrogate is concave in the per-row weight but not in `theta`, so
/// Newton steps are not used regardless of the configured step rule).
///
/// The smoothing makes the estimate a lower confidence bound of the true
/// value: large `lambda` means heavy smoothing and a policy that stays
/// close to uniform, small `lambda` approaches plain importance sampling.
pub fn train_ls_ips(data: &[LoggedSample], spec: &LearnerSpec) -> Result<LsIpsFit> {
    if spec.kind != LearnerKind::LsIps {
        return Err(Error::InvalidArgument(format!(
            "train_ls_ips called with learner kind {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let lambda = spec.ls_lambda.expect("validated above");
    let problem = LsProblem::build(data, &spec.feature_map, lambda)?;
    let cfg = &spec.train;

    let dim = problem.dim;
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut objective = problem.objective_and_grad(&theta, &mut grad);
    let mut history = vec![objective];
    let mut trial = vec![0.0; dim];
    let mut steps = 0usize;
    let mut converged = false;

    for iter in 0..cfg.max_iters {
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iter });
        }
        let grad_norm = grad.iter().fold(0.0f64, |mx, g| mx.max(g.abs()));
        if grad_norm <= cfg.tol {
            converged = true;
            break;
        }
        let sq_norm: f64 = grad.iter().map(|g| g * g).sum();
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..dim {
                trial[i] = theta[i] + step * grad[i];
            }
            let trial_obj = problem.objective(&trial);
            if trial_obj >= objective + 1e-4 * step * sq_norm {
                theta.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        objective = problem.objective_and_grad(&theta, &mut grad);
        steps += 1;
        history.push(objective);
    }

    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: steps });
    }
    let final_grad_norm = grad.iter().fold(0.0f64, |mx, g| mx.max(g.abs()));
    if final_grad_norm <= cfg.tol {
        converged = true;
    }
    let model = LinearModel::new(spec.feature_map, theta)?;
    let policy = Policy::softmax(model.clone(), 1.0)?;
    Ok(LsIpsFit {
        model,
        policy,
        meta: TrainMeta {
            iterations: steps,
            final_grad_norm,
            l2: 0.0,
            converged,
        },
        objective_history: history,
    })
}

/// Smoothed objective value at arbitrary scores; the quantity
/// [`train_ls_ips`] maximizes.
pub fn ls_objective(
    data: &[LoggedSample],
    fm: &FeatureMap,
    lambda: f64,
    theta: &[f64],
) -> Result<f64> {
    check_theta(fm, theta)?;
    Ok(LsProblem::build(data, fm, lambda)?.objective(theta))
}

/// Analytic gradient of [`ls_objective`].
pub fn ls_objective_gradient(
    data: &[LoggedSample],
    fm: &FeatureMap,
    lambda: f64,
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_theta(fm, theta)?;
    let problem = LsProblem::build(data, fm, lambda)?;
    let mut grad = vec![0.0; fm.dim()];
    problem.objective_and_grad(theta, &mut grad);
    Ok(grad)
}

fn check_theta(fm: &FeatureMap, theta: &[f64]) -> Result<()> {
    if theta.len() != fm.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} score weights, got {}",
            fm.dim(),
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(
            "score weights must be finite".into(),
        ));
    }
    Ok(())
}

// ── Exact oracles for the transformed problem ─────────────────────────────

/// Joint masses of the transformed-row generating process for one
/// context, enumerated exhaustively: log an action, keep positives, flip a
/// fair coin for the pairing indicator, and substitute a fresh action from
/// the logging policy when the coin lands 0.
fn enumerate_masses(reward_row: &[f64], pi0_row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n_actions = reward_row.len();
    let mut mass_z1 = vec![0.0; n_actions];
    let mut mass_z0 = vec![0.0; n_actions];
    for (a, (&pa, &ra)) in pi0_row.iter().zip(reward_row).enumerate() {
        for (b, &pb) in pi0_row.iter().enumerate() {
            // Positive outcome, coin = 1: the row carries the logged action.
            mass_z1[a] += 0.5 * pa * ra * pb;
            // Positive outcome, coin = 0: the row carries the substitute.
            mass_z0[b] += 0.5 * pa * ra * pb;
        }
    }
    (mass_z1, mass_z0)
}

/// Exact probability that a transformed row carries a logged rather than a
/// counterfactual action, given the row's action and context.
///
/// `reward[x][a]` must lie strictly inside (0, 1); `pi0[x]` must be a full
/// support distribution (every action probability positive, rows summing
/// to 1 within 1e-9), otherwise the posterior is undefined for some
/// action. Shapes are arbitrary, so tiny hand-checkable spaces work too.
pub fn exact_csi_posterior(reward: &[Vec<f64>], pi0: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    validate_tables(reward, pi0)?;
    let mut out = Vec::with_capacity(reward.len());
    for (reward_row, pi0_row) in reward.iter().zip(pi0) {
        let (mass_z1, mass_z0) = enumerate_masses(reward_row, pi0_row);
        out.push(
            mass_z1
                .iter()
                .zip(&mass_z0)
                .map(|(&m1, &m0)| m1 / (m1 + m0))
                .collect(),
        );
    }
    Ok(out)
}

/// Exact per-context share of target-1 mass among transformed rows;
/// structurally one half, which tests assert numerically.
pub fn exact_positive_share(reward: &[Vec<f64>], pi0: &[Vec<f64>]) -> Result<Vec<f64>> {
    validate_tables(reward, pi0)?;
    let mut out = Vec::with_capacity(reward.len());
    for (reward_row, pi0_row) in reward.iter().zip(pi0) {
        let (mass_z1, mass_z0) = enumerate_masses(reward_row, pi0_row);
        let z1: f64 = mass_z1.iter().sum();
        let z0: f64 = mass_z0.iter().sum();
        out.push(z1 / (z1 + z0));
    }
    Ok(out)
}

fn validate_tables(reward: &[Vec<f64>], pi0: &[Vec<f64>]) -> Result<()> {
    if reward.is_empty() || reward.len() != pi0.len() {
        return Err(Error::InvalidArgument(
            "reward and pi0 must be non-empty with matching context counts".into(),
        ));
    }
    for (xi, (reward_row, pi0_row)) in reward.iter().zip(pi0).enumerate() {
        if reward_row.is_empty() || reward_row.len() != pi0_row.len() {
            return Err(Error::InvalidArgument(format!(
                "context {xi}: reward and pi0 rows must be non-empty with matching lengths"
            )));
        }
        if reward_row.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "context {xi}: reward probabilities must lie strictly in (0, 1)"
            )));
        }
        if pi0_row.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "context {xi}: logging policy must have full support"
            )));
        }
        let sum: f64 = pi0_row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::PolicyNotNormalized { sum });
        }
    }
    Ok(())
}
