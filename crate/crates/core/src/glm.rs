//! Logistic regression on binary (context, action) features.
//!
//! The feature space is tiny and fully enumerable: a masked feature map
//! over 7 context bits, 5 action bits, their products, and a bias. Training
//! exploits this by aggregating rows into per-pair weight buckets, so one
//! optimizer iteration costs the same for 100 rows as for 10 million.
//!
//! The objective is the weighted negative log-likelihood (a sum, not a
//! mean) plus `l2/2 * ||w||^2` over everything except the bias. Three step
//! rules are available: plain gradient descent with a fixed step, gradient
//! descent with Armijo backtracking (the default), and damped Newton, which
//! reaches the same optimum in far fewer iterations and is what the
//! benchmark harness uses.

use serde::{Deserialize, Serialize};

use crate::env::{
    pair_index, Action, Context, ACTION_BITS, CONTEXT_BITS, NUM_ACTIONS, NUM_CONTEXTS,
};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, sigmoid_prob, softplus};

const NUM_PAIRS: usize = NUM_CONTEXTS * NUM_ACTIONS;

// ── Feature map ───────────────────────────────────────────────────────────

/// Visibility mask over the 12 raw bits. Features, in order: each visible
/// context bit, each visible action bit, every product of a visible context
/// bit with a visible action bit (context-major), and a trailing bias that
/// is always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureMap {
    context: [bool; CONTEXT_BITS],
    action: [bool; ACTION_BITS],
}

impl FeatureMap {
    /// All 12 bits visible: dimension 7 + 5 + 35 + 1 = 48.
    pub fn full() -> Self {
        Self {
            context: [true; CONTEXT_BITS],
            action: [true; ACTION_BITS],
        }
    }

    pub fn new(context: [bool; CONTEXT_BITS], action: [bool; ACTION_BITS]) -> Self {
        Self { context, action }
    }

    /// Builds from 12 flags: context bits 0..7, then action bits 0..5.
    pub fn from_flags(flags: [bool; CONTEXT_BITS + ACTION_BITS]) -> Self {
        let mut context = [false; CONTEXT_BITS];
        let mut action = [false; ACTION_BITS];
        context.copy_from_slice(&flags[..CONTEXT_BITS]);
        action.copy_from_slice(&flags[CONTEXT_BITS..]);
        Self { context, action }
    }

    pub fn flags(&self) -> [bool; CONTEXT_BITS + ACTION_BITS] {
        let mut flags = [false; CONTEXT_BITS + ACTION_BITS];
        flags[..CONTEXT_BITS].copy_from_slice(&self.context);
        flags[CONTEXT_BITS..].copy_from_slice(&self.action);
        flags
    }

    pub fn context_mask(&self) -> &[bool; CONTEXT_BITS] {
        &self.context
    }

    pub fn action_mask(&self) -> &[bool; ACTION_BITS] {
        &self.action
    }

    fn visible_context(&self) -> Vec<usize> {
        (0..CONTEXT_BITS).filter(|&i| self.context[i]).collect()
    }

    fn visible_action(&self) -> Vec<usize> {
        (0..ACTION_BITS).filter(|&j| self.action[j]).collect()
    }

    /// Feature dimension including the bias.
    pub fn dim(&self) -> usize {
        let cx = self.context.iter().filter(|&&v| v).count();
        let ca = self.action.iter().filter(|&&v| v).count();
        cx + ca + cx * ca + 1
    }

    /// Dense feature vector of length `dim()`; every entry is 0 or 1 and
    /// the last entry is the bias, always 1.
    pub fn featurize(&self, x: Context, a: Action) -> Vec<f64> {
        let vis_x = self.visible_context();
        let vis_a = self.visible_action();
        let mut out = Vec::with_capacity(self.dim());
        for &i in &vis_x {
            out.push(f64::from(x.bit(i)));
        }
        for &j in &vis_a {
            out.push(f64::from(a.bit(j)));
        }
        for &i in &vis_x {
            for &j in &vis_a {
                out.push(f64::from(x.bit(i) * a.bit(j)));
            }
        }
        out.push(1.0);
        out
    }
}

// ── Model ─────────────────────────────────────────────────────────────────

/// Linear scores over a [`FeatureMap`], squashed by the logistic function
/// for probability predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    feature_map: FeatureMap,
    weights: Vec<f64>,
}

impl LinearModel {
    /// Weight vector length must equal `feature_map.dim()`; all entries
    /// must be finite. The last weight is the bias.
    pub fn new(feature_map: FeatureMap, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != feature_map.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights for this feature map, got {}",
                feature_map.dim(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "model weights must be finite".into(),
            ));
        }
        Ok(Self {
            feature_map,
            weights,
        })
    }

    pub fn zeros(feature_map: FeatureMap) -> Self {
        let weights = vec![0.0; feature_map.dim()];
        Self {
            feature_map,
            weights,
        }
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Linear score `w . phi(x, a)`.
    pub fn score(&self, x: Context, a: Action) -> f64 {
        self.feature_map
            .featurize(x, a)
            .iter()
            .zip(&self.weights)
            .map(|(f, w)| f * w)
            .sum()
    }

    /// Predicted positive-class probability, strictly inside (0, 1).
    pub fn predict_prob(&self, x: Context, a: Action) -> f64 {
        sigmoid_prob(self.score(x, a))
    }
}

// ── Training configuration ────────────────────────────────────────────────

/// Update rule for the full-batch optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Gradient step with a constant step size; no line search, so a step
    /// size that is too large can diverge.
    Fixed(f64),
    /// Gradient descent with Armijo backtracking (c = 1e-4, initial step
    /// 1.0, halving).
    Backtracking,
    /// Damped Newton: solves the regularized Hessian system and
    /// backtracks from a unit step. Converges in a handful of iterations.
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Ridge strength on non-bias weights; 0 disables regularization.
    pub l2: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub tol: f64,
    pub step_rule: StepRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iters: 5000,
            tol: 1e-8,
            step_rule: StepRule::Backtracking,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "l2 must be finite and non-negative, got {}",
                self.l2
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tol must be finite and positive, got {}",
                self.tol
            )));
        }
        if let StepRule::Fixed(step) = self.step_rule {
            if !step.is_finite() || step <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "fixed step size must be finite and positive, got {step}"
                )));
            }
        }
        Ok(())
    }
}

// ── Training data ─────────────────────────────────────────────────────────

/// One weighted binary-classification row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub context: Context,
    pub action: Action,
    pub target: bool,
    pub weight: f64,
}

impl TrainRow {
    pub fn new(context: Context, action: Action, target: bool) -> Self {
        Self {
            context,
            action,
            target,
            weight: 1.0,
        }
    }

    pub fn weighted(context: Context, action: Action, target: bool, weight: f64) -> Self {
        Self {
            context,
            action,
            target,
            weight,
        }
    }
}

/// Fit metadata reported alongside the trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Accepted optimizer steps.
    pub iterations: usize,
    /// Gradient infinity norm at the returned weights.
    pub final_grad_norm: f64,
    pub l2: f64,
    /// Whether `final_grad_norm <= tol` was reached within `max_iters`.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LinearModel,
    pub meta: TrainMeta,
    /// Objective value at the start and after every accepted step.
    pub loss_history: Vec<f64>,
}

// ── Sparse problem representation ─────────────────────────────────────────

/// Active feature indices for every (context, action) pair under one map.
/// All feature values are 0 or 1, so dot products, gradients, and Hessians
/// reduce to gathers and scatter-adds over these index lists.
pub(crate) struct PairFeatures {
    dim: usize,
    offsets: Vec<u32>,
    indices: Vec<u32>,
}

impl PairFeatures {
    pub(crate) fn build(fm: &FeatureMap) -> Self {
        let vis_x = fm.visible_context();
        let vis_a = fm.visible_action();
        let cx = vis_x.len();
        let ca = vis_a.len();
        let dim = fm.dim();
        let bias = dim - 1;

        let mut offsets = Vec::with_capacity(NUM_PAIRS + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for xi in 0..NUM_CONTEXTS {
            let x = Context::from_index(xi);
            let x_active: Vec<usize> = (0..cx).filter(|&k| x.bit(vis_x[k]) == 1).collect();
            for ai in 0..NUM_ACTIONS {
                let a = Action::from_index(ai);
                let a_active: Vec<usize> = vis_a
                    .iter()
                    .enumerate()
                    .filter(|(_, &bit)| a.bit(bit) == 1)
                    .map(|(j, _)| j)
                    .collect();
                for &k in &x_active {
                    indices.push(k as u32);
                }
                for &j in &a_active {
                    indices.push((cx + j) as u32);
                }
                for &k in &x_active {
                    for &j in &a_active {
                        indices.push((cx + ca + k * ca + j) as u32);
                    }
                }
                indices.push(bias as u32);
                offsets.push(indices.len() as u32);
            }
        }
        Self {
            dim,
            offsets,
            indices,
        }
    }

    pub(crate) fn row(&self, pair: usize) -> &[u32] {
        &self.indices[self.offsets[pair] as usize..self.offsets[pair + 1] as usize]
    }
}

/// Total weight of negative- and positive-target rows touching one pair.
#[derive(Debug, Clone, Copy)]
struct AggEntry {
    pair: u32,
    w0: f64,
    w1: f64,
}

fn aggregate(rows: &[TrainRow]) -> Result<Vec<AggEntry>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("training rows".into()));
    }
    let mut buckets = vec![0.0f64; NUM_PAIRS * 2];
    for row in rows {
        if !row.weight.is_finite() || row.weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "row weight must be finite and non-negative, got {}",
                row.weight
            )));
        }
        let p = pair_index(row.context, row.action);
        buckets[p * 2 + usize::from(row.target)] += row.weight;
    }
    let entries: Vec<AggEntry> = (0..NUM_PAIRS)
        .filter_map(|p| {
            let (w0, w1) = (buckets[p * 2], buckets[p * 2 + 1]);
            (w0 + w1 > 0.0).then_some(AggEntry {
                pair: p as u32,
                w0,
                w1,
            })
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyInput(
            "all training row weights are zero".into(),
        ));
    }
    Ok(entries)
}

struct LogisticProblem<'a> {
    feats: &'a PairFeatures,
    entries: &'a [AggEntry],
    l2: f64,
}

impl LogisticProblem<'_> {
    fn dim(&self) -> usize {
        self.feats.dim
    }

    fn score(&self, w: &[f64], pair: usize) -> f64 {
        self.feats.row(pair).iter().map(|&i| w[i as usize]).sum()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let mut loss = 0.0;
        for e in self.entries {
            let s = self.score(w, e.pair as usize);
            loss += e.w1 * softplus(-s) + e.w0 * softplus(s);
        }
        let reg: f64 = w[..self.dim() - 1].iter().map(|v| v * v).sum();
        loss + 0.5 * self.l2 * reg
    }

    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut loss = 0.0;
        for e in self.entries {
            let s = self.score(w, e.pair as usize);
            loss += e.w1 * softplus(-s) + e.w0 * softplus(s);
            let residual = (e.w0 + e.w1) * sigmoid(s) - e.w1;
            for &i in self.feats.row(e.pair as usize) {
                grad[i as usize] += residual;
            }
        }
        for i in 0..self.dim() - 1 {
            loss += 0.5 * self.l2 * w[i] * w[i];
            grad[i] += self.l2 * w[i];
        }
        loss
    }

    /// Dense lower-triangular Hessian. The curvature coefficient per pair
    /// does not depend on the target, and feature values are binary, so
    /// each pair contributes a constant to a submatrix of entries.
    fn hessian(&self, w: &[f64], h: &mut [f64]) {
        let dim = self.dim();
        h.fill(0.0);
        for e in self.entries {
            let s = self.score(w, e.pair as usize);
            let sig = sigmoid(s);
            let c = (e.w0 + e.w1) * sig * (1.0 - sig);
            let row = self.feats.row(e.pair as usize);
            for (pi, &i) in row.iter().enumerate() {
                let base = i as usize * dim;
                for &j in &row[..=pi] {
                    h[base + j as usize] += c;
                }
            }
        }
        for i in 0..dim - 1 {
            h[i * dim + i] += self.l2;
        }
    }
}

// ── Dense Cholesky for the Newton system ──────────────────────────────────

/// In-place lower Cholesky; returns false on a non-positive pivot.
fn cholesky_in_place(h: &mut [f64], dim: usize) -> bool {
    for j in 0..dim {
        let mut d = h[j * dim + j];
        for k in 0..j {
            d -= h[j * dim + k] * h[j * dim + k];
        }
        if !d.is_finite() || d <= 0.0 {
            return false;
        }
        let root = d.sqrt();
        h[j * dim + j] = root;
        for i in j + 1..dim {
            let mut v = h[i * dim + j];
            for k in 0..j {
                v -= h[i * dim + k] * h[j * dim + k];
            }
            h[i * dim + j] = v / root;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], dim: usize, rhs: &mut [f64]) {
    for i in 0..dim {
        let mut v = rhs[i];
        for k in 0..i {
            v -= l[i * dim + k] * rhs[k];
        }
        rhs[i] = v / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut v = rhs[i];
        for k in i + 1..dim {
            v -= l[k * dim + i] * rhs[k];
        }
        rhs[i] = v / l[i * dim + i];
    }
}

// ── Optimizer ─────────────────────────────────────────────────────────────

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;

fn minimize(
    problem: &LogisticProblem,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, TrainMeta, Vec<f64>)> {
    let dim = problem.dim();
    let mut w = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut loss = problem.loss_and_grad(&w, &mut grad);
    let mut history = vec![loss];
    let mut hess = match cfg.step_rule {
        StepRule::Newton => vec![0.0; dim * dim],
        _ => Vec::new(),
    };
    let mut direction = vec![0.0; dim];
    let mut steps = 0usize;
    let mut converged = false;

    for iter in 0..cfg.max_iters {
        if !loss.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iter });
        }
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= cfg.tol {
            converged = true;
            break;
        }

        match cfg.step_rule {
            StepRule::Fixed(step) => {
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= step * gi;
                }
                loss = problem.loss_and_grad(&w, &mut grad);
                steps += 1;
                history.push(loss);
                continue;
            }
            StepRule::Backtracking => {
                for (di, gi) in direction.iter_mut().zip(&grad) {
                    *di = -gi;
                }
            }
            StepRule::Newton => {
                problem.hessian(&w, &mut hess);
                if !newton_direction(&mut hess, dim, &grad, &mut direction) {
                    for (di, gi) in direction.iter_mut().zip(&grad) {
                        *di = -gi;
                    }
                }
            }
        }

        let dir_deriv: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        if dir_deriv.is_nan() || dir_deriv >= 0.0 {
            // Not a descent direction (numerically flat); retreat to the
            // raw gradient, and stop if even that is flat.
            for (di, gi) in direction.iter_mut().zip(&grad) {
                *di = -gi;
            }
            if grad.iter().all(|g| *g == 0.0) {
                break;
            }
        }
        let dir_deriv: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();

        let mut step = 1.0f64;
        let mut accepted = false;
        let mut trial = vec![0.0; dim];
        for _ in 0..MAX_HALVINGS {
            for i in 0..dim {
                trial[i] = w[i] + step * direction[i];
            }
            let trial_loss = problem.loss(&trial);
            if trial_loss <= loss + ARMIJO_C * step * dir_deriv {
                w.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Line search stalled at floating-point resolution.
            break;
        }
        loss = problem.loss_and_grad(&w, &mut grad);
        steps += 1;
        history.push(loss);
    }

    if !loss.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: steps });
    }
    let final_grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if final_grad_norm <= cfg.tol {
        converged = true;
    }
    let meta = TrainMeta {
        iterations: steps,
        final_grad_norm,
        l2: cfg.l2,
        converged,
    };
    Ok((w, meta, history))
}

/// Solves `H d = -g`, adding a small ridge once if the factorization hits a
/// non-positive pivot. Returns false if no usable direction was produced.
fn newton_direction(hess: &mut [f64], dim: usize, grad: &[f64], direction: &mut [f64]) -> bool {
    let mut attempt = hess.to_vec();
    if !cholesky_in_place(&mut attempt, dim) {
        let max_diag = (0..dim).fold(0.0f64, |m, i| m.max(hess[i * dim + i]));
        let ridge = (max_diag * 1e-10).max(1e-12);
        attempt.copy_from_slice(hess);
        for i in 0..dim {
            attempt[i * dim + i] += ridge;
        }
        if !cholesky_in_place(&mut attempt, dim) {
            return false;
        }
    }
    for (di, gi) in direction.iter_mut().zip(grad) {
        *di = -gi;
    }
    cholesky_solve(&attempt, dim, direction);
    direction.iter().all(|d| d.is_finite())
}

// ── Public training and evaluation entry points ───────────────────────────

/// Fits logistic regression on weighted rows. Weights start at zero; rows
/// with weight 0 are ignored; a negative or non-finite weight is an error.
pub fn train_logistic(rows: &[TrainRow], fm: &FeatureMap, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let entries = aggregate(rows)?;
    let feats = PairFeatures::build(fm);
    let problem = LogisticProblem {
        feats: &feats,
        entries: &entries,
        l2: cfg.l2,
    };
    let (weights, meta, loss_history) = minimize(&problem, cfg)?;
    let model = LinearModel::new(*fm, weights)?;
    Ok(FitResult {
        model,
        meta,
        loss_history,
    })
}

/// Objective value at arbitrary weights: weighted negative log-likelihood
/// plus the non-bias ridge term. Same quantity `train_logistic` minimizes.
pub fn logistic_loss(rows: &[TrainRow], fm: &FeatureMap, l2: f64, weights: &[f64]) -> Result<f64> {
    let entries = aggregate(rows)?;
    check_eval_args(fm, l2, weights)?;
    let feats = PairFeatures::build(fm);
    let problem = LogisticProblem {
        feats: &feats,
        entries: &entries,
        l2,
    };
    Ok(problem.loss(weights))
}

/// Analytic gradient of [`logistic_loss`] at arbitrary weights.
pub fn logistic_loss_gradient(
    rows: &[TrainRow],
    fm: &FeatureMap,
    l2: f64,
    weights: &[f64],
) -> Result<Vec<f64>> {
    let entries = aggregate(rows)?;
    check_eval_args(fm, l2, weights)?;
    let feats = PairFeatures::build(fm);
    let problem = LogisticProblem {
        feats: &feats,
        entries: &entries,
        l2,
    };
    let mut grad = vec![0.0; fm.dim()];
    problem.loss_and_grad(weights, &mut grad);
    Ok(grad)
}

fn check_eval_args(fm: &FeatureMap, l2: f64, weights: &[f64]) -> Result<()> {
    if weights.len() != fm.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} weights, got {}",
            fm.dim(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    if !l2.is_finite() || l2 < 0.0 {
        return Err(Error::InvalidArgument(
            "l2 must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

// ── Model serialization ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    feature_mask: Vec<bool>,
    weights: Vec<f64>,
    train_meta: TrainMeta,
}

/// Serializes a trained model with its fit metadata.
pub fn model_to_json(model: &LinearModel, meta: &TrainMeta) -> String {
    let doc = ModelDocument {
        feature_mask: model.feature_map().flags().to_vec(),
        weights: model.weights().to_vec(),
        train_meta: meta.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

/// Inverse of [`model_to_json`].
pub fn model_from_json(text: &str) -> Result<(LinearModel, TrainMeta)> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.feature_mask.len() != CONTEXT_BITS + ACTION_BITS {
        return Err(Error::InvalidArgument(format!(
            "feature_mask must have {} entries, got {}",
            CONTEXT_BITS + ACTION_BITS,
            doc.feature_mask.len()
        )));
    }
    let mut flags = [false; CONTEXT_BITS + ACTION_BITS];
    flags.copy_from_slice(&doc.feature_mask);
    let model = LinearModel::new(FeatureMap::from_flags(flags), doc.weights)?;
    Ok((model, doc.train_meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(i: usize) -> Context {
        Context::from_index(i)
    }

    fn act(i: usize) -> Action {
        Action::from_index(i)
    }

    #[test]
    fn full_map_layout_is_context_action_products_bias() {
        let fm = FeatureMap::full();
        assert_eq!(fm.dim(), 48);

        let zeroes = fm.featurize(ctx(0), act(0));
        assert_eq!(zeroes.len(), 48);
        assert_eq!(zeroes[47], 1.0);
        assert!(zeroes[..47].iter().all(|&f| f == 0.0));

        let ones = fm.featurize(ctx(127), act(31));
        assert!(ones.iter().all(|&f| f == 1.0));

        // Context bit 2 and action bit 1 active: expect positions 2 (context
        // slot), 8 (action slot 7 + 1), and 12 + 2 * 5 + 1 = 23 (product).
        let v = fm.featurize(ctx(1 << 2), act(1 << 1));
        let active: Vec<usize> = (0..48).filter(|&i| v[i] == 1.0).collect();
        assert_eq!(active, vec![2, 8, 23, 47]);
    }

    #[test]
    fn masked_map_dimension_and_layout() {
        let fm = FeatureMap::new(
            [true, false, true, false, false, false, false],
            [true, false, false, false, false],
        );
        assert_eq!(fm.dim(), 2 + 1 + 2 + 1);
        // Hidden bits never influence the features.
        let a = fm.featurize(ctx(0b0000101), act(0b00001));
        let b = fm.featurize(ctx(0b1111111), act(0b11111));
        assert_eq!(a, b);
        assert_eq!(a, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn flags_round_trip() {
        let fm = FeatureMap::new(
            [true, false, true, true, false, true, false],
            [false, true, true, false, true],
        );
        assert_eq!(FeatureMap::from_flags(fm.flags()), fm);
    }

    #[test]
    fn zero_model_predicts_exactly_half() {
        let m = LinearModel::zeros(FeatureMap::full());
        assert_eq!(m.predict_prob(ctx(77), act(13)), 0.5);
    }

    #[test]
    fn bias_only_model_matches_sigmoid() {
        let fm = FeatureMap::full();
        let mut w = vec![0.0; fm.dim()];
        w[fm.dim() - 1] = 10.0;
        let m = LinearModel::new(fm, w).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((m.predict_prob(ctx(0), act(0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn model_rejects_bad_weights() {
        let fm = FeatureMap::full();
        assert!(LinearModel::new(fm, vec![0.0; 5]).is_err());
        assert!(LinearModel::new(fm, vec![f64::NAN; 48]).is_err());
    }

    fn toy_rows() -> Vec<TrainRow> {
        // Positive iff action bit 0 is set, across a few contexts.
        let mut rows = Vec::new();
        for xi in [0usize, 3, 17, 64, 127] {
            for ai in 0..NUM_ACTIONS {
                rows.push(TrainRow::new(ctx(xi), act(ai), ai & 1 == 1));
            }
        }
        rows
    }

    #[test]
    fn separable_data_learns_the_separating_bit() {
        let fit =
            train_logistic(&toy_rows(), &FeatureMap::full(), &TrainConfig::default()).unwrap();
        for xi in [0usize, 3, 17] {
            let on = fit.model.predict_prob(ctx(xi), act(1));
            let off = fit.model.predict_prob(ctx(xi), act(0));
            assert!(on > 0.9, "on = {on}");
            assert!(off < 0.1, "off = {off}");
        }
    }

    #[test]
    fn all_positive_targets_push_bias_up() {
        let rows: Vec<TrainRow> = (0..8)
            .map(|i| TrainRow::new(ctx(i), act(i % NUM_ACTIONS), true))
            .collect();
        let cfg = TrainConfig {
            l2: 1.0,
            ..TrainConfig::default()
        };
        let fit = train_logistic(&rows, &FeatureMap::full(), &cfg).unwrap();
        let bias = fit.model.weights()[47];
        assert!(bias > 0.0, "bias = {bias}");
        assert!(fit.model.predict_prob(ctx(0), act(0)) > 0.5);
    }

    #[test]
    fn perfectly_conflicting_targets_predict_half() {
        let rows = vec![
            TrainRow::new(ctx(9), act(4), true),
            TrainRow::new(ctx(9), act(4), false),
        ];
        let cfg = TrainConfig {
            l2: 1e-2,
            ..TrainConfig::default()
        };
        let fit = train_logistic(&rows, &FeatureMap::full(), &cfg).unwrap();
        assert!((fit.model.predict_prob(ctx(9), act(4)) - 0.5).abs() < 1e-6);
        assert!(fit.meta.converged);
    }

    #[test]
    fn duplicated_row_equals_doubled_weight_exactly() {
        let mut doubled = toy_rows();
        let mut weighted = toy_rows();
        doubled.extend(toy_rows());
        for r in &mut weighted {
            r.weight = 2.0;
        }
        let cfg = TrainConfig::default();
        let a = train_logistic(&doubled, &FeatureMap::full(), &cfg).unwrap();
        let b = train_logistic(&weighted, &FeatureMap::full(), &cfg).unwrap();
        // Aggregation folds both datasets into identical buckets, so the
        // optimizer trajectories are bit-for-bit the same.
        assert_eq!(a.model.weights(), b.model.weights());
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let mut rows = toy_rows();
        rows.push(TrainRow::weighted(ctx(50), act(30), true, 0.0));
        let base =
            train_logistic(&toy_rows(), &FeatureMap::full(), &TrainConfig::default()).unwrap();
        let padded = train_logistic(&rows, &FeatureMap::full(), &TrainConfig::default()).unwrap();
        assert_eq!(base.model.weights(), padded.model.weights());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig::default();
        let a = train_logistic(&toy_rows(), &FeatureMap::full(), &cfg).unwrap();
        let b = train_logistic(&toy_rows(), &FeatureMap::full(), &cfg).unwrap();
        assert_eq!(a.model.weights(), b.model.weights());
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn empty_and_invalid_inputs_error() {
        let fm = FeatureMap::full();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_logistic(&[], &fm, &cfg),
            Err(Error::EmptyInput(_))
        ));
        let zero_only = vec![TrainRow::weighted(ctx(0), act(0), true, 0.0)];
        assert!(matches!(
            train_logistic(&zero_only, &fm, &cfg),
            Err(Error::EmptyInput(_))
        ));
        let negative = vec![TrainRow::weighted(ctx(0), act(0), true, -1.0)];
        assert!(matches!(
            train_logistic(&negative, &fm, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig {
            l2: -1.0,
            ..TrainConfig::default()
        };
        assert!(train_logistic(&toy_rows(), &FeatureMap::full(), &bad).is_err());
        let bad = TrainConfig {
            tol: 0.0,
            ..TrainConfig::default()
        };
        assert!(train_logistic(&toy_rows(), &FeatureMap::full(), &bad).is_err());
        let bad = TrainConfig {
            step_rule: StepRule::Fixed(-0.5),
            ..TrainConfig::default()
        };
        assert!(train_logistic(&toy_rows(), &FeatureMap::full(), &bad).is_err());
    }

    #[test]
    fn enormous_fixed_step_reports_non_finite_objective() {
        let cfg = TrainConfig {
            step_rule: StepRule::Fixed(1e300),
            ..TrainConfig::default()
        };
        match train_logistic(&toy_rows(), &FeatureMap::full(), &cfg) {
            Err(Error::NonFiniteObjective { .. }) => {}
            other => panic!("expected non-finite objective, got {other:?}"),
        }
    }

    #[test]
    fn backtracking_loss_history_never_increases() {
        let fit =
            train_logistic(&toy_rows(), &FeatureMap::full(), &TrainConfig::default()).unwrap();
        for pair in fit.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {pair:?}");
        }
    }

    /// Coordinate-descent minimizer sharing nothing with the production
    /// optimizer except the objective evaluator.
    fn coordinate_descent(rows: &[TrainRow], fm: &FeatureMap, l2: f64) -> Vec<f64> {
        let dim = fm.dim();
        let mut w = vec![0.0; dim];
        let mut radius = 2.0;
        let mut rounds = 0;
        // Shrink the scan radius only when a full sweep stops improving,
        // so correlated coordinates still get time to settle.
        while radius > 1e-10 && rounds < 20_000 {
            rounds += 1;
            let mut improved = false;
            for k in 0..dim {
                let mut best = logistic_loss(rows, fm, l2, &w).unwrap();
                let mut best_v = w[k];
                for step in 1..=8 {
                    for sign in [-1.0, 1.0] {
                        let mut trial = w.clone();
                        trial[k] = w[k] + sign * radius * f64::from(step) / 8.0;
                        let loss = logistic_loss(rows, fm, l2, &trial).unwrap();
                        if loss < best {
                            best = loss;
                            best_v = trial[k];
                        }
                    }
                }
                if best_v != w[k] {
                    w[k] = best_v;
                    improved = true;
                }
            }
            if !improved {
                radius *= 0.5;
            }
        }
        w
    }

    #[test]
    fn optimum_matches_independent_coordinate_descent() {
        // Tiny masked problem so the brute-force search is exhaustive
        // enough to be trusted.
        let fm = FeatureMap::new(
            [true, true, false, false, false, false, false],
            [true, false, false, false, false],
        );
        let rows = vec![
            TrainRow::new(ctx(0b0000011), act(0b00001), true),
            TrainRow::new(ctx(0b0000001), act(0b00000), false),
            TrainRow::new(ctx(0b0000010), act(0b00001), true),
            TrainRow::new(ctx(0b0000000), act(0b00001), false),
            TrainRow::new(ctx(0b0000011), act(0b00000), false),
            TrainRow::weighted(ctx(0b0000010), act(0b00000), true, 2.0),
        ];
        let l2 = 0.05;
        let cfg = TrainConfig {
            l2,
            ..TrainConfig::default()
        };
        let gd = train_logistic(&rows, &fm, &cfg).unwrap();
        let newton = train_logistic(
            &rows,
            &fm,
            &TrainConfig {
                step_rule: StepRule::Newton,
                max_iters: 100,
                ..cfg.clone()
            },
        )
        .unwrap();
        let cd = coordinate_descent(&rows, &fm, l2);

        let l_gd = logistic_loss(&rows, &fm, l2, gd.model.weights()).unwrap();
        let l_newton = logistic_loss(&rows, &fm, l2, newton.model.weights()).unwrap();
        let l_cd = logistic_loss(&rows, &fm, l2, &cd).unwrap();
        assert!(l_gd <= l_cd + 1e-8, "gd {l_gd} vs cd {l_cd}");
        assert!((l_gd - l_cd).abs() < 1e-6, "gd {l_gd} vs cd {l_cd}");
        assert!(
            (l_newton - l_gd).abs() < 1e-9,
            "newton {l_newton} vs gd {l_gd}"
        );
        assert!(gd.meta.converged && newton.meta.converged);
    }

    #[test]
    fn newton_and_backtracking_reach_the_same_optimum() {
        let cfg_gd = TrainConfig {
            l2: 0.01,
            max_iters: 20_000,
            ..TrainConfig::default()
        };
        let cfg_newton = TrainConfig {
            l2: 0.01,
            max_iters: 100,
            step_rule: StepRule::Newton,
            ..TrainConfig::default()
        };
        let gd = train_logistic(&toy_rows(), &FeatureMap::full(), &cfg_gd).unwrap();
        let newton = train_logistic(&toy_rows(), &FeatureMap::full(), &cfg_newton).unwrap();
        let l_gd =
            logistic_loss(&toy_rows(), &FeatureMap::full(), 0.01, gd.model.weights()).unwrap();
        let l_n = logistic_loss(
            &toy_rows(),
            &FeatureMap::full(),
            0.01,
            newton.model.weights(),
        )
        .unwrap();
        assert!((l_gd - l_n).abs() < 1e-7, "gd {l_gd} vs newton {l_n}");
    }

    #[test]
    fn finite_differences_confirm_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let fm = FeatureMap::full();
        let rows: Vec<TrainRow> = (0..60)
            .map(|_| {
                TrainRow::weighted(
                    ctx(rng.random_range(0..NUM_CONTEXTS)),
                    act(rng.random_range(0..NUM_ACTIONS)),
                    rng.random::<f64>() < 0.4,
                    rng.random_range(0.1..3.0),
                )
            })
            .collect();
        let w: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = logistic_loss_gradient(&rows, &fm, 0.3, &w).unwrap();
        let eps = 1e-6;
        for k in (0..fm.dim()).step_by(7) {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[k] += eps;
            lo[k] -= eps;
            let fd = (logistic_loss(&rows, &fm, 0.3, &hi).unwrap()
                - logistic_loss(&rows, &fm, 0.3, &lo).unwrap())
                / (2.0 * eps);
            let denom = grad[k].abs().max(1.0);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-5,
                "coordinate {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn raising_an_active_weight_raises_the_prediction() {
        let fm = FeatureMap::full();
        let mut w = vec![0.1; fm.dim()];
        let m1 = LinearModel::new(fm, w.clone()).unwrap();
        w[0] += 1.0;
        let m2 = LinearModel::new(fm, w).unwrap();
        let x = ctx(0b0000001);
        let a = act(0);
        assert!(m2.predict_prob(x, a) > m1.predict_prob(x, a));
    }

    #[test]
    fn shifting_the_bias_preserves_per_context_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fm = FeatureMap::full();
        let w: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut shifted = w.clone();
        shifted[fm.dim() - 1] += 3.0;
        let m = LinearModel::new(fm, w).unwrap();
        let ms = LinearModel::new(fm, shifted).unwrap();
        for xi in [0usize, 31, 96] {
            let best = |model: &LinearModel| -> usize {
                (0..NUM_ACTIONS)
                    .max_by(|&p, &q| {
                        model
                            .score(ctx(xi), act(p))
                            .partial_cmp(&model.score(ctx(xi), act(q)))
                            .unwrap()
                    })
                    .unwrap()
            };
            assert_eq!(best(&m), best(&ms));
        }
    }

    #[test]
    fn model_json_round_trip() {
        let fit =
            train_logistic(&toy_rows(), &FeatureMap::full(), &TrainConfig::default()).unwrap();
        let text = model_to_json(&fit.model, &fit.meta);
        assert!(text.contains("\"feature_mask\""));
        assert!(text.contains("\"weights\""));
        assert!(text.contains("\"train_meta\""));
        let (model, meta) = model_from_json(&text).unwrap();
        assert_eq!(model, fit.model);
        assert_eq!(meta, fit.meta);
    }

    #[test]
    fn step_rule_serialization_forms() {
        assert_eq!(
            serde_json::to_string(&StepRule::Backtracking).unwrap(),
            "\"backtracking\""
        );
        assert_eq!(
            serde_json::to_string(&StepRule::Newton).unwrap(),
            "\"newton\""
        );
        assert_eq!(
            serde_json::to_string(&StepRule::Fixed(0.5)).unwrap(),
            "{\"fixed\":0.5}"
        );
        let cfg: TrainConfig = serde_json::from_str("{\"step_rule\":\"newton\"}").unwrap();
        assert_eq!(cfg.step_rule, StepRule::Newton);
        assert_eq!(cfg.max_iters, TrainConfig::default().max_iters);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dimension_formula_holds_for_every_mask(flags in prop::array::uniform12(any::<bool>())) {
            let fm = FeatureMap::from_flags(flags);
            let cx = flags[..7].iter().filter(|&&v| v).count();
            let ca = flags[7..].iter().filter(|&&v| v).count();
            prop_assert_eq!(fm.dim(), cx + ca + cx * ca + 1);
            let v = fm.featurize(Context::from_index(93), Action::from_index(21));
            prop_assert_eq!(v.len(), fm.dim());
            prop_assert_eq!(v[fm.dim() - 1], 1.0);
            prop_assert!(v.iter().all(|&f| f == 0.0 || f == 1.0));
        }

        #[test]
        fn sparse_rows_agree_with_dense_featurize(
            flags in prop::array::uniform12(any::<bool>()),
            xi in 0usize..NUM_CONTEXTS,
            ai in 0usize..NUM_ACTIONS,
        ) {
            let fm = FeatureMap::from_flags(flags);
            let feats = PairFeatures::build(&fm);
            let dense = fm.featurize(Context::from_index(xi), Action::from_index(ai));
            let sparse: Vec<usize> = feats
                .row(xi * NUM_ACTIONS + ai)
                .iter()
                .map(|&i| i as usize)
                .collect();
            let from_dense: Vec<usize> = (0..dense.len()).filter(|&i| dense[i] == 1.0).collect();
            prop_assert_eq!(sparse, from_dense);
        }
    }
}
