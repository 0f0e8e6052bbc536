//! Experiment harness: generates environments, runs the two-stage logging
//! protocol, trains every learner on the second dataset, and scores the
//! resulting policies by exact enumeration.
//!
//! The protocol for one (environment, sample size) cell:
//!
//! 1. collect `n` interactions under the uniform policy,
//! 2. fit a first-stage reward model on them,
//! 3. collect `n` more interactions under epsilon-greedy exploitation of
//!    that model, which is the logging policy the learners actually face,
//! 4. train every configured learner on the second dataset and report the
//!    normalized value of its greedy policy, rescaled so the oracle-greedy
//!    policy scores 1 and the oracle-worst policy scores 0.
//!
//! The smoothed importance-weighting learner is scored twice, once as the
//! softmax policy its objective optimizes and once as the greedy policy of
//! its score model; the greedy row is the one comparable to the others.
//!
//! Ridge strength is tuned per cell over [`L2_GRID`] by validation log-loss
//! on a 20% held-out split, and the smoothing strength over [`LAMBDA_GRID`]
//! by a pessimistic held-out importance-weighted value estimate (mean minus
//! one standard error) of each candidate's greedy policy. Chosen values are
//! recorded in the output rows.
//!
//! Every random stream is derived from the master seed with a published
//! mixing function, so an experiment is a pure function of its
//! configuration: reruns are byte-identical regardless of worker-thread
//! count, and changing one cell's sample size never perturbs the
//! environments or the data of other cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    generate_environment, EnvConfig, Environment, ACTION_BITS, CONTEXT_BITS, NUM_CONTEXTS,
};
use crate::error::{Error, Result};
use crate::glm::{
    logistic_loss, train_logistic, FeatureMap, FitResult, LinearModel, StepRule, TrainConfig,
    TrainRow,
};
use crate::learners::{greedy_policy, train_ls_ips, LearnerKind, LearnerSpec, LsIpsFit};
use crate::pipeline::{
    collect_dataset, csi_transform_expect, csi_transform_sampling, LoggedSample,
};
use crate::policy::Policy;

/// Ridge strengths swept when tuning a logistic learner.
pub const L2_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Smoothing strengths swept when tuning the importance-weighting learner.
pub const LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Header line of the per-cell CSV report.
pub const CSV_HEADER: &str =
    "env_seed,n_samples,learner,normalized_reward,l2,extra_hyper,converged";

// ── Seed derivation ────────────────────────────────────────────────────────

/// SplitMix64 finalizer: a bijective mixer with full avalanche.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of one random stream from the experiment coordinates.
///
/// The construction absorbs each coordinate into the state with an odd
/// offset followed by [`mix64`]:
///
/// ```text
/// h = mix64(master_seed ^ GOLDEN)
/// for w in [env_index, stage_tag, size_index]:
///     h = mix64(h + GOLDEN + w)
/// ```
///
/// Environment generation always uses `stage_tag = 0, size_index = 0`, so
/// the set of environments depends only on `master_seed` and the number of
/// environments, never on the sample sizes.
pub fn child_seed(master_seed: u64, env_index: u64, stage_tag: u64, size_index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = mix64(master_seed ^ GOLDEN);
    for w in [env_index, stage_tag, size_index] {
        h = mix64(h.wrapping_add(GOLDEN).wrapping_add(w));
    }
    h
}

const TAG_ENV: u64 = 0;
const TAG_FIRST_COLLECT: u64 = 1;
const TAG_FIRST_STAGE: u64 = 2;
const TAG_SECOND_COLLECT: u64 = 3;
/// Per-learner streams start here, offset by the learner kind's slot, so a
/// learner's randomness is identical whichever other learners run beside it.
const TAG_LEARNER_BASE: u64 = 8;

fn kind_slot(kind: LearnerKind) -> u64 {
    match kind {
        LearnerKind::Dm => 0,
        LearnerKind::CsiSampling => 1,
        LearnerKind::CsiExpect => 2,
        LearnerKind::LsIps => 3,
    }
}

/// Coordinates from which every stream of one cell is derived.
#[derive(Debug, Clone, Copy)]
struct CellSeeds {
    master: u64,
    env_index: u64,
    size_index: u64,
}

impl CellSeeds {
    fn rng(self, stage_tag: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(child_seed(
            self.master,
            self.env_index,
            stage_tag,
            self.size_index,
        ))
    }
}

// ── Configuration ──────────────────────────────────────────────────────────

/// Which learner fits the first-stage model that defines the logging policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStage {
    Dm,
    CsiExpect,
    /// Even-numbered environments use the direct method, odd-numbered ones
    /// the expectation-variant counterfactual learner, so aggregates average
    /// over both logging regimes.
    Alternate,
}

/// Which experiment layout to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Every configured learner on full features.
    Full,
    /// Fixed four-learner comparison on full versus masked features.
    FeatureSubset,
}

/// Report rendering format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Markdown,
}

/// Full description of an experiment. The JSON config file mirrors these
/// field names; omitted fields take the defaults below.
///
/// ```json
/// {
///   "master_seed": 7,
///   "n_environments": 20,
///   "sample_sizes": [10000, 100000],
///   "learners": ["dm", "csi_sampling", "csi_expect", "ls_ips"]
/// }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_environments: usize,
    pub sample_sizes: Vec<usize>,
    /// Exploration rate of the second-stage logging policy.
    pub epsilon: f64,
    pub first_stage_learner: FirstStage,
    pub scenario: Scenario,
    /// Feature visibility flags for the subset scenario, context bits then
    /// action bits; `false` hides the feature from the subset learners.
    pub subset_mask: Option<Vec<bool>>,
    /// Learners evaluated in the full scenario. The subset scenario always
    /// runs its fixed four-learner comparison instead.
    pub learners: Vec<LearnerKind>,
    pub env: EnvConfig,
    /// Optimizer settings for every logistic fit, first stage included.
    /// The tuned ridge strength overrides `train.l2` cell by cell.
    pub train: TrainConfig,
    /// Optimizer settings for the smoothed importance-weighting ascent.
    pub ls_train: TrainConfig,
    /// Report destination; `None` means standard output.
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: 20 environments at sizes 10K and 100K.
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_environments: 20,
            sample_sizes: vec![10_000, 100_000],
            epsilon: 0.05,
            first_stage_learner: FirstStage::Alternate,
            scenario: Scenario::Full,
            subset_mask: None,
            learners: vec![
                LearnerKind::Dm,
                LearnerKind::CsiSampling,
                LearnerKind::CsiExpect,
                LearnerKind::LsIps,
            ],
            env: EnvConfig::default(),
            // Newton steps instead of the library default backtracking
            // descent: the bench fits thousands of regressions per run and
            // both reach the same optimum of this convex objective.
            train: TrainConfig {
                l2: 1e-3,
                max_iters: 200,
                tol: 1e-8,
                step_rule: StepRule::Newton,
            },
            // The smoothed-importance ascent moves one gradient step per
            // iteration, so it needs a far larger budget than the Newton
            // logistic fits; the deduplicated objective keeps each step cheap.
            ls_train: TrainConfig {
                l2: 0.0,
                max_iters: 3000,
                tol: 1e-6,
                step_rule: StepRule::Backtracking,
            },
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    /// Scales the run up from desk size: 100 environments at sizes 10K,
    /// 100K, and 500K.
    pub fn apply_large_scale(&mut self) {
        self.n_environments = 100;
        self.sample_sizes = vec![10_000, 100_000, 500_000];
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_environments == 0 {
            return Err(Error::InvalidConfig(
                "n_environments must be at least 1".into(),
            ));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::InvalidConfig(
                "sample_sizes must not be empty".into(),
            ));
        }
        for (i, &n) in self.sample_sizes.iter().enumerate() {
            if n < 100 {
                return Err(Error::InvalidConfig(format!(
                    "sample size {n} at position {i} is below the minimum of 100"
                )));
            }
            if self.sample_sizes[..i].contains(&n) {
                return Err(Error::InvalidConfig(format!("duplicate sample size {n}")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 || self.epsilon > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.learners.is_empty() {
            return Err(Error::InvalidConfig("learners must not be empty".into()));
        }
        for (i, &k) in self.learners.iter().enumerate() {
            if self.learners[..i].contains(&k) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate learner {}",
                    k.as_str()
                )));
            }
        }
        if let Some(mask) = &self.subset_mask {
            if mask.len() != CONTEXT_BITS + ACTION_BITS {
                return Err(Error::InvalidConfig(format!(
                    "subset_mask must list {} flags, got {}",
                    CONTEXT_BITS + ACTION_BITS,
                    mask.len()
                )));
            }
        } else if self.scenario == Scenario::FeatureSubset {
            return Err(Error::InvalidConfig(
                "the feature_subset scenario requires subset_mask".into(),
            ));
        }
        self.env.validate()?;
        self.train.validate()?;
        self.ls_train.validate()?;
        Ok(())
    }

    /// The masked feature map of the subset scenario.
    pub fn subset_feature_map(&self) -> Result<FeatureMap> {
        let mask = self.subset_mask.as_ref().ok_or_else(|| {
            Error::InvalidConfig("the feature_subset scenario requires subset_mask".into())
        })?;
        if mask.len() != CONTEXT_BITS + ACTION_BITS {
            return Err(Error::InvalidConfig(format!(
                "subset_mask must list {} flags, got {}",
                CONTEXT_BITS + ACTION_BITS,
                mask.len()
            )));
        }
        let mut flags = [false; CONTEXT_BITS + ACTION_BITS];
        flags.copy_from_slice(mask);
        Ok(FeatureMap::from_flags(flags))
    }
}

// ── Results ────────────────────────────────────────────────────────────────

/// One scored learner in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerRow {
    pub env_seed: u64,
    pub n_samples: usize,
    pub learner: String,
    pub normalized_reward: f64,
    /// Tuned ridge strength; absent for non-logistic rows.
    pub l2: Option<f64>,
    /// Tuned smoothing strength; absent for non-importance-weighting rows.
    pub extra_hyper: Option<f64>,
    pub converged: bool,
}

/// A cell (or one learner within a cell) that could not be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub env_seed: u64,
    pub n_samples: usize,
    pub message: String,
}

/// Mean and spread of one learner's score at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n_samples: usize,
    pub learner: String,
    pub mean: f64,
    /// Standard error over environments; `None` with fewer than two values.
    pub std_error: Option<f64>,
    pub n_environments: usize,
}

/// Everything an experiment produced: per-cell rows in canonical order,
/// aggregates over environments, and any recorded failures.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<LearnerRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentResult {
    /// Sorts rows into canonical order and derives the aggregate table.
    fn assemble(mut rows: Vec<LearnerRow>, mut failures: Vec<CellFailure>) -> Self {
        rows.sort_by(|a, b| {
            (a.env_seed, a.n_samples, a.learner.as_str()).cmp(&(
                b.env_seed,
                b.n_samples,
                b.learner.as_str(),
            ))
        });
        failures.sort_by(|a, b| {
            (a.env_seed, a.n_samples, a.message.as_str()).cmp(&(
                b.env_seed,
                b.n_samples,
                b.message.as_str(),
            ))
        });
        let mut groups: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            groups
                .entry((r.n_samples, r.learner.as_str()))
                .or_default()
                .push(r.normalized_reward);
        }
        let aggregates = groups
            .into_iter()
            .map(|((n_samples, learner), vals)| {
                let k = vals.len();
                let mean = vals.iter().sum::<f64>() / k as f64;
                let std_error = (k > 1).then(|| {
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
                    (var / k as f64).sqrt()
                });
                AggregateRow {
                    n_samples,
                    learner: learner.to_string(),
                    mean,
                    std_error,
                    n_environments: k,
                }
            })
            .collect();
        Self {
            rows,
            aggregates,
            failures,
        }
    }

    /// Renders the per-cell rows as CSV with the fixed column set.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.env_seed,
                r.n_samples,
                r.learner,
                r.normalized_reward,
                fmt_opt(r.l2),
                fmt_opt(r.extra_hyper),
                r.converged
            );
        }
        out
    }

    /// Renders the aggregate table (learners by sample sizes) plus any
    /// failures as markdown.
    pub fn to_markdown(&self) -> String {
        let sizes: Vec<usize> = {
            let mut s: Vec<usize> = self.aggregates.iter().map(|a| a.n_samples).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let mut learners: Vec<&str> = self.aggregates.iter().map(|a| a.learner.as_str()).collect();
        learners.sort_unstable();
        learners.dedup();
        let cell: BTreeMap<(&str, usize), &AggregateRow> = self
            .aggregates
            .iter()
            .map(|a| ((a.learner.as_str(), a.n_samples), a))
            .collect();

        let mut out = String::from("# Benchmark report\n\n");
        let _ = writeln!(
            out,
            "Normalized reward of each learner's greedy policy, mean over \
             environments with its standard error.\n"
        );
        let mut header = String::from("| learner |");
        let mut rule = String::from("| --- |");
        for &n in &sizes {
            let _ = write!(header, " n={n} |");
            rule.push_str(" --- |");
        }
        out.push_str(&header);
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for learner in &learners {
            let _ = write!(out, "| {learner} |");
            for &n in &sizes {
                match cell.get(&(*learner, n)) {
                    Some(a) => {
                        let se = a
                            .std_error
                            .map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}"));
                        let _ = write!(out, " {:.4} +/- {se} |", a.mean);
                    }
                    None => {
                        let _ = write!(out, " n/a |");
                    }
                }
            }
            out.push('\n');
        }
        if !self.failures.is_empty() {
            let _ = write!(out, "\n## Failures ({})\n\n", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(
                    out,
                    "- env_seed {}, n={}: {}",
                    f.env_seed, f.n_samples, f.message
                );
            }
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Markdown => self.to_markdown(),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

// ── Hyperparameter tuning ──────────────────────────────────────────────────

/// Shuffles `0..len` and splits off the first fifth as validation indices.
fn holdout_split(len: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let n_val = len / 5;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Sweeps [`L2_GRID`] by validation log-loss, then refits on all rows with
/// the winner. Returns the refit and the chosen ridge strength. Datasets too
/// small to split (fewer than five rows) skip the sweep and keep `base.l2`.
fn tune_logistic(
    rows: &[TrainRow],
    fm: &FeatureMap,
    base: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(FitResult, f64)> {
    let (train_idx, val_idx) = holdout_split(rows.len(), rng);
    if val_idx.is_empty() || train_idx.is_empty() {
        let fit = train_logistic(rows, fm, base)?;
        return Ok((fit, base.l2));
    }
    let train_rows: Vec<TrainRow> = train_idx.iter().map(|&i| rows[i]).collect();
    let val_rows: Vec<TrainRow> = val_idx.iter().map(|&i| rows[i]).collect();
    let mut best: Option<(f64, f64)> = None;
    for &l2 in &L2_GRID {
        let cfg = TrainConfig { l2, ..base.clone() };
        let fit = train_logistic(&train_rows, fm, &cfg)?;
        // Unregularized loss: the penalty would skew comparisons across l2.
        let val_loss = logistic_loss(&val_rows, fm, 0.0, fit.model.weights())?;
        if best.is_none_or(|(b, _)| val_loss < b) {
            best = Some((val_loss, l2));
        }
    }
    let (_, l2) = best.expect("grid is non-empty");
    let cfg = TrainConfig { l2, ..base.clone() };
    let fit = train_logistic(rows, fm, &cfg)?;
    Ok((fit, l2))
}

/// Importance-weighted value estimate together with its Monte-Carlo standard
/// error. Rows with zero reward contribute zero-valued terms and so count
/// toward both the mean and the spread.
fn ips_estimate_with_se(rows: &[LoggedSample], policy: &Policy) -> (f64, f64) {
    let mut cache: Vec<Option<[f64; crate::env::NUM_ACTIONS]>> = vec![None; NUM_CONTEXTS];
    let n = rows.len() as f64;
    let mut acc = 0.0;
    let mut acc_sq = 0.0;
    for r in rows {
        if !r.reward {
            continue;
        }
        let probs = cache[r.context.index()].get_or_insert_with(|| policy.probs(r.context));
        let term = probs[r.action.index()] / r.propensity;
        acc += term;
        acc_sq += term * term;
    }
    let mean = acc / n;
    if rows.len() < 2 {
        return (mean, 0.0);
    }
    let var = (acc_sq / n - mean * mean).max(0.0) / (n - 1.0);
    (mean, var.sqrt())
}

/// Sweeps [`LAMBDA_GRID`] by a lower confidence bound (mean minus one
/// standard error) of the held-out importance-weighted value of the greedy
/// policy read off each candidate fit, and returns the winning candidate
/// itself. The pessimistic bound keeps a noisy validation split from
/// selecting an under-smoothed policy that chases high-weight exploration
/// flukes. Unlike the convex logistic fits, the ascent objective is not
/// concave in the scores, so a refit on the full data could land in a
/// different basin than the fit that won validation; the validated artifact
/// is the one reported.
fn tune_ls(
    data: &[LoggedSample],
    spec: &LearnerSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(LsIpsFit, f64)> {
    let default_lambda = spec.ls_lambda.expect("ls spec carries a default lambda");
    let (train_idx, val_idx) = holdout_split(data.len(), rng);
    if val_idx.is_empty() || train_idx.is_empty() {
        let fit = train_ls_ips(data, spec)?;
        return Ok((fit, default_lambda));
    }
    let train_rows: Vec<LoggedSample> = train_idx.iter().map(|&i| data[i]).collect();
    let val_rows: Vec<LoggedSample> = val_idx.iter().map(|&i| data[i]).collect();
    let mut best: Option<(f64, f64, LsIpsFit)> = None;
    for &lambda in &LAMBDA_GRID {
        let candidate = LearnerSpec {
            ls_lambda: Some(lambda),
            ..spec.clone()
        };
        let fit = train_ls_ips(&train_rows, &candidate)?;
        let (value, se) = ips_estimate_with_se(&val_rows, &greedy_policy(&fit.model));
        let bound = value - se;
        if best.as_ref().is_none_or(|(b, _, _)| bound > *b) {
            best = Some((bound, lambda, fit));
        }
    }
    let (_, lambda, fit) = best.expect("grid is non-empty");
    Ok((fit, lambda))
}

// ── Cell execution ─────────────────────────────────────────────────────────

/// One learner to run in a cell: its report name, algorithm, and features.
#[derive(Debug, Clone, Copy)]
struct LearnerTask {
    name: &'static str,
    kind: LearnerKind,
    fm: FeatureMap,
}

fn full_tasks(learners: &[LearnerKind]) -> Vec<LearnerTask> {
    learners
        .iter()
        .map(|&kind| LearnerTask {
            name: kind.as_str(),
            kind,
            fm: FeatureMap::full(),
        })
        .collect()
}

fn subset_tasks(subset_fm: FeatureMap) -> Vec<LearnerTask> {
    let full = FeatureMap::full();
    vec![
        LearnerTask {
            name: "dm_full",
            kind: LearnerKind::Dm,
            fm: full,
        },
        LearnerTask {
            name: "dm_subset",
            kind: LearnerKind::Dm,
            fm: subset_fm,
        },
        LearnerTask {
            name: "csi_full",
            kind: LearnerKind::CsiExpect,
            fm: full,
        },
        LearnerTask {
            name: "csi_subset",
            kind: LearnerKind::CsiExpect,
            fm: subset_fm,
        },
    ]
}

fn resolve_first_stage(choice: FirstStage, env_ordinal: u64) -> LearnerKind {
    match choice {
        FirstStage::Dm => LearnerKind::Dm,
        FirstStage::CsiExpect => LearnerKind::CsiExpect,
        FirstStage::Alternate => {
            if env_ordinal.is_multiple_of(2) {
                LearnerKind::Dm
            } else {
                LearnerKind::CsiExpect
            }
        }
    }
}

/// Builds the logistic training rows for one learner on the logged data.
/// The sampling transform draws its counterfactuals from `rng`; the other
/// builders are deterministic.
fn build_rows<R: rand::Rng + ?Sized>(
    data: &[LoggedSample],
    pi0: &Policy,
    kind: LearnerKind,
    rng: &mut R,
) -> Result<Vec<TrainRow>> {
    let examples = match kind {
        LearnerKind::Dm => {
            return Ok(data
                .iter()
                .map(|r| TrainRow::new(r.context, r.action, r.reward))
                .collect())
        }
        LearnerKind::CsiSampling => csi_transform_sampling(data, pi0, rng),
        LearnerKind::CsiExpect => csi_transform_expect(data, pi0),
        LearnerKind::LsIps => {
            return Err(Error::InvalidArgument(
                "the importance-weighting learner trains on logged rows directly".into(),
            ))
        }
    };
    if examples.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(examples
        .iter()
        .map(|e| TrainRow::weighted(e.context, e.action, e.target, e.weight))
        .collect())
}

/// Trains one learner on the second-stage data and scores its policies.
fn score_learner(
    env: &Environment,
    data: &[LoggedSample],
    logging: &Policy,
    task: LearnerTask,
    cfg: &ExperimentConfig,
    seeds: CellSeeds,
    n: usize,
) -> Result<Vec<LearnerRow>> {
    let mut rng = seeds.rng(TAG_LEARNER_BASE + kind_slot(task.kind));
    let row = |learner: &str, value: f64, l2, extra, converged| LearnerRow {
        env_seed: env.seed(),
        n_samples: n,
        learner: learner.to_string(),
        normalized_reward: value,
        l2,
        extra_hyper: extra,
        converged,
    };
    if task.kind == LearnerKind::LsIps {
        let spec = LearnerSpec {
            feature_map: task.fm,
            train: cfg.ls_train.clone(),
            ..LearnerSpec::new(LearnerKind::LsIps)
        };
        let (fit, lambda) = tune_ls(data, &spec, &mut rng)?;
        let greedy = env.normalized_value(&greedy_policy(&fit.model))?;
        let softmax = env.normalized_value(&fit.policy)?;
        return Ok(vec![
            row(task.name, greedy, None, Some(lambda), fit.meta.converged),
            row(
                "ls_ips_softmax",
                softmax,
                None,
                Some(lambda),
                fit.meta.converged,
            ),
        ]);
    }
    let rows = build_rows(data, logging, task.kind, &mut rng)?;
    let (fit, l2) = tune_logistic(&rows, &task.fm, &cfg.train, &mut rng)?;
    let value = env.normalized_value(&greedy_policy(&fit.model))?;
    Ok(vec![row(
        task.name,
        value,
        Some(l2),
        None,
        fit.meta.converged,
    )])
}

/// Fits the full-feature first-stage model on the uniform-policy dataset.
fn train_first_stage(
    data: &[LoggedSample],
    kind: LearnerKind,
    cfg: &ExperimentConfig,
    seeds: CellSeeds,
) -> Result<LinearModel> {
    let fm = FeatureMap::full();
    let mut rng = seeds.rng(TAG_FIRST_STAGE);
    let rows = match kind {
        LearnerKind::Dm => build_rows(data, &Policy::uniform(), kind, &mut rng)?,
        LearnerKind::CsiExpect => build_rows(data, &Policy::uniform(), kind, &mut rng)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "{} cannot serve as the first-stage learner",
                other.as_str()
            )))
        }
    };
    let (fit, _) = tune_logistic(&rows, &fm, &cfg.train, &mut rng)?;
    Ok(fit.model)
}

/// Runs the full two-stage protocol for one cell.
///
/// A fatal error (degenerate environment, failed collection, failed first
/// stage) aborts the cell; per-learner errors are recorded as failures
/// while the remaining learners still report.
fn run_cell(
    env: &Environment,
    n: usize,
    seeds: CellSeeds,
    first_stage: LearnerKind,
    cfg: &ExperimentConfig,
    tasks: &[LearnerTask],
) -> Result<(Vec<LearnerRow>, Vec<CellFailure>)> {
    // Doubles as the degeneracy check: normalization must be well defined.
    let oracle_value = env.normalized_value(&env.oracle_greedy_policy())?;

    let first_data = collect_dataset(
        env,
        &Policy::uniform(),
        n,
        &mut seeds.rng(TAG_FIRST_COLLECT),
    )?;
    let first_model = train_first_stage(&first_data, first_stage, cfg, seeds)?;
    let logging = Policy::epsilon_greedy(first_model, cfg.epsilon)?;
    let second_data = collect_dataset(env, &logging, n, &mut seeds.rng(TAG_SECOND_COLLECT))?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &task in tasks {
        match score_learner(env, &second_data, &logging, task, cfg, seeds, n) {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => failures.push(CellFailure {
                env_seed: env.seed(),
                n_samples: n,
                message: format!("{}: {e}", task.name),
            }),
        }
    }
    rows.push(LearnerRow {
        env_seed: env.seed(),
        n_samples: n,
        learner: "oracle".to_string(),
        normalized_reward: oracle_value,
        l2: None,
        extra_hyper: None,
        converged: true,
    });
    Ok((rows, failures))
}

// ── Experiment drivers ─────────────────────────────────────────────────────

/// Runs one environment at one sample size and returns its rows.
///
/// The environment is generated directly from `env_seed`, and the cell's
/// internal streams are derived with `env_seed` as the master coordinate.
/// With [`FirstStage::Alternate`] the parity of `env_seed` picks the
/// first-stage learner, mirroring how [`run_experiment`] alternates by
/// environment index. Fatal cell errors are returned with the seed
/// attached; per-learner failures are recorded in the result.
pub fn run_single(env_seed: u64, n: usize, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if n < 100 {
        return Err(Error::InvalidConfig(format!(
            "sample size {n} is below the minimum of 100"
        )));
    }
    let tasks = match cfg.scenario {
        Scenario::Full => full_tasks(&cfg.learners),
        Scenario::FeatureSubset => subset_tasks(cfg.subset_feature_map()?),
    };
    let with_seed = |e: Error| Error::WithSeed {
        env_seed,
        source: Box::new(e),
    };
    let env = generate_environment(env_seed, &cfg.env).map_err(with_seed)?;
    let size_index = cfg.sample_sizes.iter().position(|&s| s == n).unwrap_or(0) as u64;
    let seeds = CellSeeds {
        master: env_seed,
        env_index: 0,
        size_index,
    };
    let first = resolve_first_stage(cfg.first_stage_learner, env_seed);
    let (rows, failures) = run_cell(&env, n, seeds, first, cfg, &tasks).map_err(with_seed)?;
    Ok(ExperimentResult::assemble(rows, failures))
}

fn run_with_tasks(cfg: &ExperimentConfig, tasks: &[LearnerTask]) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cells: Vec<(u64, usize)> = (0..cfg.n_environments as u64)
        .flat_map(|env_index| {
            (0..cfg.sample_sizes.len()).map(move |size_index| (env_index, size_index))
        })
        .collect();
    let outcomes: Vec<(Vec<LearnerRow>, Vec<CellFailure>)> = cells
        .par_iter()
        .map(|&(env_index, size_index)| {
            let env_seed = child_seed(cfg.master_seed, env_index, TAG_ENV, 0);
            let n = cfg.sample_sizes[size_index];
            let seeds = CellSeeds {
                master: cfg.master_seed,
                env_index,
                size_index: size_index as u64,
            };
            let first = resolve_first_stage(cfg.first_stage_learner, env_index);
            let cell = generate_environment(env_seed, &cfg.env)
                .and_then(|env| run_cell(&env, n, seeds, first, cfg, tasks));
            match cell {
                Ok(outcome) => outcome,
                Err(e) => (
                    Vec::new(),
                    vec![CellFailure {
                        env_seed,
                        n_samples: n,
                        message: e.to_string(),
                    }],
                ),
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (mut r, mut f) in outcomes {
        rows.append(&mut r);
        failures.append(&mut f);
    }
    Ok(ExperimentResult::assemble(rows, failures))
}

/// Runs the full-feature comparison over every (environment, size) cell.
///
/// Cells execute in parallel; the result is independent of thread count.
/// Any cell failure is recorded and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let tasks = full_tasks(&cfg.learners);
    run_with_tasks(cfg, &tasks)
}

/// Runs the confounding scenario: the logging policy exploits a full-feature
/// first-stage model while the subset learners only see `subset_mask`, so
/// hidden context features steer both action choice and reward.
pub fn run_feature_subset(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let tasks = subset_tasks(cfg.subset_feature_map()?);
    run_with_tasks(cfg, &tasks)
}

/// Dispatches on the configured scenario.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.scenario {
        Scenario::Full => run_experiment(cfg),
        Scenario::FeatureSubset => run_feature_subset(cfg),
    }
}
