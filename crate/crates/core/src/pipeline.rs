//! Dataset collection and the counterfactual sample identification
//! transform.
//!
//! `collect_dataset` simulates a logging policy against the environment
//! and records propensities. The two `csi_transform_*` functions turn a
//! logged dataset into a binary classification problem: each positive row
//! is kept with target 1, and matched with counterfactual rows drawn from
//! the logging policy with target 0. The sampling variant draws one
//! counterfactual action per positive; the expectation variant emits every
//! action the logging policy could have produced, weighted by its
//! propensity, which preserves the expected training loss while removing
//! the sampling noise.
//!
//! Datasets travel as plain CSV. Numbers are written with the shortest
//! representation that parses back to the identical float, so a
//! write-read-write cycle is byte-stable.

use rand::Rng;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::env::{Action, Context, Environment, NUM_ACTIONS, NUM_CONTEXTS};
use crate::error::{Error, Result};
use crate::policy::{sample_from_probs, Policy};

/// One logged interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedSample {
    pub context: Context,
    pub action: Action,
    /// Probability the logging policy assigned to `action` in `context`.
    pub propensity: f64,
    pub reward: bool,
}

/// One row of the transformed classification dataset. `target` is 1 when
/// the row carries a logged action and 0 when it carries a counterfactual
/// one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiExample {
    pub context: Context,
    pub action: Action,
    pub target: bool,
    pub weight: f64,
}

/// Per-context action distribution cache for one policy, built lazily:
/// repeated sampling only evaluates `Policy::probs` once per context.
struct PolicyTable<'a> {
    policy: &'a Policy,
    rows: Vec<Option<[f64; NUM_ACTIONS]>>,
}

impl<'a> PolicyTable<'a> {
    fn new(policy: &'a Policy) -> Self {
        Self {
            policy,
            rows: vec![None; NUM_CONTEXTS],
        }
    }

    fn probs(&mut self, x: Context) -> &[f64; NUM_ACTIONS] {
        let slot = &mut self.rows[x.index()];
        if slot.is_none() {
            *slot = Some(self.policy.probs(x));
        }
        slot.as_ref().unwrap()
    }
}

/// Simulates `n >= 1` interactions of `policy` with `env`.
///
/// Each sample consumes exactly three uniform variates, in order: context,
/// action, reward. A sampled action with zero recorded propensity is a
/// coverage violation.
pub fn collect_dataset<R: Rng + ?Sized>(
    env: &Environment,
    policy: &Policy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<LoggedSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset size must be at least 1".into(),
        ));
    }
    let mut table = PolicyTable::new(policy);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = env.sample_context(rng);
        let probs = table.probs(x);
        let u: f64 = rng.random();
        let ai = sample_from_probs(probs, u);
        let propensity = probs[ai];
        let a = Action::from_index(ai);
        if propensity <= 0.0 {
            return Err(Error::CoverageViolation {
                context: x.to_string(),
                action: a.to_string(),
            });
        }
        let reward = rng.random::<f64>() < env.true_reward_prob(x, a);
        out.push(LoggedSample {
            context: x,
            action: a,
            propensity,
            reward,
        });
    }
    Ok(out)
}

/// Sampling variant of the transform: every positive row contributes a
/// target-1 copy of itself and one target-0 row whose action is drawn
/// fresh from `pi0` (one uniform variate per positive, in data order).
/// Negative rows are dropped. No positives yields an empty dataset.
pub fn csi_transform_sampling<R: Rng + ?Sized>(
    data: &[LoggedSample],
    pi0: &Policy,
    rng: &mut R,
) -> Vec<CsiExample> {
    let mut table = PolicyTable::new(pi0);
    let mut out = Vec::new();
    for row in data.iter().filter(|r| r.reward) {
        out.push(CsiExample {
            context: row.context,
            action: row.action,
            target: true,
            weight: 1.0,
        });
        let probs = table.probs(row.context);
        let u: f64 = rng.random();
        let counterfactual = Action::from_index(sample_from_probs(probs, u));
        out.push(CsiExample {
            context: row.context,
            action: counterfactual,
            target: false,
            weight: 1.0,
        });
    }
    out
}

/// Expectation variant: instead of sampling the counterfactual action, every
/// positive row emits one target-0 row per action with positive propensity,
/// weighted by that propensity. The target-0 weights for one positive sum
/// to 1, so the expected loss matches the sampling variant exactly while
/// the variance drops. Deterministic: no randomness is consumed.
pub fn csi_transform_expect(data: &[LoggedSample], pi0: &Policy) -> Vec<CsiExample> {
    let mut table = PolicyTable::new(pi0);
    let mut out = Vec::new();
    for row in data.iter().filter(|r| r.reward) {
        out.push(CsiExample {
            context: row.context,
            action: row.action,
            target: true,
            weight: 1.0,
        });
        let probs = table.probs(row.context);
        for (ai, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                out.push(CsiExample {
                    context: row.context,
                    action: Action::from_index(ai),
                    target: false,
                    weight: p,
                });
            }
        }
    }
    out
}

// ── CSV files ─────────────────────────────────────────────────────────────

const LOG_HEADER: &str = "context_bits,action_bits,propensity,reward";
const CSI_HEADER: &str = "context_bits,action_bits,propensity,reward,z,weight";

/// Serializes a logged dataset. Floats use the shortest round-trip form.
pub fn log_to_csv(data: &[LoggedSample]) -> String {
    let mut out = String::with_capacity(24 * (data.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for row in data {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.context,
            row.action,
            row.propensity,
            u8::from(row.reward)
        ));
    }
    out
}

pub fn write_log_file<P: AsRef<Path>>(path: P, data: &[LoggedSample]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(log_to_csv(data).as_bytes())?;
    writer.flush()?;
    Ok(())
}

pub fn read_log_file<P: AsRef<Path>>(path: P) -> Result<Vec<LoggedSample>> {
    parse_log_csv(&fs::read_to_string(path)?)
}

pub fn parse_log_csv(text: &str) -> Result<Vec<LoggedSample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == LOG_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "expected header {LOG_HEADER:?}, got {:?}",
                    other.map(|(_, h)| h)
                ),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        out.push(LoggedSample {
            context: parse_context(fields[0], line_no)?,
            action: parse_action(fields[1], line_no)?,
            propensity: parse_propensity(fields[2], line_no)?,
            reward: parse_binary(fields[3], "reward", line_no)?,
        });
    }
    Ok(out)
}

/// Serializes a transformed dataset. The per-row propensity column holds
/// `pi0(action | context)` for the row's own action, and the reward column
/// is always 1 because every row descends from a positive.
pub fn csi_to_csv(data: &[CsiExample], pi0: &Policy) -> String {
    let mut table = PolicyTable::new(pi0);
    let mut out = String::with_capacity(28 * (data.len() + 1));
    out.push_str(CSI_HEADER);
    out.push('\n');
    for row in data {
        let propensity = table.probs(row.context)[row.action.index()];
        out.push_str(&format!(
            "{},{},{},1,{},{}\n",
            row.context,
            row.action,
            propensity,
            u8::from(row.target),
            row.weight
        ));
    }
    out
}

pub fn write_csi_file<P: AsRef<Path>>(path: P, data: &[CsiExample], pi0: &Policy) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(csi_to_csv(data, pi0).as_bytes())?;
    writer.flush()?;
    Ok(())
}

pub fn read_csi_file<P: AsRef<Path>>(path: P) -> Result<Vec<CsiExample>> {
    parse_csi_csv(&fs::read_to_string(path)?)
}

pub fn parse_csi_csv(text: &str) -> Result<Vec<CsiExample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSI_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "expected header {CSI_HEADER:?}, got {:?}",
                    other.map(|(_, h)| h)
                ),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        parse_propensity(fields[2], line_no)?;
        if fields[3] != "1" {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "reward must be 1 in a transformed dataset, got {:?}",
                    fields[3]
                ),
            });
        }
        let weight: f64 = fields[5].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid weight {:?}", fields[5]),
        })?;
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("weight must be finite and positive, got {weight}"),
            });
        }
        out.push(CsiExample {
            context: parse_context(fields[0], line_no)?,
            action: parse_action(fields[1], line_no)?,
            target: parse_binary(fields[4], "z", line_no)?,
            weight,
        });
    }
    Ok(out)
}

fn parse_context(field: &str, line: usize) -> Result<Context> {
    Context::parse(field).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

fn parse_action(field: &str, line: usize) -> Result<Action> {
    Action::parse(field).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

fn parse_propensity(field: &str, line: usize) -> Result<f64> {
    let p: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid propensity {field:?}"),
    })?;
    if !p.is_finite() || p <= 0.0 || p > 1.0 {
        return Err(Error::Parse {
            line,
            msg: format!("propensity must lie in (0, 1], got {p}"),
        });
    }
    Ok(p)
}

fn parse_binary(field: &str, name: &str, line: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            msg: format!("{name} must be 0 or 1, got {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvConfig};
    use crate::glm::{FeatureMap, LinearModel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env42() -> Environment {
        generate_environment(42, &EnvConfig::default()).unwrap()
    }

    fn random_model(seed: u64) -> LinearModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fm = FeatureMap::full();
        let w: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        LinearModel::new(fm, w).unwrap()
    }

    #[test]
    fn zero_sized_collection_is_rejected() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            collect_dataset(&env, &Policy::Uniform, 0, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn uniform_logging_records_exact_propensities() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = collect_dataset(&env, &Policy::Uniform, 500, &mut rng).unwrap();
        assert_eq!(data.len(), 500);
        assert!(data.iter().all(|r| r.propensity == 1.0 / 32.0));
    }

    #[test]
    fn epsilon_greedy_logging_records_both_propensity_levels() {
        let env = env42();
        let pi0 = Policy::epsilon_greedy(random_model(3), 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = collect_dataset(&env, &pi0, 2_000, &mut rng).unwrap();
        let low = 0.05 / 32.0;
        let high = 0.95 + low;
        for r in &data {
            assert!(
                (r.propensity - low).abs() < 1e-15 || (r.propensity - high).abs() < 1e-15,
                "unexpected propensity {}",
                r.propensity
            );
        }
        assert!(data.iter().any(|r| (r.propensity - high).abs() < 1e-15));
    }

    #[test]
    fn mean_logged_reward_matches_exact_policy_value() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000usize;
        let data = collect_dataset(&env, &Policy::Uniform, n, &mut rng).unwrap();
        let mean = data.iter().filter(|r| r.reward).count() as f64 / n as f64;
        let v = env.policy_value(&Policy::Uniform).unwrap();
        let se = (v * (1.0 - v) / n as f64).sqrt();
        assert!((mean - v).abs() < 4.0 * se, "mean {mean} vs value {v}");
    }

    #[test]
    fn collection_is_deterministic_per_seed() {
        let env = env42();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            collect_dataset(&env, &Policy::Uniform, 200, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    fn handmade_data() -> Vec<LoggedSample> {
        // 3 positives, 2 negatives, various pairs.
        let mk = |xi: usize, ai: usize, reward: bool| LoggedSample {
            context: Context::from_index(xi),
            action: Action::from_index(ai),
            propensity: 1.0 / 32.0,
            reward,
        };
        vec![
            mk(0, 4, true),
            mk(9, 1, false),
            mk(50, 7, true),
            mk(50, 7, false),
            mk(127, 31, true),
        ]
    }

    #[test]
    fn sampling_transform_keeps_positives_and_adds_one_row_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = csi_transform_sampling(&handmade_data(), &Policy::Uniform, &mut rng);
        assert_eq!(out.len(), 6);
        let z1: Vec<_> = out.iter().filter(|e| e.target).collect();
        let z0: Vec<_> = out.iter().filter(|e| !e.target).collect();
        assert_eq!(z1.len(), 3);
        assert_eq!(z0.len(), 3);
        assert!(out.iter().all(|e| e.weight == 1.0));
        // Target-1 rows carry the logged pairs in order.
        assert_eq!(z1[0].context.index(), 0);
        assert_eq!(z1[0].action.index(), 4);
        assert_eq!(z1[2].context.index(), 127);
        // Counterfactual rows stay in the same context as their positive.
        for (pos, neg) in z1.iter().zip(&z0) {
            assert_eq!(pos.context, neg.context);
        }
    }

    #[test]
    fn sampling_transform_without_positives_is_empty() {
        let data: Vec<LoggedSample> = handmade_data()
            .into_iter()
            .map(|mut r| {
                r.reward = false;
                r
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(csi_transform_sampling(&data, &Policy::Uniform, &mut rng).is_empty());
        assert!(csi_transform_expect(&data, &Policy::Uniform).is_empty());
    }

    #[test]
    fn deterministic_logging_policy_pairs_each_positive_with_itself() {
        let greedy = Policy::greedy(random_model(21));
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = collect_dataset(&env, &greedy, 3_000, &mut rng).unwrap();
        let out = csi_transform_sampling(&data, &greedy, &mut rng);
        for pair in out.chunks(2) {
            assert_eq!(pair[0].context, pair[1].context);
            assert_eq!(
                pair[0].action, pair[1].action,
                "greedy pi0 must duplicate the action"
            );
            assert!(pair[0].target && !pair[1].target);
        }
        let expected = csi_transform_expect(&data, &greedy);
        for pair in expected.chunks(2) {
            assert_eq!(pair[0].action, pair[1].action);
            assert_eq!(pair[1].weight, 1.0);
        }
    }

    #[test]
    fn sampled_counterfactual_actions_follow_the_logging_policy() {
        // All positives in one context; counterfactual action frequencies
        // must match pi0 there.
        let data: Vec<LoggedSample> = (0..40_000)
            .map(|_| LoggedSample {
                context: Context::from_index(13),
                action: Action::from_index(2),
                propensity: 1.0,
                reward: true,
            })
            .collect();
        let model = random_model(33);
        let pi0 = Policy::epsilon_greedy(model, 0.5).unwrap();
        let probs = pi0.probs(Context::from_index(13));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = csi_transform_sampling(&data, &pi0, &mut rng);
        let mut counts = [0usize; NUM_ACTIONS];
        for e in out.iter().filter(|e| !e.target) {
            counts[e.action.index()] += 1;
        }
        let n = data.len() as f64;
        for ai in 0..NUM_ACTIONS {
            let p = probs[ai];
            let se = (p * (1.0 - p) / n).sqrt();
            let freq = counts[ai] as f64 / n;
            assert!(
                (freq - p).abs() < 5.0 * se + 1e-12,
                "action {ai}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn expect_transform_under_uniform_emits_all_actions() {
        let data = vec![LoggedSample {
            context: Context::from_index(3),
            action: Action::from_index(30),
            propensity: 1.0 / 32.0,
            reward: true,
        }];
        let out = csi_transform_expect(&data, &Policy::Uniform);
        assert_eq!(out.len(), 1 + NUM_ACTIONS);
        assert!(out[0].target);
        assert_eq!(out[0].weight, 1.0);
        for (ai, row) in out[1..].iter().enumerate() {
            assert!(!row.target);
            assert_eq!(row.action.index(), ai);
            assert_eq!(row.weight, 1.0 / 32.0);
        }
    }

    #[test]
    fn expect_transform_is_deterministic() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pi0 = Policy::epsilon_greedy(random_model(5), 0.1).unwrap();
        let data = collect_dataset(&env, &pi0, 2_000, &mut rng).unwrap();
        let a = csi_transform_expect(&data, &pi0);
        let b = csi_transform_expect(&data, &pi0);
        assert_eq!(a, b);
    }

    #[test]
    fn transform_balances_target_mass() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pi0 = Policy::epsilon_greedy(random_model(6), 0.3).unwrap();
        let data = collect_dataset(&env, &pi0, 5_000, &mut rng).unwrap();

        for out in [
            csi_transform_expect(&data, &pi0),
            csi_transform_sampling(&data, &pi0, &mut rng),
        ] {
            let w1: f64 = out.iter().filter(|e| e.target).map(|e| e.weight).sum();
            let w0: f64 = out.iter().filter(|e| !e.target).map(|e| e.weight).sum();
            assert!((w1 - w0).abs() < 1e-9 * w1.max(1.0), "w1 {w1} vs w0 {w0}");
        }
    }

    #[test]
    fn log_csv_golden_format() {
        let data = vec![LoggedSample {
            context: Context::parse("0110100").unwrap(),
            action: Action::parse("10010").unwrap(),
            propensity: 0.03125,
            reward: true,
        }];
        let text = log_to_csv(&data);
        assert_eq!(
            text,
            "context_bits,action_bits,propensity,reward\n0110100,10010,0.03125,1\n"
        );
    }

    #[test]
    fn log_file_round_trip_is_byte_stable() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pi0 = Policy::epsilon_greedy(random_model(9), 0.05).unwrap();
        let data = collect_dataset(&env, &pi0, 1_000, &mut rng).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_file(&path, &data).unwrap();
        let parsed = read_log_file(&path).unwrap();
        assert_eq!(parsed, data);
        let rewritten = log_to_csv(&parsed);
        assert_eq!(rewritten, fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn csi_file_round_trip_preserves_rows() {
        let env = env42();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pi0 = Policy::epsilon_greedy(random_model(10), 0.2).unwrap();
        let data = collect_dataset(&env, &pi0, 1_500, &mut rng).unwrap();
        let out = csi_transform_expect(&data, &pi0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("csi.csv");
        write_csi_file(&path, &out, &pi0).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("context_bits,action_bits,propensity,reward,z,weight\n"));
        let parsed = read_csi_file(&path).unwrap();
        assert_eq!(parsed, out);
    }

    #[test]
    fn malformed_log_files_are_rejected_with_line_numbers() {
        let cases = [
            ("wrong,header\n", 1usize),
            ("context_bits,action_bits,propensity,reward\n011,10010,0.5,1\n", 2),
            ("context_bits,action_bits,propensity,reward\n0110100,10010,0.5\n", 2),
            ("context_bits,action_bits,propensity,reward\n0110100,10010,0,1\n", 2),
            ("context_bits,action_bits,propensity,reward\n0110100,10010,1.5,1\n", 2),
            ("context_bits,action_bits,propensity,reward\n0110100,10010,abc,1\n", 2),
            (
                "context_bits,action_bits,propensity,reward\n0110100,10010,0.5,1\n0110100,10010,0.5,2\n",
                3,
            ),
        ];
        for (text, want_line) in cases {
            match parse_log_csv(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want_line, "input {text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn malformed_csi_rows_are_rejected() {
        let header = "context_bits,action_bits,propensity,reward,z,weight\n";
        let cases = [
            format!("{header}0110100,10010,0.5,0,1,1\n"),
            format!("{header}0110100,10010,0.5,1,2,1\n"),
            format!("{header}0110100,10010,0.5,1,1,0\n"),
            format!("{header}0110100,10010,0.5,1,1,-3\n"),
            format!("{header}0110100,10010,0.5,1,1\n"),
        ];
        for text in &cases {
            assert!(parse_csi_csv(text).is_err(), "accepted {text:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// For any stochastic logging policy, the expectation transform's
        /// target-0 weights for each positive sum to exactly the logging
        /// probabilities' total, i.e. 1.
        #[test]
        fn expect_weights_per_positive_sum_to_one(seed in 0u64..100, eps in 0.05f64..1.0) {
            let pi0 = Policy::epsilon_greedy(random_model(seed), eps).unwrap();
            let data = vec![LoggedSample {
                context: Context::from_index((seed % 128) as usize),
                action: Action::from_index((seed % 32) as usize),
                propensity: 1.0,
                reward: true,
            }];
            let out = csi_transform_expect(&data, &pi0);
            let w0: f64 = out.iter().filter(|e| !e.target).map(|e| e.weight).sum();
            prop_assert!((w0 - 1.0).abs() < 1e-12);
        }

        /// Weights in the transformed data are the logging propensities.
        #[test]
        fn expect_weights_match_propensities(seed in 0u64..100) {
            let pi0 = Policy::epsilon_greedy(random_model(seed), 0.4).unwrap();
            let x = Context::from_index(77);
            let data = vec![LoggedSample {
                context: x,
                action: Action::from_index(0),
                propensity: pi0.probs(x)[0],
                reward: true,
            }];
            let probs = pi0.probs(x);
            let out = csi_transform_expect(&data, &pi0);
            for row in out.iter().filter(|e| !e.target) {
                prop_assert_eq!(row.weight, probs[row.action.index()]);
            }
        }
    }
}
