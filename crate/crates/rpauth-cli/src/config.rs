//! Flat key-value configuration shared by every subcommand.
//!
//! Settings come from three layers, later layers overriding earlier ones:
//! built-in defaults, an optional `--config` file of `key = value` lines,
//! and command-line flags named after the keys (`--synth.n_users 20`).
//! Everything is validated up front so a bad configuration never produces
//! partial output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rpauth::authsys::{PolicyMode, Variant, VerificationPolicy};
use rpauth::nn::{Loss, TrainConfig};
use rpauth::synth::SynthSpec;

/// Errors surfaced to the user, split by exit code: configuration problems
/// exit 1, failures during execution exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Runtime(m) => write!(f, "runtime: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn runtime_err(msg: impl fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// One configurable setting: dotted key, default value, help text.
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Every recognized key. The same names work in the config file and as
/// long command-line flags.
pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "data.source", default: "synthetic", help: "profile source: synthetic | csv" },
    KeySpec { key: "data.csv_dir", default: "", help: "directory of <user>.csv profiles (required when data.source = csv)" },
    KeySpec { key: "synth.n_users", default: "10", help: "synthetic generator: number of users" },
    KeySpec { key: "synth.d", default: "24", help: "synthetic generator: features per row" },
    KeySpec { key: "synth.m_per_user", default: "240", help: "synthetic generator: rows per user" },
    KeySpec { key: "synth.class_separation", default: "4.0", help: "synthetic generator: cluster separation (higher = easier)" },
    KeySpec { key: "split.train_fraction", default: "0.8", help: "per-user fraction of rows kept for training; rest is holdout" },
    KeySpec { key: "split.group_fraction", default: "1.0", help: "fraction of users enrolled; the rest form the csv attack pool" },
    KeySpec { key: "smote.target", default: "300", help: "oversample each user's training rows up to this count (0 = off)" },
    KeySpec { key: "smote.k_neighbors", default: "5", help: "neighbors considered when interpolating synthetic rows" },
    KeySpec { key: "projection.enabled", default: "true", help: "project rows with per-user secret ternary matrices" },
    KeySpec { key: "projection.k", default: "20", help: "projected dimension (must be < feature count)" },
    KeySpec { key: "projection.phi", default: "3.0", help: "ternary sparsity parameter (Pr[nonzero] = 1/phi)" },
    KeySpec { key: "classifier.variant", default: "privacy_preserving", help: "classifier architecture: plain | privacy_preserving" },
    KeySpec { key: "classifier.widths", default: "", help: "comma-separated hidden widths (empty = variant default)" },
    KeySpec { key: "classifier.dropout", default: "0.1", help: "dropout rate inside each hidden stack" },
    KeySpec { key: "train.epochs", default: "30", help: "classifier training epochs" },
    KeySpec { key: "train.batch_size", default: "32", help: "minibatch size" },
    KeySpec { key: "train.learning_rate", default: "0.001", help: "RMSProp learning rate" },
    KeySpec { key: "train.decay", default: "0.9", help: "RMSProp decay rho" },
    KeySpec { key: "train.epsilon", default: "1e-8", help: "RMSProp denominator epsilon" },
    KeySpec { key: "policy.mode", default: "majority_argmax", help: "claim decision rule: majority_argmax | mean_probability" },
    KeySpec { key: "policy.tau", default: "0.5", help: "acceptance threshold in (0,1]" },
    KeySpec { key: "verify.wrong_matrix_rounds", default: "20", help: "fresh matrix draws per user when measuring wrong-matrix acceptance" },
    KeySpec { key: "attack.mode", default: "distribution_only", help: "attack to run: min_norm | distribution_only | known_matrix" },
    KeySpec { key: "attack.matrices_per_profile", default: "2", help: "projections per attack profile when building the corpus" },
    KeySpec { key: "attack.widths", default: "128,256,256,128", help: "hidden widths of the inversion network" },
    KeySpec { key: "attack.epochs", default: "50", help: "inversion network training epochs" },
    KeySpec { key: "attack.n_users", default: "10", help: "synthetic attack pool: number of users" },
    KeySpec { key: "attack.m_per_user", default: "240", help: "synthetic attack pool: rows per user" },
    KeySpec { key: "privacy.alpha", default: "0.05", help: "KS significance level for per-feature recovery" },
    KeySpec { key: "refresh.epochs", default: "40", help: "fine-tuning epochs after matrix replacement" },
    KeySpec { key: "refresh.learning_rate", default: "0.01", help: "refresh learning rate; larger than train.learning_rate so the old projections are actively unlearned" },
    KeySpec { key: "seed", default: "7", help: "master seed; every artifact derives from it" },
];

fn default_for(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|k| k.key == key).map(|k| k.default)
}

/// Raw string settings after layering defaults, file, and flags.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .map(|k| (k.key.to_string(), k.default.to_string()))
            .collect();
        RawConfig { values }
    }

    /// Applies `key = value` lines from a config file. `#` starts a comment;
    /// blank lines are ignored; unknown keys are rejected.
    pub fn apply_file(&mut self, path: &PathBuf) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(format!(
                    "{}:{}: expected `key = value`, got {raw_line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if default_for(key).is_none() {
            return Err(config_err(format!("unknown setting {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key:?} missing from catalog"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> CliResult<T> {
        let raw = self.get(key);
        raw.parse().map_err(|_| {
            config_err(format!("{key} must be {what}, got {raw:?}"))
        })
    }

    fn parse_bool(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(config_err(format!("{key} must be true or false, got {other:?}"))),
        }
    }

    fn parse_widths(&self, key: &str) -> CliResult<Vec<usize>> {
        let raw = self.get(key).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| {
                let p = p.trim();
                p.parse::<usize>().ok().filter(|&w| w >= 1).ok_or_else(|| {
                    config_err(format!("{key}: {p:?} is not a positive layer width"))
                })
            })
            .collect()
    }
}

/// Where profiles come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

/// Which attack the `attack` command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackModeCfg {
    MinNorm,
    DistributionOnly,
    KnownMatrix,
}

impl AttackModeCfg {
    /// Name used in file names and reports.
    pub fn slug(self) -> &'static str {
        match self {
            AttackModeCfg::MinNorm => "min_norm",
            AttackModeCfg::DistributionOnly => "distribution_only",
            AttackModeCfg::KnownMatrix => "known_matrix",
        }
    }
}

/// Fully parsed and validated pipeline settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub data: DataSource,
    pub synth: SynthShape,
    pub train_fraction: f64,
    pub group_fraction: f64,
    pub smote_target: usize,
    pub smote_k_neighbors: usize,
    pub projection_enabled: bool,
    pub projection_k: usize,
    pub projection_phi: f64,
    pub classifier_variant: Variant,
    pub classifier_widths: Option<Vec<usize>>,
    pub classifier_dropout: f64,
    pub train: TrainSettings,
    pub policy: VerificationPolicy,
    pub wrong_matrix_rounds: usize,
    pub attack: AttackSettings,
    pub privacy_alpha: f64,
    pub refresh_epochs: usize,
    pub refresh_learning_rate: f64,
    pub seed: u64,
}

/// Synthetic-generator shape (seed comes from the master seed).
#[derive(Debug, Clone, Copy)]
pub struct SynthShape {
    pub n_users: usize,
    pub d: usize,
    pub m_per_user: usize,
    pub class_separation: f64,
}

impl SynthShape {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_users: self.n_users,
            d: self.d,
            m_per_user: self.m_per_user,
            class_separation: self.class_separation,
            seed,
        }
    }
}

/// Optimizer settings shared by enrollment and refresh (epoch counts differ).
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl TrainSettings {
    /// Classifier training config (softmax/cross-entropy, no early stop).
    pub fn classifier_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: Loss::CrossEntropy,
            learning_rate: self.learning_rate,
            decay: self.decay,
            epsilon_num: self.epsilon,
            batch_size: self.batch_size,
            epochs,
            seed,
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackSettings {
    pub mode: AttackModeCfg,
    pub matrices_per_profile: usize,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub n_users: usize,
    pub m_per_user: usize,
}

impl PipelineConfig {
    /// Parses and cross-validates every setting; nothing is written before
    /// this succeeds.
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let data = match raw.get("data.source") {
            "synthetic" => DataSource::Synthetic,
            "csv" => {
                let dir = raw.get("data.csv_dir");
                if dir.is_empty() {
                    return Err(config_err("data.source = csv requires data.csv_dir"));
                }
                DataSource::Csv(PathBuf::from(dir))
            }
            other => {
                return Err(config_err(format!(
                    "data.source must be synthetic or csv, got {other:?}"
                )))
            }
        };

        let synth = SynthShape {
            n_users: raw.parse("synth.n_users", "a positive integer")?,
            d: raw.parse("synth.d", "a positive integer")?,
            m_per_user: raw.parse("synth.m_per_user", "a positive integer")?,
            class_separation: raw.parse("synth.class_separation", "a positive number")?,
        };
        // Shape checks mirror the generator's own validation so a bad
        // synthetic configuration fails before any output exists.
        if data == DataSource::Synthetic {
            synth
                .spec(0)
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }

        let train_fraction: f64 = raw.parse("split.train_fraction", "a number in (0,1)")?;
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(config_err(format!(
                "split.train_fraction must be in (0,1), got {train_fraction}"
            )));
        }
        let group_fraction: f64 = raw.parse("split.group_fraction", "a number in (0,1]")?;
        if !(group_fraction > 0.0 && group_fraction <= 1.0) {
            return Err(config_err(format!(
                "split.group_fraction must be in (0,1], got {group_fraction}"
            )));
        }
        if data == DataSource::Synthetic {
            let enrolled = (group_fraction * synth.n_users as f64).round() as usize;
            if enrolled < 2 {
                return Err(config_err(format!(
                    "split.group_fraction = {group_fraction} enrolls {enrolled} of \
                     {} users; at least 2 are required",
                    synth.n_users
                )));
            }
        }

        let smote_target: usize = raw.parse("smote.target", "a non-negative integer")?;
        let smote_k_neighbors: usize = raw.parse("smote.k_neighbors", "a positive integer")?;
        if smote_target > 0 && smote_k_neighbors == 0 {
            return Err(config_err("smote.k_neighbors must be at least 1"));
        }

        let projection_enabled = raw.parse_bool("projection.enabled")?;
        let projection_k: usize = raw.parse("projection.k", "a positive integer")?;
        let projection_phi: f64 = raw.parse("projection.phi", "a number greater than 1")?;
        if projection_enabled {
            if projection_k == 0 {
                return Err(config_err("projection.k must be at least 1"));
            }
            if !(projection_phi > 1.0) {
                return Err(config_err(format!(
                    "projection.phi must be greater than 1, got {projection_phi}"
                )));
            }
            if data == DataSource::Synthetic && projection_k >= synth.d {
                return Err(config_err(format!(
                    "projection.k = {projection_k} must be smaller than the \
                     feature count d = {}",
                    synth.d
                )));
            }
        }

        let classifier_variant = match raw.get("classifier.variant") {
            "plain" => Variant::Plain,
            "privacy_preserving" => Variant::PrivacyPreserving,
            other => {
                return Err(config_err(format!(
                    "classifier.variant must be plain or privacy_preserving, got {other:?}"
                )))
            }
        };
        let widths = raw.parse_widths("classifier.widths")?;
        let classifier_widths = if widths.is_empty() { None } else { Some(widths) };
        let classifier_dropout: f64 = raw.parse("classifier.dropout", "a number in [0,1)")?;
        if !(0.0..1.0).contains(&classifier_dropout) {
            return Err(config_err(format!(
                "classifier.dropout must be in [0,1), got {classifier_dropout}"
            )));
        }

        let train = TrainSettings {
            epochs: raw.parse("train.epochs", "a positive integer")?,
            batch_size: raw.parse("train.batch_size", "a positive integer")?,
            learning_rate: raw.parse("train.learning_rate", "a non-negative number")?,
            decay: raw.parse("train.decay", "a number in [0,1)")?,
            epsilon: raw.parse("train.epsilon", "a positive number")?,
        };
        if train.epochs == 0 {
            return Err(config_err("train.epochs must be at least 1"));
        }
        train
            .classifier_config(train.epochs, 0)
            .validate()
            .map_err(|e| config_err(e.to_string()))?;

        let policy = VerificationPolicy {
            mode: match raw.get("policy.mode") {
                "majority_argmax" => PolicyMode::MajorityArgmax,
                "mean_probability" => PolicyMode::MeanProbability,
                other => {
                    return Err(config_err(format!(
                        "policy.mode must be majority_argmax or mean_probability, got {other:?}"
                    )))
                }
            },
            tau: raw.parse("policy.tau", "a number in (0,1]")?,
        };
        policy.validate().map_err(|e| config_err(e.to_string()))?;

        let wrong_matrix_rounds: usize =
            raw.parse("verify.wrong_matrix_rounds", "a positive integer")?;
        if wrong_matrix_rounds == 0 {
            return Err(config_err("verify.wrong_matrix_rounds must be at least 1"));
        }

        let attack_mode = match raw.get("attack.mode") {
            "min_norm" => AttackModeCfg::MinNorm,
            "distribution_only" => AttackModeCfg::DistributionOnly,
            "known_matrix" => AttackModeCfg::KnownMatrix,
            other => {
                return Err(config_err(format!(
                    "attack.mode must be min_norm, distribution_only, or known_matrix, \
                     got {other:?}"
                )))
            }
        };
        let attack = AttackSettings {
            mode: attack_mode,
            matrices_per_profile: raw.parse("attack.matrices_per_profile", "a positive integer")?,
            widths: raw.parse_widths("attack.widths")?,
            epochs: raw.parse("attack.epochs", "a positive integer")?,
            n_users: raw.parse("attack.n_users", "a positive integer")?,
            m_per_user: raw.parse("attack.m_per_user", "a positive integer")?,
        };
        if attack.matrices_per_profile == 0 {
            return Err(config_err("attack.matrices_per_profile must be at least 1"));
        }
        if attack.epochs == 0 {
            return Err(config_err("attack.epochs must be at least 1"));
        }
        if attack.widths.is_empty() {
            return Err(config_err("attack.widths must name at least one layer"));
        }
        if data == DataSource::Synthetic && (attack.n_users < 2 || attack.m_per_user < 2) {
            return Err(config_err(
                "attack.n_users and attack.m_per_user must both be at least 2",
            ));
        }

        let privacy_alpha: f64 = raw.parse("privacy.alpha", "a number in (0,1)")?;
        if !(privacy_alpha > 0.0 && privacy_alpha < 1.0) {
            return Err(config_err(format!(
                "privacy.alpha must be in (0,1), got {privacy_alpha}"
            )));
        }

        let refresh_epochs: usize = raw.parse("refresh.epochs", "a positive integer")?;
        if refresh_epochs == 0 {
            return Err(config_err("refresh.epochs must be at least 1"));
        }
        let refresh_learning_rate: f64 =
            raw.parse("refresh.learning_rate", "a positive number")?;
        if !(refresh_learning_rate > 0.0 && refresh_learning_rate.is_finite()) {
            return Err(config_err("refresh.learning_rate must be a positive number"));
        }

        let seed: u64 = raw.parse("seed", "an unsigned 64-bit integer")?;

        Ok(PipelineConfig {
            data,
            synth,
            train_fraction,
            group_fraction,
            smote_target,
            smote_k_neighbors,
            projection_enabled,
            projection_k,
            projection_phi,
            classifier_variant,
            classifier_widths,
            classifier_dropout,
            train,
            policy,
            wrong_matrix_rounds,
            attack,
            privacy_alpha,
            refresh_epochs,
            refresh_learning_rate,
            seed,
        })
    }

    pub fn policy_mode_name(&self) -> &'static str {
        match self.policy.mode {
            PolicyMode::MajorityArgmax => "majority_argmax",
            PolicyMode::MeanProbability => "mean_probability",
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self.classifier_variant {
            Variant::Plain => "plain",
            Variant::PrivacyPreserving => "privacy_preserving",
        }
    }
}
