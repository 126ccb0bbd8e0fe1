//! Report types the commands persist, plus JSON/text rendering helpers.
//!
//! Every report is written twice: pretty JSON for tooling and an aligned
//! two-column text table for people. Neither contains timestamps or
//! absolute paths, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{runtime_err, CliResult};

/// Written by `enroll`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollReport {
    pub n_users_enrolled: usize,
    pub d: usize,
    pub projection_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Brute-force keyspace of one ternary matrix, in bits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyspace_bits: Option<f64>,
    pub variant: String,
    pub stack_widths: Vec<usize>,
    pub dropout: f64,
    pub params_total: usize,
    pub params_trainable: usize,
    pub params_non_trainable: usize,
    pub rows_working_total: usize,
    pub rows_holdout_total: usize,
    pub rows_training_total: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    /// Row-level argmax accuracy on the enrollment validation slice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_sample_accuracy: Option<f64>,
    /// Claim-level false-reject rate on the enrollment validation claims.
    pub validation_claim_frr: f64,
    pub validation_claims: usize,
}

/// One claim-level rate block inside the verify report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateBlock {
    pub claims: usize,
    pub accepted: usize,
    /// accepted / claims.
    pub acceptance_rate: f64,
    /// Fraction of individual rows classified as the claimed user.
    pub sample_acceptance: f64,
}

/// Written by `verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub policy_mode: String,
    pub tau: f64,
    pub projection_enabled: bool,
    /// Self-claims: acceptance should be high; FRR = 1 - acceptance_rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<RateBlock>,
    /// Impostor claims: acceptance should be low; FAR = acceptance_rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid: Option<RateBlock>,
    /// Self-claims projected with a matrix the system never saw; acceptance
    /// should be low (a stolen profile without its matrix is unusable).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrong_matrix: Option<RateBlock>,
}

/// Written by `refresh`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefreshReport {
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Validation-claim FRR recorded at enrollment, for comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_refresh_frr: Option<f64>,
    pub new_matrix_claims: usize,
    pub new_matrix_frr: f64,
    pub new_matrix_sample_accuracy: f64,
    pub old_matrix_claims: usize,
    /// Fraction of old-matrix claims still accepted after the rekey.
    pub old_matrix_acceptance: f64,
    pub old_matrix_sample_acceptance: f64,
}

/// Serializes a report as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(runtime_err)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    text.push('\n');
    std::fs::write(path, text).map_err(runtime_err)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime_err(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| runtime_err(format!("cannot parse {}: {e}", path.display())))
}

/// Renders `(key, value)` rows as an aligned two-column table.
pub fn render_table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out
}

pub fn save_text(text: &str, path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(runtime_err)?;
    }
    std::fs::write(path, text).map_err(runtime_err)?;
    Ok(())
}

/// Formats a rate/accuracy for the text tables.
pub fn fmt_rate(v: f64) -> String {
    format!("{v:.6}")
}

/// Flattens a JSON value into dotted-key/value rows for the summary table.
pub fn flatten_json(prefix: &str, value: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, v, rows);
            }
        }
        serde_json::Value::Array(items) => {
            let joined = items
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(",");
            rows.push((prefix.to_string(), joined));
        }
        serde_json::Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

/// Collects the per-section report JSONs that exist under `out` into one
/// object, in a fixed section order.
pub fn collect_summary(out: &Path) -> CliResult<serde_json::Map<String, serde_json::Value>> {
    let sections: &[(&str, String)] = &[
        ("enroll", "enroll_report.json".to_string()),
        ("verify", "verify_report.json".to_string()),
        ("refresh", "refresh_report.json".to_string()),
        ("attack_min_norm", "privacy_report_min_norm.json".to_string()),
        (
            "attack_distribution_only",
            "privacy_report_distribution_only.json".to_string(),
        ),
        (
            "attack_known_matrix",
            "privacy_report_known_matrix.json".to_string(),
        ),
    ];
    let mut merged = serde_json::Map::new();
    for (name, file) in sections {
        let path = out.join(file);
        if path.exists() {
            let value: serde_json::Value = load_json(&path)?;
            merged.insert(name.to_string(), value);
        }
    }
    Ok(merged)
}

/// Maps a BTreeMap payload into table rows with a common prefix.
pub fn map_rows(prefix: &str, map: &BTreeMap<String, f64>) -> Vec<(String, String)> {
    map.iter()
        .map(|(k, v)| (format!("{prefix}.{k}"), fmt_rate(*v)))
        .collect()
}
