//! Statistical privacy evaluation: two-sample Kolmogorov-Smirnov tests per
//! feature, and the fraction of features whose recovered distribution is
//! indistinguishable from the original at significance alpha.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Profile;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// sup_t |ECDF_a(t) - ECDF_b(t)|, in [0,1].
    pub d_statistic: f64,
    /// Asymptotic Kolmogorov p-value with small-sample correction, in [0,1].
    pub p_value: f64,
}

/// Exact two-sample KS statistic plus its p-value.
///
/// D is evaluated over the merged sorted support (ties handled exactly);
/// the p-value is Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)
/// with lambda = (sqrt(n_e) + 0.12 + 0.11/sqrt(n_e)) D and
/// n_e = |a||b|/(|a|+|b|). D = 0 returns p = 1 exactly.
pub fn ks_two_sample<F: Scalar>(a: &[F], b: &[F]) -> Result<KsResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("ks_two_sample needs at least 2 values per sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("ks_two_sample requires finite values"));
    }
    let mut sa: Vec<f64> = a.iter().map(|v| v.as_f64()).collect();
    let mut sb: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let (n1, n2) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < n1 || j < n2 {
        // Next threshold is the smallest unconsumed value; consume every
        // copy of it from both samples so ties move the ECDFs together.
        let t = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < n1 && sa[i] == t {
            i += 1;
        }
        while j < n2 && sb[j] == t {
            j += 1;
        }
        let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    Ok(KsResult {
        d_statistic: d,
        p_value: ks_p_value(d, n1, n2),
    })
}

/// P-value of a two-sample KS statistic for sample sizes n1, n2.
pub fn ks_p_value(d: f64, n1: usize, n2: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=1000 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        if term < 1e-12 && j > 1 {
            break;
        }
        sum += sign * term;
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Fraction of features whose recovered column passes the KS closeness test
/// (p >= alpha) against the ground-truth column. Always a multiple of 1/d.
pub fn feature_pass_fraction<F: Scalar>(
    recovered: &Profile<F>,
    truth: &Profile<F>,
    alpha: f64,
) -> Result<f64> {
    if recovered.d() != truth.d() {
        return Err(Error::shape(format!(
            "recovered has {} features, truth has {}",
            recovered.d(),
            truth.d()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must be in (0,1)"));
    }
    let d = truth.d();
    let mut passes = 0usize;
    for c in 0..d {
        let col_a: Vec<F> = (0..recovered.m()).map(|r| recovered.samples.get(r, c)).collect();
        let col_b: Vec<F> = (0..truth.m()).map(|r| truth.samples.get(r, c)).collect();
        let ks = ks_two_sample(&col_a, &col_b)?;
        if ks.p_value >= alpha {
            passes += 1;
        }
    }
    Ok(passes as f64 / d as f64)
}

/// Privacy evaluation over a set of recovered profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// user_id -> fraction of features passing closeness, in [0,1].
    pub per_profile: BTreeMap<String, f64>,
    /// Worst case over profiles (the headline epsilon).
    pub epsilon_estimate: f64,
    /// Mean pass fraction over profiles.
    pub mean_fraction: f64,
    /// Number of profiles with at least one recovered feature.
    pub profiles_with_any_recovery: usize,
    pub alpha: f64,
    pub knowledge_mode: String,
}

impl PrivacyReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// One `user_id,pass_fraction` row per profile (plot-ready).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "user_id,pass_fraction").expect("vec write");
        for (user, frac) in &self.per_profile {
            writeln!(out, "{user},{frac}").expect("vec write");
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Pairs recovered profiles with ground truth by user_id and aggregates
/// per-profile pass fractions: epsilon_estimate is the max (worst case),
/// with the mean reported alongside.
pub fn evaluate_distribution_privacy<F: Scalar>(
    recovered_set: &[Profile<F>],
    truth_set: &[Profile<F>],
    alpha: f64,
    knowledge_mode: &str,
) -> Result<PrivacyReport> {
    if recovered_set.is_empty() || truth_set.is_empty() {
        return Err(Error::invalid("both profile sets must be nonempty"));
    }
    let truth_by_id: BTreeMap<&str, &Profile<F>> = truth_set
        .iter()
        .map(|p| (p.user_id.as_str(), p))
        .collect();
    let mut per_profile = BTreeMap::new();
    for rec in recovered_set {
        let truth = truth_by_id
            .get(rec.user_id.as_str())
            .ok_or_else(|| Error::UnknownUser(rec.user_id.clone()))?;
        let frac = feature_pass_fraction(rec, truth, alpha)?;
        if per_profile.insert(rec.user_id.clone(), frac).is_some() {
            return Err(Error::invalid(format!(
                "duplicate recovered profile for {:?}",
                rec.user_id
            )));
        }
    }
    let fracs: Vec<f64> = per_profile.values().copied().collect();
    let epsilon_estimate = fracs.iter().copied().fold(0.0, f64::max);
    let mean_fraction = fracs.iter().sum::<f64>() / fracs.len() as f64;
    let profiles_with_any_recovery = fracs.iter().filter(|&&f| f > 0.0).count();
    Ok(PrivacyReport {
        per_profile,
        epsilon_estimate,
        mean_fraction,
        profiles_with_any_recovery,
        alpha,
        knowledge_mode: knowledge_mode.to_string(),
    })
}
