//! Behavioral-authentication system built on the classifier: enrollment
//! (train a per-user softmax classifier), claim verification under an
//! aggregation policy, FRR/FAR measurement, wrong-matrix trials, and key
//! refresh with warm-start retraining.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{
    train, LayerSpec, NeuralNet, PredictionVector, TrainConfig, TrainingHistory,
};
use crate::projection::{project_rows, ProjectedProfile, RandomMatrix};
use crate::scalar::Scalar;
use crate::seed;
use crate::dataio::{split_indices, Profile};

/// Fraction of each user's rows used for training during enrollment and
/// refresh; the rest becomes per-user validation/verification data.
pub const ENROLL_TRAIN_FRACTION: f64 = 0.8;

const INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SPLIT_SALT: u64 = 0x517c_c1b7_2722_0a95;

/// One user's rows in whatever feature space the classifier consumes
/// (plain d-dim or projected k-dim).
#[derive(Debug, Clone)]
pub struct LabeledRows<F> {
    pub user_id: String,
    pub rows: Mat<F>,
}

impl<F: Scalar> LabeledRows<F> {
    pub fn from_profile(p: &Profile<F>) -> Self {
        LabeledRows {
            user_id: p.user_id.clone(),
            rows: p.samples.clone(),
        }
    }

    pub fn from_projected(p: &ProjectedProfile<F>) -> Self {
        LabeledRows {
            user_id: p.user_id.clone(),
            rows: p.samples.clone(),
        }
    }
}

/// Stable user -> class-index map (indices follow sorted user ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    map: BTreeMap<String, usize>,
}

impl LabelMap {
    pub fn from_user_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let mut sorted: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::invalid("duplicate user ids in label map"));
        }
        let map = sorted
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, i))
            .collect();
        Ok(LabelMap { map })
    }

    pub fn class_of(&self, user_id: &str) -> Result<usize> {
        self.map
            .get(user_id)
            .copied()
            .ok_or_else(|| Error::UnknownUser(user_id.to_string()))
    }

    pub fn user_of(&self, class: usize) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, &c)| c == class)
            .map(|(u, _)| u.as_str())
    }

    /// User ids in class-index order.
    pub fn users(&self) -> Vec<&str> {
        let mut v: Vec<(&str, usize)> = self.map.iter().map(|(u, &c)| (u.as_str(), c)).collect();
        v.sort_by_key(|&(_, c)| c);
        v.into_iter().map(|(u, _)| u).collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lm: LabelMap = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut classes: Vec<usize> = lm.map.values().copied().collect();
        classes.sort_unstable();
        if classes.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(Error::invalid("label map classes must be 0..n contiguous"));
        }
        Ok(lm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    PrivacyPreserving,
}

/// Classifier architecture: one dense/batch-norm/ReLU/dropout stack per
/// width, then a dense softmax head over the users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaClassifierSpec {
    pub variant: Variant,
    pub stack_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
}

impl BaClassifierSpec {
    /// Wide stack for unprojected profiles: 128/256/512/256/128, dropout 0.1.
    pub fn plain(n_classes: usize) -> Self {
        BaClassifierSpec {
            variant: Variant::Plain,
            stack_widths: vec![128, 256, 512, 256, 128],
            dropout_rate: 0.1,
            n_classes,
        }
    }

    /// Compact stack for projected profiles: 64/128/64, dropout 0.1.
    pub fn privacy_preserving(n_classes: usize) -> Self {
        BaClassifierSpec {
            variant: Variant::PrivacyPreserving,
            stack_widths: vec![64, 128, 64],
            dropout_rate: 0.1,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack_widths.is_empty() {
            return Err(Error::invalid("stack_widths must be nonempty"));
        }
        if self.stack_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("stack widths must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must be in [0,1)"));
        }
        Ok(())
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(4 * self.stack_widths.len() + 2);
        for &w in &self.stack_widths {
            specs.push(LayerSpec::Dense { out: w });
            specs.push(LayerSpec::BatchNorm);
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout {
                rate: self.dropout_rate,
            });
        }
        specs.push(LayerSpec::Dense {
            out: self.n_classes,
        });
        specs.push(LayerSpec::Softmax);
        specs
    }
}

/// Materializes the classifier network (untrained, Glorot init from seed).
pub fn build_classifier<F: Scalar>(
    spec: &BaClassifierSpec,
    input_dim: usize,
    seed: u64,
) -> Result<NeuralNet<F>> {
    spec.validate()?;
    NeuralNet::from_specs(input_dim, &spec.layer_specs(), seed)
}

/// How per-sample predictions aggregate into one claim decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Score = fraction of rows whose argmax class is the claimed class.
    MajorityArgmax,
    /// Score = mean probability assigned to the claimed class.
    MeanProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    pub mode: PolicyMode,
    pub tau: f64,
}

impl Default for VerificationPolicy {
    fn default() -> Self {
        VerificationPolicy {
            mode: PolicyMode::MajorityArgmax,
            tau: 0.5,
        }
    }
}

impl VerificationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must be in (0,1]"));
        }
        Ok(())
    }
}

/// An identity claim: "these rows belong to user_id".
#[derive(Debug, Clone)]
pub struct Claim<F> {
    pub user_id: String,
    pub rows: Mat<F>,
}

impl<F: Scalar> Claim<F> {
    pub fn from_projected(p: &ProjectedProfile<F>) -> Self {
        Claim {
            user_id: p.user_id.clone(),
            rows: p.samples.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClaimResult<F> {
    pub claimed_user: String,
    pub accept: bool,
    /// In [0,1]; accept holds exactly when score >= tau.
    pub score: f64,
    pub per_sample: Vec<PredictionVector<F>>,
}

/// Claim-level tallies backing the frr/far ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimCounts {
    pub valid_claims: usize,
    pub false_rejects: usize,
    pub invalid_claims: usize,
    pub false_accepts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub frr: f64,
    pub far: f64,
    pub counts: ClaimCounts,
}

impl ErrorRates {
    /// Ratios from counts; an empty side reports a 0.0 rate.
    pub fn from_counts(counts: ClaimCounts) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        ErrorRates {
            frr: ratio(counts.false_rejects, counts.valid_claims),
            far: ratio(counts.false_accepts, counts.invalid_claims),
            counts,
        }
    }

    /// Acceptance rate of the valid-claim side (1 - frr).
    pub fn valid_acceptance(&self) -> f64 {
        1.0 - self.frr
    }
}

/// Scores one claim under the policy. Errors on unknown claimed identity
/// or an empty row set.
pub fn verify<F: Scalar>(
    net: &NeuralNet<F>,
    label_map: &LabelMap,
    claim: &Claim<F>,
    policy: &VerificationPolicy,
) -> Result<ClaimResult<F>> {
    policy.validate()?;
    let class = label_map.class_of(&claim.user_id)?;
    if claim.rows.rows() == 0 {
        return Err(Error::invalid("claim needs at least one verification row"));
    }
    if !net.has_softmax_head() {
        return Err(Error::invalid("verification requires a softmax classifier"));
    }
    if net.output_dim() != label_map.len() {
        return Err(Error::shape(format!(
            "classifier emits {} classes but label map has {} users",
            net.output_dim(),
            label_map.len()
        )));
    }
    let out = net.infer(&claim.rows)?;
    let per_sample: Vec<PredictionVector<F>> = (0..out.rows())
        .map(|r| PredictionVector {
            probs: out.row(r).to_vec(),
        })
        .collect();
    let n = per_sample.len() as f64;
    let score = match policy.mode {
        PolicyMode::MajorityArgmax => {
            per_sample.iter().filter(|p| p.argmax() == class).count() as f64 / n
        }
        PolicyMode::MeanProbability => {
            per_sample
                .iter()
                .map(|p| p.probs[class].as_f64())
                .sum::<f64>()
                / n
        }
    };
    Ok(ClaimResult {
        claimed_user: claim.user_id.clone(),
        accept: score >= policy.tau,
        score,
        per_sample,
    })
}

/// FRR over the valid claims, FAR over the invalid ones (claims whose rows
/// belong to someone other than the claimed user).
pub fn measure_error_rates<F: Scalar>(
    net: &NeuralNet<F>,
    label_map: &LabelMap,
    valid_claims: &[Claim<F>],
    invalid_claims: &[Claim<F>],
    policy: &VerificationPolicy,
) -> Result<ErrorRates> {
    if valid_claims.is_empty() || invalid_claims.is_empty() {
        return Err(Error::invalid("both claim sets must be nonempty"));
    }
    let mut counts = ClaimCounts {
        valid_claims: valid_claims.len(),
        false_rejects: 0,
        invalid_claims: invalid_claims.len(),
        false_accepts: 0,
    };
    for c in valid_claims {
        if !verify(net, label_map, c, policy)?.accept {
            counts.false_rejects += 1;
        }
    }
    for c in invalid_claims {
        if verify(net, label_map, c, policy)?.accept {
            counts.false_accepts += 1;
        }
    }
    Ok(ErrorRates::from_counts(counts))
}

/// Fraction of all rows (across claims) classified as their claimed user.
pub fn sample_accuracy<F: Scalar>(
    net: &NeuralNet<F>,
    label_map: &LabelMap,
    claims: &[Claim<F>],
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for c in claims {
        let class = label_map.class_of(&c.user_id)?;
        let out = net.infer(&c.rows)?;
        for r in 0..out.rows() {
            let row = out.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == class {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("no rows in claim set"));
    }
    Ok(hits as f64 / total as f64)
}

/// A trained authentication system: classifier plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Enrollment<F> {
    pub net: NeuralNet<F>,
    pub label_map: LabelMap,
    pub history: TrainingHistory,
    /// Per-user validation claims (the 20% holdout of the enrollment data).
    pub validation_claims: Vec<Claim<F>>,
}

impl<F: Scalar> Enrollment<F> {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.history.final_val_accuracy()
    }
}

struct StackedSplit<F> {
    x_train: Mat<F>,
    y_train: Mat<F>,
    x_val: Mat<F>,
    y_val: Mat<F>,
    val_claims: Vec<Claim<F>>,
}

/// Splits each user 80/20 (deterministic per user and seed) and stacks the
/// parts in class order with one-hot targets.
fn stack_split<F: Scalar>(
    data: &[LabeledRows<F>],
    label_map: &LabelMap,
    seed_base: u64,
) -> Result<StackedSplit<F>> {
    let n_classes = label_map.len();
    let by_id: BTreeMap<&str, &LabeledRows<F>> =
        data.iter().map(|lr| (lr.user_id.as_str(), lr)).collect();
    let mut train_rows: Vec<Vec<F>> = Vec::new();
    let mut train_targets: Vec<Vec<F>> = Vec::new();
    let mut val_rows: Vec<Vec<F>> = Vec::new();
    let mut val_targets: Vec<Vec<F>> = Vec::new();
    let mut val_claims = Vec::new();
    for user in label_map.users() {
        let lr = by_id
            .get(user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
        let class = label_map.class_of(user)?;
        let m = lr.rows.rows();
        if m < 5 {
            return Err(Error::invalid(format!(
                "user {user:?} has {m} rows; enrollment needs at least 5 per user"
            )));
        }
        let (train_idx, val_idx) = split_indices(
            m,
            ENROLL_TRAIN_FRACTION,
            seed::for_user(seed_base, user),
        );
        let mut one_hot = vec![F::zero(); n_classes];
        one_hot[class] = F::one();
        for &i in &train_idx {
            train_rows.push(lr.rows.row(i).to_vec());
            train_targets.push(one_hot.clone());
        }
        let mut claim_rows = Vec::with_capacity(val_idx.len());
        for &i in &val_idx {
            val_rows.push(lr.rows.row(i).to_vec());
            val_targets.push(one_hot.clone());
            claim_rows.push(lr.rows.row(i).to_vec());
        }
        val_claims.push(Claim {
            user_id: user.to_string(),
            rows: Mat::from_rows(&claim_rows)?,
        });
    }
    Ok(StackedSplit {
        x_train: Mat::from_rows(&train_rows)?,
        y_train: Mat::from_rows(&train_targets)?,
        x_val: Mat::from_rows(&val_rows)?,
        y_val: Mat::from_rows(&val_targets)?,
        val_claims,
    })
}

fn check_consistent_dims<F: Scalar>(data: &[LabeledRows<F>]) -> Result<usize> {
    if data.len() < 2 {
        return Err(Error::invalid("enrollment needs at least 2 users"));
    }
    let dim = data[0].rows.cols();
    for lr in data {
        if lr.rows.cols() != dim {
            return Err(Error::shape(format!(
                "user {:?} has {} features, expected {dim}",
                lr.user_id,
                lr.rows.cols()
            )));
        }
    }
    Ok(dim)
}

/// Trains a fresh classifier on the users' rows (80/20 per-user split).
/// Deterministic in (data, spec, cfg).
pub fn enroll<F: Scalar>(
    data: &[LabeledRows<F>],
    spec: &BaClassifierSpec,
    cfg: &TrainConfig,
) -> Result<Enrollment<F>> {
    let input_dim = check_consistent_dims(data)?;
    let ids: Vec<&str> = data.iter().map(|lr| lr.user_id.as_str()).collect();
    let label_map = LabelMap::from_user_ids(&ids)?;
    if spec.n_classes != label_map.len() {
        return Err(Error::invalid(format!(
            "spec.n_classes = {} but data has {} users",
            spec.n_classes,
            label_map.len()
        )));
    }
    let split = stack_split(data, &label_map, seed::derive(cfg.seed, SPLIT_SALT))?;
    let mut net = build_classifier(spec, input_dim, seed::derive(cfg.seed, INIT_SALT))?;
    let history = train(
        &mut net,
        &split.x_train,
        &split.y_train,
        Some((&split.x_val, &split.y_val)),
        cfg,
    )?;
    Ok(Enrollment {
        net,
        label_map,
        history,
        validation_claims: split.val_claims,
    })
}

/// Projects each user's plain rows with that user's fresh matrix and scores
/// the results as valid claims: the frr field is the rejection rate, so
/// valid_acceptance() is the wrong-matrix acceptance being measured.
/// Passing the enrollment matrices instead reproduces the normal FRR.
pub fn wrong_matrix_trial<F: Scalar>(
    net: &NeuralNet<F>,
    label_map: &LabelMap,
    plain_rows: &[LabeledRows<F>],
    fresh_matrices: &BTreeMap<String, RandomMatrix<F>>,
    policy: &VerificationPolicy,
) -> Result<ErrorRates> {
    let claims = project_claims(plain_rows, fresh_matrices)?;
    let mut counts = ClaimCounts {
        valid_claims: claims.len(),
        false_rejects: 0,
        invalid_claims: 0,
        false_accepts: 0,
    };
    for c in &claims {
        if !verify(net, label_map, c, policy)?.accept {
            counts.false_rejects += 1;
        }
    }
    Ok(ErrorRates::from_counts(counts))
}

/// Helper shared with refresh: per-user projection of plain rows.
pub fn project_claims<F: Scalar>(
    plain_rows: &[LabeledRows<F>],
    matrices: &BTreeMap<String, RandomMatrix<F>>,
) -> Result<Vec<Claim<F>>> {
    if plain_rows.is_empty() {
        return Err(Error::invalid("no rows to project"));
    }
    let mut claims = Vec::with_capacity(plain_rows.len());
    for lr in plain_rows {
        let matrix = matrices.get(&lr.user_id).ok_or_else(|| {
            Error::invalid(format!("no matrix for user {:?}", lr.user_id))
        })?;
        claims.push(Claim {
            user_id: lr.user_id.clone(),
            rows: project_rows(&lr.rows, matrix)?,
        });
    }
    Ok(claims)
}

/// Outcome of a key refresh: retrained net plus error rates under the new
/// and the old matrices, with sample-level counterparts for finer reading.
#[derive(Debug, Clone)]
pub struct RefreshOutcome<F> {
    pub net: NeuralNet<F>,
    pub history: TrainingHistory,
    /// Valid-claim rates with the new matrices (frr should stay low).
    pub new_matrix_rates: ErrorRates,
    /// Valid-claim rates with the old matrices (acceptance should be low).
    pub old_matrix_rates: ErrorRates,
    pub new_matrix_sample_accuracy: f64,
    pub old_matrix_sample_acceptance: f64,
}

/// Re-projects every user's plain rows with their new matrix and continues
/// training from the existing weights (warm start). Old matrices are only
/// used to measure residual acceptance of stale credentials; passing the
/// same matrices as `new_matrices` is the no-op-rekey control.
pub fn refresh<F: Scalar>(
    net: &NeuralNet<F>,
    label_map: &LabelMap,
    plain_rows: &[LabeledRows<F>],
    old_matrices: &BTreeMap<String, RandomMatrix<F>>,
    new_matrices: &BTreeMap<String, RandomMatrix<F>>,
    policy: &VerificationPolicy,
    cfg: &TrainConfig,
) -> Result<RefreshOutcome<F>> {
    check_consistent_dims(plain_rows)?;
    for lr in plain_rows {
        for (name, map) in [("new", new_matrices), ("old", old_matrices)] {
            if !map.contains_key(&lr.user_id) {
                return Err(Error::invalid(format!(
                    "no {name} matrix for user {:?}",
                    lr.user_id
                )));
            }
        }
    }
    // Project with the new matrices, then split/stack exactly like enroll.
    let projected: Vec<LabeledRows<F>> = plain_rows
        .iter()
        .map(|lr| {
            Ok(LabeledRows {
                user_id: lr.user_id.clone(),
                rows: project_rows(&lr.rows, &new_matrices[&lr.user_id])?,
            })
        })
        .collect::<Result<_>>()?;
    let split = stack_split(&projected, label_map, seed::derive(cfg.seed, SPLIT_SALT))?;

    let mut new_net = net.clone();
    let history = train(
        &mut new_net,
        &split.x_train,
        &split.y_train,
        Some((&split.x_val, &split.y_val)),
        cfg,
    )?;

    // New-matrix validation claims come straight from the split.
    let new_claims = split.val_claims;
    // Old-matrix claims re-project the same held-out plain rows.
    let mut old_claims = Vec::with_capacity(new_claims.len());
    let by_id: BTreeMap<&str, &LabeledRows<F>> =
        plain_rows.iter().map(|lr| (lr.user_id.as_str(), lr)).collect();
    for user in label_map.users() {
        let lr = by_id
            .get(user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
        let (_, val_idx) = split_indices(
            lr.rows.rows(),
            ENROLL_TRAIN_FRACTION,
            seed::for_user(seed::derive(cfg.seed, SPLIT_SALT), user),
        );
        let rows = lr.rows.select_rows(&val_idx);
        old_claims.push(Claim {
            user_id: user.to_string(),
            rows: project_rows(&rows, &old_matrices[user])?,
        });
    }

    let score_valid_side = |claims: &[Claim<F>]| -> Result<ErrorRates> {
        let mut counts = ClaimCounts {
            valid_claims: claims.len(),
            false_rejects: 0,
            invalid_claims: 0,
            false_accepts: 0,
        };
        for c in claims {
            if !verify(&new_net, label_map, c, policy)?.accept {
                counts.false_rejects += 1;
            }
        }
        Ok(ErrorRates::from_counts(counts))
    };
    let new_matrix_rates = score_valid_side(&new_claims)?;
    let old_matrix_rates = score_valid_side(&old_claims)?;
    let new_matrix_sample_accuracy = sample_accuracy(&new_net, label_map, &new_claims)?;
    let old_matrix_sample_acceptance = sample_accuracy(&new_net, label_map, &old_claims)?;
    Ok(RefreshOutcome {
        net: new_net,
        history,
        new_matrix_rates,
        old_matrix_rates,
        new_matrix_sample_accuracy,
        old_matrix_sample_acceptance,
    })
}

/// Brute-force keyspace of a k x d matrix over the given alphabet:
/// k * d * log2(alphabet_size) bits.
pub fn keyspace_bits(k: usize, d: usize, alphabet_size: usize) -> Result<f64> {
    if k == 0 || d == 0 || alphabet_size == 0 {
        return Err(Error::invalid("keyspace arguments must be positive"));
    }
    Ok((k * d) as f64 * (alphabet_size as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Softmax over raw inputs: argmax of the row is the predicted class.
    fn identity_logit_net(n: usize) -> NeuralNet<f64> {
        NeuralNet::from_specs(n, &[LayerSpec::Softmax], 0).unwrap()
    }

    fn lm(n: usize) -> LabelMap {
        let ids: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
        LabelMap::from_user_ids(&ids).unwrap()
    }

    #[test]
    fn label_map_is_sorted_and_stable() {
        let m = LabelMap::from_user_ids(&["zoe", "amy", "mia"]).unwrap();
        assert_eq!(m.class_of("amy").unwrap(), 0);
        assert_eq!(m.class_of("mia").unwrap(), 1);
        assert_eq!(m.class_of("zoe").unwrap(), 2);
        assert_eq!(m.user_of(2), Some("zoe"));
        assert!(matches!(m.class_of("bob"), Err(Error::UnknownUser(_))));
        assert!(LabelMap::from_user_ids(&["a", "a"]).is_err());
    }

    #[test]
    fn label_map_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("label_map.json");
        let m = lm(4);
        m.save(&path).unwrap();
        assert_eq!(LabelMap::load(&path).unwrap(), m);
    }

    #[test]
    fn plain_architecture_parameter_count() {
        let spec = BaClassifierSpec::plain(68);
        let net: NeuralNet<f64> = build_classifier(&spec, 33, 0).unwrap();
        let c = net.param_counts();
        assert_eq!(c.total, 347_076);
        assert_eq!(c.trainable, 344_516);
        assert_eq!(c.non_trainable, 2_560);
    }

    #[test]
    fn privacy_architecture_parameter_count() {
        let spec = BaClassifierSpec::privacy_preserving(155);
        let net: NeuralNet<f64> = build_classifier(&spec, 56, 0).unwrap();
        let c = net.param_counts();
        assert_eq!(c.total, 31_323);
        assert_eq!(c.trainable, 30_811);
        assert_eq!(c.non_trainable, 512);
    }

    #[test]
    fn smallest_classifier_predicts() {
        let spec = BaClassifierSpec {
            variant: Variant::Plain,
            stack_widths: vec![1],
            dropout_rate: 0.1,
            n_classes: 2,
        };
        let net: NeuralNet<f64> = build_classifier(&spec, 1, 3).unwrap();
        let p = net.predict(&[0.4]).unwrap();
        assert!(p.is_valid());
        assert_eq!(p.probs.len(), 2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = BaClassifierSpec::plain(68);
        s.stack_widths.clear();
        assert!(s.validate().is_err());
        assert!(BaClassifierSpec::plain(1).validate().is_err());
        let mut s = BaClassifierSpec::plain(3);
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
    }

    fn one_row_claim(user: &str, logits: Vec<f64>) -> Claim<f64> {
        Claim {
            user_id: user.into(),
            rows: Mat::from_rows(&[logits]).unwrap(),
        }
    }

    #[test]
    fn verify_counts_matching_rows() {
        let net = identity_logit_net(2);
        let map = lm(2);
        // 6 rows favor class 0, 4 favor class 1.
        let mut rows = Vec::new();
        for _ in 0..6 {
            rows.push(vec![1.0, 0.0]);
        }
        for _ in 0..4 {
            rows.push(vec![0.0, 1.0]);
        }
        let claim = Claim {
            user_id: "u0".into(),
            rows: Mat::from_rows(&rows).unwrap(),
        };
        let policy = VerificationPolicy::default();
        let r = verify(&net, &map, &claim, &policy).unwrap();
        assert!((r.score - 0.6).abs() < 1e-12);
        assert!(r.accept);
        assert_eq!(r.per_sample.len(), 10);
    }

    #[test]
    fn verify_extremes() {
        let net = identity_logit_net(2);
        let map = lm(2);
        let policy = VerificationPolicy::default();
        let all = verify(&net, &map, &one_row_claim("u0", vec![2.0, 0.0]), &policy).unwrap();
        assert_eq!(all.score, 1.0);
        assert!(all.accept);
        let none = verify(&net, &map, &one_row_claim("u0", vec![0.0, 2.0]), &policy).unwrap();
        assert_eq!(none.score, 0.0);
        assert!(!none.accept);
    }

    #[test]
    fn mean_probability_scores_softmax_mass() {
        let net = identity_logit_net(2);
        let map = lm(2);
        // softmax(0, ln 3) = (0.25, 0.75)
        let claim = one_row_claim("u1", vec![0.0, 3.0f64.ln()]);
        let policy = VerificationPolicy {
            mode: PolicyMode::MeanProbability,
            tau: 0.75,
        };
        let r = verify(&net, &map, &claim, &policy).unwrap();
        assert!((r.score - 0.75).abs() < 1e-12);
        assert!(r.accept, "score == tau accepts");
        let stricter = VerificationPolicy {
            mode: PolicyMode::MeanProbability,
            tau: 0.76,
        };
        assert!(!verify(&net, &map, &claim, &stricter).unwrap().accept);
    }

    #[test]
    fn raising_tau_never_flips_reject_to_accept() {
        let net = identity_logit_net(3);
        let map = lm(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let claim = Claim {
                user_id: "u1".into(),
                rows: Mat::from_rows(&rows).unwrap(),
            };
            for mode in [PolicyMode::MajorityArgmax, PolicyMode::MeanProbability] {
                let mut last_accept = true;
                for tau in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
                    let r = verify(&net, &map, &claim, &VerificationPolicy { mode, tau }).unwrap();
                    if !last_accept {
                        assert!(!r.accept, "accept at tau {tau} after reject at lower tau");
                    }
                    last_accept = r.accept;
                }
            }
        }
    }

    #[test]
    fn verify_is_permutation_invariant() {
        let net = identity_logit_net(3);
        let map = lm(3);
        let rows = vec![
            vec![1.0, 0.2, -0.5],
            vec![-1.0, 2.0, 0.0],
            vec![0.3, 0.1, 0.2],
            vec![0.0, 0.0, 1.5],
        ];
        let mut shuffled = rows.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        for mode in [PolicyMode::MajorityArgmax, PolicyMode::MeanProbability] {
            let policy = VerificationPolicy { mode, tau: 0.5 };
            let a = verify(
                &net,
                &map,
                &Claim { user_id: "u0".into(), rows: Mat::from_rows(&rows).unwrap() },
                &policy,
            )
            .unwrap();
            let b = verify(
                &net,
                &map,
                &Claim { user_id: "u0".into(), rows: Mat::from_rows(&shuffled).unwrap() },
                &policy,
            )
            .unwrap();
            assert!((a.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn error_rates_count_exactly() {
        let net = identity_logit_net(2);
        let map = lm(2);
        let mut valid = Vec::new();
        for i in 0..100 {
            // 3 claims carry rows that vote for the other class.
            if i < 3 {
                valid.push(one_row_claim("u0", vec![0.0, 1.0]));
            } else {
                valid.push(one_row_claim("u0", vec![1.0, 0.0]));
            }
        }
        // Invalid claims: u1's style of rows claimed as u0; 2 of 10 accepted.
        let mut invalid = Vec::new();
        for i in 0..10 {
            if i < 2 {
                invalid.push(one_row_claim("u0", vec![1.0, 0.0]));
            } else {
                invalid.push(one_row_claim("u0", vec![0.0, 1.0]));
            }
        }
        let rates = measure_error_rates(
            &net,
            &map,
            &valid,
            &invalid,
            &VerificationPolicy::default(),
        )
        .unwrap();
        assert!((rates.frr - 0.03).abs() < 1e-12);
        assert!((rates.far - 0.2).abs() < 1e-12);
        assert_eq!(rates.counts.false_rejects, 3);
        assert_eq!(rates.counts.false_accepts, 2);
        assert!((rates.valid_acceptance() - 0.97).abs() < 1e-12);
        // FRR and acceptance are complementary (up to float rounding).
        assert!((rates.frr - (1.0 - rates.valid_acceptance())).abs() < 1e-15);
    }

    #[test]
    fn empty_claim_sets_rejected() {
        let net = identity_logit_net(2);
        let map = lm(2);
        let claims = vec![one_row_claim("u0", vec![1.0, 0.0])];
        assert!(
            measure_error_rates(&net, &map, &[], &claims, &VerificationPolicy::default()).is_err()
        );
        assert!(
            measure_error_rates(&net, &map, &claims, &[], &VerificationPolicy::default()).is_err()
        );
    }

    fn small_synthetic(n_users: usize, d: usize, m: usize, seed: u64) -> Vec<LabeledRows<f64>> {
        let spec = SynthSpec {
            n_users,
            d,
            m_per_user: m,
            class_separation: 4.0,
            seed,
        };
        let ds = generate::<f64>(&spec).unwrap();
        ds.profiles.iter().map(LabeledRows::from_profile).collect()
    }

    fn small_spec(n: usize) -> BaClassifierSpec {
        BaClassifierSpec {
            variant: Variant::PrivacyPreserving,
            stack_widths: vec![16, 32],
            dropout_rate: 0.1,
            n_classes: n,
        }
    }

    #[test]
    fn enroll_separable_users_reaches_high_accuracy() {
        // High separation: within-user noise sigma = 1/(sep * n^(1/d)) is
        // ~0.1, so the four clusters barely overlap and a trained classifier
        // must score >= 0.9 on held-out rows.
        let spec = SynthSpec {
            n_users: 4,
            d: 8,
            m_per_user: 60,
            class_separation: 8.0,
            seed: 7,
        };
        let ds = generate::<f64>(&spec).unwrap();
        let data: Vec<LabeledRows<f64>> =
            ds.profiles.iter().map(LabeledRows::from_profile).collect();
        let cfg = TrainConfig::classifier_default(40, 5);
        let e = enroll(&data, &small_spec(4), &cfg).unwrap();
        assert_eq!(e.label_map.len(), 4);
        assert_eq!(e.validation_claims.len(), 4);
        let acc = e.final_val_accuracy().unwrap();
        assert!(acc >= 0.9, "validation accuracy {acc}");
    }

    #[test]
    fn enroll_identical_users_cannot_separate() {
        // Two users sharing one profile: accuracy must sit far below a
        // separable pair (chance is 0.5; split leakage adds noise).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| rng.random::<f64>()).collect())
            .collect();
        let shared = Mat::from_rows(&rows).unwrap();
        let data = vec![
            LabeledRows { user_id: "a".into(), rows: shared.clone() },
            LabeledRows { user_id: "b".into(), rows: shared },
        ];
        let cfg = TrainConfig::classifier_default(8, 3);
        let e = enroll(&data, &small_spec(2), &cfg).unwrap();
        let acc = e.final_val_accuracy().unwrap();
        assert!(acc <= 0.85, "identical users should not separate: {acc}");
    }

    #[test]
    fn enroll_rejects_bad_inputs() {
        let data = small_synthetic(4, 8, 40, 7);
        let cfg = TrainConfig::classifier_default(2, 5);
        assert!(enroll(&data[..1], &small_spec(1), &cfg).is_err());
        assert!(enroll(&data, &small_spec(3), &cfg).is_err());
        let mut ragged = data.clone();
        ragged[1].rows = Mat::zeros(40, 9);
        assert!(enroll(&ragged, &small_spec(4), &cfg).is_err());
        let mut tiny = data;
        tiny[0].rows = Mat::zeros(3, 8);
        assert!(enroll(&tiny, &small_spec(4), &cfg).is_err());
    }

    #[test]
    fn enrollment_is_deterministic() {
        let data = small_synthetic(3, 6, 30, 11);
        let cfg = TrainConfig::classifier_default(6, 9);
        let e1 = enroll(&data, &small_spec(3), &cfg).unwrap();
        let e2 = enroll(&data, &small_spec(3), &cfg).unwrap();
        assert_eq!(
            e1.history.final_train_loss(),
            e2.history.final_train_loss()
        );
        let p1 = e1.net.predict(&data[0].rows.row(0).to_vec()).unwrap();
        let p2 = e2.net.predict(&data[0].rows.row(0).to_vec()).unwrap();
        assert_eq!(p1.probs, p2.probs);
    }

    fn matrices_for(
        users: &[&str],
        k: usize,
        d: usize,
        base_seed: u64,
    ) -> BTreeMap<String, RandomMatrix<f64>> {
        users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                (
                    u.to_string(),
                    RandomMatrix::sample(k, d, 3.0, base_seed + i as u64).unwrap(),
                )
            })
            .collect()
    }

    /// Full tiny pipeline: projected enrollment, then wrong-matrix and
    /// refresh behavior on top of it.
    #[test]
    fn projected_enrollment_wrong_matrix_and_refresh() {
        let plain = small_synthetic(4, 12, 60, 21);
        let users: Vec<&str> = plain.iter().map(|lr| lr.user_id.as_str()).collect();
        let enroll_mats = matrices_for(&users, 6, 12, 0x1000);
        let projected: Vec<LabeledRows<f64>> = plain
            .iter()
            .map(|lr| LabeledRows {
                user_id: lr.user_id.clone(),
                rows: project_rows(&lr.rows, &enroll_mats[&lr.user_id]).unwrap(),
            })
            .collect();
        let cfg = TrainConfig::classifier_default(20, 5);
        let e = enroll(&projected, &small_spec(4), &cfg).unwrap();
        let acc = e.final_val_accuracy().unwrap();
        assert!(acc >= 0.9, "projected validation accuracy {acc}");

        let policy = VerificationPolicy::default();
        // Degenerate control: "fresh" = enrollment matrices reproduces the
        // normal FRR on the full row sets.
        let control = wrong_matrix_trial(&e.net, &e.label_map, &plain, &enroll_mats, &policy).unwrap();
        assert!(control.frr <= 0.25, "control frr {}", control.frr);

        let fresh = matrices_for(&users, 6, 12, 0x3000);
        let trial = wrong_matrix_trial(&e.net, &e.label_map, &plain, &fresh, &policy).unwrap();
        assert!(
            trial.valid_acceptance() <= 0.5,
            "wrong-matrix acceptance {}",
            trial.valid_acceptance()
        );
        assert_eq!(trial.counts.invalid_claims, 0);

        // Refresh with fresh matrices: retrained net accepts new-matrix
        // claims and the old credentials decay.
        let refresh_cfg = TrainConfig::classifier_default(15, 6);
        let out = refresh(
            &e.net,
            &e.label_map,
            &plain,
            &enroll_mats,
            &fresh,
            &policy,
            &refresh_cfg,
        )
        .unwrap();
        assert!(
            out.new_matrix_sample_accuracy >= 0.8,
            "post-refresh accuracy {}",
            out.new_matrix_sample_accuracy
        );
        assert!(out.history.epochs.len() <= 15);
        // Determinism: the same refresh reproduces identical rates.
        let out2 = refresh(
            &e.net,
            &e.label_map,
            &plain,
            &enroll_mats,
            &fresh,
            &policy,
            &refresh_cfg,
        )
        .unwrap();
        assert_eq!(out.new_matrix_rates, out2.new_matrix_rates);
        assert_eq!(out.old_matrix_rates, out2.old_matrix_rates);
        assert_eq!(
            out.old_matrix_sample_acceptance,
            out2.old_matrix_sample_acceptance
        );
    }

    #[test]
    fn refresh_with_same_matrices_is_noop_rekey() {
        let plain = small_synthetic(3, 10, 50, 31);
        let users: Vec<&str> = plain.iter().map(|lr| lr.user_id.as_str()).collect();
        let mats = matrices_for(&users, 5, 10, 0x1000);
        let projected: Vec<LabeledRows<f64>> = plain
            .iter()
            .map(|lr| LabeledRows {
                user_id: lr.user_id.clone(),
                rows: project_rows(&lr.rows, &mats[&lr.user_id]).unwrap(),
            })
            .collect();
        let cfg = TrainConfig::classifier_default(18, 5);
        let e = enroll(&projected, &small_spec(3), &cfg).unwrap();
        let policy = VerificationPolicy::default();
        let out = refresh(
            &e.net,
            &e.label_map,
            &plain,
            &mats,
            &mats,
            &policy,
            &TrainConfig::classifier_default(8, 6),
        )
        .unwrap();
        // Same matrices: new- and old-matrix claims coincide.
        assert_eq!(out.new_matrix_rates, out.old_matrix_rates);
        assert!(
            (out.new_matrix_sample_accuracy - out.old_matrix_sample_acceptance).abs() < 1e-12
        );
        let pre = e.final_val_accuracy().unwrap();
        assert!(
            out.new_matrix_sample_accuracy >= pre - 0.2,
            "no-op rekey dropped accuracy {pre} -> {}",
            out.new_matrix_sample_accuracy
        );
    }

    #[test]
    fn keyspace_closed_forms() {
        assert_eq!(keyspace_bits(10, 14, 2).unwrap(), 140.0);
        assert_eq!(keyspace_bits(10, 14, 1).unwrap(), 0.0);
        let b3 = keyspace_bits(10, 14, 3).unwrap();
        assert!((b3 - 221.894_750_100_961_865).abs() < 1e-9);
        assert!(keyspace_bits(0, 14, 2).is_err());
        assert!(keyspace_bits(10, 0, 2).is_err());
        assert!(keyspace_bits(10, 14, 0).is_err());
    }

    #[test]
    fn verify_rejects_unknown_user_and_bad_tau() {
        let net = identity_logit_net(2);
        let map = lm(2);
        let claim = one_row_claim("ghost", vec![1.0, 0.0]);
        assert!(matches!(
            verify(&net, &map, &claim, &VerificationPolicy::default()),
            Err(Error::UnknownUser(_))
        ));
        let good = one_row_claim("u0", vec![1.0, 0.0]);
        for tau in [0.0, -0.5, 1.5] {
            let policy = VerificationPolicy {
                mode: PolicyMode::MajorityArgmax,
                tau,
            };
            assert!(verify(&net, &map, &good, &policy).is_err());
        }
    }

    #[test]
    fn error_rates_serialize_to_json() {
        let rates = ErrorRates::from_counts(ClaimCounts {
            valid_claims: 100,
            false_rejects: 3,
            invalid_claims: 50,
            false_accepts: 1,
        });
        let text = serde_json::to_string(&rates).unwrap();
        let back: ErrorRates = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rates);
        assert!((back.frr - 0.03).abs() < 1e-12);
        assert!((back.far - 0.02).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_sample_accuracy_on_validation() {
        // Cross-check: sample_accuracy over validation claims equals the
        // training history's final validation accuracy.
        let data = small_synthetic(3, 6, 30, 13);
        let cfg = TrainConfig::classifier_default(10, 4);
        let e = enroll(&data, &small_spec(3), &cfg).unwrap();
        let from_claims = sample_accuracy(&e.net, &e.label_map, &e.validation_claims).unwrap();
        let from_history = e.final_val_accuracy().unwrap();
        assert!((from_claims - from_history).abs() < 1e-12);
    }
}
