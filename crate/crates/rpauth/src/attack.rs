//! Profile-reconstruction attacks: the minimum-norm linear solution for an
//! adversary holding the projection matrix, and a learned inversion
//! regressor (projected row -> plain row) for an adversary who only knows
//! the matrix distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{split_indices, Dataset, Profile};
use crate::error::{Error, Result};
use crate::mat::{cholesky, cholesky_solve, Mat};
use crate::nn::{train, LayerSpec, NeuralNet, TrainConfig, TrainingHistory};
use crate::projection::{project_rows, scale_for, ProjectedProfile, RandomMatrix, SigmaMode};
use crate::scalar::Scalar;
use crate::seed;

const ATTACK_SPLIT_SALT: u64 = 0x2545_f491_4f6c_dd1d;
const ATTACK_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Adversary knows only the matrix distribution (phi) and k.
    DistributionOnly,
    /// Adversary holds the victims' actual projection matrices.
    KnownMatrix,
}

/// What the adversary knows when collecting attack data.
#[derive(Debug, Clone)]
pub struct AttackKnowledge<F> {
    pub mode: AttackMode,
    /// Sparsity parameter of the matrix distribution.
    pub phi: f64,
    /// How many matrices each attack profile is projected with.
    pub matrices_per_profile: usize,
    /// Projected dimension for distribution_only sampling.
    pub k: usize,
    /// The victims' matrices; required (nonempty) in known_matrix mode.
    pub victim_matrices: Vec<RandomMatrix<F>>,
}

impl<F: Scalar> AttackKnowledge<F> {
    pub fn distribution_only(k: usize, phi: f64, matrices_per_profile: usize) -> Self {
        AttackKnowledge {
            mode: AttackMode::DistributionOnly,
            phi,
            matrices_per_profile,
            k,
            victim_matrices: Vec::new(),
        }
    }

    pub fn known_matrix(
        victim_matrices: Vec<RandomMatrix<F>>,
        matrices_per_profile: usize,
    ) -> Self {
        let (k, phi) = victim_matrices
            .first()
            .map(|m| (m.k(), m.phi))
            .unwrap_or((0, 3.0));
        AttackKnowledge {
            mode: AttackMode::KnownMatrix,
            phi,
            matrices_per_profile,
            k,
            victim_matrices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrices_per_profile == 0 {
            return Err(Error::invalid("matrices_per_profile must be >= 1"));
        }
        match self.mode {
            AttackMode::DistributionOnly => {
                if self.k == 0 {
                    return Err(Error::invalid("k must be >= 1"));
                }
                if !(self.phi > 1.0) {
                    return Err(Error::invalid("phi must be > 1"));
                }
            }
            AttackMode::KnownMatrix => {
                if self.victim_matrices.is_empty() {
                    return Err(Error::invalid(
                        "known_matrix mode requires the victims' matrices",
                    ));
                }
                let k = self.victim_matrices[0].k();
                let d = self.victim_matrices[0].d();
                if self
                    .victim_matrices
                    .iter()
                    .any(|m| m.k() != k || m.d() != d)
                {
                    return Err(Error::shape(
                        "victim matrices must share one (k, d) shape",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Architecture of the inversion regressor: dense stacks with batch-norm
/// and ReLU (no dropout), then a dense sigmoid head mapping k -> d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackModelSpec {
    pub stack_widths: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl AttackModelSpec {
    /// Default widths 128/256/256/128.
    pub fn with_default_widths(k: usize, d: usize) -> Self {
        AttackModelSpec {
            stack_widths: vec![128, 256, 256, 128],
            input_dim: k,
            output_dim: d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack_widths.is_empty() || self.stack_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("stack_widths must be nonempty and positive"));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("input_dim and output_dim must be >= 1"));
        }
        Ok(())
    }
}

/// Materializes the inversion regressor (untrained).
pub fn build_attack_net<F: Scalar>(spec: &AttackModelSpec, seed: u64) -> Result<NeuralNet<F>> {
    spec.validate()?;
    let mut layers = Vec::with_capacity(3 * spec.stack_widths.len() + 2);
    for &w in &spec.stack_widths {
        layers.push(LayerSpec::Dense { out: w });
        layers.push(LayerSpec::BatchNorm);
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense {
        out: spec.output_dim,
    });
    layers.push(LayerSpec::Sigmoid);
    NeuralNet::from_specs(spec.input_dim, &layers, seed)
}

/// Paired training data: projected rows and the plain rows they came from.
#[derive(Debug, Clone)]
pub struct AttackCorpus<F> {
    pub x: Mat<F>,
    pub y: Mat<F>,
    /// Generating matrix id per row (diagnostics, mode bookkeeping).
    pub matrix_ids: Vec<String>,
}

impl<F> AttackCorpus<F> {
    pub fn len(&self) -> usize {
        self.matrix_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix_ids.is_empty()
    }
}

/// Projects every attack profile with `matrices_per_profile` matrices and
/// emits (projected row, plain row) pairs.
///
/// distribution_only samples fresh matrices (seeded per profile and slot);
/// known_matrix cycles through the victims' matrices. The attack profiles
/// must be disjoint from the enrollment users: these rows stand in for data
/// the adversary collected elsewhere.
pub fn build_attack_corpus<F: Scalar>(
    attack_profiles: &Dataset<F>,
    knowledge: &AttackKnowledge<F>,
    seed: u64,
) -> Result<AttackCorpus<F>> {
    knowledge.validate()?;
    let d = attack_profiles.d();
    if knowledge.mode == AttackMode::KnownMatrix && knowledge.victim_matrices[0].d() != d {
        return Err(Error::shape(format!(
            "victim matrices expect d = {} but attack profiles have {d}",
            knowledge.victim_matrices[0].d()
        )));
    }
    let mpp = knowledge.matrices_per_profile;
    let mut xs: Vec<Vec<F>> = Vec::new();
    let mut ys: Vec<Vec<F>> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    for (i, profile) in attack_profiles.profiles.iter().enumerate() {
        for j in 0..mpp {
            let matrix = match knowledge.mode {
                AttackMode::DistributionOnly => {
                    let ms = seed::derive(seed::for_user(seed, &profile.user_id), j as u64);
                    RandomMatrix::sample(knowledge.k, d, knowledge.phi, ms)?
                }
                AttackMode::KnownMatrix => {
                    let v = knowledge.victim_matrices.len();
                    knowledge.victim_matrices[(i * mpp + j) % v].clone()
                }
            };
            let projected = project_rows(&profile.samples, &matrix)?;
            for r in 0..projected.rows() {
                xs.push(projected.row(r).to_vec());
                ys.push(profile.samples.row(r).to_vec());
                ids.push(matrix.matrix_id.clone());
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::invalid("attack corpus is empty"));
    }
    Ok(AttackCorpus {
        x: Mat::from_rows(&xs)?,
        y: Mat::from_rows(&ys)?,
        matrix_ids: ids,
    })
}

/// Trains the inversion regressor on the corpus with an internal 80/20
/// split. Requires mean_squared_error (the sigmoid head's pairing).
pub fn train_attack_model<F: Scalar>(
    corpus: &AttackCorpus<F>,
    spec: &AttackModelSpec,
    cfg: &TrainConfig,
) -> Result<(NeuralNet<F>, TrainingHistory)> {
    if corpus.is_empty() {
        return Err(Error::invalid("attack corpus is empty"));
    }
    if cfg.loss != crate::nn::Loss::MeanSquaredError {
        return Err(Error::invalid(
            "attack training uses mean_squared_error (sigmoid head)",
        ));
    }
    if corpus.x.cols() != spec.input_dim || corpus.y.cols() != spec.output_dim {
        return Err(Error::shape(format!(
            "corpus is {} -> {} but spec is {} -> {}",
            corpus.x.cols(),
            corpus.y.cols(),
            spec.input_dim,
            spec.output_dim
        )));
    }
    let (train_idx, val_idx) = split_indices(
        corpus.len(),
        ATTACK_TRAIN_FRACTION,
        seed::derive(cfg.seed, ATTACK_SPLIT_SALT),
    );
    let x_train = corpus.x.select_rows(&train_idx);
    let y_train = corpus.y.select_rows(&train_idx);
    let mut net = build_attack_net(spec, seed::derive(cfg.seed, 0x9e37_79b9_7f4a_7c15))?;
    let history = if val_idx.is_empty() {
        train(&mut net, &x_train, &y_train, None, cfg)?
    } else {
        let x_val = corpus.x.select_rows(&val_idx);
        let y_val = corpus.y.select_rows(&val_idx);
        train(&mut net, &x_train, &y_train, Some((&x_val, &y_val)), cfg)?
    };
    Ok((net, history))
}

/// Row-wise inference over the victims' projected profiles; outputs stay in
/// [0,1] by the sigmoid head and keep each victim's user_id for pairing.
pub fn recover_profiles<F: Scalar>(
    attack_net: &NeuralNet<F>,
    victim_projected: &[ProjectedProfile<F>],
) -> Result<Vec<Profile<F>>> {
    let mut out = Vec::with_capacity(victim_projected.len());
    for pp in victim_projected {
        if pp.k() != attack_net.input_dim() {
            return Err(Error::shape(format!(
                "victim {:?} is projected to k = {} but the attack net expects {}",
                pp.user_id,
                pp.k(),
                attack_net.input_dim()
            )));
        }
        let rows = attack_net.infer(&pp.samples)?;
        out.push(Profile::new(pp.user_id.clone(), rows, None)?);
    }
    Ok(out)
}

/// Minimum-norm preimage of one projected row: divides out the deterministic
/// scale, then returns R' (R R')^-1 x'. Errors when R R' is singular
/// (rank-deficient R).
pub fn min_norm_reconstruct<F: Scalar>(
    x_prime: &[F],
    matrix: &RandomMatrix<F>,
) -> Result<Vec<F>> {
    let rows = Mat::from_rows(&[x_prime.to_vec()])?;
    let out = min_norm_reconstruct_rows(&rows, matrix)?;
    Ok(out.row(0).to_vec())
}

/// Batch form: factors R R' once and solves per row.
pub fn min_norm_reconstruct_rows<F: Scalar>(
    x_prime: &Mat<F>,
    matrix: &RandomMatrix<F>,
) -> Result<Mat<F>> {
    let k = matrix.k();
    if x_prime.cols() != k {
        return Err(Error::shape(format!(
            "projected rows have {} columns but the matrix has k = {k}",
            x_prime.cols()
        )));
    }
    let scale = F::cast(scale_for(matrix, SigmaMode::Theoretical)?);
    let gram = matrix.entries.matmul_transpose(&matrix.entries)?;
    let chol = cholesky(&gram)?;
    let mut out = Mat::zeros(x_prime.rows(), matrix.d());
    for r in 0..x_prime.rows() {
        let unscaled: Vec<F> = x_prime.row(r).iter().map(|&v| v / scale).collect();
        let w = cholesky_solve(&chol, &unscaled)?;
        // x_hat = R' w
        for (i, &wi) in w.iter().enumerate() {
            if wi == F::zero() {
                continue;
            }
            let m_row = matrix.entries.row(i);
            let o_row = out.row_mut(r);
            for (j, &mv) in m_row.iter().enumerate() {
                o_row[j] += mv * wi;
            }
        }
    }
    Ok(out)
}

/// Reconstructs every row of a projected profile, keeping the user_id.
pub fn min_norm_reconstruct_profile<F: Scalar>(
    pp: &ProjectedProfile<F>,
    matrix: &RandomMatrix<F>,
) -> Result<Profile<F>> {
    let rows = min_norm_reconstruct_rows(&pp.samples, matrix)?;
    Profile::new(pp.user_id.clone(), rows, None)
}

/// Convenience for the known-matrix pipeline: reconstruct each victim with
/// their own matrix.
pub fn min_norm_reconstruct_all<F: Scalar>(
    victims: &[ProjectedProfile<F>],
    matrices: &BTreeMap<String, RandomMatrix<F>>,
) -> Result<Vec<Profile<F>>> {
    victims
        .iter()
        .map(|pp| {
            let m = matrices.get(&pp.user_id).ok_or_else(|| {
                Error::invalid(format!("no matrix for victim {:?}", pp.user_id))
            })?;
            min_norm_reconstruct_profile(pp, m)
        })
        .collect()
}
