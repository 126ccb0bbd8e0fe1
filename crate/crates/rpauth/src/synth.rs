//! Deterministic synthetic behavioral-dataset generator: one Gaussian
//! cluster per user inside [0,1]^d, standing in for real sensor datasets
//! at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Profile};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub d: usize,
    pub m_per_user: usize,
    /// Distance between user means in units of within-user std.
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::invalid("n_users must be >= 2"));
        }
        if self.d < 2 {
            return Err(Error::invalid("d must be >= 2"));
        }
        if self.m_per_user < 2 {
            return Err(Error::invalid("m_per_user must be >= 2"));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::invalid("class_separation must be > 0"));
        }
        Ok(())
    }

    /// Within-user per-feature std: range / (class_separation * n_users^(1/d))
    /// with range = 1 (the unit feature box).
    pub fn sigma(&self) -> f64 {
        1.0 / (self.class_separation * (self.n_users as f64).powf(1.0 / self.d as f64))
    }
}

/// Generates the dataset: user means uniform in [0,1]^d (drawn first, in
/// user order), then per-user samples mean + sigma * N(0,1) drawn by
/// rejection until they land inside [0,1] (truncated Gaussian, so the
/// feature distributions stay continuous with no point mass at the
/// boundaries). Fully determined by the spec.
pub fn generate<F: Scalar>(spec: &SynthSpec) -> Result<Dataset<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_users.saturating_sub(1).to_string().len().max(2);

    let means: Vec<Vec<f64>> = (0..spec.n_users)
        .map(|_| (0..spec.d).map(|_| rng.random::<f64>()).collect())
        .collect();

    let sigma = spec.sigma();
    let names: Vec<String> = (1..=spec.d).map(|j| format!("f{j}")).collect();
    let mut profiles = Vec::with_capacity(spec.n_users);
    for (u, mean) in means.iter().enumerate() {
        let mut rows: Vec<Vec<F>> = Vec::with_capacity(spec.m_per_user);
        for _ in 0..spec.m_per_user {
            rows.push(
                mean.iter()
                    .map(|&mu| {
                        // Rejection-sample the truncated Gaussian; fall back
                        // to clamping only in the astronomically unlikely
                        // case of a thousand straight misses.
                        for _ in 0..1000 {
                            let z: f64 = rng.sample(StandardNormal);
                            let v = mu + sigma * z;
                            if (0.0..=1.0).contains(&v) {
                                return F::cast(v);
                            }
                        }
                        F::cast(mu.clamp(0.0, 1.0))
                    })
                    .collect(),
            );
        }
        profiles.push(Profile::new(
            format!("user_{u:0width$}"),
            Mat::from_rows(&rows)?,
            Some(names.clone()),
        )?);
    }
    Dataset::new(profiles)
}

/// Nearest-centroid accuracy over per-user holdout rows; the separability
/// oracle used by tests (centroids from the train part of each profile).
pub fn nearest_centroid_accuracy<F: Scalar>(dataset: &Dataset<F>, train_fraction: f64) -> f64 {
    let centroids: Vec<Vec<f64>> = dataset
        .profiles
        .iter()
        .map(|p| {
            let n_train = ((p.m() as f64) * train_fraction).round() as usize;
            let mut c = vec![0.0; p.d()];
            for row in p.samples.iter_rows().take(n_train) {
                for (j, &v) in row.iter().enumerate() {
                    c[j] += v.as_f64();
                }
            }
            for v in &mut c {
                *v /= n_train as f64;
            }
            c
        })
        .collect();

    let mut correct = 0usize;
    let mut total = 0usize;
    for (u, p) in dataset.profiles.iter().enumerate() {
        let n_train = ((p.m() as f64) * train_fraction).round() as usize;
        for row in p.samples.iter_rows().skip(n_train) {
            let mut best = (f64::INFINITY, 0usize);
            for (c_idx, c) in centroids.iter().enumerate() {
                let d2: f64 = row
                    .iter()
                    .zip(c)
                    .map(|(&x, &mu)| {
                        let diff = x.as_f64() - mu;
                        diff * diff
                    })
                    .sum();
                if d2 < best.0 {
                    best = (d2, c_idx);
                }
            }
            if best.1 == u {
                correct += 1;
            }
            total += 1;
        }
    }
    correct as f64 / total as f64
}
