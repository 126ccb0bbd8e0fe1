//! Secret ternary random matrices, the scaled random-projection transform,
//! and minimum-dimension calculators for the distance-preservation
//! guarantee.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Profile;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// k x d secret matrix with i.i.d. entries from
/// Pr(+1) = 1/(2 phi), Pr(0) = 1 - 1/phi, Pr(-1) = 1/(2 phi).
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMatrix<F> {
    pub entries: Mat<F>,
    pub phi: f64,
    pub seed: u64,
    pub matrix_id: String,
}

/// Serialized form: entries stored explicitly so a file is self-contained.
#[derive(Serialize, Deserialize)]
struct MatrixFile {
    matrix_id: String,
    k: usize,
    d: usize,
    phi: f64,
    seed: u64,
    entries: Vec<i8>,
}

impl<F: Scalar> RandomMatrix<F> {
    #[inline]
    pub fn k(&self) -> usize {
        self.entries.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.entries.cols()
    }

    /// Samples a dimension-reducing matrix (k < d), deterministic in the
    /// seed. Entry stream: row-major, one uniform draw per entry,
    /// u < 1/(2 phi) -> +1, else u < 1/phi -> -1, else 0.
    pub fn sample(k: usize, d: usize, phi: f64, seed: u64) -> Result<Self> {
        if k >= d {
            return Err(Error::invalid(format!(
                "projection must reduce dimension: k ({k}) must be < d ({d})"
            )));
        }
        Self::sample_unrestricted(k, d, phi, seed)
    }

    /// Same sampler without the k < d requirement. For distortion
    /// experiments and test fixtures (identity controls, square systems);
    /// pipeline enrollment goes through `sample`.
    pub fn sample_unrestricted(k: usize, d: usize, phi: f64, seed: u64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if !(phi > 1.0) {
            return Err(Error::invalid(format!("phi must be > 1, got {phi}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 1.0 / (2.0 * phi);
        let mut data = Vec::with_capacity(k * d);
        for _ in 0..k * d {
            let u = rng.random::<f64>();
            data.push(if u < p {
                F::one()
            } else if u < 2.0 * p {
                -F::one()
            } else {
                F::zero()
            });
        }
        Ok(RandomMatrix {
            entries: Mat::from_vec(k, d, data)?,
            phi,
            seed,
            matrix_id: format!("rm-{k}x{d}-phi{phi}-seed{seed:016x}"),
        })
    }

    /// Wraps explicit ternary entries (test fixtures, identity controls).
    pub fn from_entries(entries: Mat<F>, phi: f64, seed: u64, matrix_id: &str) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if !(phi >= 1.0) {
            return Err(Error::invalid(format!("phi must be >= 1, got {phi}")));
        }
        for &v in entries.data() {
            if v != F::one() && v != F::zero() && v != -F::one() {
                return Err(Error::invalid("entries must be in {-1, 0, +1}"));
            }
        }
        Ok(RandomMatrix {
            entries,
            phi,
            seed,
            matrix_id: matrix_id.to_string(),
        })
    }

    /// Population std of the stored entries (the empirical counterpart of
    /// `theoretical_sigma`).
    pub fn empirical_sigma(&self) -> f64 {
        let n = (self.k() * self.d()) as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &v in self.entries.data() {
            let x = v.as_f64();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n;
        (sum_sq / n - mean * mean).max(0.0).sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = MatrixFile {
            matrix_id: self.matrix_id.clone(),
            k: self.k(),
            d: self.d(),
            phi: self.phi,
            seed: self.seed,
            entries: self
                .entries
                .data()
                .iter()
                .map(|&v| v.as_f64() as i8)
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: MatrixFile = serde_json::from_str(&text)?;
        if file.entries.len() != file.k * file.d {
            return Err(Error::invalid(format!(
                "{}: {} entries for a {}x{} matrix",
                path.display(),
                file.entries.len(),
                file.k,
                file.d
            )));
        }
        if file.entries.iter().any(|&v| !(-1..=1).contains(&v)) {
            return Err(Error::invalid(format!(
                "{}: entries must be in {{-1, 0, +1}}",
                path.display()
            )));
        }
        let data: Vec<F> = file.entries.iter().map(|&v| F::cast(v as f64)).collect();
        Self::from_entries(
            Mat::from_vec(file.k, file.d, data)?,
            file.phi,
            file.seed,
            &file.matrix_id,
        )
    }
}

/// Std of the entry distribution: mean 0, E[x^2] = 1/phi, so sqrt(1/phi).
/// phi = 1 degenerates to a plus/minus-1 coin with std 1.
pub fn theoretical_sigma(phi: f64) -> Result<f64> {
    if !(phi >= 1.0) {
        return Err(Error::invalid(format!("phi must be >= 1, got {phi}")));
    }
    Ok((1.0 / phi).sqrt())
}

/// Which std enters the 1/(sqrt(k) sigma_r) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// sqrt(1/phi), deterministic and matrix-independent (default).
    Theoretical,
    /// Population std of the sampled entries.
    Empirical,
}

/// The deterministic factor 1/(sqrt(k) sigma_r) applied after R x.
/// Exposed so consumers (e.g. linear reconstruction) can divide it out.
pub fn scale_for<F: Scalar>(matrix: &RandomMatrix<F>, mode: SigmaMode) -> Result<f64> {
    let sigma = match mode {
        SigmaMode::Theoretical => theoretical_sigma(matrix.phi)?,
        SigmaMode::Empirical => {
            let s = matrix.empirical_sigma();
            if s <= 0.0 {
                return Err(Error::invalid(
                    "empirical sigma is zero (all entries equal); cannot scale",
                ));
            }
            s
        }
    };
    Ok(1.0 / ((matrix.k() as f64).sqrt() * sigma))
}

/// Projected samples tagged with the generating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedProfile<F> {
    pub user_id: String,
    pub matrix_id: String,
    pub samples: Mat<F>,
}

impl<F: Scalar> ProjectedProfile<F> {
    #[inline]
    pub fn k(&self) -> usize {
        self.samples.cols()
    }
}

/// Applies x -> (1/(sqrt(k) sigma_r)) R x to every row.
pub fn project<F: Scalar>(
    profile: &Profile<F>,
    matrix: &RandomMatrix<F>,
) -> Result<ProjectedProfile<F>> {
    project_with_sigma(profile, matrix, SigmaMode::Theoretical)
}

pub fn project_with_sigma<F: Scalar>(
    profile: &Profile<F>,
    matrix: &RandomMatrix<F>,
    mode: SigmaMode,
) -> Result<ProjectedProfile<F>> {
    let samples = project_rows_with_sigma(&profile.samples, matrix, mode)?;
    Ok(ProjectedProfile {
        user_id: profile.user_id.clone(),
        matrix_id: matrix.matrix_id.clone(),
        samples,
    })
}

/// Row-matrix form of the transform, shared by the attack corpus builder.
pub fn project_rows<F: Scalar>(rows: &Mat<F>, matrix: &RandomMatrix<F>) -> Result<Mat<F>> {
    project_rows_with_sigma(rows, matrix, SigmaMode::Theoretical)
}

pub fn project_rows_with_sigma<F: Scalar>(
    rows: &Mat<F>,
    matrix: &RandomMatrix<F>,
    mode: SigmaMode,
) -> Result<Mat<F>> {
    if rows.cols() != matrix.d() {
        return Err(Error::shape(format!(
            "rows have {} features but matrix expects d = {}",
            rows.cols(),
            matrix.d()
        )));
    }
    let mut out = rows.matmul_transpose(&matrix.entries)?;
    out.scale_in_place(F::cast(scale_for(matrix, mode)?));
    Ok(out)
}

/// Minimum-dimension parameters for the (1 +/- eps) guarantee.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JlParams {
    pub n: usize,
    pub epsilon: f64,
    pub beta: f64,
}

impl JlParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        // The denominator eps^2/2 - eps^3/3 must be positive, which caps
        // eps below 1.5; eps = 1.0 is legal (it appears in the published
        // minimum-k table).
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if denom(self.epsilon) <= 0.0 {
            return Err(Error::invalid(format!(
                "epsilon^2/2 - epsilon^3/3 must be > 0 (epsilon {} too large)",
                self.epsilon
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be > 0"));
        }
        Ok(())
    }
}

fn denom(eps: f64) -> f64 {
    eps * eps / 2.0 - eps * eps * eps / 3.0
}

/// k0 = (4 + 2 beta) / (eps^2/2 - eps^3/3) * ln(n) with `include_log` set;
/// without it, just the prefactor (4 + 2 beta) / (eps^2/2 - eps^3/3) — the
/// quantity the published minimum-k table actually lists.
pub fn jl_min_dimension(params: &JlParams, include_log: bool) -> Result<f64> {
    params.validate()?;
    let prefactor = (4.0 + 2.0 * params.beta) / denom(params.epsilon);
    Ok(if include_log {
        prefactor * (params.n as f64).ln()
    } else {
        prefactor
    })
}

/// Squared-distance ratios D^2(f(x), f(y)) / D^2(x, y) per pair, skipping
/// pairs with x = y.
pub fn distance_distortion<F: Scalar>(
    pairs: &[(Vec<F>, Vec<F>)],
    matrix: &RandomMatrix<F>,
) -> Result<Vec<f64>> {
    let d = matrix.d();
    let mut ratios = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        if x.len() != d || y.len() != d {
            return Err(Error::shape(format!(
                "pair has lengths {}/{} but matrix expects d = {d}",
                x.len(),
                y.len()
            )));
        }
        if x == y {
            continue;
        }
        let diff_sq: F = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let rows = Mat::from_rows(&[x.clone(), y.clone()])?;
        let proj = project_rows(&rows, matrix)?;
        let proj_diff_sq: F = proj
            .row(0)
            .iter()
            .zip(proj.row(1))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        ratios.push(proj_diff_sq.as_f64() / diff_sq.as_f64());
    }
    if ratios.is_empty() {
        return Err(Error::invalid("all pairs are degenerate (x = y)"));
    }
    Ok(ratios)
}
