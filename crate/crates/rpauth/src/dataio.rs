//! Profile data model, CSV ingestion, [0,1] normalization, splitting, and
//! SMOTE oversampling.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::seed;

/// One user's behavioral samples: an m x d matrix, rows are measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile<F> {
    pub user_id: String,
    pub samples: Mat<F>,
    pub feature_names: Option<Vec<String>>,
}

impl<F: Scalar> Profile<F> {
    /// Builds a profile, checking finiteness and feature-name arity.
    ///
    /// Ingestion and generation produce m >= 2, d >= 2; derived slices
    /// (per-user holdouts) may legally carry a single row.
    pub fn new(
        user_id: impl Into<String>,
        samples: Mat<F>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::invalid("profile must have at least one row and column"));
        }
        if !samples.all_finite() {
            return Err(Error::invalid("profile entries must be finite"));
        }
        if let Some(names) = &feature_names {
            if names.len() != samples.cols() {
                return Err(Error::shape(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    samples.cols()
                )));
            }
        }
        Ok(Profile {
            user_id: user_id.into(),
            samples,
            feature_names,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.samples.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.samples.cols()
    }
}

/// Per-feature (min, max) pairs recorded when a normalizer is fit.
pub type Bounds<F> = Vec<(F, F)>;

/// A collection of profiles sharing one feature space.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub profiles: Vec<Profile<F>>,
    pub normalization_bounds: Option<Bounds<F>>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(profiles: Vec<Profile<F>>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::invalid("dataset must contain at least one profile"));
        }
        let d = profiles[0].d();
        let mut seen = HashSet::new();
        for p in &profiles {
            if p.d() != d {
                return Err(Error::shape(format!(
                    "profile {:?} has {} features, expected {d}",
                    p.user_id,
                    p.d()
                )));
            }
            if !seen.insert(p.user_id.clone()) {
                return Err(Error::invalid(format!("duplicate user_id {:?}", p.user_id)));
            }
        }
        Ok(Dataset {
            profiles,
            normalization_bounds: None,
        })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.profiles[0].d()
    }

    pub fn profile(&self, user_id: &str) -> Option<&Profile<F>> {
        self.profiles.iter().find(|p| p.user_id == user_id)
    }

    /// Writes one `<user_id>.csv` per profile into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for p in &self.profiles {
            write_csv(p, &dir.join(format!("{}.csv", p.user_id)))?;
        }
        Ok(())
    }

    /// Loads every `*.csv` in `dir` (sorted by file name); user_id is the
    /// file stem.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::invalid(format!("no csv files in {}", dir.display())));
        }
        let mut profiles = Vec::with_capacity(paths.len());
        for path in paths {
            let user_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid(format!("bad file name {}", path.display())))?
                .to_string();
            profiles.push(load_csv(&path, &user_id)?);
        }
        Dataset::new(profiles)
    }
}

/// Train/holdout split parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Reads a profile from CSV: optional header (auto-detected by a non-numeric
/// first row), NaN/Infinity replaced by zero, rows exactly equal to an
/// earlier row dropped, file order preserved.
pub fn load_csv<F: Scalar>(path: &Path, user_id: &str) -> Result<Profile<F>> {
    let text = fs::read_to_string(path)?;
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut feature_names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();

    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let fields: Vec<&str> = record.iter().map(str::trim).collect();
        if fields.is_empty() || (fields.len() == 1 && fields[0].is_empty()) {
            continue;
        }
        if idx == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            feature_names = Some(fields.iter().map(|s| s.to_string()).collect());
            width = Some(fields.len());
            continue;
        }
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(Error::RaggedRow {
                path: shown,
                row: idx + 1,
                expected: w,
                got: fields.len(),
            });
        }
        let mut row = Vec::with_capacity(w);
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::BadNumber {
                path: shown.clone(),
                row: idx + 1,
                col: col + 1,
                token: f.to_string(),
            })?;
            row.push(if v.is_finite() { v } else { 0.0 });
        }
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            rows.push(row);
        }
    }

    if rows.len() < 2 {
        return Err(Error::TooFewRows {
            path: shown,
            rows: rows.len(),
        });
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::invalid(format!(
            "{shown}: profiles need at least 2 features, got {d}"
        )));
    }
    let cast: Vec<Vec<F>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| F::cast(v)).collect())
        .collect();
    Profile::new(user_id, Mat::from_rows(&cast)?, feature_names)
}

/// Writes a profile as CSV with a header row (feature names or f1..fd).
pub fn write_csv<F: Scalar>(profile: &Profile<F>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    let header: Vec<String> = match &profile.feature_names {
        Some(names) => names.clone(),
        None => (1..=profile.d()).map(|j| format!("f{j}")).collect(),
    };
    out.push_str(&header.join(","));
    out.push('\n');
    for row in profile.samples.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Global per-feature (min, max) over every profile in the dataset.
pub fn fit_normalizer<F: Scalar>(dataset: &Dataset<F>) -> Result<Bounds<F>> {
    let d = dataset.d();
    let mut bounds = vec![(F::infinity(), F::neg_infinity()); d];
    for p in &dataset.profiles {
        for row in p.samples.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                if v < bounds[j].0 {
                    bounds[j].0 = v;
                }
                if v > bounds[j].1 {
                    bounds[j].1 = v;
                }
            }
        }
    }
    Ok(bounds)
}

/// Maps entries to (v - min)/(max - min), clamped to [0,1]; constant
/// features (max == min) map to 0.
pub fn normalize<F: Scalar>(profile: &Profile<F>, bounds: &[(F, F)]) -> Result<Profile<F>> {
    if bounds.len() != profile.d() {
        return Err(Error::shape(format!(
            "{} bounds for {} features",
            bounds.len(),
            profile.d()
        )));
    }
    let mut samples = profile.samples.clone();
    for row in 0..samples.rows() {
        let r = samples.row_mut(row);
        for (j, v) in r.iter_mut().enumerate() {
            let (lo, hi) = bounds[j];
            let range = hi - lo;
            *v = if range <= F::zero() {
                F::zero()
            } else {
                ((*v - lo) / range).max(F::zero()).min(F::one())
            };
        }
    }
    Ok(Profile {
        user_id: profile.user_id.clone(),
        samples,
        feature_names: profile.feature_names.clone(),
    })
}

/// SMOTE oversampling to `target_m` rows: each synthetic row is
/// a + u * (b - a) for a random original row a, one of its k nearest
/// original rows b (Euclidean, ties by row index), and u uniform in [0,1].
/// Original rows are preserved and come first.
pub fn smote_oversample<F: Scalar>(
    profile: &Profile<F>,
    target_m: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<Profile<F>> {
    let m = profile.m();
    if m < 2 {
        return Err(Error::invalid("smote needs at least 2 original rows"));
    }
    if k_neighbors == 0 {
        return Err(Error::invalid("k_neighbors must be >= 1"));
    }
    if k_neighbors >= m {
        return Err(Error::invalid(format!(
            "k_neighbors ({k_neighbors}) must be < number of rows ({m})"
        )));
    }
    if target_m < m {
        return Err(Error::invalid(format!(
            "target_m ({target_m}) must be >= current rows ({m})"
        )));
    }
    if target_m == m {
        return Ok(profile.clone());
    }

    // k nearest original rows per row, excluding itself.
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(m);
    for i in 0..m {
        let a = profile.samples.row(i);
        let mut dist: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| {
                let b = profile.samples.row(j);
                let d2: F = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                (d2.as_f64(), j)
            })
            .collect();
        dist.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        neighbors.push(dist[..k_neighbors].iter().map(|&(_, j)| j).collect());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<F>> = profile.samples.iter_rows().map(|r| r.to_vec()).collect();
    for _ in m..target_m {
        let a_idx = rng.random_range(0..m);
        let b_idx = neighbors[a_idx][rng.random_range(0..k_neighbors)];
        let u = F::cast(rng.random::<f64>());
        let a = profile.samples.row(a_idx);
        let b = profile.samples.row(b_idx);
        rows.push(
            a.iter()
                .zip(b)
                .map(|(&x, &y)| x + u * (y - x))
                .collect(),
        );
    }
    Profile::new(
        profile.user_id.clone(),
        Mat::from_rows(&rows)?,
        profile.feature_names.clone(),
    )
}

/// Deterministic index split: |train| = round(train_fraction * m).
///
/// Both halves keep ascending order. The RNG mixes `seed` so the stream is
/// fully determined by (m, train_fraction, seed).
pub fn split_indices(m: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_train = (train_fraction * m as f64).round() as usize;
    let mut idx: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates via rand's shuffle.
    use rand::seq::SliceRandom;
    idx.shuffle(&mut rng);
    let mut train: Vec<usize> = idx[..n_train.min(m)].to_vec();
    let mut held: Vec<usize> = idx[n_train.min(m)..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Splits a profile's rows into (train, held_out); the split RNG mixes the
/// user id so distinct users get distinct permutations under one spec.
pub fn split<F: Scalar>(profile: &Profile<F>, spec: &SplitSpec) -> Result<(Profile<F>, Profile<F>)> {
    spec.validate()?;
    if profile.m() < 5 {
        return Err(Error::invalid(format!(
            "split needs at least 5 rows, profile {:?} has {}",
            profile.user_id,
            profile.m()
        )));
    }
    let (train_idx, held_idx) = split_indices(
        profile.m(),
        spec.train_fraction,
        seed::for_user(spec.seed, &profile.user_id),
    );
    let make = |idx: &[usize]| Profile {
        user_id: profile.user_id.clone(),
        samples: profile.samples.select_rows(idx),
        feature_names: profile.feature_names.clone(),
    };
    Ok((make(&train_idx), make(&held_idx)))
}
