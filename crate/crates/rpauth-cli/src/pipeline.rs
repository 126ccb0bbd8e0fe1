//! Command implementations. Every artifact lives under the `--out` root and
//! derives deterministically from the master seed, so re-running a command
//! with the same configuration reproduces identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpauth::attack::{
    build_attack_corpus, min_norm_reconstruct_all, recover_profiles, train_attack_model,
    AttackModelSpec,
};
use rpauth::authsys::{
    enroll, keyspace_bits, project_claims, refresh, sample_accuracy, verify, wrong_matrix_trial,
    BaClassifierSpec, Claim, LabelMap, LabeledRows, Variant,
};
use rpauth::dataio::{
    fit_normalizer, normalize, smote_oversample, split, write_csv, Dataset, Profile, SplitSpec,
};
use rpauth::nn::TrainConfig;
use rpauth::privacy::evaluate_distribution_privacy;
use rpauth::projection::{project, project_rows, ProjectedProfile, RandomMatrix};
use rpauth::seed;

use crate::config::{
    config_err, runtime_err, AttackModeCfg, CliError, CliResult, DataSource, PipelineConfig,
};
use crate::report::{
    fmt_rate, load_json, render_table, save_json, save_text, EnrollReport, RateBlock,
    RefreshReport, VerifyReport,
};

// Seed-derivation offsets. Each consumer of randomness gets its own offset
// from the master seed so no two stages ever share a stream.
const SEED_SYNTH: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_SMOTE: u64 = 3;
const SEED_TRAIN: u64 = 4;
const SEED_ATTACK_CORPUS: u64 = 5;
const SEED_ATTACK_SYNTH: u64 = 6;
const SEED_ATTACK_TRAIN: u64 = 7;
const SEED_REFRESH_TRAIN: u64 = 8;
const SEED_DERANGEMENT: u64 = 9;
const SEED_MATRIX_BASE: u64 = 0x1000;
const SEED_REFRESH_MATRIX_BASE: u64 = 0x2000;
const SEED_WRONG_MATRIX_BASE: u64 = 0x3000;

fn rt(e: rpauth::Error) -> CliError {
    runtime_err(e)
}

/// Samples a ternary matrix, deterministically retrying until the rows are
/// linearly independent. Sparse ternary draws occasionally produce a
/// rank-deficient matrix (for example an all-zero row); such a key would
/// discard more information than the projection is designed to and has no
/// minimum-norm preimage, so it is rejected. Retries step the seed by a
/// large constant to stay clear of neighboring users' seeds.
fn sample_full_rank_matrix(
    k: usize,
    d: usize,
    phi: f64,
    base_seed: u64,
) -> CliResult<RandomMatrix<f64>> {
    const ATTEMPT_STEP: u64 = 0x0100_0000;
    for attempt in 0..64 {
        let m = RandomMatrix::sample(k, d, phi, seed::derive(base_seed, attempt * ATTEMPT_STEP))
            .map_err(rt)?;
        let gram = m.entries.matmul_transpose(&m.entries).map_err(rt)?;
        if rpauth::mat::cholesky(&gram).is_ok() {
            return Ok(m);
        }
    }
    Err(runtime_err(format!(
        "no full-rank {k}x{d} ternary matrix found in 64 draws from seed {base_seed}"
    )))
}

/// File layout under the `--out` root.
pub struct OutPaths {
    pub root: PathBuf,
}

impl OutPaths {
    pub fn new(root: &Path) -> Self {
        OutPaths {
            root: root.to_path_buf(),
        }
    }
    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn model_prev(&self) -> PathBuf {
        self.root.join("model_prev.json")
    }
    pub fn label_map(&self) -> PathBuf {
        self.root.join("label_map.json")
    }
    pub fn bounds(&self) -> PathBuf {
        self.root.join("bounds.json")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.json")
    }
    pub fn refresh_history(&self) -> PathBuf {
        self.root.join("refresh_history.json")
    }
    pub fn matrices_dir(&self) -> PathBuf {
        self.root.join("matrices")
    }
    pub fn matrices_prev_dir(&self) -> PathBuf {
        self.root.join("matrices_prev")
    }
    pub fn working_dir(&self) -> PathBuf {
        self.root.join("working")
    }
    pub fn holdout_dir(&self) -> PathBuf {
        self.root.join("holdout")
    }
    pub fn training_dir(&self) -> PathBuf {
        self.root.join("training")
    }
    pub fn enroll_report(&self, ext: &str) -> PathBuf {
        self.root.join(format!("enroll_report.{ext}"))
    }
    pub fn verify_report(&self, ext: &str) -> PathBuf {
        self.root.join(format!("verify_report.{ext}"))
    }
    pub fn refresh_report(&self, ext: &str) -> PathBuf {
        self.root.join(format!("refresh_report.{ext}"))
    }
    pub fn attack_history(&self, mode: &str) -> PathBuf {
        self.root.join(format!("attack_history_{mode}.json"))
    }
    pub fn recovered_dir(&self, mode: &str) -> PathBuf {
        self.root.join("recovered").join(mode)
    }
    pub fn privacy_report(&self, mode: &str, ext: &str) -> PathBuf {
        self.root.join(format!("privacy_report_{mode}.{ext}"))
    }
    pub fn summary(&self, ext: &str) -> PathBuf {
        self.root.join(format!("summary.{ext}"))
    }
}

/// Removes and recreates a directory so stale files from an earlier, larger
/// run can never leak into the current one.
fn reset_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(runtime_err)?;
    }
    std::fs::create_dir_all(dir).map_err(runtime_err)?;
    Ok(())
}

fn save_profiles(dir: &Path, profiles: &[Profile<f64>]) -> CliResult<()> {
    reset_dir(dir)?;
    for p in profiles {
        write_csv(p, &dir.join(format!("{}.csv", p.user_id))).map_err(rt)?;
    }
    Ok(())
}

/// Loads the source dataset: the synthetic generator (seeded from the master
/// seed) or a directory of per-user CSVs.
fn load_source(cfg: &PipelineConfig) -> CliResult<Dataset<f64>> {
    match &cfg.data {
        DataSource::Synthetic => {
            let spec = cfg.synth.spec(seed::derive(cfg.seed, SEED_SYNTH));
            rpauth::synth::generate::<f64>(&spec).map_err(rt)
        }
        DataSource::Csv(dir) => Dataset::load_dir(dir).map_err(rt),
    }
}

/// Splits the user population into the enrolled group and the reserve pool.
fn group_split(
    cfg: &PipelineConfig,
    ds: Dataset<f64>,
) -> CliResult<(Vec<Profile<f64>>, Vec<Profile<f64>>)> {
    let n = ds.profiles.len();
    let enrolled_n = (cfg.group_fraction * n as f64).round() as usize;
    let enrolled_n = enrolled_n.min(n);
    if enrolled_n < 2 {
        return Err(config_err(format!(
            "split.group_fraction = {} enrolls {enrolled_n} of {n} users; \
             at least 2 are required",
            cfg.group_fraction
        )));
    }
    let mut profiles = ds.profiles;
    let pool = profiles.split_off(enrolled_n);
    Ok((profiles, pool))
}

/// Normalization bounds with the feature names they were fitted on.
#[derive(serde::Serialize, serde::Deserialize)]
struct BoundsFile {
    feature_names: Option<Vec<String>>,
    bounds: Vec<(f64, f64)>,
}

fn load_matrices(dir: &Path, users: &[&str]) -> CliResult<BTreeMap<String, RandomMatrix<f64>>> {
    let mut map = BTreeMap::new();
    for user in users {
        let path = dir.join(format!("{user}.json"));
        let m = RandomMatrix::load(&path)
            .map_err(|e| runtime_err(format!("matrix for {user}: {e}")))?;
        map.insert(user.to_string(), m);
    }
    Ok(map)
}

fn load_profile_dir(dir: &Path) -> CliResult<Vec<Profile<f64>>> {
    Ok(Dataset::load_dir(dir).map_err(rt)?.profiles)
}

fn profile_for<'a>(profiles: &'a [Profile<f64>], user: &str) -> CliResult<&'a Profile<f64>> {
    profiles
        .iter()
        .find(|p| p.user_id == user)
        .ok_or_else(|| runtime_err(format!("no stored rows for user {user:?}")))
}

/// `generate`: materialize the synthetic corpus as per-user CSVs.
pub fn cmd_generate(cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    if cfg.data != DataSource::Synthetic {
        return Err(config_err(
            "generate only makes sense with data.source = synthetic",
        ));
    }
    let paths = OutPaths::new(out);
    let ds = load_source(cfg)?;
    reset_dir(&paths.dataset_dir())?;
    ds.save_dir(&paths.dataset_dir()).map_err(rt)?;
    println!(
        "generate: wrote {} profiles ({} rows x {} features each) to {}",
        ds.profiles.len(),
        cfg.synth.m_per_user,
        ds.d(),
        paths.dataset_dir().display()
    );
    Ok(())
}

/// `enroll`: split, normalize, oversample, project, train, persist.
pub fn cmd_enroll(cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let paths = OutPaths::new(out);
    let ds = load_source(cfg)?;
    let d = ds.d();
    if cfg.projection_enabled && cfg.projection_k >= d {
        return Err(config_err(format!(
            "projection.k = {} must be smaller than the feature count d = {d}",
            cfg.projection_k
        )));
    }
    let (enrolled, _pool) = group_split(cfg, ds)?;

    // Per-user train/holdout split on the raw rows.
    let split_spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        seed: seed::derive(cfg.seed, SEED_SPLIT),
    };
    let mut working_raw = Vec::with_capacity(enrolled.len());
    let mut holdout_raw = Vec::with_capacity(enrolled.len());
    for p in &enrolled {
        let (w, h) = split(p, &split_spec).map_err(rt)?;
        working_raw.push(w);
        holdout_raw.push(h);
    }

    // Bounds are fitted on training rows only, then applied everywhere.
    let bounds = fit_normalizer(&Dataset::new(working_raw.clone()).map_err(rt)?).map_err(rt)?;
    let working: Vec<Profile<f64>> = working_raw
        .iter()
        .map(|p| normalize(p, &bounds))
        .collect::<Result<_, _>>()
        .map_err(rt)?;
    let holdout: Vec<Profile<f64>> = holdout_raw
        .iter()
        .map(|p| normalize(p, &bounds))
        .collect::<Result<_, _>>()
        .map_err(rt)?;

    // Oversample users whose training rows fall short of the target.
    let smote_seed = seed::derive(cfg.seed, SEED_SMOTE);
    let training: Vec<Profile<f64>> = working
        .iter()
        .map(|p| {
            if cfg.smote_target > p.m() {
                smote_oversample(
                    p,
                    cfg.smote_target,
                    cfg.smote_k_neighbors,
                    seed::for_user(smote_seed, &p.user_id),
                )
            } else {
                Ok(p.clone())
            }
        })
        .collect::<Result<_, _>>()
        .map_err(rt)?;

    // One secret ternary matrix per enrolled user.
    let mut matrices: BTreeMap<String, RandomMatrix<f64>> = BTreeMap::new();
    if cfg.projection_enabled {
        for (idx, p) in enrolled.iter().enumerate() {
            let m = sample_full_rank_matrix(
                cfg.projection_k,
                d,
                cfg.projection_phi,
                seed::derive(cfg.seed, SEED_MATRIX_BASE + idx as u64),
            )?;
            matrices.insert(p.user_id.clone(), m);
        }
    }

    // The classifier sees projected rows (or plain rows for the baseline).
    let labeled: Vec<LabeledRows<f64>> = training
        .iter()
        .map(|p| {
            let rows = if cfg.projection_enabled {
                project_rows(&p.samples, &matrices[&p.user_id]).map_err(rt)?
            } else {
                p.samples.clone()
            };
            Ok(LabeledRows {
                user_id: p.user_id.clone(),
                rows,
            })
        })
        .collect::<CliResult<_>>()?;

    let mut spec = match cfg.classifier_variant {
        Variant::Plain => BaClassifierSpec::plain(enrolled.len()),
        Variant::PrivacyPreserving => BaClassifierSpec::privacy_preserving(enrolled.len()),
    };
    if let Some(widths) = &cfg.classifier_widths {
        spec.stack_widths = widths.clone();
    }
    spec.dropout_rate = cfg.classifier_dropout;

    let train_cfg = cfg
        .train
        .classifier_config(cfg.train.epochs, seed::derive(cfg.seed, SEED_TRAIN));
    let enrollment = enroll(&labeled, &spec, &train_cfg).map_err(rt)?;

    // Claim-level FRR on the enrollment validation claims.
    let mut val_rejects = 0usize;
    for claim in &enrollment.validation_claims {
        if !verify(&enrollment.net, &enrollment.label_map, claim, &cfg.policy)
            .map_err(rt)?
            .accept
        {
            val_rejects += 1;
        }
    }
    let val_claims = enrollment.validation_claims.len();
    let val_frr = if val_claims == 0 {
        0.0
    } else {
        val_rejects as f64 / val_claims as f64
    };
    let val_sample_acc = sample_accuracy(
        &enrollment.net,
        &enrollment.label_map,
        &enrollment.validation_claims,
    )
    .map_err(rt)?;

    // Persist everything only after training succeeded.
    std::fs::create_dir_all(out).map_err(runtime_err)?;
    enrollment.net.save(&paths.model()).map_err(rt)?;
    enrollment.label_map.save(&paths.label_map()).map_err(rt)?;
    save_json(
        &BoundsFile {
            feature_names: enrolled[0].feature_names.clone(),
            bounds: bounds.clone(),
        },
        &paths.bounds(),
    )?;
    save_json(&enrollment.history, &paths.history())?;
    save_profiles(&paths.working_dir(), &working)?;
    save_profiles(&paths.holdout_dir(), &holdout)?;
    save_profiles(&paths.training_dir(), &training)?;
    if cfg.projection_enabled {
        reset_dir(&paths.matrices_dir())?;
        for (user, m) in &matrices {
            m.save(&paths.matrices_dir().join(format!("{user}.json")))
                .map_err(rt)?;
        }
    }
    // A refreshed run must not leave stale rekey artifacts behind.
    for stale in [paths.model_prev()] {
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(runtime_err)?;
        }
    }
    if paths.matrices_prev_dir().exists() {
        std::fs::remove_dir_all(paths.matrices_prev_dir()).map_err(runtime_err)?;
    }

    let counts = enrollment.net.param_counts();
    let report = EnrollReport {
        n_users_enrolled: enrolled.len(),
        d,
        projection_enabled: cfg.projection_enabled,
        k: cfg.projection_enabled.then_some(cfg.projection_k),
        phi: cfg.projection_enabled.then_some(cfg.projection_phi),
        keyspace_bits: if cfg.projection_enabled {
            Some(keyspace_bits(cfg.projection_k, d, 3).map_err(rt)?)
        } else {
            None
        },
        variant: cfg.variant_name().to_string(),
        stack_widths: spec.stack_widths.clone(),
        dropout: spec.dropout_rate,
        params_total: counts.total,
        params_trainable: counts.trainable,
        params_non_trainable: counts.non_trainable,
        rows_working_total: working.iter().map(|p| p.m()).sum(),
        rows_holdout_total: holdout.iter().map(|p| p.m()).sum(),
        rows_training_total: training.iter().map(|p| p.m()).sum(),
        epochs_run: enrollment.history.epochs.len(),
        stopped_early: enrollment.history.stopped_early,
        final_train_loss: enrollment.history.final_train_loss(),
        validation_sample_accuracy: Some(val_sample_acc),
        validation_claim_frr: val_frr,
        validation_claims: val_claims,
    };
    save_json(&report, &paths.enroll_report("json"))?;
    save_text(&enroll_report_text(&report), &paths.enroll_report("txt"))?;
    println!(
        "enroll: {} users, validation sample accuracy {}, claim FRR {}",
        report.n_users_enrolled,
        fmt_rate(val_sample_acc),
        fmt_rate(val_frr)
    );
    Ok(())
}

fn enroll_report_text(r: &EnrollReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("n_users_enrolled".into(), r.n_users_enrolled.to_string()),
        ("d".into(), r.d.to_string()),
        ("projection_enabled".into(), r.projection_enabled.to_string()),
    ];
    if let (Some(k), Some(phi)) = (r.k, r.phi) {
        rows.push(("k".into(), k.to_string()));
        rows.push(("phi".into(), phi.to_string()));
    }
    if let Some(bits) = r.keyspace_bits {
        rows.push(("keyspace_bits".into(), format!("{bits:.1}")));
    }
    rows.extend([
        ("variant".into(), r.variant.clone()),
        (
            "stack_widths".into(),
            r.stack_widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("dropout".into(), r.dropout.to_string()),
        ("params_total".into(), r.params_total.to_string()),
        ("params_trainable".into(), r.params_trainable.to_string()),
        (
            "params_non_trainable".into(),
            r.params_non_trainable.to_string(),
        ),
        ("rows_working_total".into(), r.rows_working_total.to_string()),
        ("rows_holdout_total".into(), r.rows_holdout_total.to_string()),
        (
            "rows_training_total".into(),
            r.rows_training_total.to_string(),
        ),
        ("epochs_run".into(), r.epochs_run.to_string()),
        ("stopped_early".into(), r.stopped_early.to_string()),
    ]);
    if let Some(loss) = r.final_train_loss {
        rows.push(("final_train_loss".into(), fmt_rate(loss)));
    }
    if let Some(acc) = r.validation_sample_accuracy {
        rows.push(("validation_sample_accuracy".into(), fmt_rate(acc)));
    }
    rows.push(("validation_claim_frr".into(), fmt_rate(r.validation_claim_frr)));
    rows.push(("validation_claims".into(), r.validation_claims.to_string()));
    render_table(&rows)
}

/// Claim pairs for `verify`: either every enrolled user claiming itself plus
/// a seeded derangement of impostor claims, or pairs read from a CSV file.
fn claim_pairs(
    cfg: &PipelineConfig,
    users: &[&str],
    claims_file: Option<&Path>,
) -> CliResult<Vec<(String, String)>> {
    if let Some(path) = claims_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "claimant,claimed" => {}
            _ => {
                return Err(config_err(format!(
                    "{}: first line must be the header `claimant,claimed`",
                    path.display()
                )))
            }
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (claimant, claimed) = line.split_once(',').ok_or_else(|| {
                config_err(format!(
                    "{}:{}: expected `claimant,claimed`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            pairs.push((claimant.trim().to_string(), claimed.trim().to_string()));
        }
        if pairs.is_empty() {
            return Err(config_err(format!(
                "{}: no claims listed",
                path.display()
            )));
        }
        return Ok(pairs);
    }

    // Default: all self-claims, plus one impostor claim per user along a
    // seeded cyclic derangement (nobody ever claims themselves).
    let mut pairs: Vec<(String, String)> = users
        .iter()
        .map(|u| (u.to_string(), u.to_string()))
        .collect();
    let n = users.len();
    if n >= 2 {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, SEED_DERANGEMENT));
        for i in (1..n).rev() {
            let j = rng.random_range(0..i);
            order.swap(i, j);
        }
        for (i, &j) in order.iter().enumerate() {
            pairs.push((users[i].to_string(), users[j].to_string()));
        }
    }
    Ok(pairs)
}

/// `verify`: score claims against the stored model.
pub fn cmd_verify(
    cfg: &PipelineConfig,
    out: &Path,
    claims_file: Option<&Path>,
    wrong_matrix: bool,
) -> CliResult<()> {
    if wrong_matrix && !cfg.projection_enabled {
        return Err(config_err(
            "--wrong-matrix needs projection.enabled = true",
        ));
    }
    let paths = OutPaths::new(out);
    let net = rpauth::NeuralNet64::load(&paths.model()).map_err(rt)?;
    let lm = LabelMap::load(&paths.label_map()).map_err(rt)?;
    let users = lm.users();
    let holdout = load_profile_dir(&paths.holdout_dir())?;
    let matrices = if cfg.projection_enabled {
        load_matrices(&paths.matrices_dir(), &users)?
    } else {
        BTreeMap::new()
    };

    let pairs = claim_pairs(cfg, &users, claims_file)?;
    let mut valid_claims: Vec<Claim<f64>> = Vec::new();
    let mut invalid_claims: Vec<Claim<f64>> = Vec::new();
    for (claimant, claimed) in &pairs {
        lm.class_of(claimed).map_err(|e| runtime_err(e))?;
        let rows_plain = &profile_for(&holdout, claimant)?.samples;
        let rows = if cfg.projection_enabled {
            let m = matrices
                .get(claimed)
                .ok_or_else(|| runtime_err(format!("no matrix for user {claimed:?}")))?;
            project_rows(rows_plain, m).map_err(rt)?
        } else {
            rows_plain.clone()
        };
        let claim = Claim {
            user_id: claimed.clone(),
            rows,
        };
        if claimant == claimed {
            valid_claims.push(claim);
        } else {
            invalid_claims.push(claim);
        }
    }

    let score_block = |claims: &[Claim<f64>]| -> CliResult<Option<RateBlock>> {
        if claims.is_empty() {
            return Ok(None);
        }
        let mut accepted = 0usize;
        for c in claims {
            if verify(&net, &lm, c, &cfg.policy).map_err(rt)?.accept {
                accepted += 1;
            }
        }
        Ok(Some(RateBlock {
            claims: claims.len(),
            accepted,
            acceptance_rate: accepted as f64 / claims.len() as f64,
            sample_acceptance: sample_accuracy(&net, &lm, claims).map_err(rt)?,
        }))
    };
    let valid = score_block(&valid_claims)?;
    let invalid = score_block(&invalid_claims)?;

    let wrong = if wrong_matrix {
        let plain: Vec<LabeledRows<f64>> = users
            .iter()
            .map(|u| {
                Ok(LabeledRows::from_profile(profile_for(&holdout, u)?))
            })
            .collect::<CliResult<_>>()?;
        let d = holdout[0].d();
        // A single fresh draw per user is too coarse an estimate of the
        // acceptance rate, so average over several rounds of fresh matrices.
        let mut total_claims = 0usize;
        let mut total_accepted = 0usize;
        let mut all_claims = Vec::new();
        for round in 0..cfg.wrong_matrix_rounds {
            let mut fresh = BTreeMap::new();
            for (idx, u) in users.iter().enumerate() {
                fresh.insert(
                    u.to_string(),
                    sample_full_rank_matrix(
                        cfg.projection_k,
                        d,
                        cfg.projection_phi,
                        seed::derive(
                            cfg.seed,
                            SEED_WRONG_MATRIX_BASE + (round * 4096 + idx) as u64,
                        ),
                    )?,
                );
            }
            let rates = wrong_matrix_trial(&net, &lm, &plain, &fresh, &cfg.policy).map_err(rt)?;
            total_claims += rates.counts.valid_claims;
            total_accepted += rates.counts.valid_claims - rates.counts.false_rejects;
            all_claims.extend(project_claims(&plain, &fresh).map_err(rt)?);
        }
        Some(RateBlock {
            claims: total_claims,
            accepted: total_accepted,
            acceptance_rate: total_accepted as f64 / total_claims as f64,
            sample_acceptance: sample_accuracy(&net, &lm, &all_claims).map_err(rt)?,
        })
    } else {
        None
    };

    let report = VerifyReport {
        policy_mode: cfg.policy_mode_name().to_string(),
        tau: cfg.policy.tau,
        projection_enabled: cfg.projection_enabled,
        valid,
        invalid,
        wrong_matrix: wrong,
    };
    save_json(&report, &paths.verify_report("json"))?;
    save_text(&verify_report_text(&report), &paths.verify_report("txt"))?;

    let mut line = String::from("verify:");
    if let Some(v) = &report.valid {
        line.push_str(&format!(" FRR {}", fmt_rate(1.0 - v.acceptance_rate)));
    }
    if let Some(i) = &report.invalid {
        line.push_str(&format!(" FAR {}", fmt_rate(i.acceptance_rate)));
    }
    if let Some(w) = &report.wrong_matrix {
        line.push_str(&format!(
            " wrong-matrix acceptance {}",
            fmt_rate(w.acceptance_rate)
        ));
    }
    println!("{line}");
    Ok(())
}

fn rate_block_rows(prefix: &str, b: &RateBlock, rows: &mut Vec<(String, String)>) {
    rows.push((format!("{prefix}.claims"), b.claims.to_string()));
    rows.push((format!("{prefix}.accepted"), b.accepted.to_string()));
    rows.push((
        format!("{prefix}.acceptance_rate"),
        fmt_rate(b.acceptance_rate),
    ));
    rows.push((
        format!("{prefix}.sample_acceptance"),
        fmt_rate(b.sample_acceptance),
    ));
}

fn verify_report_text(r: &VerifyReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("policy_mode".into(), r.policy_mode.clone()),
        ("tau".into(), r.tau.to_string()),
        ("projection_enabled".into(), r.projection_enabled.to_string()),
    ];
    if let Some(v) = &r.valid {
        rate_block_rows("valid", v, &mut rows);
        rows.push(("valid.frr".into(), fmt_rate(1.0 - v.acceptance_rate)));
    }
    if let Some(i) = &r.invalid {
        rate_block_rows("invalid", i, &mut rows);
        rows.push(("invalid.far".into(), fmt_rate(i.acceptance_rate)));
    }
    if let Some(w) = &r.wrong_matrix {
        rate_block_rows("wrong_matrix", w, &mut rows);
    }
    render_table(&rows)
}

/// `refresh`: replace every user's matrix, fine-tune, and measure both the
/// new credentials and the stale ones.
pub fn cmd_refresh(cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    if !cfg.projection_enabled {
        return Err(config_err("refresh needs projection.enabled = true"));
    }
    let paths = OutPaths::new(out);
    let net = rpauth::NeuralNet64::load(&paths.model()).map_err(rt)?;
    let lm = LabelMap::load(&paths.label_map()).map_err(rt)?;
    let users = lm.users();
    let old_matrices = load_matrices(&paths.matrices_dir(), &users)?;
    let training = load_profile_dir(&paths.training_dir())?;
    let plain: Vec<LabeledRows<f64>> = users
        .iter()
        .map(|u| Ok(LabeledRows::from_profile(profile_for(&training, u)?)))
        .collect::<CliResult<_>>()?;
    let d = training[0].d();

    let mut new_matrices = BTreeMap::new();
    for (idx, u) in users.iter().enumerate() {
        new_matrices.insert(
            u.to_string(),
            sample_full_rank_matrix(
                cfg.projection_k,
                d,
                cfg.projection_phi,
                seed::derive(cfg.seed, SEED_REFRESH_MATRIX_BASE + idx as u64),
            )?,
        );
    }

    let mut train_cfg = cfg
        .train
        .classifier_config(cfg.refresh_epochs, seed::derive(cfg.seed, SEED_REFRESH_TRAIN));
    // Fitting the new projections is easy; dislodging the old ones is not.
    // Refresh therefore runs with its own, larger learning rate.
    train_cfg.learning_rate = cfg.refresh_learning_rate;
    let outcome = refresh(
        &net,
        &lm,
        &plain,
        &old_matrices,
        &new_matrices,
        &cfg.policy,
        &train_cfg,
    )
    .map_err(rt)?;

    // Keep the pre-rekey credentials around for inspection, then overwrite
    // the live ones.
    std::fs::copy(paths.model(), paths.model_prev()).map_err(runtime_err)?;
    reset_dir(&paths.matrices_prev_dir())?;
    for u in &users {
        std::fs::copy(
            paths.matrices_dir().join(format!("{u}.json")),
            paths.matrices_prev_dir().join(format!("{u}.json")),
        )
        .map_err(runtime_err)?;
    }
    outcome.net.save(&paths.model()).map_err(rt)?;
    reset_dir(&paths.matrices_dir())?;
    for (u, m) in &new_matrices {
        m.save(&paths.matrices_dir().join(format!("{u}.json")))
            .map_err(rt)?;
    }
    save_json(&outcome.history, &paths.refresh_history())?;

    let pre_refresh_frr = if paths.enroll_report("json").exists() {
        let enroll_json: EnrollReport = load_json(&paths.enroll_report("json"))?;
        Some(enroll_json.validation_claim_frr)
    } else {
        None
    };
    let report = RefreshReport {
        epochs_run: outcome.history.epochs.len(),
        stopped_early: outcome.history.stopped_early,
        pre_refresh_frr,
        new_matrix_claims: outcome.new_matrix_rates.counts.valid_claims,
        new_matrix_frr: outcome.new_matrix_rates.frr,
        new_matrix_sample_accuracy: outcome.new_matrix_sample_accuracy,
        old_matrix_claims: outcome.old_matrix_rates.counts.valid_claims,
        old_matrix_acceptance: outcome.old_matrix_rates.valid_acceptance(),
        old_matrix_sample_acceptance: outcome.old_matrix_sample_acceptance,
    };
    save_json(&report, &paths.refresh_report("json"))?;
    save_text(&refresh_report_text(&report), &paths.refresh_report("txt"))?;
    println!(
        "refresh: new-matrix FRR {}, old-matrix acceptance {}",
        fmt_rate(report.new_matrix_frr),
        fmt_rate(report.old_matrix_acceptance)
    );
    Ok(())
}

fn refresh_report_text(r: &RefreshReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("epochs_run".into(), r.epochs_run.to_string()),
        ("stopped_early".into(), r.stopped_early.to_string()),
    ];
    if let Some(pre) = r.pre_refresh_frr {
        rows.push(("pre_refresh_frr".into(), fmt_rate(pre)));
    }
    rows.extend([
        ("new_matrix_claims".into(), r.new_matrix_claims.to_string()),
        ("new_matrix_frr".into(), fmt_rate(r.new_matrix_frr)),
        (
            "new_matrix_sample_accuracy".into(),
            fmt_rate(r.new_matrix_sample_accuracy),
        ),
        ("old_matrix_claims".into(), r.old_matrix_claims.to_string()),
        (
            "old_matrix_acceptance".into(),
            fmt_rate(r.old_matrix_acceptance),
        ),
        (
            "old_matrix_sample_acceptance".into(),
            fmt_rate(r.old_matrix_sample_acceptance),
        ),
    ]);
    render_table(&rows)
}

/// `attack`: reconstruct enrolled users' plain rows from their projected
/// rows and score how much of each feature distribution leaks.
pub fn cmd_attack(cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    if !cfg.projection_enabled {
        return Err(config_err("attack needs projection.enabled = true"));
    }
    let paths = OutPaths::new(out);
    let lm = LabelMap::load(&paths.label_map()).map_err(rt)?;
    let users = lm.users();
    let matrices = load_matrices(&paths.matrices_dir(), &users)?;
    let truth = load_profile_dir(&paths.working_dir())?;
    let d = truth[0].d();

    // The attacker observes each user's projected working rows.
    let victims: Vec<ProjectedProfile<f64>> = users
        .iter()
        .map(|u| {
            let p = profile_for(&truth, u)?;
            project(p, &matrices[*u]).map_err(rt)
        })
        .collect::<CliResult<_>>()?;

    let mode = cfg.attack.mode;
    let recovered: Vec<Profile<f64>> = match mode {
        AttackModeCfg::MinNorm => min_norm_reconstruct_all(&victims, &matrices).map_err(rt)?,
        AttackModeCfg::DistributionOnly | AttackModeCfg::KnownMatrix => {
            // Matrix geometry comes from the stored matrices, not the config,
            // so the attack stays consistent with whatever enroll used.
            let k = matrices[users[0]].k();
            let phi = matrices[users[0]].phi;
            let attack_profiles = attack_pool(cfg, d)?;
            let knowledge = match mode {
                AttackModeCfg::DistributionOnly => {
                    rpauth::AttackKnowledge64::distribution_only(
                        k,
                        phi,
                        cfg.attack.matrices_per_profile,
                    )
                }
                _ => rpauth::AttackKnowledge64::known_matrix(
                    users.iter().map(|u| matrices[*u].clone()).collect(),
                    cfg.attack.matrices_per_profile,
                ),
            };
            let corpus = build_attack_corpus(
                &attack_profiles,
                &knowledge,
                seed::derive(cfg.seed, SEED_ATTACK_CORPUS),
            )
            .map_err(rt)?;
            let spec = AttackModelSpec {
                stack_widths: cfg.attack.widths.clone(),
                input_dim: k,
                output_dim: d,
            };
            let mut train_cfg =
                TrainConfig::attack_default(seed::derive(cfg.seed, SEED_ATTACK_TRAIN));
            train_cfg.epochs = cfg.attack.epochs;
            train_cfg.batch_size = cfg.train.batch_size;
            let (attack_net, history) =
                train_attack_model(&corpus, &spec, &train_cfg).map_err(rt)?;
            save_json(&history, &paths.attack_history(mode.slug()))?;
            recover_profiles(&attack_net, &victims).map_err(rt)?
        }
    };

    let privacy =
        evaluate_distribution_privacy(&recovered, &truth, cfg.privacy_alpha, mode.slug())
            .map_err(rt)?;

    save_profiles(&paths.recovered_dir(mode.slug()), &recovered)?;
    privacy
        .save_json(&paths.privacy_report(mode.slug(), "json"))
        .map_err(rt)?;
    privacy
        .save_csv(&paths.privacy_report(mode.slug(), "csv"))
        .map_err(rt)?;
    println!(
        "attack[{}]: epsilon estimate {}, mean recovered fraction {}",
        mode.slug(),
        fmt_rate(privacy.epsilon_estimate),
        fmt_rate(privacy.mean_fraction)
    );
    Ok(())
}

/// Profiles the attacker trains on: a disjoint synthetic population, or the
/// reserve (non-enrolled) users of a CSV corpus.
fn attack_pool(cfg: &PipelineConfig, d: usize) -> CliResult<Dataset<f64>> {
    match &cfg.data {
        DataSource::Synthetic => {
            let spec = rpauth::synth::SynthSpec {
                n_users: cfg.attack.n_users,
                d,
                m_per_user: cfg.attack.m_per_user,
                class_separation: cfg.synth.class_separation,
                seed: seed::derive(cfg.seed, SEED_ATTACK_SYNTH),
            };
            let ds = rpauth::synth::generate::<f64>(&spec).map_err(rt)?;
            normalize_own(ds)
        }
        DataSource::Csv(_) => {
            let ds = load_source(cfg)?;
            if ds.d() != d {
                return Err(runtime_err(format!(
                    "csv corpus has {} features but the stored matrices expect {d}",
                    ds.d()
                )));
            }
            let (_, pool) = group_split(cfg, ds)?;
            if pool.is_empty() {
                return Err(runtime_err(
                    "no reserve users left for the attack pool; lower \
                     split.group_fraction below 1.0",
                ));
            }
            normalize_own(Dataset::new(pool).map_err(rt)?)
        }
    }
}

/// Normalizes a dataset against its own bounds, mirroring the defender's
/// preprocessing from the attacker's side.
fn normalize_own(ds: Dataset<f64>) -> CliResult<Dataset<f64>> {
    let bounds = fit_normalizer(&ds).map_err(rt)?;
    let profiles: Vec<Profile<f64>> = ds
        .profiles
        .iter()
        .map(|p| normalize(p, &bounds))
        .collect::<Result<_, _>>()
        .map_err(rt)?;
    Dataset::new(profiles).map_err(rt)
}

/// `report`: merge every report JSON present under `--out` into one summary.
pub fn cmd_report(out: &Path) -> CliResult<()> {
    let paths = OutPaths::new(out);
    let merged = crate::report::collect_summary(out)?;
    if merged.is_empty() {
        return Err(runtime_err(format!(
            "no reports found under {}; run enroll/verify/refresh/attack first",
            out.display()
        )));
    }
    let value = serde_json::Value::Object(merged);
    save_json(&value, &paths.summary("json"))?;
    let mut rows = Vec::new();
    crate::report::flatten_json("", &value, &mut rows);
    let table = render_table(&rows);
    save_text(&table, &paths.summary("txt"))?;
    print!("{table}");
    Ok(())
}
