//! Mini-batch RMSProp training loop with per-epoch metrics and optional
//! early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

use super::{Layer, LayerGrad, Loss, Mode, NeuralNet, TrainConfig};

/// Metrics recorded at the end of an epoch, from a full inference-mode pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    /// True when early stopping ended training before the epoch budget.
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_accuracy)
    }
}

/// Mean loss and (for cross-entropy) argmax accuracy of an inference-mode
/// pass; does not mutate the net.
pub fn evaluate<F: Scalar>(
    net: &NeuralNet<F>,
    x: &Mat<F>,
    y: &Mat<F>,
    loss: Loss,
) -> Result<(f64, Option<f64>)> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!(
            "{} rows of inputs vs {} rows of targets",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("evaluate needs at least one row"));
    }
    let out = net.infer(x)?;
    if out.cols() != y.cols() {
        return Err(Error::shape(format!(
            "network emits {} values per row, targets have {}",
            out.cols(),
            y.cols()
        )));
    }
    let b = x.rows();
    match loss {
        Loss::CrossEntropy => {
            let mut total = 0.0;
            let mut hits = 0usize;
            for r in 0..b {
                let p = out.row(r);
                let t = y.row(r);
                let target = t
                    .iter()
                    .position(|&v| v == F::one())
                    .ok_or_else(|| Error::invalid("cross-entropy targets must be one-hot"))?;
                // Output is already a probability vector; clamp to avoid ln(0).
                total += -(p[target].as_f64().max(1e-300)).ln();
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                if best == target {
                    hits += 1;
                }
            }
            Ok((total / b as f64, Some(hits as f64 / b as f64)))
        }
        Loss::MeanSquaredError => {
            let mut total = 0.0;
            for r in 0..b {
                for (a, t) in out.row(r).iter().zip(y.row(r)) {
                    let d = a.as_f64() - t.as_f64();
                    total += d * d;
                }
            }
            Ok((total / (b * y.cols()) as f64, None))
        }
    }
}

/// Trains in place. Epoch loop: shuffle row indices, walk batches of
/// `batch_size` (last batch may be short), backprop, RMSProp update, then a
/// full inference-mode metrics pass. Returns Err(Diverged) when a batch loss
/// goes non-finite. Leaves the net in inference mode with the config stored.
pub fn train<F: Scalar>(
    net: &mut NeuralNet<F>,
    x: &Mat<F>,
    y: &Mat<F>,
    validation: Option<(&Mat<F>, &Mat<F>)>,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if x.rows() != y.rows() {
        return Err(Error::shape(format!(
            "{} training rows vs {} target rows",
            x.rows(),
            y.rows()
        )));
    }
    match cfg.loss {
        Loss::CrossEntropy if !net.has_softmax_head() => {
            return Err(Error::invalid("cross_entropy requires a softmax head"))
        }
        Loss::MeanSquaredError if !net.has_sigmoid_head() => {
            return Err(Error::invalid("mean_squared_error requires a sigmoid head"))
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut accum = init_accumulators(net);
    let mut history = TrainingHistory::default();
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;

    let lr = F::cast(cfg.learning_rate);
    let rho = F::cast(cfg.decay);
    let eps = F::cast(cfg.epsilon_num);

    for epoch in 0..cfg.epochs {
        net.set_mode(Mode::Training);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x.select_rows(chunk);
            let by = y.select_rows(chunk);
            let mask_seed = rng.next_u64();
            let (loss, grads) = net.loss_and_grad(&bx, &by, cfg.loss, mask_seed)?;
            if !loss.is_finite() {
                net.set_mode(Mode::Inference);
                return Err(Error::Diverged { epoch, loss });
            }
            rmsprop_step(net, &grads.per_layer, &mut accum, lr, rho, eps);
        }
        net.set_mode(Mode::Inference);

        let (train_loss, train_accuracy) = evaluate(net, x, y, cfg.loss)?;
        let (val_loss, val_accuracy) = match validation {
            Some((vx, vy)) => {
                let (l, a) = evaluate(net, vx, vy, cfg.loss)?;
                (Some(l), a)
            }
            None => (None, None),
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });

        if let (Some(es), Some(vl)) = (&cfg.early_stop, val_loss) {
            if vl < best_val - es.min_delta {
                best_val = vl;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    net.set_mode(Mode::Inference);
    net.train_config = Some(cfg.clone());
    Ok(history)
}

fn init_accumulators<F: Scalar>(net: &NeuralNet<F>) -> Vec<LayerGrad<F>> {
    net.layers
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => LayerGrad::Dense {
                dw: Mat::zeros(d.w.rows(), d.w.cols()),
                db: vec![F::zero(); d.b.len()],
            },
            Layer::BatchNorm(bn) => LayerGrad::BatchNorm {
                dgamma: vec![F::zero(); bn.gamma.len()],
                dbeta: vec![F::zero(); bn.beta.len()],
            },
            _ => LayerGrad::None,
        })
        .collect()
}

#[inline]
fn rmsprop_update<F: Scalar>(w: &mut F, g: F, a: &mut F, lr: F, rho: F, eps: F) {
    *a = rho * *a + (F::one() - rho) * g * g;
    *w -= lr * g / (*a + eps).sqrt();
}

fn rmsprop_step<F: Scalar>(
    net: &mut NeuralNet<F>,
    grads: &[LayerGrad<F>],
    accum: &mut [LayerGrad<F>],
    lr: F,
    rho: F,
    eps: F,
) {
    for ((layer, g), a) in net.layers.iter_mut().zip(grads).zip(accum.iter_mut()) {
        match (layer, g, a) {
            (
                Layer::Dense(d),
                LayerGrad::Dense { dw, db },
                LayerGrad::Dense { dw: aw, db: ab },
            ) => {
                for ((w, &gv), av) in d.w.data_mut().iter_mut().zip(dw.data()).zip(aw.data_mut()) {
                    rmsprop_update(w, gv, av, lr, rho, eps);
                }
                for ((w, &gv), av) in d.b.iter_mut().zip(db).zip(ab.iter_mut()) {
                    rmsprop_update(w, gv, av, lr, rho, eps);
                }
            }
            (
                Layer::BatchNorm(bn),
                LayerGrad::BatchNorm { dgamma, dbeta },
                LayerGrad::BatchNorm {
                    dgamma: ag,
                    dbeta: ab,
                },
            ) => {
                for ((w, &gv), av) in bn.gamma.iter_mut().zip(dgamma).zip(ag.iter_mut()) {
                    rmsprop_update(w, gv, av, lr, rho, eps);
                }
                for ((w, &gv), av) in bn.beta.iter_mut().zip(dbeta).zip(ab.iter_mut()) {
                    rmsprop_update(w, gv, av, lr, rho, eps);
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::Rng;

    /// Finite-difference check over a sample of parameter indices; relative
    /// error must stay within 1e-3.
    fn gradient_check(specs: &[LayerSpec], input_dim: usize, out_dim: usize, loss: Loss, mode: Mode) {
        let mut net = NeuralNet::<f64>::from_specs(input_dim, specs, 42).unwrap();
        net.set_mode(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = 5;
        let x = Mat::from_rows(
            &(0..b)
                .map(|_| (0..input_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y = match loss {
            Loss::CrossEntropy => {
                let mut rows = Vec::new();
                for _ in 0..b {
                    let mut t = vec![0.0; out_dim];
                    t[rng.random_range(0..out_dim)] = 1.0;
                    rows.push(t);
                }
                Mat::from_rows(&rows).unwrap()
            }
            Loss::MeanSquaredError => Mat::from_rows(
                &(0..b)
                    .map(|_| (0..out_dim).map(|_| rng.random::<f64>()).collect())
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        };
        let mask_seed = 1234;
        let (_, grads) = net.loss_and_grad(&x, &y, loss, mask_seed).unwrap();
        let flat = grads.flatten();
        let n = net.param_count();
        assert_eq!(flat.len(), n);

        // Deterministic sparse sample across the parameter range.
        let step = (n / 40).max(1);
        for i in (0..n).step_by(step) {
            let w0 = net.get_flat_param(i);
            let h = 1e-5 * w0.abs().max(1.0);
            net.set_flat_param(i, w0 + h);
            let (lp, _) = net.loss_and_grad(&x, &y, loss, mask_seed).unwrap();
            net.set_flat_param(i, w0 - h);
            let (lm, _) = net.loss_and_grad(&x, &y, loss, mask_seed).unwrap();
            net.set_flat_param(i, w0);
            let fd = (lp - lm) / (2.0 * h);
            let g = flat[i];
            let denom = fd.abs().max(g.abs()).max(1e-8);
            let rel = (fd - g).abs() / denom;
            assert!(
                rel <= 1e-3,
                "param {i}: analytic {g} vs fd {fd} (rel {rel})"
            );
        }
    }

    #[test]
    fn gradients_match_fd_dense_softmax() {
        gradient_check(
            &[LayerSpec::Dense { out: 7 }, LayerSpec::Relu, LayerSpec::Dense { out: 3 }, LayerSpec::Softmax],
            4,
            3,
            Loss::CrossEntropy,
            Mode::Training,
        );
    }

    #[test]
    fn gradients_match_fd_batchnorm_training() {
        gradient_check(
            &[
                LayerSpec::Dense { out: 6 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Dense { out: 3 },
                LayerSpec::Softmax,
            ],
            5,
            3,
            Loss::CrossEntropy,
            Mode::Training,
        );
    }

    #[test]
    fn gradients_match_fd_batchnorm_inference() {
        gradient_check(
            &[
                LayerSpec::Dense { out: 6 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Dense { out: 3 },
                LayerSpec::Softmax,
            ],
            5,
            3,
            Loss::CrossEntropy,
            Mode::Inference,
        );
    }

    #[test]
    fn gradients_match_fd_dropout_fixed_mask() {
        gradient_check(
            &[
                LayerSpec::Dense { out: 8 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.4 },
                LayerSpec::Dense { out: 2 },
                LayerSpec::Softmax,
            ],
            4,
            2,
            Loss::CrossEntropy,
            Mode::Training,
        );
    }

    #[test]
    fn gradients_match_fd_sigmoid_mse() {
        gradient_check(
            &[
                LayerSpec::Dense { out: 6 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Dense { out: 4 },
                LayerSpec::Sigmoid,
            ],
            3,
            4,
            Loss::MeanSquaredError,
            Mode::Training,
        );
    }

    fn two_blob_data(n_per: usize, seed: u64) -> (Mat<f64>, Mat<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..2 {
            let center = if c == 0 { -1.0 } else { 1.0 };
            for _ in 0..n_per {
                xs.push(vec![
                    center + rng.random::<f64>() * 0.4 - 0.2,
                    -center + rng.random::<f64>() * 0.4 - 0.2,
                ]);
                let mut t = vec![0.0, 0.0];
                t[c] = 1.0;
                ys.push(t);
            }
        }
        (Mat::from_rows(&xs).unwrap(), Mat::from_rows(&ys).unwrap())
    }

    #[test]
    fn training_separates_two_blobs() {
        let (x, y) = two_blob_data(40, 3);
        let mut net = NeuralNet::<f64>::from_specs(
            2,
            &[
                LayerSpec::Dense { out: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { out: 2 },
                LayerSpec::Softmax,
            ],
            11,
        )
        .unwrap();
        let cfg = TrainConfig::classifier_default(25, 5);
        let history = train(&mut net, &x, &y, None, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 25);
        let first = history.epochs[0].train_loss;
        let last = history.final_train_loss().unwrap();
        assert!(last < first, "loss should fall: {first} -> {last}");
        let (_, acc) = evaluate(&net, &x, &y, Loss::CrossEntropy).unwrap();
        assert!(acc.unwrap() >= 0.95, "acc {acc:?}");
        assert_eq!(net.mode(), Mode::Inference);
        assert!(net.train_config().is_some());
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let (x, y) = two_blob_data(10, 4);
        let mut net = NeuralNet::<f64>::from_specs(
            2,
            &[LayerSpec::Dense { out: 4 }, LayerSpec::Relu, LayerSpec::Dense { out: 2 }, LayerSpec::Softmax],
            21,
        )
        .unwrap();
        let before: Vec<f64> = (0..net.param_count()).map(|i| net.get_flat_param(i)).collect();
        let (loss_before, _) = evaluate(&net, &x, &y, Loss::CrossEntropy).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::classifier_default(5, 5)
        };
        let history = train(&mut net, &x, &y, None, &cfg).unwrap();
        for (i, &b) in before.iter().enumerate() {
            assert_eq!(net.get_flat_param(i), b);
        }
        for e in &history.epochs {
            assert!((e.train_loss - loss_before).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (x, y) = two_blob_data(15, 9);
        let run = |seed: u64| {
            let mut net = NeuralNet::<f64>::from_specs(
                2,
                &[
                    LayerSpec::Dense { out: 6 },
                    LayerSpec::BatchNorm,
                    LayerSpec::Relu,
                    LayerSpec::Dropout { rate: 0.1 },
                    LayerSpec::Dense { out: 2 },
                    LayerSpec::Softmax,
                ],
                31,
            )
            .unwrap();
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::classifier_default(8, seed)
            };
            let h = train(&mut net, &x, &y, None, &cfg).unwrap();
            let params: Vec<f64> = (0..net.param_count()).map(|i| net.get_flat_param(i)).collect();
            (h.final_train_loss().unwrap(), params)
        };
        let (l1, p1) = run(17);
        let (l2, p2) = run(17);
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
        let (l3, p3) = run(18);
        assert!(l1 != l3 || p1 != p3);
    }

    #[test]
    fn early_stop_halts_on_flat_validation() {
        let (x, y) = two_blob_data(20, 6);
        let (vx, vy) = two_blob_data(8, 7);
        let mut net = NeuralNet::<f64>::from_specs(
            2,
            &[LayerSpec::Dense { out: 4 }, LayerSpec::Relu, LayerSpec::Dense { out: 2 }, LayerSpec::Softmax],
            13,
        )
        .unwrap();
        // lr = 0 keeps the weights frozen: epoch 0 sets the baseline (any
        // finite loss beats the initial infinity) and every later epoch is
        // stale, so training runs exactly 1 + patience epochs.
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 50,
            early_stop: Some(super::super::EarlyStop {
                patience: 3,
                min_delta: 0.0,
            }),
            ..TrainConfig::classifier_default(50, 5)
        };
        let history = train(&mut net, &x, &y, Some((&vx, &vy)), &cfg).unwrap();
        assert!(history.stopped_early);
        assert_eq!(history.epochs.len(), 4);
    }

    #[test]
    fn evaluate_rejects_row_mismatch() {
        let (x, y) = two_blob_data(4, 1);
        let net = NeuralNet::<f64>::from_specs(
            2,
            &[LayerSpec::Dense { out: 2 }, LayerSpec::Softmax],
            1,
        )
        .unwrap();
        let short = x.select_rows(&[0, 1]);
        assert!(evaluate(&net, &short, &y, Loss::CrossEntropy).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        for cfg in [
            TrainConfig { learning_rate: -0.1, ..TrainConfig::classifier_default(1, 0) },
            TrainConfig { decay: 1.0, ..TrainConfig::classifier_default(1, 0) },
            TrainConfig { epsilon_num: 0.0, ..TrainConfig::classifier_default(1, 0) },
            TrainConfig { batch_size: 0, ..TrainConfig::classifier_default(1, 0) },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(TrainConfig::classifier_default(1, 0).validate().is_ok());
        assert!(TrainConfig::attack_default(0).validate().is_ok());
    }

    #[test]
    fn attack_default_matches_contract() {
        let cfg = TrainConfig::attack_default(3);
        assert_eq!(cfg.loss, Loss::MeanSquaredError);
        assert_eq!(cfg.epochs, 50);
        let es = cfg.early_stop.unwrap();
        assert_eq!(es.patience, 10);
        assert_eq!(es.min_delta, 1e-5);
    }
}
