//! Minimal feed-forward network engine: dense / batch-norm / ReLU / dropout
//! layers with a softmax or sigmoid head, backpropagation, and RMSProp
//! training (see `train`). Persistence lives in `io`.

mod io;
mod train;

pub use train::{evaluate, train, EpochStats, TrainingHistory};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Architecture element; dense carries its output width, dropout its rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { out: usize },
    BatchNorm,
    Relu,
    Dropout { rate: f64 },
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseLayer<F> {
    /// in_dim x out_dim, row-major.
    pub w: Mat<F>,
    pub b: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNormLayer<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub eps: f64,
    pub momentum: f64,
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer<F> {
    Dense(DenseLayer<F>),
    BatchNorm(BatchNormLayer<F>),
    Relu,
    Dropout { rate: f64 },
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Training loss; each pairs with exactly one head (softmax for
/// cross-entropy, sigmoid for mean squared error).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    MeanSquaredError,
}

/// Early-stop rule: stop when validation loss fails to improve by at least
/// `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

/// RMSProp training parameters. The update is
/// a <- decay * a + (1 - decay) * g^2; w <- w - lr * g / sqrt(a + epsilon_num).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon_num: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl TrainConfig {
    /// Classifier defaults: cross-entropy, RMSProp(0.001, 0.9, 1e-8).
    pub fn classifier_default(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            loss: Loss::CrossEntropy,
            learning_rate: 0.001,
            decay: 0.9,
            epsilon_num: 1e-8,
            batch_size: 32,
            epochs,
            seed,
            early_stop: None,
        }
    }

    /// Attack-model defaults: MSE, 50 epochs, early stop when validation
    /// loss fails to improve by 1e-5 for 10 epochs.
    pub fn attack_default(seed: u64) -> Self {
        TrainConfig {
            loss: Loss::MeanSquaredError,
            epochs: 50,
            early_stop: Some(EarlyStop {
                patience: 10,
                min_delta: 1e-5,
            }),
            ..TrainConfig::classifier_default(50, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        // learning_rate 0 is legal: it freezes the weights (useful as a
        // control), everything else still runs.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::invalid("decay must be in [0,1)"));
        }
        if !(self.epsilon_num > 0.0) {
            return Err(Error::invalid("epsilon_num must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if let Some(es) = &self.early_stop {
            if es.patience == 0 || !(es.min_delta >= 0.0) {
                return Err(Error::invalid("early_stop needs patience >= 1, min_delta >= 0"));
            }
        }
        Ok(())
    }
}

/// Class-belief vector: entries in [0,1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector<F> {
    pub probs: Vec<F>,
}

impl<F: Scalar> PredictionVector<F> {
    pub fn is_valid(&self) -> bool {
        let sum: F = self.probs.iter().copied().sum();
        self.probs
            .iter()
            .all(|&p| p >= F::zero() && p <= F::one())
            && (sum.as_f64() - 1.0).abs() <= 1e-6
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Feed-forward network with materialized weights.
#[derive(Debug, Clone)]
pub struct NeuralNet<F> {
    pub(crate) layers: Vec<Layer<F>>,
    input_dim: usize,
    output_dim: usize,
    mode: Mode,
    pub(crate) train_config: Option<TrainConfig>,
}

/// Per-layer gradient tensors, aligned with the net's layer list.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub(crate) per_layer: Vec<LayerGrad<F>>,
}

#[derive(Debug, Clone)]
pub(crate) enum LayerGrad<F> {
    Dense { dw: Mat<F>, db: Vec<F> },
    BatchNorm { dgamma: Vec<F>, dbeta: Vec<F> },
    None,
}

impl<F: Scalar> Gradients<F> {
    /// Trainable-parameter order: layers in order; dense w row-major then b;
    /// batch-norm gamma then beta. Matches the net's flat parameter order.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for g in &self.per_layer {
            match g {
                LayerGrad::Dense { dw, db } => {
                    out.extend_from_slice(dw.data());
                    out.extend_from_slice(db);
                }
                LayerGrad::BatchNorm { dgamma, dbeta } => {
                    out.extend_from_slice(dgamma);
                    out.extend_from_slice(dbeta);
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

/// Parameter tally; non-trainable counts batch-norm running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Per-layer caches captured by the forward pass for backprop.
struct Trace<F> {
    /// Input activation to each layer.
    inputs: Vec<Mat<F>>,
    aux: Vec<Aux<F>>,
}

enum Aux<F> {
    None,
    /// Dropout mask with inverted scaling applied (entries 0 or 1/(1-rate)).
    Mask(Vec<F>),
    /// Normalized activations and per-feature 1/sqrt(var + eps).
    Bn { xhat: Mat<F>, inv_std: Vec<F> },
}

impl<F: Scalar> NeuralNet<F> {
    /// Materializes a network: dense weights Glorot-uniform
    /// (+/- sqrt(6/(fan_in+fan_out))) from the seed, biases zero, batch-norm
    /// gamma 1 / beta 0 / running stats (0, 1).
    pub fn from_specs(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be >= 1"));
        }
        if specs.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, spec) in specs.iter().enumerate() {
            let is_head = matches!(spec, LayerSpec::Softmax | LayerSpec::Sigmoid);
            if is_head != (i == specs.len() - 1) {
                return Err(Error::invalid(
                    "exactly one terminal head (softmax or sigmoid) is required",
                ));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_dim;
        for spec in specs {
            match *spec {
                LayerSpec::Dense { out } => {
                    if out == 0 {
                        return Err(Error::invalid("dense width must be >= 1"));
                    }
                    let limit = (6.0 / (width + out) as f64).sqrt();
                    let mut data = Vec::with_capacity(width * out);
                    for _ in 0..width * out {
                        data.push(F::cast(rng.random::<f64>() * 2.0 * limit - limit));
                    }
                    layers.push(Layer::Dense(DenseLayer {
                        w: Mat::from_vec(width, out, data)?,
                        b: vec![F::zero(); out],
                    }));
                    width = out;
                }
                LayerSpec::BatchNorm => {
                    layers.push(Layer::BatchNorm(BatchNormLayer {
                        gamma: vec![F::one(); width],
                        beta: vec![F::zero(); width],
                        running_mean: vec![F::zero(); width],
                        running_var: vec![F::one(); width],
                        eps: BN_EPS,
                        momentum: BN_MOMENTUM,
                    }));
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::invalid(format!(
                            "dropout rate must be in [0,1), got {rate}"
                        )));
                    }
                    layers.push(Layer::Dropout { rate });
                }
                LayerSpec::Softmax => layers.push(Layer::Softmax),
                LayerSpec::Sigmoid => layers.push(Layer::Sigmoid),
            }
        }
        Ok(NeuralNet {
            layers,
            input_dim,
            output_dim: width,
            mode: Mode::Inference,
            train_config: None,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    #[inline]
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.train_config.as_ref()
    }

    /// Rebuilds the architecture description (without weights).
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerSpec::Dense { out: d.w.cols() },
                Layer::BatchNorm(_) => LayerSpec::BatchNorm,
                Layer::Relu => LayerSpec::Relu,
                Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
                Layer::Softmax => LayerSpec::Softmax,
                Layer::Sigmoid => LayerSpec::Sigmoid,
            })
            .collect()
    }

    pub fn has_softmax_head(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    pub fn has_sigmoid_head(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Sigmoid))
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut trainable = 0;
        let mut non_trainable = 0;
        for l in &self.layers {
            match l {
                Layer::Dense(d) => trainable += d.w.rows() * d.w.cols() + d.b.len(),
                Layer::BatchNorm(bn) => {
                    trainable += 2 * bn.gamma.len();
                    non_trainable += 2 * bn.gamma.len();
                }
                _ => {}
            }
        }
        ParamCounts {
            total: trainable + non_trainable,
            trainable,
            non_trainable,
        }
    }

    /// Mode-honoring forward pass. In training mode, dropout masks derive
    /// from `mask_seed` and batch-norm consumes batch statistics (updating
    /// the running ones); in inference mode `mask_seed` is ignored.
    pub fn forward(&mut self, batch: &Mat<F>, mask_seed: u64) -> Result<Mat<F>> {
        match self.mode {
            Mode::Training => {
                let (out, _) = self.forward_cached(batch, mask_seed)?;
                Ok(out)
            }
            Mode::Inference => self.infer(batch),
        }
    }

    /// Pure inference pass: dropout is identity, batch-norm uses running
    /// statistics, nothing is mutated.
    pub fn infer(&self, batch: &Mat<F>) -> Result<Mat<F>> {
        if batch.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "batch has {} columns, expected input_dim {}",
                batch.cols(),
                self.input_dim
            )));
        }
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => dense_forward(d, &x)?,
                Layer::BatchNorm(bn) => {
                    let inv_std: Vec<F> = bn
                        .running_var
                        .iter()
                        .map(|&v| F::one() / (v + F::cast(bn.eps)).sqrt())
                        .collect();
                    bn_apply(bn, &x, &bn.running_mean.clone(), &inv_std).0
                }
                Layer::Relu => x.map(|v| v.max(F::zero())),
                Layer::Dropout { .. } => x,
                Layer::Softmax => softmax(&x),
                Layer::Sigmoid => x.map(sigmoid),
            };
        }
        if !x.all_finite() {
            return Err(Error::invalid("non-finite activations in forward pass"));
        }
        Ok(x)
    }

    /// Inference-mode pass over a single vector, requiring a softmax head.
    pub fn predict(&self, vector: &[F]) -> Result<PredictionVector<F>> {
        if !self.has_softmax_head() {
            return Err(Error::invalid("predict requires a softmax head"));
        }
        let batch = Mat::from_rows(&[vector.to_vec()])?;
        let out = self.infer(&batch)?;
        Ok(PredictionVector {
            probs: out.row(0).to_vec(),
        })
    }

    /// Training-mode forward keeping per-layer caches. Mutates batch-norm
    /// running statistics.
    fn forward_cached(&mut self, batch: &Mat<F>, mask_seed: u64) -> Result<(Mat<F>, Trace<F>)> {
        if batch.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "batch has {} columns, expected input_dim {}",
                batch.cols(),
                self.input_dim
            )));
        }
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut x = batch.clone();
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            aux: Vec::with_capacity(self.layers.len()),
        };
        for layer in &mut self.layers {
            trace.inputs.push(x.clone());
            let (next, aux) = match layer {
                Layer::Dense(d) => (dense_forward(d, &x)?, Aux::None),
                Layer::BatchNorm(bn) => {
                    let rows = x.rows();
                    let cols = x.cols();
                    let bsz = F::cast(rows as f64);
                    let mut mean = vec![F::zero(); cols];
                    let mut var = vec![F::zero(); cols];
                    for r in 0..rows {
                        for (j, &v) in x.row(r).iter().enumerate() {
                            mean[j] += v;
                        }
                    }
                    for m in &mut mean {
                        *m /= bsz;
                    }
                    for r in 0..rows {
                        for (j, &v) in x.row(r).iter().enumerate() {
                            let c = v - mean[j];
                            var[j] += c * c;
                        }
                    }
                    for v in &mut var {
                        *v /= bsz;
                    }
                    let inv_std: Vec<F> = var
                        .iter()
                        .map(|&v| F::one() / (v + F::cast(bn.eps)).sqrt())
                        .collect();
                    let mom = F::cast(bn.momentum);
                    for j in 0..cols {
                        bn.running_mean[j] = mom * bn.running_mean[j] + (F::one() - mom) * mean[j];
                        bn.running_var[j] = mom * bn.running_var[j] + (F::one() - mom) * var[j];
                    }
                    let (y, xhat) = bn_apply(bn, &x, &mean, &inv_std);
                    (y, Aux::Bn { xhat, inv_std })
                }
                Layer::Relu => (x.map(|v| v.max(F::zero())), Aux::None),
                Layer::Dropout { rate } => {
                    if *rate == 0.0 {
                        (x.clone(), Aux::Mask(vec![F::one(); x.rows() * x.cols()]))
                    } else {
                        let keep = 1.0 - *rate;
                        let scale = F::cast(1.0 / keep);
                        let mask: Vec<F> = (0..x.rows() * x.cols())
                            .map(|_| {
                                if mask_rng.random::<f64>() < keep {
                                    scale
                                } else {
                                    F::zero()
                                }
                            })
                            .collect();
                        let mut y = x.clone();
                        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        (y, Aux::Mask(mask))
                    }
                }
                Layer::Softmax => (softmax(&x), Aux::None),
                Layer::Sigmoid => (x.map(sigmoid), Aux::None),
            };
            trace.aux.push(aux);
            x = next;
        }
        Ok((x, trace))
    }

    /// Mean loss over the batch plus gradients for every trainable weight.
    ///
    /// Runs in the current mode; `mask_seed` fixes the dropout masks so a
    /// finite-difference probe of the same seed sees the same function.
    pub fn loss_and_grad(
        &mut self,
        batch: &Mat<F>,
        targets: &Mat<F>,
        loss: Loss,
        mask_seed: u64,
    ) -> Result<(f64, Gradients<F>)> {
        if targets.rows() != batch.rows() {
            return Err(Error::shape(format!(
                "{} target rows for {} input rows",
                targets.rows(),
                batch.rows()
            )));
        }
        if targets.cols() != self.output_dim {
            return Err(Error::shape(format!(
                "{} target columns, expected output_dim {}",
                targets.cols(),
                self.output_dim
            )));
        }
        let training = self.mode == Mode::Training;
        let (out, trace) = if training {
            self.forward_cached(batch, mask_seed)?
        } else {
            // Inference-semantics trace: dropout identity, BN running stats.
            self.inference_trace(batch)?
        };

        let b = batch.rows();
        let bsz = F::cast(b as f64);
        let n_layers = self.layers.len();

        // Fused head + loss.
        let (loss_value, mut dx) = match (loss, self.layers.last()) {
            (Loss::CrossEntropy, Some(Layer::Softmax)) => {
                validate_one_hot(targets)?;
                let logits = &trace.inputs[n_layers - 1];
                let mut total = F::zero();
                for r in 0..b {
                    let row = logits.row(r);
                    let mut mx = row[0];
                    for &v in row {
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut sum = F::zero();
                    for &v in row {
                        sum += (v - mx).exp();
                    }
                    let log_z = sum.ln() + mx;
                    let t = targets
                        .row(r)
                        .iter()
                        .position(|&v| v == F::one())
                        .expect("validated one-hot");
                    total += log_z - row[t];
                }
                let mut dx = out.clone();
                for r in 0..b {
                    for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - targets.get(r, j)) / bsz;
                    }
                }
                ((total / bsz).as_f64(), dx)
            }
            (Loss::MeanSquaredError, Some(Layer::Sigmoid)) => {
                let c = F::cast((b * self.output_dim) as f64);
                let mut total = F::zero();
                let mut dx = out.clone();
                for r in 0..b {
                    for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                        let a = out.get(r, j);
                        let diff = a - targets.get(r, j);
                        total += diff * diff;
                        // d(mse)/da * da/dz for a = sigmoid(z)
                        *v = F::cast(2.0) * diff / c * a * (F::one() - a);
                    }
                }
                ((total / c).as_f64(), dx)
            }
            _ => {
                return Err(Error::invalid(
                    "unsupported loss/head pairing (use cross_entropy + softmax or mean_squared_error + sigmoid)",
                ))
            }
        };

        // Backprop through the remaining layers.
        let mut grads: Vec<LayerGrad<F>> = Vec::with_capacity(n_layers);
        grads.push(LayerGrad::None); // head
        for i in (0..n_layers - 1).rev() {
            let input = &trace.inputs[i];
            let aux = &trace.aux[i];
            let (g, dprev) = match &self.layers[i] {
                Layer::Dense(d) => {
                    let mut dw = Mat::zeros(d.w.rows(), d.w.cols());
                    let mut db = vec![F::zero(); d.b.len()];
                    for r in 0..b {
                        let x_row = input.row(r);
                        let dy_row = dx.row(r);
                        for (l, &xv) in x_row.iter().enumerate() {
                            if xv == F::zero() {
                                continue;
                            }
                            let dw_row = dw.row_mut(l);
                            for (j, &dyv) in dy_row.iter().enumerate() {
                                dw_row[j] += xv * dyv;
                            }
                        }
                        for (j, &dyv) in dy_row.iter().enumerate() {
                            db[j] += dyv;
                        }
                    }
                    let dprev = dx.matmul_transpose(&d.w)?;
                    (LayerGrad::Dense { dw, db }, dprev)
                }
                Layer::BatchNorm(bn) => {
                    let Aux::Bn { xhat, inv_std } = aux else {
                        unreachable!("bn layer always caches bn aux");
                    };
                    let cols = xhat.cols();
                    let mut dgamma = vec![F::zero(); cols];
                    let mut dbeta = vec![F::zero(); cols];
                    for r in 0..b {
                        for (j, &dyv) in dx.row(r).iter().enumerate() {
                            dgamma[j] += dyv * xhat.get(r, j);
                            dbeta[j] += dyv;
                        }
                    }
                    let mut dprev = Mat::zeros(b, cols);
                    if training {
                        for r in 0..b {
                            for j in 0..cols {
                                let term = bsz * dx.get(r, j) - dbeta[j] - xhat.get(r, j) * dgamma[j];
                                dprev.set(r, j, bn.gamma[j] * inv_std[j] / bsz * term);
                            }
                        }
                    } else {
                        for r in 0..b {
                            for j in 0..cols {
                                dprev.set(r, j, dx.get(r, j) * bn.gamma[j] * inv_std[j]);
                            }
                        }
                    }
                    (LayerGrad::BatchNorm { dgamma, dbeta }, dprev)
                }
                Layer::Relu => {
                    let mut dprev = dx.clone();
                    for r in 0..b {
                        let x_row = input.row(r);
                        for (j, v) in dprev.row_mut(r).iter_mut().enumerate() {
                            if x_row[j] <= F::zero() {
                                *v = F::zero();
                            }
                        }
                    }
                    (LayerGrad::None, dprev)
                }
                Layer::Dropout { .. } => {
                    let Aux::Mask(mask) = aux else {
                        // inference-semantics trace: identity
                        grads.push(LayerGrad::None);
                        continue;
                    };
                    let mut dprev = dx.clone();
                    for (v, &m) in dprev.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    (LayerGrad::None, dprev)
                }
                Layer::Softmax | Layer::Sigmoid => {
                    return Err(Error::invalid("head layers must be terminal"));
                }
            };
            grads.push(g);
            dx = dprev;
        }
        grads.reverse();
        Ok((
            loss_value,
            Gradients { per_layer: grads },
        ))
    }

    /// Inference-semantics trace for loss_and_grad in inference mode.
    fn inference_trace(&self, batch: &Mat<F>) -> Result<(Mat<F>, Trace<F>)> {
        let mut x = batch.clone();
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            aux: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            trace.inputs.push(x.clone());
            let (next, aux) = match layer {
                Layer::Dense(d) => (dense_forward(d, &x)?, Aux::None),
                Layer::BatchNorm(bn) => {
                    let inv_std: Vec<F> = bn
                        .running_var
                        .iter()
                        .map(|&v| F::one() / (v + F::cast(bn.eps)).sqrt())
                        .collect();
                    let (y, xhat) = bn_apply(bn, &x, &bn.running_mean, &inv_std);
                    (y, Aux::Bn { xhat, inv_std })
                }
                Layer::Relu => (x.map(|v| v.max(F::zero())), Aux::None),
                Layer::Dropout { .. } => (x.clone(), Aux::None),
                Layer::Softmax => (softmax(&x), Aux::None),
                Layer::Sigmoid => (x.map(sigmoid), Aux::None),
            };
            trace.aux.push(aux);
            x = next;
        }
        Ok((x, trace))
    }

    // Flat trainable-parameter access (order documented on Gradients::flatten).

    pub fn param_count(&self) -> usize {
        self.param_counts().trainable
    }

    pub fn get_flat_param(&self, mut idx: usize) -> F {
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    let wn = d.w.rows() * d.w.cols();
                    if idx < wn {
                        return d.w.data()[idx];
                    }
                    idx -= wn;
                    if idx < d.b.len() {
                        return d.b[idx];
                    }
                    idx -= d.b.len();
                }
                Layer::BatchNorm(bn) => {
                    if idx < bn.gamma.len() {
                        return bn.gamma[idx];
                    }
                    idx -= bn.gamma.len();
                    if idx < bn.beta.len() {
                        return bn.beta[idx];
                    }
                    idx -= bn.beta.len();
                }
                _ => {}
            }
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat_param(&mut self, mut idx: usize, value: F) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    let wn = d.w.rows() * d.w.cols();
                    if idx < wn {
                        d.w.data_mut()[idx] = value;
                        return;
                    }
                    idx -= wn;
                    if idx < d.b.len() {
                        d.b[idx] = value;
                        return;
                    }
                    idx -= d.b.len();
                }
                Layer::BatchNorm(bn) => {
                    if idx < bn.gamma.len() {
                        bn.gamma[idx] = value;
                        return;
                    }
                    idx -= bn.gamma.len();
                    if idx < bn.beta.len() {
                        bn.beta[idx] = value;
                        return;
                    }
                    idx -= bn.beta.len();
                }
                _ => {}
            }
        }
        panic!("flat parameter index out of range");
    }

    /// Freshly seeded per-batch mask seeds come from the training loop; this
    /// helper exists for tests that need one deterministic draw.
    pub fn draw_mask_seed(rng: &mut ChaCha8Rng) -> u64 {
        rng.next_u64()
    }
}

fn dense_forward<F: Scalar>(d: &DenseLayer<F>, x: &Mat<F>) -> Result<Mat<F>> {
    if x.cols() != d.w.rows() {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            d.w.rows(),
            x.cols()
        )));
    }
    let mut out = x.matmul(&d.w)?;
    for r in 0..out.rows() {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v += d.b[j];
        }
    }
    Ok(out)
}

/// Applies gamma * (x - mean) * inv_std + beta; returns (output, xhat).
fn bn_apply<F: Scalar>(
    bn: &BatchNormLayer<F>,
    x: &Mat<F>,
    mean: &[F],
    inv_std: &[F],
) -> (Mat<F>, Mat<F>) {
    let mut xhat = x.clone();
    let mut y = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for j in 0..x.cols() {
            let h = (x.get(r, j) - mean[j]) * inv_std[j];
            xhat.set(r, j, h);
            y.set(r, j, bn.gamma[j] * h + bn.beta[j]);
        }
    }
    (y, xhat)
}

fn softmax<F: Scalar>(x: &Mat<F>) -> Mat<F> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mut mx = row[0];
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[inline]
fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

fn validate_one_hot<F: Scalar>(targets: &Mat<F>) -> Result<()> {
    for r in 0..targets.rows() {
        let mut ones = 0;
        for &v in targets.row(r) {
            if v == F::one() {
                ones += 1;
            } else if v != F::zero() {
                return Err(Error::invalid("cross-entropy targets must be one-hot"));
            }
        }
        if ones != 1 {
            return Err(Error::invalid("cross-entropy targets must be one-hot"));
        }
    }
    Ok(())
}
