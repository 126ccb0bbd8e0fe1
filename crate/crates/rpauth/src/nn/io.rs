//! JSON persistence for networks: architecture list, row-major weight
//! arrays, batch-norm running statistics, and the training config used.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

use super::{BatchNormLayer, DenseLayer, Layer, Mode, NeuralNet, TrainConfig};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerFile<F> {
    Dense {
        in_dim: usize,
        out_dim: usize,
        w: Vec<F>,
        b: Vec<F>,
    },
    BatchNorm {
        width: usize,
        gamma: Vec<F>,
        beta: Vec<F>,
        running_mean: Vec<F>,
        running_var: Vec<F>,
        eps: f64,
        momentum: f64,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Softmax,
    Sigmoid,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetFile<F> {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerFile<F>>,
    train_config: Option<TrainConfig>,
}

impl<F: Scalar> NeuralNet<F> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = NetFile {
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => LayerFile::Dense {
                        in_dim: d.w.rows(),
                        out_dim: d.w.cols(),
                        w: d.w.data().to_vec(),
                        b: d.b.clone(),
                    },
                    Layer::BatchNorm(bn) => LayerFile::BatchNorm {
                        width: bn.gamma.len(),
                        gamma: bn.gamma.clone(),
                        beta: bn.beta.clone(),
                        running_mean: bn.running_mean.clone(),
                        running_var: bn.running_var.clone(),
                        eps: bn.eps,
                        momentum: bn.momentum,
                    },
                    Layer::Relu => LayerFile::Relu,
                    Layer::Dropout { rate } => LayerFile::Dropout { rate: *rate },
                    Layer::Softmax => LayerFile::Softmax,
                    Layer::Sigmoid => LayerFile::Sigmoid,
                })
                .collect(),
            train_config: self.train_config.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads and structurally validates a saved net: widths must chain from
    /// input_dim to output_dim, weight arrays must match their declared
    /// shapes, and all values must be finite. The loaded net starts in
    /// inference mode.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: NetFile<F> = serde_json::from_str(&text)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        if file.input_dim == 0 {
            return Err(Error::ModelFile("input_dim must be >= 1".into()));
        }
        if file.layers.is_empty() {
            return Err(Error::ModelFile("no layers".into()));
        }
        let mut width = file.input_dim;
        let mut layers = Vec::with_capacity(file.layers.len());
        let last = file.layers.len() - 1;
        for (i, lf) in file.layers.into_iter().enumerate() {
            let is_head = matches!(lf, LayerFile::Softmax | LayerFile::Sigmoid);
            if is_head != (i == last) {
                return Err(Error::ModelFile(
                    "exactly one terminal head (softmax or sigmoid) is required".into(),
                ));
            }
            match lf {
                LayerFile::Dense { in_dim, out_dim, w, b } => {
                    if in_dim != width {
                        return Err(Error::ModelFile(format!(
                            "dense layer {i} expects {in_dim} inputs but receives {width}"
                        )));
                    }
                    if w.len() != in_dim * out_dim || b.len() != out_dim || out_dim == 0 {
                        return Err(Error::ModelFile(format!(
                            "dense layer {i} weight shapes are inconsistent"
                        )));
                    }
                    if w.iter().chain(&b).any(|v| !v.is_finite()) {
                        return Err(Error::ModelFile(format!(
                            "dense layer {i} has non-finite weights"
                        )));
                    }
                    layers.push(Layer::Dense(DenseLayer {
                        w: Mat::from_vec(in_dim, out_dim, w)?,
                        b,
                    }));
                    width = out_dim;
                }
                LayerFile::BatchNorm {
                    width: bw,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                } => {
                    if bw != width {
                        return Err(Error::ModelFile(format!(
                            "batch_norm layer {i} width {bw} does not match incoming width {width}"
                        )));
                    }
                    let vecs = [&gamma, &beta, &running_mean, &running_var];
                    if vecs.iter().any(|v| v.len() != bw) {
                        return Err(Error::ModelFile(format!(
                            "batch_norm layer {i} parameter arrays have wrong length"
                        )));
                    }
                    if vecs.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                        return Err(Error::ModelFile(format!(
                            "batch_norm layer {i} has non-finite parameters"
                        )));
                    }
                    if !(eps > 0.0) || !(0.0..1.0).contains(&momentum) {
                        return Err(Error::ModelFile(format!(
                            "batch_norm layer {i} has invalid eps/momentum"
                        )));
                    }
                    layers.push(Layer::BatchNorm(BatchNormLayer {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        eps,
                        momentum,
                    }));
                }
                LayerFile::Relu => layers.push(Layer::Relu),
                LayerFile::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::ModelFile(format!(
                            "dropout layer {i} rate {rate} out of [0,1)"
                        )));
                    }
                    layers.push(Layer::Dropout { rate });
                }
                LayerFile::Softmax => layers.push(Layer::Softmax),
                LayerFile::Sigmoid => layers.push(Layer::Sigmoid),
            }
        }
        if width != file.output_dim {
            return Err(Error::ModelFile(format!(
                "declared output_dim {} but layers end at width {width}",
                file.output_dim
            )));
        }
        Ok(NeuralNet {
            layers,
            input_dim: file.input_dim,
            output_dim: file.output_dim,
            mode: Mode::Inference,
            train_config: file.train_config,
        })
    }
}
