//! The 1D CNN beat classifier: construction, inference, training and checkpoints.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{softmax, AutodiffError, Tape, Tensor, Var};
use crate::preprocess::ClassIndex;
use crate::BEAT_LEN;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{
    evaluate_loss, train, write_history_csv, EpochStats, TrainConfig, TrainOutcome, Trainer,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("beat has {got} samples, the network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("class {class} out of range for {classes} outputs")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("network has {network} outputs {network_classes}, dataset has {dataset} classes {dataset_classes}")]
    ClassMismatch {
        network: usize,
        network_classes: String,
        dataset: usize,
        dataset_classes: String,
    },
    #[error("a network needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint magic bytes not recognised")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One layer of the stack. Activations are separate layers so attribution code
/// can treat each kind on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Kernel `[K, C_in, C_out]`, bias `[C_out]`.
    Conv {
        kernel: Tensor,
        bias: Tensor,
    },
    MaxPool {
        pool: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Weights `[N_in, N_out]`, bias `[N_out]`.
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Relu,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv { kernel, bias } => kernel.len() + bias.len(),
            Layer::Dense { weights, bias } => weights.len() + bias.len(),
            _ => 0,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "Conv1D",
            Layer::MaxPool { .. } => "MaxPooling1D",
            Layer::Dropout { .. } => "Dropout",
            Layer::Flatten => "Flatten",
            Layer::Dense { .. } => "Dense",
            Layer::Relu => "ReLU",
        }
    }

    /// Output shape for an input shape, without running the layer.
    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        match self {
            Layer::Conv { kernel, .. } => {
                vec![input[0] + 1 - kernel.shape()[0], kernel.shape()[2]]
            }
            Layer::MaxPool { pool } => vec![input[0] / pool, input[1]],
            Layer::Flatten => vec![input.iter().product()],
            Layer::Dense { weights, .. } => vec![weights.shape()[1]],
            Layer::Dropout { .. } | Layer::Relu => input.to_vec(),
        }
    }
}

/// One row of the architecture table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_len: usize,
    pub num_classes: usize,
    pub class_index: Option<ClassIndex>,
    /// Hash of the preprocessing config the network was trained under.
    pub preprocess_hash: Option<String>,
}

/// Result of [`Network::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub symbol: Option<char>,
    pub probabilities: Vec<f64>,
}

/// Vars recorded by [`Network::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub input: Var,
    pub logits: Var,
    /// Parameter leaves in [`Network::params`] order.
    pub params: Vec<Var>,
    /// Output of every layer, in layer order.
    pub outputs: Vec<Var>,
}

pub const DEFAULT_DROPOUT: f64 = 0.3;

/// Table-1 CNN with `num_classes` outputs, He-uniform weights and zero biases.
pub fn build_network(num_classes: usize, seed: u64) -> Result<Network> {
    build_network_with_dropout(num_classes, seed, DEFAULT_DROPOUT)
}

pub fn build_network_with_dropout(num_classes: usize, seed: u64, dropout: f64) -> Result<Network> {
    if num_classes < 2 {
        return Err(ModelError::TooFewClasses(num_classes));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(ModelError::InvalidConfig(format!("dropout rate {dropout}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = |k: usize, cin: usize, cout: usize| {
        let limit = (6.0 / (k * cin) as f64).sqrt();
        let w = (0..k * cin * cout)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Layer::Conv {
            kernel: Tensor::new(vec![k, cin, cout], w).expect("shape matches"),
            bias: Tensor::zeros(vec![cout]),
        }
    };
    let c1 = conv(50, 1, 64);
    let c2 = conv(10, 64, 32);
    let c3 = conv(5, 32, 16);
    let mut dense = |nin: usize, nout: usize| {
        let limit = (6.0 / nin as f64).sqrt();
        let w = (0..nin * nout)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Layer::Dense {
            weights: Tensor::new(vec![nin, nout], w).expect("shape matches"),
            bias: Tensor::zeros(vec![nout]),
        }
    };
    let d1 = dense(256, 32);
    let d2 = dense(32, 16);
    let d3 = dense(16, num_classes);

    let pool = || Layer::MaxPool { pool: 2 };
    let drop = || Layer::Dropout { rate: dropout };
    let layers = vec![
        c1,
        Layer::Relu,
        pool(),
        drop(),
        c2,
        Layer::Relu,
        pool(),
        drop(),
        c3,
        Layer::Relu,
        pool(),
        drop(),
        Layer::Flatten,
        d1,
        Layer::Relu,
        drop(),
        d2,
        Layer::Relu,
        d3,
    ];
    let net = Network {
        layers,
        input_len: BEAT_LEN,
        num_classes,
        class_index: None,
        preprocess_hash: None,
    };

    let counts: Vec<usize> = net
        .layers
        .iter()
        .map(Layer::param_count)
        .filter(|&c| c > 0)
        .collect();
    let expected = [3264, 20512, 2576, 8224, 528, 16 * num_classes + num_classes];
    assert_eq!(
        counts, expected,
        "layer parameter counts drifted from the architecture"
    );
    Ok(net)
}

impl Network {
    /// A custom stack over single-channel inputs of length `input_len`. The stack must
    /// end in a dense layer; shapes are checked with one forward pass.
    pub fn from_layers(layers: Vec<Layer>, input_len: usize) -> Result<Self> {
        let num_classes = match layers.last() {
            Some(Layer::Dense { weights, .. }) if weights.shape().len() == 2 => weights.shape()[1],
            _ => {
                return Err(ModelError::InvalidConfig(
                    "a network must end in a dense layer".into(),
                ))
            }
        };
        let net = Self {
            layers,
            input_len,
            num_classes,
            class_index: None,
            preprocess_hash: None,
        };
        net.forward_logits(&vec![0.0; input_len])?;
        Ok(net)
    }

    /// `f_k(x) = b_k + sum_i x_i w[i, k]` as a network.
    pub fn affine(weights: Tensor, bias: Tensor) -> Result<Self> {
        let input_len = weights.shape().first().copied().unwrap_or(0);
        Self::from_layers(
            vec![Layer::Flatten, Layer::Dense { weights, bias }],
            input_len,
        )
    }

    pub fn with_class_index(mut self, class_index: ClassIndex) -> Result<Self> {
        if class_index.len() != self.num_classes {
            return Err(ModelError::ClassMismatch {
                network: self.num_classes,
                network_classes: "(unlabelled)".into(),
                dataset: class_index.len(),
                dataset_classes: class_index.to_string(),
            });
        }
        self.class_index = Some(class_index);
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Architecture table rows (activations omitted), starting with the input.
    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut shape = vec![self.input_len, 1];
        let mut rows = vec![LayerSummary {
            name: "Input",
            output_shape: shape.clone(),
            params: 0,
        }];
        for layer in &self.layers {
            shape = layer.output_shape(&shape);
            if matches!(layer, Layer::Relu) {
                continue;
            }
            rows.push(LayerSummary {
                name: layer.name(),
                output_shape: shape.clone(),
                params: layer.param_count(),
            });
        }
        rows
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { kernel, bias } => out.extend([kernel, bias]),
                Layer::Dense { weights, bias } => out.extend([weights, bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { kernel, bias } => out.extend([kernel, bias]),
                Layer::Dense { weights, bias } => out.extend([weights, bias]),
                _ => {}
            }
        }
        out
    }

    /// Zeroes every weight and bias.
    pub fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.data_mut().fill(0.0);
        }
    }

    /// The output bias vector (used to shift a single logit).
    pub fn output_bias_mut(&mut self) -> &mut Tensor {
        match self.layers.last_mut() {
            Some(Layer::Dense { bias, .. }) => bias,
            _ => unreachable!("the network always ends in a dense layer"),
        }
    }

    fn check_input(&self, beat: &[f64]) -> Result<()> {
        if beat.len() != self.input_len {
            return Err(ModelError::InputLength {
                expected: self.input_len,
                got: beat.len(),
            });
        }
        Ok(())
    }

    /// Records a full forward pass on `tape`. Dropout is active only when `rng` is given.
    pub fn record(
        &self,
        tape: &mut Tape,
        beat: &[f64],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Recorded> {
        self.check_input(beat)?;
        let input = tape.leaf(Tensor::sequence(beat.to_vec()));
        let mut params = Vec::new();
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = input;
        let mut rng = rng;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { kernel, bias } => {
                    let k = tape.leaf(kernel.clone());
                    let b = tape.leaf(bias.clone());
                    params.extend([k, b]);
                    tape.conv1d(h, k, b)?
                }
                Layer::Dense { weights, bias } => {
                    let w = tape.leaf(weights.clone());
                    let b = tape.leaf(bias.clone());
                    params.extend([w, b]);
                    tape.dense(h, w, b)?
                }
                Layer::MaxPool { pool } => tape.maxpool1d(h, *pool)?,
                Layer::Relu => tape.relu(h)?,
                Layer::Flatten => tape.flatten(h)?,
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => tape.dropout(h, *rate, true, r)?,
                    None => h,
                },
            };
            outputs.push(h);
        }
        Ok(Recorded {
            input,
            logits: h,
            params,
            outputs,
        })
    }

    /// Inference-mode logits.
    pub fn forward_logits(&self, beat: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, beat, None)?;
        Ok(tape.value(rec.logits).data().to_vec())
    }

    /// Inference-mode output of every layer, in layer order.
    pub fn activations(&self, beat: &[f64]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, beat, None)?;
        Ok(rec.outputs.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Logit of `class` and its gradient with respect to the input beat.
    pub fn logit_gradient(&self, beat: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        if class >= self.num_classes {
            return Err(ModelError::ClassOutOfRange {
                class,
                classes: self.num_classes,
            });
        }
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, beat, None)?;
        let s = tape.select(rec.logits, class)?;
        let g = tape.backward(s)?;
        Ok((tape.value(s).data()[0], g.get(rec.input).to_vec()))
    }

    /// Softmax argmax; ties go to the lowest class index.
    pub fn predict(&self, beat: &[f64]) -> Result<Prediction> {
        let logits = self.forward_logits(beat)?;
        let probabilities = softmax(&logits);
        let class = argmax(&probabilities);
        Ok(Prediction {
            class,
            symbol: self.class_index.as_ref().and_then(|c| c.symbol(class)),
            probabilities,
        })
    }

    /// SHA-256 over hyperparameters and parameter bits, hex-encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        for layer in &self.layers {
            h.update(layer.name().as_bytes());
            if let Layer::Dropout { rate } = layer {
                h.update(rate.to_le_bytes());
            }
            if let Layer::MaxPool { pool } = layer {
                h.update((*pool as u64).to_le_bytes());
            }
        }
        for p in self.params() {
            for d in p.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Logs a warning and returns `false` when the stored preprocessing hash differs
    /// from `expected`.
    pub fn check_preprocess_hash(&self, expected: &str) -> bool {
        match &self.preprocess_hash {
            Some(h) if h == expected => true,
            Some(h) => {
                log::warn!(
                    "checkpoint was trained with preprocessing config {h}, inputs use {expected}"
                );
                false
            }
            None => {
                log::warn!("checkpoint carries no preprocessing hash; cannot verify inputs");
                false
            }
        }
    }
}

/// Index of the first maximal element.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes_and_counts_23() {
        let net = build_network(23, 0).unwrap();
        let rows: Vec<(&str, Vec<usize>, usize)> = net
            .summary()
            .into_iter()
            .map(|r| (r.name, r.output_shape, r.params))
            .collect();
        let expected: Vec<(&str, Vec<usize>, usize)> = vec![
            ("Input", vec![216, 1], 0),
            ("Conv1D", vec![167, 64], 3264),
            ("MaxPooling1D", vec![83, 64], 0),
            ("Dropout", vec![83, 64], 0),
            ("Conv1D", vec![74, 32], 20512),
            ("MaxPooling1D", vec![37, 32], 0),
            ("Dropout", vec![37, 32], 0),
            ("Conv1D", vec![33, 16], 2576),
            ("MaxPooling1D", vec![16, 16], 0),
            ("Dropout", vec![16, 16], 0),
            ("Flatten", vec![256], 0),
            ("Dense", vec![32], 8224),
            ("Dropout", vec![32], 0),
            ("Dense", vec![16], 528),
            ("Dense", vec![23], 391),
        ];
        assert_eq!(rows, expected);
        assert_eq!(net.param_count(), 35_495);
    }

    #[test]
    fn six_class_head() {
        let net = build_network(6, 0).unwrap();
        assert_eq!(net.summary().last().unwrap().params, 102);
        assert_eq!(net.param_count(), 35_495 - 391 + 102);
        // Every intermediate activation has the documented shape.
        let acts = net.activations(&[0.1; 216]).unwrap();
        let shapes: Vec<Vec<usize>> = acts
            .iter()
            .zip(&net.layers)
            .filter(|(_, l)| !matches!(l, Layer::Relu | Layer::Dropout { .. }))
            .map(|(a, _)| a.shape().to_vec())
            .collect();
        assert_eq!(
            shapes,
            vec![
                vec![167, 64],
                vec![83, 64],
                vec![74, 32],
                vec![37, 32],
                vec![33, 16],
                vec![16, 16],
                vec![256],
                vec![32],
                vec![16],
                vec![6]
            ]
        );
        assert!(matches!(
            build_network(1, 0),
            Err(ModelError::TooFewClasses(1))
        ));
    }

    #[test]
    fn he_uniform_bounds() {
        let net = build_network(6, 3).unwrap();
        let p = net.params();
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(p[0].data().iter().all(|v| v.abs() <= limit));
        assert!(p[0].data().iter().any(|v| v.abs() > 0.8 * limit));
        assert!(p[1].data().iter().all(|&v| v == 0.0));
        assert_eq!(build_network(6, 3).unwrap(), net);
        assert_ne!(build_network(6, 4).unwrap(), net);
    }

    #[test]
    fn zero_network_gives_zero_logits_and_uniform_prediction() {
        let mut net = build_network(6, 1).unwrap();
        net.zero_params();
        assert_eq!(net.forward_logits(&[0.0; 216]).unwrap(), vec![0.0; 6]);
        let ci = ClassIndex::new(['/', 'A', 'L', 'N', 'R', 'V']);
        let net = net.with_class_index(ci).unwrap();
        let p = net.predict(&[0.3; 216]).unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(p.symbol, Some('/'));
        assert!(p
            .probabilities
            .iter()
            .all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic_and_not_scale_invariant() {
        let net = build_network(6, 2).unwrap();
        let beat: Vec<f64> = (0..216).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = net.forward_logits(&beat).unwrap();
        let b = net.forward_logits(&beat).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        let mut net = net;
        for v in net.output_bias_mut().data_mut() {
            *v = 0.1;
        }
        let x1 = net.forward_logits(&beat).unwrap();
        let doubled: Vec<f64> = beat.iter().map(|v| 2.0 * v).collect();
        let x2 = net.forward_logits(&doubled).unwrap();
        assert!(x1.iter().zip(&x2).any(|(p, q)| (2.0 * p - q).abs() > 1e-6));
    }

    #[test]
    fn predict_unique_max_and_probabilities() {
        let mut net = build_network(6, 5).unwrap();
        net.zero_params();
        net.output_bias_mut().data_mut()[4] = 2.0;
        let p = net.predict(&[0.0; 216]).unwrap();
        assert_eq!(p.class, 4);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.symbol, None);
    }

    #[test]
    fn wrong_input_length() {
        let net = build_network(6, 0).unwrap();
        assert!(matches!(
            net.forward_logits(&[0.0; 215]),
            Err(ModelError::InputLength {
                expected: 216,
                got: 215
            })
        ));
        assert!(matches!(
            net.logit_gradient(&[0.0; 216], 6),
            Err(ModelError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn preprocess_hash_check() {
        let mut net = build_network(6, 0).unwrap();
        assert!(!net.check_preprocess_hash("abc"));
        net.preprocess_hash = Some("abc".into());
        assert!(net.check_preprocess_hash("abc"));
        assert!(!net.check_preprocess_hash("abd"));
    }
}
