use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, save_checkpoint, ModelError, Network, Result};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::preprocess::DatasetSplit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Written every time validation accuracy improves.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "epochs ({}) and batch size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation accuracy.
    pub network: Network,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mini-batch Adam over one network, one epoch at a time.
#[derive(Debug)]
pub struct Trainer {
    pub network: Network,
    state: AdamState,
    adam: AdamConfig,
    rng: ChaCha8Rng,
    batch_size: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(network: Network, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(&network.params());
        Ok(Self {
            network,
            state,
            adam: AdamConfig {
                lr: config.learning_rate,
                ..AdamConfig::default()
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            batch_size: config.batch_size,
            epoch: 0,
        })
    }

    /// One shuffled pass with dropout active. Returns mean loss and accuracy as seen
    /// during training.
    pub fn run_epoch(&mut self, beats: &[&[f64]], labels: &[usize]) -> Result<(f64, f64)> {
        if beats.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.network.num_classes) {
            return Err(ModelError::ClassOutOfRange {
                class: bad,
                classes: self.network.num_classes,
            });
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..beats.len()).collect();
        order.shuffle(&mut self.rng);

        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(self.batch_size).enumerate() {
            let mut acc: Vec<Vec<f64>> = self
                .network
                .params()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect();
            for &i in batch {
                let mut tape = Tape::new();
                let rec = self
                    .network
                    .record(&mut tape, beats[i], Some(&mut self.rng))?;
                let (loss, probs) = tape.softmax_cross_entropy(rec.logits, labels[i])?;
                let lv = tape.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch: self.epoch,
                        batch: batch_no,
                        loss: lv,
                    });
                }
                total_loss += lv;
                if argmax(&probs) == labels[i] {
                    correct += 1;
                }
                let grads = tape.backward(loss)?;
                for (a, &p) in acc.iter_mut().zip(&rec.params) {
                    for (s, g) in a.iter_mut().zip(grads.get(p)) {
                        *s += g;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = acc
                .into_iter()
                .zip(self.network.params())
                .map(|(g, p)| {
                    let g = g.into_iter().map(|v| v * scale).collect();
                    Tensor::new(p.shape().to_vec(), g).expect("gradient matches parameter")
                })
                .collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params = self.network.params_mut();
            adam_step(&mut params, &grad_refs, &mut self.state, &self.adam)?;
        }
        let n = beats.len() as f64;
        Ok((total_loss / n, correct as f64 / n))
    }
}

/// Inference-mode mean cross-entropy and accuracy.
pub fn evaluate_loss(net: &Network, beats: &[&[f64]], labels: &[usize]) -> Result<(f64, f64)> {
    if beats.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (b, &y) in beats.iter().zip(labels) {
        let mut tape = Tape::new();
        let rec = net.record(&mut tape, b, None)?;
        let (l, probs) = tape.softmax_cross_entropy(rec.logits, y)?;
        loss += tape.value(l).data()[0];
        if argmax(&probs) == y {
            correct += 1;
        }
    }
    let n = beats.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains and returns the best-validation-accuracy parameters. With an empty
/// validation set the last epoch is kept.
pub fn train(net: Network, data: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let classes = data.class_index.len();
    if classes != net.num_classes
        || net
            .class_index
            .as_ref()
            .is_some_and(|c| *c != data.class_index)
    {
        return Err(ModelError::ClassMismatch {
            network: net.num_classes,
            network_classes: net
                .class_index
                .as_ref()
                .map_or("(unlabelled)".into(), ToString::to_string),
            dataset: classes,
            dataset_classes: data.class_index.to_string(),
        });
    }
    let net = Network {
        class_index: Some(data.class_index.clone()),
        ..net
    };
    let train_x: Vec<&[f64]> = data.train.iter().map(|s| s.samples.as_slice()).collect();
    let train_y = data.train_labels();
    let val_x: Vec<&[f64]> = data
        .validation
        .iter()
        .map(|s| s.samples.as_slice())
        .collect();
    let val_y = data.validation_labels();

    let mut trainer = Trainer::new(net, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    for epoch in 1..=config.epochs {
        let (train_loss, train_acc) = trainer.run_epoch(&train_x, &train_y)?;
        let (val_loss, val_acc) = evaluate_loss(&trainer.network, &val_x, &val_y)?;
        let stats = EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}/{}: train loss {train_loss:.4} acc {train_acc:.4}, val loss {val_loss:.4} acc {val_acc:.4}",
            config.epochs
        );
        history.push(stats);

        let improved = match &best {
            None => true,
            Some(_) if val_x.is_empty() => true,
            Some((b, _, _)) => val_acc > *b,
        };
        if improved {
            best = Some((val_acc, epoch, trainer.network.clone()));
            if let Some(path) = &config.checkpoint_path {
                save_checkpoint(&trainer.network, path)?;
            }
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
    })
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.train_loss, h.train_acc, h.val_loss, h.val_acc
        ));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
}
