use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, ModelError, Network, Result};
use crate::autodiff::Tensor;
use crate::preprocess::ClassIndex;

const MAGIC: &[u8; 8] = b"ECGXCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum LayerMeta {
    Conv {
        kernel: Vec<usize>,
        bias: Vec<usize>,
    },
    MaxPool {
        pool: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        weights: Vec<usize>,
        bias: Vec<usize>,
    },
    Relu,
}

/// JSON header of a checkpoint; parameter values follow as little-endian f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub num_classes: usize,
    pub input_len: usize,
    pub class_index: Option<ClassIndex>,
    pub preprocess_hash: Option<String>,
    pub param_count: usize,
    layers: Vec<LayerMeta>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Layout: magic, u32 version, u64 header length, JSON header, parameter values.
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let layers = net
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv { kernel, bias } => LayerMeta::Conv {
                kernel: kernel.shape().to_vec(),
                bias: bias.shape().to_vec(),
            },
            Layer::Dense { weights, bias } => LayerMeta::Dense {
                weights: weights.shape().to_vec(),
                bias: bias.shape().to_vec(),
            },
            Layer::MaxPool { pool } => LayerMeta::MaxPool { pool: *pool },
            Layer::Dropout { rate } => LayerMeta::Dropout { rate: *rate },
            Layer::Flatten => LayerMeta::Flatten,
            Layer::Relu => LayerMeta::Relu,
        })
        .collect();
    let meta = CheckpointMeta {
        num_classes: net.num_classes,
        input_len: net.input_len,
        class_index: net.class_index.clone(),
        preprocess_hash: net.preprocess_hash.clone(),
        param_count: net.param_count(),
        layers,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * meta.param_count);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in net.params() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io(path))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(20..20usize.saturating_add(json_len))
        .ok_or_else(|| ModelError::Corrupt("truncated header".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(json).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let body = &bytes[20 + json_len..];
    if body.len() != 8 * meta.param_count {
        return Err(ModelError::Corrupt(format!(
            "expected {} parameter bytes, found {}",
            8 * meta.param_count,
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| ModelError::Corrupt(e.to_string()))
    };
    let mut layers = Vec::with_capacity(meta.layers.len());
    for l in &meta.layers {
        layers.push(match l {
            LayerMeta::Conv { kernel, bias } => Layer::Conv {
                kernel: take(kernel)?,
                bias: take(bias)?,
            },
            LayerMeta::Dense { weights, bias } => Layer::Dense {
                weights: take(weights)?,
                bias: take(bias)?,
            },
            LayerMeta::MaxPool { pool } => Layer::MaxPool { pool: *pool },
            LayerMeta::Dropout { rate } => Layer::Dropout { rate: *rate },
            LayerMeta::Flatten => Layer::Flatten,
            LayerMeta::Relu => Layer::Relu,
        });
    }
    let net = Network {
        layers,
        input_len: meta.input_len,
        num_classes: meta.num_classes,
        class_index: meta.class_index,
        preprocess_hash: meta.preprocess_hash,
    };
    if net.param_count() != meta.param_count {
        return Err(ModelError::Corrupt(
            "layer shapes disagree with parameter count".into(),
        ));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_network;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut net = build_network(6, 9)
            .unwrap()
            .with_class_index(ClassIndex::new(['/', 'A', 'L', 'N', 'R', 'V']))
            .unwrap();
        net.preprocess_hash = Some("deadbeef".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&net, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, net);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let beat: Vec<f64> = (0..216).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward_logits(&beat).unwrap();
            let b = back.forward_logits(&beat).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        fs::write(&p, b"NOTACHECKPOINT-------------").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::BadMagic)));

        let net = build_network(2, 0).unwrap();
        save_checkpoint(&net, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[8] = 7;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(ModelError::VersionMismatch {
                found: 7,
                expected: 1
            })
        ));

        bytes[8] = 1;
        bytes.truncate(bytes.len() - 8);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::Corrupt(_))));

        assert!(matches!(
            load_checkpoint(dir.path().join("missing.ckpt")),
            Err(ModelError::Io { .. })
        ));
    }
}
