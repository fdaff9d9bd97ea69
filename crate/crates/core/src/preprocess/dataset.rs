use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeatSegment, PreprocessConfig, PreprocessError, Result};

/// Ordered, bijective mapping between class symbols and integer labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassIndex(Vec<char>);

impl ClassIndex {
    /// Sorts and deduplicates `symbols`.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Self {
        let mut v: Vec<char> = symbols.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, symbol: char) -> Option<usize> {
        self.0.binary_search(&symbol).ok()
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.0.get(index).copied()
    }

    pub fn symbols(&self) -> &[char] {
        &self.0
    }
}

impl std::fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<BeatSegment>,
    pub validation: Vec<BeatSegment>,
    pub class_index: ClassIndex,
}

impl DatasetSplit {
    /// `(samples, label index)` pairs for the training part.
    pub fn train_labels(&self) -> Vec<usize> {
        self.labels(&self.train)
    }

    pub fn validation_labels(&self) -> Vec<usize> {
        self.labels(&self.validation)
    }

    fn labels(&self, part: &[BeatSegment]) -> Vec<usize> {
        part.iter()
            .map(|s| {
                self.class_index
                    .index_of(s.label)
                    .expect("labels are in the class index")
            })
            .collect()
    }

    pub fn class_counts(part: &[BeatSegment]) -> BTreeMap<char, usize> {
        let mut counts = BTreeMap::new();
        for s in part {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }
}

fn group_by_class(segments: Vec<BeatSegment>) -> BTreeMap<char, Vec<BeatSegment>> {
    let mut by_class: BTreeMap<char, Vec<BeatSegment>> = BTreeMap::new();
    for s in segments {
        by_class.entry(s.label).or_default().push(s);
    }
    by_class
}

/// Drops classes with fewer than `min_class_count` segments, then performs a seeded
/// stratified split: each class contributes `round(split * n)` segments to training.
pub fn build_dataset(
    segments: Vec<BeatSegment>,
    min_class_count: usize,
    split: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if segments.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&split) {
        return Err(PreprocessError::InvalidParameter(format!(
            "split fraction {split} outside [0, 1]"
        )));
    }
    let by_class = group_by_class(segments);
    let counts: Vec<String> = by_class
        .iter()
        .map(|(k, v)| format!("{k}:{}", v.len()))
        .collect();
    let kept: BTreeMap<char, Vec<BeatSegment>> = by_class
        .into_iter()
        .filter(|(_, v)| v.len() >= min_class_count)
        .collect();
    if kept.is_empty() {
        return Err(PreprocessError::NoClassSurvives {
            min_count: min_class_count,
            counts: counts.join(" "),
        });
    }

    let class_index = ClassIndex::new(kept.keys().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (_, mut members) in kept {
        members.shuffle(&mut rng);
        let n_train = (split * members.len() as f64).round() as usize;
        let rest = members.split_off(n_train);
        train.extend(members);
        validation.extend(rest);
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    Ok(DatasetSplit {
        train,
        validation,
        class_index,
    })
}

/// Seeded subsample of `total` segments that preserves class proportions (largest
/// remainder rounding). Returns everything when `total` exceeds the input size.
pub fn stratified_subset(segments: Vec<BeatSegment>, total: usize, seed: u64) -> Vec<BeatSegment> {
    let n = segments.len();
    if total >= n {
        return segments;
    }
    let by_class = group_by_class(segments);
    let mut quotas: Vec<(char, usize, f64)> = by_class
        .iter()
        .map(|(&k, v)| {
            let exact = total as f64 * v.len() as f64 / n as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        quotas[i].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    for ((_, mut members), (_, quota, _)) in by_class.into_iter().zip(quotas) {
        members.shuffle(&mut rng);
        members.truncate(quota);
        out.extend(members);
    }
    out.shuffle(&mut rng);
    out
}

const MAGIC: &[u8; 8] = b"ECGXDS01";

/// JSON manifest stored at the head of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub class_index: ClassIndex,
    pub seed: u64,
    pub min_class_count: usize,
    pub split: f64,
    pub beat_len: usize,
    pub source_records: Vec<String>,
    pub train_counts: BTreeMap<char, usize>,
    pub validation_counts: BTreeMap<char, usize>,
    pub preprocess: PreprocessConfig,
    pub preprocess_hash: String,
}

fn ds_err(msg: impl Into<String>) -> PreprocessError {
    PreprocessError::DatasetFile(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PreprocessError + '_ {
    move |source| PreprocessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the split as a manifest followed by fixed-size little-endian rows:
/// `part u8, label u32, record u32, r_peak u64, beat_len x f64`.
pub fn write_dataset(
    path: impl AsRef<Path>,
    data: &DatasetSplit,
    seed: u64,
    min_class_count: usize,
    split: f64,
    preprocess: &PreprocessConfig,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut records: Vec<String> = data
        .train
        .iter()
        .chain(&data.validation)
        .map(|s| s.source_record.clone())
        .collect();
    records.sort();
    records.dedup();
    let beat_len = data
        .train
        .iter()
        .chain(&data.validation)
        .map(|s| s.samples.len())
        .next()
        .unwrap_or(preprocess.beat_len);

    let manifest = DatasetManifest {
        version: 1,
        class_index: data.class_index.clone(),
        seed,
        min_class_count,
        split,
        beat_len,
        source_records: records.clone(),
        train_counts: DatasetSplit::class_counts(&data.train),
        validation_counts: DatasetSplit::class_counts(&data.validation),
        preprocess: preprocess.clone(),
        preprocess_hash: preprocess.hash(),
    };

    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_vec(&manifest).map_err(|e| ds_err(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (part, segs) in [(0u8, &data.train), (1u8, &data.validation)] {
        for s in segs {
            if s.samples.len() != beat_len {
                return Err(ds_err(format!(
                    "segment from {} has {} samples, expected {beat_len}",
                    s.source_record,
                    s.samples.len()
                )));
            }
            let label = data
                .class_index
                .index_of(s.label)
                .ok_or_else(|| ds_err(format!("label '{}' not in class index", s.label)))?;
            let rec = records
                .binary_search(&s.source_record)
                .expect("record listed");
            buf.push(part);
            buf.extend_from_slice(&(label as u32).to_le_bytes());
            buf.extend_from_slice(&(rec as u32).to_le_bytes());
            buf.extend_from_slice(&(s.r_peak_index as u64).to_le_bytes());
            for v in &s.samples {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(manifest)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetSplit, DatasetManifest)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ds_err(format!(
            "{} is not a dataset file (bad magic)",
            path.display()
        )));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + json_len)
        .ok_or_else(|| ds_err("truncated manifest"))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(json).map_err(|e| ds_err(format!("bad manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(ds_err(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }

    let row_len = 1 + 4 + 4 + 8 + 8 * manifest.beat_len;
    let body = &bytes[16 + json_len..];
    if body.len() % row_len != 0 {
        return Err(ds_err("row data is truncated"));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for row in body.chunks_exact(row_len) {
        let label_idx = u32::from_le_bytes(row[1..5].try_into().expect("4 bytes")) as usize;
        let rec_idx = u32::from_le_bytes(row[5..9].try_into().expect("4 bytes")) as usize;
        let r_peak = u64::from_le_bytes(row[9..17].try_into().expect("8 bytes")) as usize;
        let samples = row[17..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let seg = BeatSegment {
            samples,
            label: manifest
                .class_index
                .symbol(label_idx)
                .ok_or_else(|| ds_err(format!("label index {label_idx} out of range")))?,
            source_record: manifest
                .source_records
                .get(rec_idx)
                .cloned()
                .ok_or_else(|| ds_err(format!("record index {rec_idx} out of range")))?,
            r_peak_index: r_peak,
        };
        match row[0] {
            0 => train.push(seg),
            1 => validation.push(seg),
            p => return Err(ds_err(format!("bad partition tag {p}"))),
        }
    }
    let data = DatasetSplit {
        train,
        validation,
        class_index: manifest.class_index.clone(),
    };
    if DatasetSplit::class_counts(&data.train) != manifest.train_counts
        || DatasetSplit::class_counts(&data.validation) != manifest.validation_counts
    {
        return Err(ds_err("row counts disagree with the manifest"));
    }
    Ok((data, manifest))
}
