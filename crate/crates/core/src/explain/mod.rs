//! Attribution of one class logit to the input timesteps.
//!
//! Every explainer attributes the pre-softmax logit of the target class. Masked
//! or replaced positions take values from a [`Baseline`].

mod deeplift;
mod exact;
mod gradient;
mod kernel;
mod permutation;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Network};
use crate::preprocess::BeatSegment;

pub use deeplift::{deeplift, deeplift_with_diagnostics, DeepLiftDiagnostics, DEEPLIFT_EPS};
pub use exact::{exact_shapley, MAX_EXACT_GROUPS};
pub use gradient::gradient_shap;
pub use kernel::{contiguous_groups, kernel_shap, KernelShapConfig};
pub use permutation::permutation_importance;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("class {class} out of range for {classes} outputs")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("input has {got} samples, model expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("baseline has {got} samples, model expects {expected}")]
    BaselineLength { expected: usize, got: usize },
    #[error("background sample set is empty")]
    EmptyBackground,
    #[error("{method} needs a single reference beat, got a sample set of {count}")]
    NotSingleReference { method: &'static str, count: usize },
    #[error("group size {group_size} does not divide input length {len}")]
    GroupSize { group_size: usize, len: usize },
    #[error("invalid groups: {0}")]
    InvalidGroups(String),
    #[error("{groups} groups exceed the exact-enumeration limit of {max}")]
    TooManyGroups { groups: usize, max: usize },
    #[error("{coalitions} coalitions are too few for {players} players (need at least {needed})")]
    TooFewCoalitions {
        coalitions: usize,
        players: usize,
        needed: usize,
    },
    #[error("KernelSHAP regression is singular; sample more coalitions")]
    Singular,
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("attribution file: {0}")]
    File(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// A model with one scalar score per class.
pub trait ScoreModel {
    fn input_len(&self) -> usize;
    fn num_outputs(&self) -> usize;
    /// Score of `class` at `x`. Callers validate lengths and class range.
    fn score(&self, x: &[f64], class: usize) -> Result<f64>;
}

/// A [`ScoreModel`] with input gradients.
pub trait GradientModel: ScoreModel {
    fn score_gradient(&self, x: &[f64], class: usize) -> Result<(f64, Vec<f64>)>;
}

impl ScoreModel for Network {
    fn input_len(&self) -> usize {
        self.input_len
    }

    fn num_outputs(&self) -> usize {
        self.num_classes
    }

    fn score(&self, x: &[f64], class: usize) -> Result<f64> {
        Ok(self.forward_logits(x)?[class])
    }
}

impl GradientModel for Network {
    fn score_gradient(&self, x: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        Ok(self.logit_gradient(x, class)?)
    }
}

/// A single-output model from a closure, for tests and analytic oracles.
pub struct FnModel<F> {
    len: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnModel<F> {
    pub fn new(len: usize, f: F) -> Self {
        Self { len, f }
    }
}

impl<F: Fn(&[f64]) -> f64> ScoreModel for FnModel<F> {
    fn input_len(&self) -> usize {
        self.len
    }

    fn num_outputs(&self) -> usize {
        1
    }

    fn score(&self, x: &[f64], _class: usize) -> Result<f64> {
        Ok((self.f)(x))
    }
}

/// Logit of `class` for `beat`.
pub fn target_score<M: ScoreModel + ?Sized>(model: &M, beat: &[f64], class: usize) -> Result<f64> {
    check_input(model, beat, class)?;
    model.score(beat, class)
}

fn check_input<M: ScoreModel + ?Sized>(model: &M, beat: &[f64], class: usize) -> Result<()> {
    if beat.len() != model.input_len() {
        return Err(ExplainError::InputLength {
            expected: model.input_len(),
            got: beat.len(),
        });
    }
    if class >= model.num_outputs() {
        return Err(ExplainError::ClassOutOfRange {
            class,
            classes: model.num_outputs(),
        });
    }
    Ok(())
}

/// Reference input(s) that stand in for "absent" features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Zeros,
    /// Mean of the training beats of one class.
    ClassMean {
        symbol: char,
        beat: Vec<f64>,
    },
    SampleSet {
        beats: Vec<Vec<f64>>,
    },
}

impl Baseline {
    /// Mean of the `symbol` beats in `segments`.
    pub fn class_mean(segments: &[BeatSegment], symbol: char) -> Result<Self> {
        let members: Vec<&BeatSegment> = segments.iter().filter(|s| s.label == symbol).collect();
        let first = members.first().ok_or(ExplainError::EmptyBackground)?;
        let mut mean = vec![0.0; first.samples.len()];
        for s in &members {
            if s.samples.len() != mean.len() {
                return Err(ExplainError::BaselineLength {
                    expected: mean.len(),
                    got: s.samples.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(&s.samples) {
                *m += v;
            }
        }
        let n = members.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Baseline::ClassMean { symbol, beat: mean })
    }

    pub fn descriptor(&self) -> String {
        match self {
            Baseline::Zeros => "zeros".into(),
            Baseline::ClassMean { symbol, .. } => format!("class_mean:{symbol}"),
            Baseline::SampleSet { beats } => format!("sample_set:{}", beats.len()),
        }
    }

    /// All reference beats, validated against `len`.
    pub fn references(&self, len: usize) -> Result<Vec<Vec<f64>>> {
        let refs = match self {
            Baseline::Zeros => vec![vec![0.0; len]],
            Baseline::ClassMean { beat, .. } => vec![beat.clone()],
            Baseline::SampleSet { beats } => beats.clone(),
        };
        if refs.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        if let Some(bad) = refs.iter().find(|r| r.len() != len) {
            return Err(ExplainError::BaselineLength {
                expected: len,
                got: bad.len(),
            });
        }
        Ok(refs)
    }

    /// The single reference beat; sample sets are rejected.
    pub fn single(&self, len: usize, method: &'static str) -> Result<Vec<f64>> {
        if let Baseline::SampleSet { beats } = self {
            return Err(ExplainError::NotSingleReference {
                method,
                count: beats.len(),
            });
        }
        Ok(self.references(len)?.remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Permutation,
    Kernel,
    Gradient,
    Deeplift,
    Exact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Permutation => "permutation",
            Method::Kernel => "kernel",
            Method::Gradient => "gradient",
            Method::Deeplift => "deeplift",
            Method::Exact => "exact",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "permutation" => Ok(Method::Permutation),
            "kernel" | "kernelshap" | "kernel_shap" => Ok(Method::Kernel),
            "gradient" | "gradientshap" | "gradient_shap" => Ok(Method::Gradient),
            "deeplift" | "deepshap" => Ok(Method::Deeplift),
            "exact" => Ok(Method::Exact),
            other => Err(format!(
                "unknown method '{other}' (expected permutation, kernel, gradient, deeplift or exact)"
            )),
        }
    }
}

/// Per-timestep scores for one beat and one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub target_class: usize,
    pub target_symbol: Option<char>,
    pub baseline: String,
    pub beat_ref: Option<String>,
    pub model_checksum: Option<String>,
    /// Target score at the input and (averaged) at the baseline.
    pub score_input: f64,
    pub score_baseline: f64,
    /// Values per player for group-based methods.
    pub group_values: Option<Vec<f64>>,
    pub scores: Vec<f64>,
    /// The explained beat, kept so the attribution can be rendered on its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beat: Option<Vec<f64>>,
}

impl Attribution {
    pub fn new(method: Method, target_class: usize, baseline: &Baseline, scores: Vec<f64>) -> Self {
        Self {
            method,
            target_class,
            target_symbol: None,
            baseline: baseline.descriptor(),
            beat_ref: None,
            model_checksum: None,
            score_input: f64::NAN,
            score_baseline: f64::NAN,
            group_values: None,
            scores,
            beat: None,
        }
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// `|sum(scores) - (f(x) - f(baseline))|`.
    pub fn completeness_gap(&self) -> f64 {
        (self.total() - (self.score_input - self.score_baseline)).abs()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,score\n");
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv())
            .map_err(|e| ExplainError::File(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| ExplainError::File(e.to_string()))?;
        fs::write(path.as_ref(), json)
            .map_err(|e| ExplainError::File(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| ExplainError::File(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| ExplainError::File(e.to_string()))
    }
}

/// Mean target score over the references.
fn mean_score<M: ScoreModel + ?Sized>(model: &M, refs: &[Vec<f64>], class: usize) -> Result<f64> {
    let mut s = 0.0;
    for r in refs {
        s += model.score(r, class)?;
    }
    Ok(s / refs.len() as f64)
}


#[cfg(test)]
mod tests {
    use super::testutil::affine;
    use super::*;
    use crate::model::build_network;

    #[test]
    fn target_score_contracts() {
        let mut net = build_network(6, 3).unwrap();
        let beat: Vec<f64> = (0..216).map(|i| (i as f64 / 20.0).cos()).collect();
        let logits = net.forward_logits(&beat).unwrap();
        assert_eq!(target_score(&net, &beat, 4).unwrap(), logits[4]);
        assert!(matches!(
            target_score(&net, &beat, 6),
            Err(ExplainError::ClassOutOfRange { .. })
        ));

        let before = target_score(&net, &beat, 2).unwrap();
        net.output_bias_mut().data_mut()[2] += 0.75;
        let after = target_score(&net, &beat, 2).unwrap();
        assert!((after - before - 0.75).abs() < 1e-12);

        net.zero_params();
        assert_eq!(target_score(&net, &beat, 0).unwrap(), 0.0);
    }

    #[test]
    fn baselines() {
        assert_eq!(Baseline::Zeros.references(3).unwrap(), vec![vec![0.0; 3]]);
        let segs: Vec<BeatSegment> = [('N', 1.0), ('N', 3.0), ('V', 9.0)]
            .iter()
            .map(|&(l, v)| BeatSegment {
                samples: vec![v; 4],
                label: l,
                source_record: "r".into(),
                r_peak_index: 0,
            })
            .collect();
        let b = Baseline::class_mean(&segs, 'N').unwrap();
        assert_eq!(b.single(4, "t").unwrap(), vec![2.0; 4]);
        assert_eq!(b.descriptor(), "class_mean:N");
        assert!(matches!(
            Baseline::class_mean(&segs, 'A'),
            Err(ExplainError::EmptyBackground)
        ));
        assert!(matches!(
            b.references(5),
            Err(ExplainError::BaselineLength { .. })
        ));
        let set = Baseline::SampleSet { beats: vec![] };
        assert!(matches!(
            set.references(4),
            Err(ExplainError::EmptyBackground)
        ));
        let set = Baseline::SampleSet {
            beats: vec![vec![0.0; 4]],
        };
        assert!(matches!(
            set.single(4, "deeplift"),
            Err(ExplainError::NotSingleReference { .. })
        ));
    }

    #[test]
    fn attribution_exports() {
        let net = affine(&[vec![1.0], vec![2.0]], &[0.0]);
        let mut a = deeplift(&net, &[1.0, 1.0], 0, &Baseline::Zeros).unwrap();
        a.beat_ref = Some("validation:3".into());
        assert_eq!(a.to_csv(), "position,score\n0,1\n1,2\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        a.write_json(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"method\": \"deeplift\""));
        assert!(text.contains("\"baseline\": \"zeros\""));
        assert_eq!(Attribution::read_json(&p).unwrap(), a);
        assert_eq!("KernelSHAP".parse::<Method>().unwrap(), Method::Kernel);
        assert!("lime".parse::<Method>().is_err());
    }
}
