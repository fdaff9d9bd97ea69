//! Confusion matrix, per-class precision/sensitivity/F1 and one-vs-rest ROC.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::ClassIndex;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{truth} true labels but {other} predictions/score rows")]
    LengthMismatch { truth: usize, other: usize },
    #[error("label '{0}' is not in the class index")]
    UnknownLabel(char),
    #[error("score row {row} has {got} entries, expected {expected}")]
    ScoreWidth {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("score {value} at row {row}, class {class} is outside [0, 1]")]
    ScoreRange {
        row: usize,
        class: usize,
        value: f64,
    },
    #[error("no samples to evaluate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A metric that hit a zero denominator (reported as 0) or is otherwise undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    /// Nothing was predicted as this class.
    NoPredictions,
    /// The class has no true samples.
    NoSupport,
    /// Precision and sensitivity are both 0.
    F1Undefined,
    /// Only one of positive/negative is present, so the ROC is undefined.
    AucUndefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub symbol: char,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub support: usize,
    pub flags: Vec<MetricFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub symbol: char,
    /// Points from (0, 0) to (1, 1); one per distinct score threshold.
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Threshold producing each point (`+inf` for the origin).
    pub thresholds: Vec<f64>,
    /// `None` when the class is all-positive or all-negative.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_index: ClassIndex,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: usize,
    pub roc: Option<Vec<RocCurve>>,
}

fn indices(labels: &[char], ci: &ClassIndex) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&c| ci.index_of(c).ok_or(MetricsError::UnknownLabel(c)))
        .collect()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_report(
    truth: &[char],
    predicted: &[char],
    class_index: &ClassIndex,
) -> Result<EvalReport> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            other: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let t = indices(truth, class_index)?;
    let p = indices(predicted, class_index)?;
    let k = class_index.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&a, &b) in t.iter().zip(&p) {
        confusion[a][b] += 1;
    }

    let total = truth.len();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
        let mut flags = Vec::new();
        let precision = ratio(tp, predicted_c).unwrap_or_else(|| {
            flags.push(MetricFlag::NoPredictions);
            0.0
        });
        let sensitivity = ratio(tp, support).unwrap_or_else(|| {
            flags.push(MetricFlag::NoSupport);
            0.0
        });
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            flags.push(MetricFlag::F1Undefined);
            0.0
        };
        per_class.push(ClassMetrics {
            symbol: class_index.symbol(c).expect("index in range"),
            precision,
            sensitivity,
            f1,
            support,
            flags,
        });
    }

    let kf = k as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        sensitivity: per_class.iter().map(|m| m.sensitivity).sum::<f64>() / kf,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
    };
    let n = total as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / n
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        sensitivity: weighted(|m| m.sensitivity),
        f1: weighted(|m| m.f1),
    };
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        class_index: class_index.clone(),
        confusion,
        per_class,
        macro_avg,
        weighted_avg,
        accuracy: correct as f64 / n,
        total,
        roc: None,
    })
}

/// One-vs-rest ROC per class from per-sample probability rows. Equal scores form one
/// threshold step; AUC is the trapezoidal area.
pub fn roc_auc(
    truth: &[char],
    scores: &[Vec<f64>],
    class_index: &ClassIndex,
) -> Result<Vec<RocCurve>> {
    if truth.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            other: scores.len(),
        });
    }
    let t = indices(truth, class_index)?;
    let k = class_index.len();
    for (row, s) in scores.iter().enumerate() {
        if s.len() != k {
            return Err(MetricsError::ScoreWidth {
                row,
                expected: k,
                got: s.len(),
            });
        }
        if let Some((class, &value)) = s
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(MetricsError::ScoreRange { row, class, value });
        }
    }
    Ok((0..k)
        .map(|c| {
            let pairs: Vec<(f64, bool)> = scores
                .iter()
                .zip(&t)
                .map(|(s, &y)| (s[c], y == c))
                .collect();
            roc_curve(class_index.symbol(c).expect("index in range"), pairs)
        })
        .collect())
}

fn roc_curve(symbol: char, mut pairs: Vec<(f64, bool)>) -> RocCurve {
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return RocCurve {
            symbol,
            fpr: Vec::new(),
            tpr: Vec::new(),
            thresholds: Vec::new(),
            auc: None,
        };
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut fpr, mut tpr, mut thresholds) = (vec![0.0], vec![0.0], vec![f64::INFINITY]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
        thresholds.push(s);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    RocCurve {
        symbol,
        fpr,
        tpr,
        thresholds,
        auc: Some(auc),
    }
}

/// Long name used in report tables, or the symbol itself for other classes.
pub fn class_name(symbol: char) -> String {
    match symbol {
        '/' => "Paced beat".into(),
        'A' => "Atrial premature beat".into(),
        'L' => "Left bundle branch block".into(),
        'N' => "Normal beat".into(),
        'R' => "Right bundle branch block".into(),
        'V' => "Premature ventricular contraction".into(),
        other => other.to_string(),
    }
}

/// File-name-safe stem for a class symbol.
pub fn class_file_stem(symbol: char) -> String {
    match symbol {
        '/' => "paced".into(),
        c if c.is_ascii_alphanumeric() => c.to_string(),
        c => format!("u{:04x}", c as u32),
    }
}

impl EvalReport {
    /// Attaches ROC curves and flags classes whose AUC is undefined.
    pub fn with_roc(mut self, curves: Vec<RocCurve>) -> Self {
        for (m, c) in self.per_class.iter_mut().zip(&curves) {
            if c.auc.is_none() && !m.flags.contains(&MetricFlag::AucUndefined) {
                m.flags.push(MetricFlag::AucUndefined);
            }
        }
        self.roc = Some(curves);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per class, then macro/weighted averages and accuracy.
    pub fn to_text_table(&self) -> String {
        let names: Vec<String> = self
            .per_class
            .iter()
            .map(|m| class_name(m.symbol))
            .collect();
        let w = names
            .iter()
            .map(String::len)
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(12);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:w$}  {:>9}  {:>11}  {:>8}  {:>17}",
            "", "Precision", "Sensitivity", "f1-score", "Number of samples"
        );
        let row = |out: &mut String, name: &str, p: f64, s: f64, f: f64, n: usize| {
            let _ = writeln!(out, "{name:w$}  {p:>9.2}  {s:>11.2}  {f:>8.2}  {n:>17}");
        };
        for (m, name) in self.per_class.iter().zip(&names) {
            row(&mut out, name, m.precision, m.sensitivity, m.f1, m.support);
        }
        let (ma, wa) = (self.macro_avg, self.weighted_avg);
        row(
            &mut out,
            "macro avg",
            ma.precision,
            ma.sensitivity,
            ma.f1,
            self.total,
        );
        row(
            &mut out,
            "weighted avg",
            wa.precision,
            wa.sensitivity,
            wa.f1,
            self.total,
        );
        let _ = writeln!(
            out,
            "{:w$}  {:>32.2}  {:>17}",
            "accuracy", self.accuracy, self.total
        );
        if let Some(roc) = &self.roc {
            for c in roc {
                match c.auc {
                    Some(a) => {
                        let _ = writeln!(out, "AUC {}: {a:.4}", c.symbol);
                    }
                    None => {
                        let _ = writeln!(out, "AUC {}: undefined", c.symbol);
                    }
                }
            }
        }
        for m in &self.per_class {
            if !m.flags.is_empty() {
                let _ = writeln!(out, "note: class {} flagged {:?}", m.symbol, m.flags);
            }
        }
        out
    }
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for ((t, f), p) in self.thresholds.iter().zip(&self.fpr).zip(&self.tpr) {
            let _ = writeln!(out, "{t},{f},{p}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> ClassIndex {
        ClassIndex::new(['A', 'B'])
    }

    #[test]
    fn perfect_predictions() {
        let y = ['A', 'B', 'B', 'A', 'B'];
        let r = classification_report(&y, &y, &ab()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for m in &r.per_class {
            assert_eq!((m.precision, m.sensitivity, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 3]]);
    }

    #[test]
    fn hand_example() {
        let r = classification_report(&['A', 'A', 'B', 'B'], &['A', 'B', 'B', 'B'], &ab()).unwrap();
        let (a, b) = (&r.per_class[0], &r.per_class[1]);
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.sensitivity - 1.0).abs() < 1e-12);
        assert!((b.f1 - 0.8).abs() < 1e-12);
        assert!((a.precision - 1.0).abs() < 1e-12);
        assert!((a.sensitivity - 0.5).abs() < 1e-12);
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 0.75).abs() < 1e-12);
        // Macro: plain means. Weighted: both supports are 2, so the same here.
        assert!((r.macro_avg.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((r.macro_avg.sensitivity - 0.75).abs() < 1e-12);
        assert!((r.macro_avg.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((r.weighted_avg.f1 - r.macro_avg.f1).abs() < 1e-12);
    }

    #[test]
    fn weighted_average_uses_support() {
        // A: support 1, sensitivity 1; B: support 3, sensitivity 2/3.
        let r = classification_report(&['A', 'B', 'B', 'B'], &['A', 'B', 'B', 'A'], &ab()).unwrap();
        assert!((r.weighted_avg.sensitivity - (1.0 * 0.25 + 2.0 / 3.0 * 0.75)).abs() < 1e-12);
        assert!((r.macro_avg.sensitivity - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let ci = ClassIndex::new(['A', 'B', 'C']);
        let r = classification_report(&['A', 'B'], &['A', 'A'], &ci).unwrap();
        let c = &r.per_class[2];
        assert_eq!((c.precision, c.sensitivity, c.f1), (0.0, 0.0, 0.0));
        assert!(c.flags.contains(&MetricFlag::NoPredictions));
        assert!(c.flags.contains(&MetricFlag::NoSupport));
        assert!(r.per_class[1].flags.contains(&MetricFlag::NoPredictions));
        assert_eq!(r.per_class.len(), 3);
    }

    #[test]
    fn report_errors() {
        assert_eq!(
            classification_report(&['A'], &['A', 'B'], &ab()).unwrap_err(),
            MetricsError::LengthMismatch { truth: 1, other: 2 }
        );
        assert_eq!(
            classification_report(&['Q'], &['A'], &ab()).unwrap_err(),
            MetricsError::UnknownLabel('Q')
        );
    }

    fn binary_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
        let truth: Vec<char> = labels.iter().map(|&l| if l { 'B' } else { 'A' }).collect();
        let rows: Vec<Vec<f64>> = scores.iter().map(|&s| vec![1.0 - s, s]).collect();
        roc_auc(&truth, &rows, &ab()).unwrap()[1].auc
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            binary_auc(&[true, true, false, false], &[0.9, 0.4, 0.6, 0.2]),
            Some(0.75)
        );
        assert_eq!(
            binary_auc(&[true, true, false, false], &[0.9, 0.8, 0.3, 0.2]),
            Some(1.0)
        );
        assert_eq!(
            binary_auc(&[true, true, false, false], &[0.1, 0.2, 0.8, 0.9]),
            Some(0.0)
        );
        // Tied scores across classes count half.
        assert_eq!(binary_auc(&[true, false], &[0.5, 0.5]), Some(0.5));
        assert_eq!(binary_auc(&[true, true], &[0.5, 0.7]), None);
    }

    #[test]
    fn perfect_curve_passes_through_corner() {
        let truth = ['A', 'B', 'A', 'B'];
        let rows = vec![
            vec![0.9, 0.1],
            vec![0.2, 0.8],
            vec![0.7, 0.3],
            vec![0.4, 0.6],
        ];
        let curves = roc_auc(&truth, &rows, &ab()).unwrap();
        for c in &curves {
            assert_eq!(c.auc, Some(1.0));
            assert!(c
                .fpr
                .iter()
                .zip(&c.tpr)
                .any(|(&f, &t)| f == 0.0 && t == 1.0));
            assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
        }
        assert!(curves[0]
            .to_csv()
            .starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    }

    #[test]
    fn roc_validation_and_flags() {
        assert!(matches!(
            roc_auc(&['A'], &[vec![0.5]], &ab()),
            Err(MetricsError::ScoreWidth { .. })
        ));
        assert!(matches!(
            roc_auc(&['A'], &[vec![1.5, -0.5]], &ab()),
            Err(MetricsError::ScoreRange { .. })
        ));
        let r = classification_report(&['A', 'A'], &['A', 'A'], &ab()).unwrap();
        let curves = roc_auc(&['A', 'A'], &[vec![0.6, 0.4], vec![0.7, 0.3]], &ab()).unwrap();
        let r = r.with_roc(curves);
        assert!(r.per_class[0].flags.contains(&MetricFlag::AucUndefined));
        assert!(r.to_text_table().contains("AUC A: undefined"));
    }

    #[test]
    fn text_table_layout() {
        let ci = ClassIndex::new(['/', 'A', 'N']);
        let r = classification_report(&['/', 'A', 'N', 'N'], &['/', 'N', 'N', 'N'], &ci).unwrap();
        let t = r.to_text_table();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("Precision") && lines[0].contains("Number of samples"));
        assert!(lines[1].starts_with("Paced beat"));
        assert!(lines[2].starts_with("Atrial premature beat"));
        assert!(lines[4].starts_with("macro avg"));
        assert!(lines[5].starts_with("weighted avg"));
        assert!(lines[6].starts_with("accuracy") && lines[6].trim_end().ends_with('4'));
        assert!(r.to_json().contains("\"weighted_avg\""));
        assert_eq!(class_file_stem('/'), "paced");
        assert_eq!(class_file_stem('N'), "N");
    }

    /// P(score_pos > score_neg) + 0.5 P(tie), by counting all pairs.
    fn mann_whitney(labels: &[bool], scores: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn auc_is_the_concordance_probability(
            data in proptest::collection::vec((any::<bool>(), 0u8..12), 2..40)
        ) {
            let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            // Coarse scores so ties are common.
            let scores: Vec<f64> = data.iter().map(|d| f64::from(d.1) / 11.0).collect();
            let auc = binary_auc(&labels, &scores).unwrap();
            prop_assert!((auc - mann_whitney(&labels, &scores)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&auc));
        }
    }

    proptest! {
        #[test]
        fn metrics_ignore_sample_order(
            data in proptest::collection::vec((0usize..3, 0usize..3, 0.0f64..1.0), 3..60),
            rot in 0usize..60,
        ) {
            let ci = ClassIndex::new(['A', 'B', 'C']);
            let sym = |i: usize| ci.symbol(i).unwrap();
            let t: Vec<char> = data.iter().map(|d| sym(d.0)).collect();
            let p: Vec<char> = data.iter().map(|d| sym(d.1)).collect();
            let s: Vec<Vec<f64>> = data.iter().map(|d| vec![d.2, (1.0 - d.2) / 2.0, (1.0 - d.2) / 2.0]).collect();
            let r1 = classification_report(&t, &p, &ci).unwrap().with_roc(roc_auc(&t, &s, &ci).unwrap());
            let k = rot % data.len();
            let rotate = |v: &mut Vec<_>| v.rotate_left(k);
            let (mut t2, mut p2, mut s2) = (t.clone(), p.clone(), s.clone());
            rotate(&mut t2);
            rotate(&mut p2);
            s2.rotate_left(k);
            t2.reverse(); p2.reverse(); s2.reverse();
            let r2 = classification_report(&t2, &p2, &ci).unwrap().with_roc(roc_auc(&t2, &s2, &ci).unwrap());
            prop_assert_eq!(&r1.confusion, &r2.confusion);
            prop_assert_eq!(&r1.per_class, &r2.per_class);
            prop_assert_eq!(r1.accuracy, r2.accuracy);
            let trace: usize = (0..3).map(|c| r1.confusion[c][c]).sum();
            prop_assert_eq!(r1.accuracy, trace as f64 / data.len() as f64);
            for (a, b) in r1.roc.unwrap().iter().zip(r2.roc.unwrap().iter()) {
                match (a.auc, b.auc) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }
    }
}
