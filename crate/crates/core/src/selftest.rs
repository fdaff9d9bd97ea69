//! Fast oracle checks bundled into the library so an installed binary can verify itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::explain::{
    contiguous_groups, deeplift, exact_shapley, gradient_shap, kernel_shap, Baseline,
    KernelShapConfig, Method,
};
use crate::metrics::{classification_report, roc_auc};
use crate::model::{build_network, Network};
use crate::preprocess::{bandpass_filter, detect_r_peaks, ClassIndex};
use crate::synth::{pulse_train, small_network};
use crate::viz::{saliency_svg, SaliencyStyle};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 8] = [
    ("architecture", architecture),
    ("gradient", gradient),
    ("kernel_vs_exact", kernel_vs_exact),
    ("deeplift_completeness", deeplift_completeness),
    ("gradient_shap_affine", gradient_shap_affine),
    ("metrics", metrics),
    ("pan_tompkins", pan_tompkins),
    ("saliency", saliency),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check, or only those whose name contains `filter`.
pub fn run(filter: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|&(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn architecture() -> Result<String, String> {
    let net = build_network(23, 0).map_err(|e| e.to_string())?;
    let params: Vec<usize> = net
        .summary()
        .iter()
        .map(|l| l.params)
        .filter(|&p| p > 0)
        .collect();
    let expected = [3264, 20512, 2576, 8224, 528, 391];
    ensure(params == expected, || {
        format!("parameter counts {params:?}")
    })?;
    ensure(net.param_count() == 35_495, || {
        format!("total {}", net.param_count())
    })?;
    Ok("35495 parameters".into())
}

fn gradient() -> Result<String, String> {
    let net = small_network(24, 3, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut used = 0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let class = rng.random_range(0..3);
        let (_, grad) = net.logit_gradient(&x, class).map_err(|e| e.to_string())?;
        let i = rng.random_range(0..24);
        let f = |d: f64| {
            let mut y = x.clone();
            y[i] += d;
            net.forward_logits(&y).map(|l| l[class])
        };
        let (fp, f0, fm) = (f(h).unwrap(), f(0.0).unwrap(), f(-h).unwrap());
        // Unequal one-sided slopes mean a ReLU or pooling kink lies within h.
        if ((fp - f0) - (f0 - fm)).abs() > 1e-9 {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-8));
        used += 1;
    }
    ensure(used >= 10 && worst < 1e-6, || {
        format!("max relative error {worst:.2e} over {used} points")
    })?;
    Ok(format!("max relative error {worst:.2e} over {used} points"))
}

fn kernel_vs_exact() -> Result<String, String> {
    let net = small_network(48, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = KernelShapConfig {
        group_size: 6,
        num_coalitions: 256,
        seed: 0,
    };
    let k = kernel_shap(&net, &x, 1, &Baseline::Zeros, &cfg).map_err(|e| e.to_string())?;
    let groups = contiguous_groups(48, 6).map_err(|e| e.to_string())?;
    let e = exact_shapley(&net, &x, 1, &Baseline::Zeros, &groups).map_err(|e| e.to_string())?;
    let (kv, ev) = (
        k.group_values.unwrap_or_default(),
        e.group_values.unwrap_or_default(),
    );
    let diff = kv
        .iter()
        .zip(&ev)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(kv.len() == 8 && diff < 1e-6, || {
        format!("max difference {diff:.2e}")
    })?;
    Ok(format!("max difference {diff:.2e} over 8 groups"))
}

fn deeplift_completeness() -> Result<String, String> {
    let mut net = build_network(6, 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in net.params_mut().into_iter().skip(1).step_by(2) {
        p.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let x: Vec<f64> = (0..216).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut worst = 0.0f64;
    for class in 0..6 {
        let a = deeplift(&net, &x, class, &Baseline::Zeros).map_err(|e| e.to_string())?;
        worst = worst.max(a.completeness_gap());
    }
    ensure(worst < 1e-9, || format!("completeness gap {worst:.2e}"))?;
    Ok(format!("max completeness gap {worst:.2e}"))
}

fn gradient_shap_affine() -> Result<String, String> {
    let w: Vec<f64> = (0..10).map(|i| 0.5 - 0.1 * i as f64).collect();
    let net = Network::affine(
        Tensor::new(vec![10, 1], w.clone()).map_err(|e| e.to_string())?,
        Tensor::vector(vec![0.3]),
    )
    .map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..10).map(|i| i as f64 - 4.0).collect();
    let a = gradient_shap(&net, &x, 0, &Baseline::Zeros, 5, 9).map_err(|e| e.to_string())?;
    let err = a
        .scores
        .iter()
        .zip(w.iter().zip(&x))
        .fold(0.0f64, |m, (s, (wi, xi))| m.max((s - wi * xi).abs()));
    ensure(a.method == Method::Gradient && err < 1e-12, || {
        format!("max error {err:.2e}")
    })?;
    Ok(format!("max error {err:.2e}"))
}

fn metrics() -> Result<String, String> {
    let ci = ClassIndex::new(['A', 'B']);
    let r = classification_report(&['A', 'A', 'B', 'B'], &['A', 'B', 'B', 'B'], &ci)
        .map_err(|e| e.to_string())?;
    let b = &r.per_class[1];
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure(
        close(b.precision, 2.0 / 3.0)
            && close(b.sensitivity, 1.0)
            && close(b.f1, 0.8)
            && close(r.accuracy, 0.75),
        || format!("report {r:?}"),
    )?;
    let truth = ['B', 'B', 'A', 'A'];
    let scores: Vec<Vec<f64>> = [0.9, 0.4, 0.6, 0.2]
        .iter()
        .map(|&s| vec![1.0 - s, s])
        .collect();
    let auc = roc_auc(&truth, &scores, &ci).map_err(|e| e.to_string())?[1].auc;
    ensure(auc == Some(0.75), || format!("AUC {auc:?}"))?;
    Ok("hand examples match".into())
}

fn pan_tompkins() -> Result<String, String> {
    let centers: Vec<usize> = (0..10).map(|k| 180 + 360 * k).collect();
    let x = pulse_train(&centers, 3600, 3.6);
    let filtered = bandpass_filter(&x, 360).map_err(|e| e.to_string())?;
    let peaks = detect_r_peaks(&filtered, 360).map_err(|e| e.to_string())?;
    ensure(
        peaks.len() == 10 && peaks.iter().zip(&centers).all(|(p, c)| p.abs_diff(*c) <= 1),
        || format!("peaks {peaks:?}"),
    )?;
    Ok("10/10 pulses within 1 sample".into())
}

fn saliency() -> Result<String, String> {
    let beat: Vec<f64> = (0..216).map(|i| (i as f64 / 9.0).sin()).collect();
    let mut scores = vec![0.0; 216];
    scores[60] = 1.0;
    let a = crate::explain::Attribution::new(Method::Deeplift, 0, &Baseline::Zeros, scores);
    let (svg, _) = saliency_svg(&beat, &a, &SaliencyStyle::default()).map_err(|e| e.to_string())?;
    let strokes: Vec<&str> = svg
        .lines()
        .filter(|l| l.starts_with("<line x1"))
        .filter_map(|l| l.split("stroke=\"").nth(1))
        .map(|s| &s[..7])
        .collect();
    let red = strokes.iter().filter(|s| **s == "#ff0000").count();
    let green = strokes.iter().filter(|s| **s == "#00c800").count();
    ensure(strokes.len() == 215 && red == 2 && green == 213, || {
        format!("{} segments, {red} red, {green} green", strokes.len())
    })?;
    let (again, _) =
        saliency_svg(&beat, &a, &SaliencyStyle::default()).map_err(|e| e.to_string())?;
    ensure(again == svg, || "output differs between runs".into())?;
    Ok("215 segments, endpoints green/red".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run(None) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn filter_selects_by_name() {
        let r = run(Some("metrics"));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "metrics");
        assert_eq!(check_names().len(), 8);
    }
}
