//! SVG saliency maps and ROC plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::Attribution;
use crate::metrics::EvalReport;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("beat has {beat} samples but the attribution has {scores}")]
    LengthMismatch { beat: usize, scores: usize },
    #[error("a saliency map needs at least two samples")]
    TooShort,
    #[error("report has no ROC curves")]
    MissingRoc,
    #[error("invalid style: {0}")]
    InvalidStyle(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, VizError>;

pub const GREEN: [u8; 3] = [0, 200, 0];
pub const YELLOW: [u8; 3] = [255, 200, 0];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scale")]
pub enum Normalization {
    /// Divide by the largest |score| in this beat.
    PerBeat,
    /// Divide by a fixed scale shared across beats.
    Global(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorScale {
    /// |score| mapped from green (0) to red (max).
    Magnitude,
    /// Signed score mapped symmetrically: most negative green, zero yellow, most positive red.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyStyle {
    pub normalization: Normalization,
    pub color_scale: ColorScale,
    pub line_width: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for SaliencyStyle {
    fn default() -> Self {
        Self {
            normalization: Normalization::PerBeat,
            color_scale: ColorScale::Magnitude,
            line_width: 2.5,
            width: 900,
            height: 360,
        }
    }
}

/// Green → yellow → red for `t` in [0, 1]; values outside are clamped.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let lerp =
        |a: u8, b: u8, u: f64| (f64::from(a) + (f64::from(b) - f64::from(a)) * u).round() as u8;
    let (from, to, u) = if t <= 0.5 {
        (GREEN, YELLOW, 2.0 * t)
    } else {
        (YELLOW, RED, 2.0 * t - 1.0)
    };
    [
        lerp(from[0], to[0], u),
        lerp(from[1], to[1], u),
        lerp(from[2], to[2], u),
    ]
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Constants written next to each saliency image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencySidecar {
    pub method: String,
    pub target_class: usize,
    pub target_symbol: Option<char>,
    pub normalization: Normalization,
    pub color_scale: ColorScale,
    /// Divisor applied to scores before color mapping.
    pub scale: f64,
    pub max_abs_score: f64,
    pub segments: usize,
}

/// Normalized color position of each of the `n - 1` segments. A segment takes the
/// endpoint score with the larger magnitude.
pub fn segment_levels(scores: &[f64], style: &SaliencyStyle) -> Result<(Vec<f64>, f64)> {
    let max_abs = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = match style.normalization {
        Normalization::PerBeat => max_abs,
        Normalization::Global(s) if s > 0.0 && s.is_finite() => s,
        Normalization::Global(s) => {
            return Err(VizError::InvalidStyle(format!("global scale {s}")))
        }
    };
    let levels = scores
        .windows(2)
        .map(|w| {
            let s = if w[1].abs() > w[0].abs() { w[1] } else { w[0] };
            let z = if scale > 0.0 {
                (s / scale).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            match style.color_scale {
                ColorScale::Magnitude => z.abs(),
                ColorScale::Signed => (z + 1.0) / 2.0,
            }
        })
        .collect();
    Ok((levels, scale))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sidecar_path(svg: &Path) -> PathBuf {
    svg.with_extension("json")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn saliency_svg(
    beat: &[f64],
    attribution: &Attribution,
    style: &SaliencyStyle,
) -> Result<(String, SaliencySidecar)> {
    if beat.len() != attribution.scores.len() {
        return Err(VizError::LengthMismatch {
            beat: beat.len(),
            scores: attribution.scores.len(),
        });
    }
    if beat.len() < 2 {
        return Err(VizError::TooShort);
    }
    if !(style.line_width > 0.0) || style.width < 200 || style.height < 120 {
        return Err(VizError::InvalidStyle(
            "line width must be positive, image at least 200x120".into(),
        ));
    }
    let (levels, scale) = segment_levels(&attribution.scores, style)?;

    let (w, h) = (f64::from(style.width), f64::from(style.height));
    let (left, right, top, bottom) = (50.0, w - 130.0, 40.0, h - 30.0);
    let lo = beat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = beat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = beat.len();
    let px = |i: usize| left + (right - left) * i as f64 / (n - 1) as f64;
    let py = |v: f64| bottom - (bottom - top) * (v - lo) / span;

    let label = match attribution.target_symbol {
        Some(s) => format!("class {s}"),
        None => format!("class #{}", attribution.target_class),
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="24" font-family="sans-serif" font-size="16">{} | {}</text>"#,
        escape(&label),
        escape(attribution.method.name())
    );
    let _ = writeln!(
        svg,
        r#"<g id="saliency" stroke-width="{}" stroke-linecap="round">"#,
        style.line_width
    );
    for (i, level) in levels.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}"/>"#,
            px(i),
            py(beat[i]),
            px(i + 1),
            py(beat[i + 1]),
            hex(colormap(*level))
        );
    }
    let _ = writeln!(svg, "</g>");

    // Legend: color bar from low (bottom) to high (top).
    let (lx, ly, lh) = (right + 30.0, top + 10.0, bottom - top - 40.0);
    let _ = writeln!(
        svg,
        r#"<g id="legend" font-family="sans-serif" font-size="12">"#
    );
    let steps = 20;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            ly + lh * k as f64 / steps as f64,
            lh / steps as f64 + 0.5,
            hex(colormap(t))
        );
    }
    let (high, low) = match style.color_scale {
        ColorScale::Magnitude => ("high", "low"),
        ColorScale::Signed => ("positive", "negative"),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}">{high}</text>"#,
        lx + 22.0,
        ly + 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}">{low}</text>"#,
        lx + 22.0,
        ly + lh
    );
    let _ = writeln!(
        svg,
        r#"<text x="{lx:.2}" y="{:.2}">scale {scale:.3e}</text>"#,
        ly + lh + 20.0
    );
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");

    let sidecar = SaliencySidecar {
        method: attribution.method.name().to_string(),
        target_class: attribution.target_class,
        target_symbol: attribution.target_symbol,
        normalization: style.normalization,
        color_scale: style.color_scale,
        scale,
        max_abs_score: attribution
            .scores
            .iter()
            .fold(0.0f64, |m, s| m.max(s.abs())),
        segments: levels.len(),
    };
    Ok((svg, sidecar))
}

/// Writes the saliency SVG and a JSON sidecar (same stem, `.json`) with the normalization used.
pub fn render_saliency(
    beat: &[f64],
    attribution: &Attribution,
    style: &SaliencyStyle,
    output_path: impl AsRef<Path>,
) -> Result<SaliencySidecar> {
    let path = output_path.as_ref();
    let (svg, sidecar) = saliency_svg(beat, attribution, style)?;
    write_file(path, &svg)?;
    write_file(
        &sidecar_path(path),
        &serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(sidecar)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn roc_svg(report: &EvalReport) -> Result<String> {
    let curves = report.roc.as_ref().ok_or(VizError::MissingRoc)?;
    let (w, h) = (640.0, 520.0);
    let (left, right, top, bottom) = (60.0, 420.0, 40.0, 400.0);
    let px = |f: f64| left + (right - left) * f;
    let py = |t: f64| bottom - (bottom - top) * t;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g id="axes" stroke="black" fill="none" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}"/>"#,
        right - left,
        bottom - top
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" stroke="none" fill="black" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            bottom + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" stroke="none" fill="black" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" stroke="none" fill="black" text-anchor="middle">False positive rate</text>"#,
        px(0.5),
        bottom + 34.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" stroke="none" fill="black" transform="rotate(-90 16 {:.2})" text-anchor="middle">True positive rate</text>"#,
        py(0.5),
        py(0.5)
    );
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<line id="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="5,5"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );

    let _ = writeln!(svg, r#"<g id="curves" fill="none" stroke-width="2">"#);
    for (k, c) in curves.iter().enumerate() {
        if c.auc.is_none() {
            continue;
        }
        let pts: Vec<String> = c
            .fpr
            .iter()
            .zip(&c.tpr)
            .map(|(&f, &t)| format!("{:.2},{:.2}", px(f), py(t)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-class="{}" stroke="{}" points="{}"/>"#,
            escape(&c.symbol.to_string()),
            PALETTE[k % PALETTE.len()],
            pts.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(
        svg,
        r#"<g id="legend" font-family="sans-serif" font-size="13">"#
    );
    for (k, c) in curves.iter().enumerate() {
        let y = top + 10.0 + 22.0 * k as f64;
        let auc = c.auc.map_or("undefined".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="3"/>"#,
            right + 20.0,
            right + 44.0,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            r#"<text class="legend-entry" x="{:.2}" y="{:.2}">{} (AUC {auc})</text>"#,
            right + 50.0,
            y + 4.0,
            escape(&c.symbol.to_string())
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_roc(report: &EvalReport, output_path: impl AsRef<Path>) -> Result<()> {
    write_file(output_path.as_ref(), &roc_svg(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Baseline, Method};
    use crate::metrics::{classification_report, roc_auc};
    use crate::preprocess::ClassIndex;

    fn attribution(scores: Vec<f64>) -> Attribution {
        let mut a = Attribution::new(Method::Deeplift, 1, &Baseline::Zeros, scores);
        a.target_symbol = Some('V');
        a
    }

    fn beat() -> Vec<f64> {
        (0..216).map(|i| (i as f64 / 10.0).sin()).collect()
    }

    fn segment_colors(svg: &str) -> Vec<String> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        let g = doc
            .descendants()
            .find(|n| n.attribute("id") == Some("saliency"))
            .unwrap();
        g.children()
            .filter(|n| n.has_tag_name("line"))
            .map(|n| n.attribute("stroke").unwrap().to_string())
            .collect()
    }

    #[test]
    fn colormap_endpoints_and_monotone() {
        assert_eq!(colormap(0.0), GREEN);
        assert_eq!(colormap(0.5), YELLOW);
        assert_eq!(colormap(1.0), RED);
        // Redness never decreases and greenness never increases along the map.
        let mut prev = colormap(0.0);
        for k in 1..=1000 {
            let c = colormap(k as f64 / 1000.0);
            assert!(c[0] >= prev[0] && c[1] <= prev[1] && c[2] == 0);
            prev = c;
        }
    }

    #[test]
    fn zero_attribution_is_all_green() {
        let (svg, side) = saliency_svg(
            &beat(),
            &attribution(vec![0.0; 216]),
            &SaliencyStyle::default(),
        )
        .unwrap();
        let colors = segment_colors(&svg);
        assert_eq!(colors.len(), 215);
        assert!(colors.iter().all(|c| c == "#00c800"));
        assert_eq!(side.segments, 215);
    }

    #[test]
    fn max_position_is_red() {
        let mut s = vec![0.0; 216];
        s[100] = -3.0;
        let colors = segment_colors(
            &saliency_svg(&beat(), &attribution(s), &SaliencyStyle::default())
                .unwrap()
                .0,
        );
        // Segments 99 and 100 both touch sample 100.
        assert_eq!(colors[99], "#ff0000");
        assert_eq!(colors[100], "#ff0000");
        assert_eq!(colors[0], "#00c800");
        assert_eq!(colors.iter().filter(|c| *c == "#ff0000").count(), 2);
    }

    #[test]
    fn signed_and_global_scales() {
        let mut s = vec![0.0; 216];
        s[10] = 2.0;
        s[50] = -2.0;
        let style = SaliencyStyle {
            color_scale: ColorScale::Signed,
            ..Default::default()
        };
        let (levels, scale) = segment_levels(&s, &style).unwrap();
        assert_eq!(scale, 2.0);
        assert_eq!((levels[9], levels[49], levels[100]), (1.0, 0.0, 0.5));

        let style = SaliencyStyle {
            normalization: Normalization::Global(4.0),
            ..Default::default()
        };
        let (levels, scale) = segment_levels(&s, &style).unwrap();
        assert_eq!((scale, levels[10], levels[50]), (4.0, 0.5, 0.5));
        let bad = SaliencyStyle {
            normalization: Normalization::Global(0.0),
            ..Default::default()
        };
        assert!(segment_levels(&s, &bad).is_err());
    }

    #[test]
    fn deterministic_file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let s: Vec<f64> = (0..216).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let a = attribution(s);
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        let side = render_saliency(&beat(), &a, &SaliencyStyle::default(), &p1).unwrap();
        render_saliency(&beat(), &a, &SaliencyStyle::default(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.contains("class V") && text.contains("deeplift"));
        let back: SaliencySidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap())
                .unwrap();
        assert_eq!(back, side);
        assert_eq!(side.scale, 5.0);
    }

    #[test]
    fn saliency_errors() {
        assert!(matches!(
            saliency_svg(
                &beat(),
                &attribution(vec![0.0; 10]),
                &SaliencyStyle::default()
            ),
            Err(VizError::LengthMismatch {
                beat: 216,
                scores: 10
            })
        ));
        let err = render_saliency(
            &beat(),
            &attribution(vec![0.0; 216]),
            &SaliencyStyle::default(),
            "/nonexistent/dir/x.svg",
        );
        assert!(matches!(err, Err(VizError::Io { .. })));
    }

    #[test]
    fn roc_plot() {
        let ci = ClassIndex::new(['A', 'N', 'V']);
        let truth = ['A', 'N', 'V', 'N'];
        let scores = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.2, 0.7, 0.1],
        ];
        let report = classification_report(&truth, &truth, &ci)
            .unwrap()
            .with_roc(roc_auc(&truth, &scores, &ci).unwrap());
        let svg = roc_svg(&report).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let legend: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("legend-entry"))
            .map(|n| n.text().unwrap())
            .collect();
        assert_eq!(
            legend,
            ["A (AUC 1.0000)", "N (AUC 1.0000)", "V (AUC 1.0000)"]
        );
        let diag = doc
            .descendants()
            .find(|n| n.attribute("id") == Some("diagonal"))
            .unwrap();
        assert_eq!(diag.attribute("x1"), Some("60.00"));
        assert_eq!(diag.attribute("y1"), Some("400.00"));
        assert_eq!(diag.attribute("x2"), Some("420.00"));
        assert_eq!(diag.attribute("y2"), Some("40.00"));
        // (0, 1) in plot coordinates.
        for line in doc.descendants().filter(|n| n.has_tag_name("polyline")) {
            assert!(line
                .attribute("points")
                .unwrap()
                .split(' ')
                .any(|p| p == "60.00,40.00"));
        }
        let plain = classification_report(&truth, &truth, &ci).unwrap();
        assert!(matches!(roc_svg(&plain), Err(VizError::MissingRoc)));
    }
}
