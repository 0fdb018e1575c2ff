//! Evaluation measures for predicted maps against binary annotations.
//!
//! All functions take a prediction in `[0, 1]` and a binary annotation of the
//! same shape. Degenerate annotations (all background / all foreground) follow
//! the conventions documented on each function.

use crate::error::{Error, Result};
use crate::imgproc::{edt, gaussian_blur};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Precision weighting used by both F-measures.
pub const F_BETA2: f64 = 0.3;
/// Mix between object- and region-structure terms.
pub const S_ALPHA: f64 = 0.5;
/// Number of uniform binarization thresholds in the sweep measures.
pub const SWEEP_STEPS: usize = 256;

const EPS: f64 = f64::EPSILON;

/// Scores for one prediction/annotation pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub s_measure: f64,
    pub e_adaptive: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub weighted_f: f64,
    pub mean_f: f64,
    pub mae: f64,
}

/// Which alignment-score variant is reported as the headline number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EHeadline {
    #[default]
    Mean,
    Max,
}

impl ImageMetrics {
    pub fn headline_e(&self, which: EHeadline) -> f64 {
        match which {
            EHeadline::Mean => self.e_mean,
            EHeadline::Max => self.e_max,
        }
    }
}

/// Mean scores over a set of images.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: ImageMetrics,
}

pub fn summarize(items: &[ImageMetrics]) -> MetricSummary {
    let mut mean = ImageMetrics::default();
    for m in items {
        mean.s_measure += m.s_measure;
        mean.e_adaptive += m.e_adaptive;
        mean.e_mean += m.e_mean;
        mean.e_max += m.e_max;
        mean.weighted_f += m.weighted_f;
        mean.mean_f += m.mean_f;
        mean.mae += m.mae;
    }
    if !items.is_empty() {
        let n = items.len() as f64;
        mean.s_measure /= n;
        mean.e_adaptive /= n;
        mean.e_mean /= n;
        mean.e_max /= n;
        mean.weighted_f /= n;
        mean.mean_f /= n;
        mean.mae /= n;
    }
    MetricSummary { count: items.len(), mean }
}

pub const CSV_HEADER: &str = "name,s_measure,e_adaptive,e_mean,e_max,weighted_f,mean_f,mae";

pub fn csv_row(name: &str, m: &ImageMetrics) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        name, m.s_measure, m.e_adaptive, m.e_mean, m.e_max, m.weighted_f, m.mean_f, m.mae
    )
}

fn check_pair(prediction: &Array2<f64>, annotation: &Array2<f64>) -> Result<()> {
    if prediction.dim() != annotation.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} and annotation {:?} differ",
            prediction.dim(),
            annotation.dim()
        )));
    }
    let (h, w) = prediction.dim();
    if h < 2 || w < 2 {
        return Err(Error::shape("maps must be at least 2x2"));
    }
    if annotation.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::data("annotation is not binary"));
    }
    Ok(())
}

/// All measures for one pair.
pub fn evaluate_pair(prediction: &Array2<f64>, annotation: &Array2<f64>) -> Result<ImageMetrics> {
    check_pair(prediction, annotation)?;
    let (e_adaptive, e_mean, e_max) = e_measures(prediction, annotation);
    Ok(ImageMetrics {
        s_measure: s_measure(prediction, annotation),
        e_adaptive,
        e_mean,
        e_max,
        weighted_f: weighted_f(prediction, annotation),
        mean_f: mean_f(prediction, annotation),
        mae: mae(prediction, annotation),
    })
}

/// Mean absolute difference.
pub fn mae(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let n = prediction.len() as f64;
    prediction
        .iter()
        .zip(annotation.iter())
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

/// Structure measure: `S_ALPHA` object term + region term, clamped at zero.
///
/// Degenerate annotations bypass both terms: all-background scores
/// `1 - mean(prediction)`, all-foreground scores `mean(prediction)`.
pub fn s_measure(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let mu = annotation.mean().unwrap();
    if mu == 0.0 {
        return 1.0 - prediction.mean().unwrap();
    }
    if mu == 1.0 {
        return prediction.mean().unwrap();
    }
    let s = S_ALPHA * object_term(prediction, annotation)
        + (1.0 - S_ALPHA) * region_term(prediction, annotation);
    s.max(0.0)
}

/// Similarity of one side: `2m / (m^2 + 1 + sd + eps)` over the region's
/// values, with the sample standard deviation (zero for singleton regions).
fn side_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sd + EPS)
}

fn object_term(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (p, g) in prediction.iter().zip(annotation.iter()) {
        if *g > 0.5 {
            fg.push(*p);
        } else {
            bg.push(1.0 - *p);
        }
    }
    let mu = annotation.mean().unwrap();
    mu * side_score(&fg) + (1.0 - mu) * side_score(&bg)
}

/// Split point of the annotation: rounded one-based mean coordinates of the
/// foreground, clamped so every quadrant keeps at least one pixel.
fn split_point(annotation: &Array2<f64>) -> (usize, usize) {
    let (h, w) = annotation.dim();
    assert!(h >= 2 && w >= 2, "quadrant split needs at least 2x2");
    let total: f64 = annotation.sum();
    let mut ry = 0.0;
    let mut rx = 0.0;
    for ((y, x), g) in annotation.indexed_iter() {
        ry += (y + 1) as f64 * g;
        rx += (x + 1) as f64 * g;
    }
    let cy = (ry / total).round() as usize;
    let cx = (rx / total).round() as usize;
    (cy.clamp(1, h - 1), cx.clamp(1, w - 1))
}

/// Similarity of one quadrant. Zero-variance pairs with matching statistics
/// count as identical; singleton quadrants use zero variance.
fn quadrant_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mx = p.iter().sum::<f64>() / n;
    let my = g.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(g.iter()) {
        sx += (a - mx) * (a - mx);
        sy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if p.len() > 1 {
        sx /= n - 1.0;
        sy /= n - 1.0;
        sxy /= n - 1.0;
    } else {
        sx = 0.0;
        sy = 0.0;
        sxy = 0.0;
    }
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_term(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let (h, w) = annotation.dim();
    let (cy, cx) = split_point(annotation);
    let area = (h * w) as f64;
    let mut score = 0.0;
    for (ys, xs) in [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ] {
        let weight = (ys.len() * xs.len()) as f64 / area;
        let mut p = Vec::with_capacity(ys.len() * xs.len());
        let mut g = Vec::with_capacity(ys.len() * xs.len());
        for y in ys.clone() {
            for x in xs.clone() {
                p.push(prediction[[y, x]]);
                g.push(annotation[[y, x]]);
            }
        }
        score += weight * quadrant_ssim(&p, &g);
    }
    score
}

// ---------------------------------------------------------------------------
// Alignment measure
// ---------------------------------------------------------------------------

/// Alignment score of one binarized map. The alignment of mean-centered maps
/// is enhanced quadratically and averaged over all pixels, so a perfect
/// binarization scores exactly one. Degenerate annotations grade the
/// binarization directly: all-background averages `1 - map`, all-foreground
/// averages `map`.
pub fn e_binary(binarized: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let n = annotation.len() as f64;
    let gsum = annotation.sum();
    let total: f64 = if gsum == 0.0 {
        binarized.iter().map(|v| 1.0 - v).sum()
    } else if gsum == n {
        binarized.sum()
    } else {
        let mu_f = binarized.mean().unwrap();
        let mu_g = annotation.mean().unwrap();
        binarized
            .iter()
            .zip(annotation.iter())
            .map(|(f, g)| {
                let a = f - mu_f;
                let b = g - mu_g;
                let den = a * a + b * b;
                let align = if den == 0.0 { 1.0 } else { 2.0 * a * b / den };
                (align + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    total / n
}

/// Binarization at twice the prediction mean, capped at one. The comparison
/// is strict below the cap and inclusive at it, so exact binary predictions
/// reproduce themselves at either end of the cap.
fn adaptive_binarize(prediction: &Array2<f64>) -> Array2<f64> {
    let th = (2.0 * prediction.mean().unwrap()).min(1.0);
    if th < 1.0 {
        prediction.mapv(|p| if p > th { 1.0 } else { 0.0 })
    } else {
        prediction.mapv(|p| if p >= 1.0 { 1.0 } else { 0.0 })
    }
}

/// Sweep thresholds `t / SWEEP_STEPS` with a strict comparison: a binary
/// prediction binarizes to itself at every step, so its sweep scores match
/// its single-map score exactly.
fn sweep_binarize(prediction: &Array2<f64>, step: usize) -> Array2<f64> {
    let th = step as f64 / SWEEP_STEPS as f64;
    prediction.mapv(|p| if p > th { 1.0 } else { 0.0 })
}

/// `(adaptive, mean-over-sweep, max-over-sweep)` alignment scores.
pub fn e_measures(prediction: &Array2<f64>, annotation: &Array2<f64>) -> (f64, f64, f64) {
    let adaptive = e_binary(&adaptive_binarize(prediction), annotation);
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for t in 0..SWEEP_STEPS {
        let e = e_binary(&sweep_binarize(prediction, t), annotation);
        sum += e;
        max = max.max(e);
    }
    (adaptive, sum / SWEEP_STEPS as f64, max)
}

// ---------------------------------------------------------------------------
// F-measures
// ---------------------------------------------------------------------------

fn f_beta(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    (1.0 + F_BETA2) * precision * recall / (F_BETA2 * precision + recall)
}

/// Mean F over the sweep thresholds. Empty binarizations (or an empty
/// annotation) contribute zero.
pub fn mean_f(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    for t in 0..SWEEP_STEPS {
        let th = t as f64 / SWEEP_STEPS as f64;
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (p, g) in prediction.iter().zip(annotation.iter()) {
            let f = *p > th;
            if f && *g > 0.5 {
                tp += 1.0;
            } else if f {
                fp += 1.0;
            } else if *g > 0.5 {
                fn_ += 1.0;
            }
        }
        sum += f_beta(tp, fp, fn_);
    }
    sum / SWEEP_STEPS as f64
}

/// Boundary-aware F built on weighted errors: background errors borrow the
/// error at their nearest foreground pixel before smoothing, foreground
/// errors keep the smaller of raw and smoothed, and background errors decay
/// with distance through `2 - exp(ln(0.5) / 5 * d)`. An empty annotation
/// scores zero.
pub fn weighted_f(prediction: &Array2<f64>, annotation: &Array2<f64>) -> f64 {
    let gsum = annotation.sum();
    if gsum == 0.0 {
        return 0.0;
    }
    let (h, w) = annotation.dim();
    let error = Array2::from_shape_fn((h, w), |ix| (prediction[ix] - annotation[ix]).abs());
    let (dist, sites) = edt(annotation);
    let mut transferred = error.clone();
    for ((y, x), g) in annotation.indexed_iter() {
        if *g < 0.5 {
            let (sy, sx) = sites[[y, x]].expect("nonempty annotation");
            transferred[[y, x]] = error[[sy, sx]];
        }
    }
    let smoothed = gaussian_blur(&transferred, 7, 5.0);
    let decay = (0.5f64).ln() / 5.0;
    let mut fg_weighted_sum = 0.0;
    let mut bg_weighted_sum = 0.0;
    for ((y, x), g) in annotation.indexed_iter() {
        if *g > 0.5 {
            fg_weighted_sum += error[[y, x]].min(smoothed[[y, x]]);
        } else {
            bg_weighted_sum += error[[y, x]] * (2.0 - (decay * dist[[y, x]]).exp());
        }
    }
    let tp_sum = gsum - fg_weighted_sum;
    let recall = 1.0 - fg_weighted_sum / gsum;
    let precision = tp_sum / (EPS + tp_sum + bg_weighted_sum);
    (1.0 + F_BETA2) * precision * recall / (EPS + F_BETA2 * precision + recall)
}
