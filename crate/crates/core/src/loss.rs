//! Supervised losses: focal and Tversky terms per head, edge-band-weighted
//! focal plus background total variation for the edge head, an edge-restricted
//! Dice term for the final head, per-sample instance weighting by foreground
//! ratio, and the weighted total.
//!
//! All losses consume probability maps in [0, 1] plus binary targets, produce
//! per-sample values where instance weighting applies, and stay finite on
//! degenerate inputs (empty masks, empty edge sets, empty TV domains).

use crate::error::{Error, Result};
use crate::imgproc;
use crate::tensor::{Arr, Var};
use ndarray::{Axis, IxDyn};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[ε, 1−ε]` before any logarithm.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_edge: f64,
    pub w_loc: f64,
    pub w_final: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// (false-positive, false-negative) penalties for the localization head.
    pub tversky_loc: (f64, f64),
    /// Same for the final head; flipped to favor precision.
    pub tversky_final: (f64, f64),
    pub tversky_eps: f64,
    /// Focal weight on pixels within the edge band.
    pub edge_focal_weight: f64,
    pub tv_weight: f64,
    /// Band radius in pixels around ground-truth edges; ties sit inside.
    pub edge_band_cutoff: f64,
    pub edge_dice_weight: f64,
    pub edge_dice_eps: f64,
    pub instance_factor: f64,
    /// (lo, hi) foreground ratios bracketing the linear weight ramp.
    pub instance_thresholds: (f64, f64),
    /// Internal head-term balances (1:1 by default).
    pub loc_focal_weight: f64,
    pub loc_tversky_weight: f64,
    pub final_focal_weight: f64,
    pub final_tversky_weight: f64,
    /// Derive the TV domain from the thresholded prediction instead of the
    /// ground-truth background.
    pub tv_on_predicted_background: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_edge: 1.0,
            w_loc: 1.15,
            w_final: 1.2,
            focal_alpha: 0.25,
            focal_gamma: 3.0,
            tversky_loc: (0.6, 0.4),
            tversky_final: (0.4, 0.6),
            tversky_eps: 1.0,
            edge_focal_weight: 5.0,
            tv_weight: 0.15,
            edge_band_cutoff: 5.0,
            edge_dice_weight: 0.2,
            edge_dice_eps: 1e-6,
            instance_factor: 3.0,
            instance_thresholds: (0.02, 0.8),
            loc_focal_weight: 1.0,
            loc_tversky_weight: 1.0,
            final_focal_weight: 1.0,
            final_tversky_weight: 1.0,
            tv_on_predicted_background: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.w_edge,
            self.w_loc,
            self.w_final,
            self.edge_focal_weight,
            self.tv_weight,
            self.edge_dice_weight,
            self.loc_focal_weight,
            self.loc_tversky_weight,
            self.final_focal_weight,
            self.final_tversky_weight,
        ];
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        for (name, (a, b)) in [("tversky_loc", self.tversky_loc), ("tversky_final", self.tversky_final)] {
            if (a + b - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("{name} penalties must sum to 1")));
            }
        }
        let (lo, hi) = self.instance_thresholds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::config("instance thresholds must satisfy 0 < lo < hi < 1"));
        }
        if self.instance_factor < 1.0 {
            return Err(Error::config("instance factor must be at least 1"));
        }
        Ok(())
    }
}

fn flat_sum<'t>(x: Var<'t>) -> Var<'t> {
    x.sum_axes(&[1, 2, 3], false)
}

/// Per-sample focal loss: mean over pixels of
/// `−α(1−p)^γ log p` on positives and `−(1−α)p^γ log(1−p)` on negatives,
/// pixel-weighted (a weighted mean) when a weight map is given.
pub fn focal_per_sample<'t>(
    p: Var<'t>,
    target: &Arr,
    alpha: f64,
    gamma: f64,
    weight: Option<&Arr>,
) -> Var<'t> {
    let shape = p.shape();
    assert_eq!(shape, target.shape().to_vec(), "focal target shape");
    let tape = p.tape();
    let y = tape.constant(target.clone());
    let y_inv = tape.constant(target.mapv(|v| 1.0 - v));
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pc_inv = pc.neg().add_scalar(1.0);
    let pos = pc.ln().mul(&pc_inv.powf_const(gamma)).scale(-alpha).mul(&y);
    let neg = pc_inv
        .ln()
        .mul(&pc.powf_const(gamma))
        .scale(-(1.0 - alpha))
        .mul(&y_inv);
    let phi = pos.add(&neg);
    let n = shape[0];
    let per_pixel: f64 = (shape[1] * shape[2] * shape[3]) as f64;
    match weight {
        None => flat_sum(phi).scale(1.0 / per_pixel),
        Some(w) => {
            assert_eq!(w.shape(), target.shape(), "focal weight shape");
            let mut inv = Arr::zeros(IxDyn(&[n]));
            for ni in 0..n {
                let s: f64 = w.index_axis(Axis(0), ni).iter().sum();
                inv[[ni]] = 1.0 / s;
            }
            flat_sum(phi.mul(&tape.constant(w.clone()))).mul(&tape.constant(inv))
        }
    }
}

/// Per-sample Tversky loss on soft counts:
/// `1 − (TP + ε)/(TP + α·FP + β·FN + ε)`.
pub fn tversky_per_sample<'t>(p: Var<'t>, target: &Arr, alpha: f64, beta: f64, eps: f64) -> Var<'t> {
    assert_eq!(p.shape(), target.shape().to_vec(), "tversky target shape");
    let tape = p.tape();
    let y = tape.constant(target.clone());
    let y_inv = tape.constant(target.mapv(|v| 1.0 - v));
    let tp = flat_sum(p.mul(&y));
    let fp = flat_sum(p.mul(&y_inv));
    let fnn = flat_sum(p.neg().add_scalar(1.0).mul(&y));
    let num = tp.add_scalar(eps);
    let den = tp.add(&fp.scale(alpha)).add(&fnn.scale(beta)).add_scalar(eps);
    num.div(&den).neg().add_scalar(1.0)
}

/// Per-sample anisotropic total variation of `p`, averaged over neighbor
/// pairs that lie entirely inside `domain`. Empty domains contribute zero.
pub fn tv_per_sample<'t>(p: Var<'t>, domain: &Arr) -> Var<'t> {
    let shape = p.shape();
    assert_eq!(shape, domain.shape().to_vec(), "tv domain shape");
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let tape = p.tape();
    let mut num: Option<Var> = None;
    let mut counts = vec![0.0f64; n];
    let mut add_pairs = |axis: usize, len: usize| -> Option<Var<'t>> {
        if len < 2 {
            return None;
        }
        let hi = p.slice_axis(axis, 1, len);
        let lo = p.slice_axis(axis, 0, len - 1);
        let d = hi.sub(&lo).abs();
        let m_hi = domain.slice_axis(Axis(axis), ndarray::Slice::from(1..len));
        let m_lo = domain.slice_axis(Axis(axis), ndarray::Slice::from(0..len - 1));
        let pair_mask = (&m_hi.to_owned() * &m_lo.to_owned()).into_dyn();
        for ni in 0..n {
            counts[ni] += pair_mask.index_axis(Axis(0), ni).iter().sum::<f64>();
        }
        Some(flat_sum(d.mul(&tape.constant(pair_mask))))
    };
    for (axis, len) in [(2usize, h), (3usize, w)] {
        if let Some(term) = add_pairs(axis, len) {
            num = Some(match num {
                None => term,
                Some(acc) => acc.add(&term),
            });
        }
    }
    let num = match num {
        Some(v) => v,
        None => return tape.constant(Arr::zeros(IxDyn(&[n]))),
    };
    let inv = Arr::from_shape_fn(IxDyn(&[n]), |i| {
        let c = counts[i[0]];
        if c > 0.0 { 1.0 / c } else { 0.0 }
    });
    num.mul(&tape.constant(inv))
}

/// Focal weight map and TV domain derived from the ground-truth edge map:
/// pixels within `cutoff` (inclusive) of an edge get `band_weight`, the rest
/// get 1; the TV domain is the off-band complement.
pub fn edge_band_maps(edge_gt: &Arr, band_weight: f64, cutoff: f64) -> (Arr, Arr) {
    let shape = edge_gt.shape();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let mut weight = Arr::from_elem(IxDyn(shape), 1.0);
    let mut domain = Arr::from_elem(IxDyn(shape), 1.0);
    for ni in 0..n {
        let slice = edge_gt
            .index_axis(Axis(0), ni)
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let (dist, _) = imgproc::edt(&slice);
        for y in 0..h {
            for x in 0..w {
                if dist[[y, x]] <= cutoff {
                    weight[[ni, 0, y, x]] = band_weight;
                    domain[[ni, 0, y, x]] = 0.0;
                }
            }
        }
    }
    (weight, domain)
}

pub struct EdgeLossTerms<'t> {
    pub total: Var<'t>,
    pub focal: Var<'t>,
    pub tv: Var<'t>,
}

/// Edge supervision: band-weighted focal against the edge target plus a
/// smoothness penalty on the off-band region.
pub fn edge_loss<'t>(cfg: &LossConfig, p_edge: Var<'t>, edge_gt: &Arr) -> EdgeLossTerms<'t> {
    let (weight, mut domain) = edge_band_maps(edge_gt, cfg.edge_focal_weight, cfg.edge_band_cutoff);
    if cfg.tv_on_predicted_background {
        // Restrict further to where the current prediction sees background.
        let pv = p_edge.value();
        domain.zip_mut_with(&pv, |d, &p| {
            if p >= 0.5 {
                *d = 0.0;
            }
        });
    }
    let focal = focal_per_sample(p_edge, edge_gt, cfg.focal_alpha, cfg.focal_gamma, Some(&weight))
        .mean_all();
    let tv = tv_per_sample(p_edge, &domain).mean_all();
    let total = focal.add(&tv.scale(cfg.tv_weight));
    EdgeLossTerms { total, focal, tv }
}

/// Per-sample soft Dice between prediction and mask restricted to
/// ground-truth edge pixels; an empty edge set contributes zero.
pub fn edge_dice_per_sample<'t>(p: Var<'t>, mask: &Arr, edge_gt: &Arr, eps: f64) -> Var<'t> {
    assert_eq!(p.shape(), mask.shape().to_vec(), "edge dice mask shape");
    assert_eq!(mask.shape(), edge_gt.shape(), "edge dice edge shape");
    let tape = p.tape();
    let e = tape.constant(edge_gt.clone());
    let me = tape.constant(mask * edge_gt);
    let pe = p.mul(&e);
    let tp = flat_sum(p.mul(&me));
    let sp = flat_sum(pe);
    let sm = flat_sum(me);
    // Empty edge set: numerator and denominator both reduce to ε, so the
    // ratio is 1 and the loss is 0 without an explicit branch.
    let num = tp.scale(2.0).add_scalar(eps);
    let den = sp.add(&sm).add_scalar(eps);
    num.div(&den).neg().add_scalar(1.0)
}

/// Foreground-ratio weights: `factor` at or below the low threshold, 1 at or
/// above the high one, linear in between.
pub fn instance_weights(mask: &Arr, factor: f64, thresholds: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = thresholds;
    let n = mask.shape()[0];
    let per_pixel: f64 = mask.len() as f64 / n as f64;
    (0..n)
        .map(|ni| {
            let r = mask.index_axis(Axis(0), ni).iter().sum::<f64>() / per_pixel;
            if r <= lo {
                factor
            } else if r >= hi {
                1.0
            } else {
                factor + (1.0 - factor) * (r - lo) / (hi - lo)
            }
        })
        .collect()
}

/// Per-step decomposition, logged as one structured record per step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub edge: f64,
    pub loc: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub edge_focal: f64,
    pub edge_tv: f64,
    pub loc_focal: f64,
    pub loc_tversky: f64,
    pub final_focal: f64,
    pub final_tversky: f64,
    pub final_edge_dice: f64,
    pub instance_weights: Vec<f64>,
}

/// The full objective. `edge_prob` is absent when the edge pathway is
/// ablated (its weight drops out); `loc_focal_only` strips the localization
/// Tversky term when that pathway is reduced to a pass-through.
pub fn total_loss<'t>(
    cfg: &LossConfig,
    edge_prob: Option<Var<'t>>,
    loc_prob: Var<'t>,
    final_prob: Var<'t>,
    mask: &Arr,
    edge_gt: &Arr,
    loc_focal_only: bool,
) -> (Var<'t>, LossReport) {
    let tape = final_prob.tape();
    let n = mask.shape()[0];
    let weights = instance_weights(mask, cfg.instance_factor, cfg.instance_thresholds);
    let w = tape.constant(Arr::from_shape_vec(IxDyn(&[n]), weights.clone()).unwrap());

    let loc_focal = focal_per_sample(loc_prob, mask, cfg.focal_alpha, cfg.focal_gamma, None);
    let mut loc_ps = loc_focal.scale(cfg.loc_focal_weight);
    let loc_tversky = if loc_focal_only {
        None
    } else {
        let (a, b) = cfg.tversky_loc;
        let t = tversky_per_sample(loc_prob, mask, a, b, cfg.tversky_eps);
        loc_ps = loc_ps.add(&t.scale(cfg.loc_tversky_weight));
        Some(t)
    };
    let loc = loc_ps.mul(&w).mean_all();

    let final_focal = focal_per_sample(final_prob, mask, cfg.focal_alpha, cfg.focal_gamma, None);
    let (fa, fb) = cfg.tversky_final;
    let final_tversky = tversky_per_sample(final_prob, mask, fa, fb, cfg.tversky_eps);
    let final_dice = edge_dice_per_sample(final_prob, mask, edge_gt, cfg.edge_dice_eps);
    let final_ps = final_focal
        .scale(cfg.final_focal_weight)
        .add(&final_tversky.scale(cfg.final_tversky_weight))
        .add(&final_dice.scale(cfg.edge_dice_weight));
    let final_ = final_ps.mul(&w).mean_all();

    let edge_terms = edge_prob.map(|pe| edge_loss(cfg, pe, edge_gt));
    let (edge, edge_focal_v, edge_tv_v) = match &edge_terms {
        Some(t) => (t.total, t.focal.item(), t.tv.item()),
        None => (tape.constant(Arr::zeros(IxDyn(&[1]))), 0.0, 0.0),
    };

    let total = final_
        .scale(cfg.w_final)
        .add(&loc.scale(cfg.w_loc))
        .add(&edge.scale(cfg.w_edge));
    let report = LossReport {
        total: total.item(),
        edge: edge.item(),
        loc: loc.item(),
        final_: final_.item(),
        edge_focal: edge_focal_v,
        edge_tv: edge_tv_v,
        loc_focal: loc_focal.mean_all().item(),
        loc_tversky: loc_tversky.map(|t| t.mean_all().item()).unwrap_or(0.0),
        final_focal: final_focal.mean_all().item(),
        final_tversky: final_tversky.mean_all().item(),
        final_edge_dice: final_dice.mean_all().item(),
        instance_weights: weights,
    };
    (total, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd::fd_check_inputs;
    use crate::tensor::Tape;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_probs(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Arr {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| r.random_range(lo..hi))
    }

    fn rand_binary(seed: u64, shape: &[usize], p: f64) -> Arr {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| if r.random_bool(p) { 1.0 } else { 0.0 })
    }

    #[test]
    fn focal_single_pixel_value() {
        // p = 0.5 on a positive with alpha 0.25, gamma 3:
        // 0.25 * 0.125 * ln 2 = 0.02166...
        let tape = Tape::new();
        let p = tape.constant(Arr::from_elem(IxDyn(&[1, 1, 1, 1]), 0.5));
        let y = Arr::from_elem(IxDyn(&[1, 1, 1, 1]), 1.0);
        let v = focal_per_sample(p, &y, 0.25, 3.0, None).item();
        assert!((v - 0.25 * 0.125 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 0.021661).abs() < 1e-5);
    }

    #[test]
    fn focal_perfect_prediction_vanishes() {
        let y = rand_binary(200, &[2, 1, 6, 6], 0.4);
        let tape = Tape::new();
        let p = tape.constant(y.clone());
        let v = focal_per_sample(p, &y, 0.25, 3.0, None).mean_all().item();
        assert!(v < 1e-4, "perfect focal loss too large: {v}");
    }

    #[test]
    fn focal_without_focusing_is_half_bce() {
        let y = rand_binary(201, &[1, 1, 5, 5], 0.5);
        let p = rand_probs(202, &[1, 1, 5, 5], 0.05, 0.95);
        let tape = Tape::new();
        let v = focal_per_sample(tape.constant(p.clone()), &y, 0.5, 0.0, None).item();
        let bce: f64 = p
            .iter()
            .zip(y.iter())
            .map(|(&pv, &yv)| -(yv * pv.ln() + (1.0 - yv) * (1.0 - pv).ln()))
            .sum::<f64>()
            / 25.0;
        assert!((v - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn tversky_hand_example_and_dice_identity() {
        // p=[1,1,0,0], y=[1,0,1,0]: TP=FP=FN=1, so at (0.6, 0.4) and eps→0
        // the loss is exactly 1 − 1/2 = 0.5.
        let tape = Tape::new();
        let p = tape.constant(Arr::from_shape_vec(IxDyn(&[1, 1, 1, 4]), vec![1.0, 1.0, 0.0, 0.0]).unwrap());
        let y = Arr::from_shape_vec(IxDyn(&[1, 1, 1, 4]), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let v = tversky_per_sample(p, &y, 0.6, 0.4, 0.0).item();
        assert!((v - 0.5).abs() < 1e-12);

        // alpha = beta = 0.5 is soft Dice (eps folded consistently).
        let y = rand_binary(203, &[2, 1, 6, 6], 0.4);
        let pr = rand_probs(204, &[2, 1, 6, 6], 0.0, 1.0);
        let eps = 1.0;
        let tv = tversky_per_sample(tape.constant(pr.clone()), &y, 0.5, 0.5, eps);
        for ni in 0..2 {
            let ps = pr.index_axis(Axis(0), ni);
            let ys = y.index_axis(Axis(0), ni);
            let tp: f64 = ps.iter().zip(ys.iter()).map(|(a, b)| a * b).sum();
            let sp: f64 = ps.iter().sum();
            let sy: f64 = ys.iter().sum();
            let dice = 1.0 - (2.0 * tp + 2.0 * eps) / (sp + sy + 2.0 * eps);
            assert!((tv.value()[[ni]] - dice).abs() < 1e-9);
        }
    }

    #[test]
    fn tv_checkerboard_is_one_per_pair() {
        let p = Arr::from_shape_fn(IxDyn(&[1, 1, 4, 4]), |ix| ((ix[2] + ix[3]) % 2) as f64);
        let domain = Arr::from_elem(IxDyn(&[1, 1, 4, 4]), 1.0);
        let tape = Tape::new();
        let v = tv_per_sample(tape.constant(p), &domain).item();
        assert!((v - 1.0).abs() < 1e-12);

        let c = Arr::from_elem(IxDyn(&[1, 1, 4, 4]), 0.3);
        let v = tv_per_sample(tape.constant(c), &domain).item();
        assert!(v.abs() < 1e-12, "constant field must have zero variation");

        let empty = Arr::zeros(IxDyn(&[1, 1, 4, 4]));
        let p2 = rand_probs(205, &[1, 1, 4, 4], 0.0, 1.0);
        let v = tv_per_sample(tape.constant(p2), &empty).item();
        assert!(v.abs() < 1e-12, "empty domain must contribute zero");
    }

    #[test]
    fn edge_band_weights_by_distance() {
        // A single edge column at x=0 in a 1x9 strip: x=3 sits inside the
        // band (5.0), x=7 outside (1.0); the tie at exactly 5 is inside.
        let mut e = Arr::zeros(IxDyn(&[1, 1, 1, 9]));
        e[[0, 0, 0, 0]] = 1.0;
        let (w, d) = edge_band_maps(&e, 5.0, 5.0);
        assert_eq!(w[[0, 0, 0, 3]], 5.0);
        assert_eq!(w[[0, 0, 0, 5]], 5.0, "distance exactly at cutoff is in-band");
        assert_eq!(w[[0, 0, 0, 7]], 1.0);
        assert_eq!(d[[0, 0, 0, 3]], 0.0);
        assert_eq!(d[[0, 0, 0, 7]], 1.0);
    }

    #[test]
    fn edge_dice_constructed_thirds() {
        // Four edge pixels, all foreground; prediction hits half of them.
        let mut e = Arr::zeros(IxDyn(&[1, 1, 6, 6]));
        let mut m = Arr::zeros(IxDyn(&[1, 1, 6, 6]));
        let mut p = Arr::zeros(IxDyn(&[1, 1, 6, 6]));
        for (i, &(y, x)) in [(1, 1), (1, 2), (2, 1), (2, 2)].iter().enumerate() {
            e[[0, 0, y, x]] = 1.0;
            m[[0, 0, y, x]] = 1.0;
            if i < 2 {
                p[[0, 0, y, x]] = 1.0;
            }
        }
        let tape = Tape::new();
        let v = edge_dice_per_sample(tape.constant(p), &m, &e, 1e-6).item();
        assert!((v - 1.0 / 3.0).abs() < 1e-4, "expected 1/3, got {v}");

        // Empty edge set contributes exactly zero.
        let p2 = rand_probs(206, &[1, 1, 6, 6], 0.0, 1.0);
        let zero = Arr::zeros(IxDyn(&[1, 1, 6, 6]));
        let v = edge_dice_per_sample(tape.constant(p2), &m, &zero, 1e-6).item();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn instance_weight_endpoints_and_midpoint() {
        let shape = [3, 1, 10, 10];
        let mut m = Arr::zeros(IxDyn(&shape));
        // Sample 0: ratio 0.01 (1 pixel of 100); sample 1: 0.80; sample 2: 0.41.
        m[[0, 0, 0, 0]] = 1.0;
        for i in 0..80 {
            m[[1, 0, i / 10, i % 10]] = 1.0;
        }
        for i in 0..41 {
            m[[2, 0, i / 10, i % 10]] = 1.0;
        }
        let w = instance_weights(&m, 3.0, (0.02, 0.8));
        assert_eq!(w[0], 3.0);
        assert_eq!(w[1], 1.0);
        assert!((w[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_decomposes_and_scales_linearly() {
        let cfg = LossConfig::default();
        cfg.validate().unwrap();
        let mask = rand_binary(207, &[2, 1, 8, 8], 0.3);
        let edge = rand_binary(208, &[2, 1, 8, 8], 0.15);
        let pe = rand_probs(209, &[2, 1, 8, 8], 0.05, 0.95);
        let pl = rand_probs(210, &[2, 1, 8, 8], 0.05, 0.95);
        let pf = rand_probs(211, &[2, 1, 8, 8], 0.05, 0.95);
        let run = |cfg: &LossConfig| {
            let tape = Tape::new();
            let (total, report) = total_loss(
                cfg,
                Some(tape.constant(pe.clone())),
                tape.constant(pl.clone()),
                tape.constant(pf.clone()),
                &mask,
                &edge,
                false,
            );
            assert!((total.item() - report.total).abs() < 1e-12);
            report
        };
        let r = run(&cfg);
        let recomposed = cfg.w_final * r.final_ + cfg.w_loc * r.loc + cfg.w_edge * r.edge;
        assert!((r.total - recomposed).abs() < 1e-6, "decomposition violated");
        assert!(r.instance_weights.len() == 2);

        let mut doubled = cfg.clone();
        doubled.w_final *= 2.0;
        let r2 = run(&doubled);
        assert!((r2.final_ - r.final_).abs() < 1e-12, "head value must not change");
        assert!((r2.loc - r.loc).abs() < 1e-12);
        assert!((r2.edge - r.edge).abs() < 1e-12);
        assert!(((r2.total - r.total) - cfg.w_final * r.final_).abs() < 1e-9);
    }

    #[test]
    fn ablated_paths_drop_terms() {
        let cfg = LossConfig::default();
        let mask = rand_binary(212, &[1, 1, 6, 6], 0.3);
        let edge = rand_binary(213, &[1, 1, 6, 6], 0.2);
        let pl = rand_probs(214, &[1, 1, 6, 6], 0.05, 0.95);
        let pf = rand_probs(215, &[1, 1, 6, 6], 0.05, 0.95);
        let tape = Tape::new();
        let (_, report) = total_loss(
            &cfg,
            None,
            tape.constant(pl.clone()),
            tape.constant(pf.clone()),
            &mask,
            &edge,
            true,
        );
        assert_eq!(report.edge, 0.0);
        assert_eq!(report.loc_tversky, 0.0);
        assert!(report.loc_focal > 0.0);
    }

    #[test]
    fn loss_gradients() {
        let mask = rand_binary(216, &[1, 1, 6, 6], 0.4);
        let edge = rand_binary(217, &[1, 1, 6, 6], 0.2);
        let p0 = rand_probs(218, &[1, 1, 6, 6], 0.1, 0.9);

        let err = fd_check_inputs(219, &[p0.clone()], 36, |_, v| {
            focal_per_sample(v[0], &mask, 0.25, 3.0, None).mean_all()
        });
        assert!(err < 1e-4, "focal gradient off: {err}");

        let err = fd_check_inputs(220, &[p0.clone()], 36, |_, v| {
            tversky_per_sample(v[0], &mask, 0.6, 0.4, 1.0).mean_all()
        });
        assert!(err < 1e-4, "tversky gradient off: {err}");

        let (_, domain) = edge_band_maps(&edge, 5.0, 2.0);
        let err = fd_check_inputs(221, &[p0.clone()], 36, |_, v| {
            tv_per_sample(v[0], &domain).mean_all()
        });
        assert!(err < 1e-4, "tv gradient off: {err}");

        let err = fd_check_inputs(222, &[p0.clone()], 36, |_, v| {
            edge_dice_per_sample(v[0], &mask, &edge, 1e-6).mean_all()
        });
        assert!(err < 1e-4, "edge dice gradient off: {err}");

        // Whole objective, all three heads.
        let cfg = LossConfig::default();
        let pl = rand_probs(223, &[1, 1, 6, 6], 0.1, 0.9);
        let pf = rand_probs(224, &[1, 1, 6, 6], 0.1, 0.9);
        let err = fd_check_inputs(225, &[p0, pl, pf], 24, |_, v| {
            total_loss(&cfg, Some(v[0]), v[1], v[2], &mask, &edge, false).0
        });
        assert!(err < 1e-4, "total loss gradient off: {err}");
    }
}
