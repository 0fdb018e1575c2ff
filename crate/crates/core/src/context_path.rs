//! Contextual localization pathway: deep encoder features are enhanced
//! semantically, the deepest map is re-weighted against an image-derived
//! appearance contrast signal that separates the hypothesized object from
//! look-alike background (suppressing salient distractors), and both maps
//! are fused and refined into localization features plus an object map.

use crate::layers::{Conv2d, ConvBlock, DwSepBlock, Eca, SpatialAttention, Upsampler};
use crate::params::ParamStore;
use crate::tensor::{concat, Arr, Var};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

/// How often the guided statistics had to fall back to global means.
/// Degenerate hypotheses are throttled to diagnostics, never errors.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct GcmDiagnostics {
    /// Items whose hypothesis mass was exactly zero.
    pub fg_fallbacks: usize,
    /// Items with no pixel below the background threshold.
    pub bg_fallbacks: usize,
}

impl GcmDiagnostics {
    pub fn merge(&mut self, other: GcmDiagnostics) {
        self.fg_fallbacks += other.fg_fallbacks;
        self.bg_fallbacks += other.bg_fallbacks;
    }
}

/// Guided statistics: per item and channel, the hypothesis-weighted
/// foreground mean of the appearance features and the plain mean over the
/// sub-threshold background set.
///
/// `a`: `(N, C, H, W)` appearance features; `g`: `(N, 1, H, W)` hypothesis in
/// `[0, 1]`. Returns `(f_fg, f_bg)`, each `(N, C, 1, 1)`.
///
/// Degenerate cases use the global spatial mean instead: zero total
/// hypothesis mass for the foreground statistic, an empty background set for
/// the background one. Selection happens through constant 0/1 masks and the
/// zero denominators are padded, so gradients stay finite everywhere.
pub fn gcm<'t>(a: Var<'t>, g: Var<'t>, bg_threshold: f64) -> (Var<'t>, Var<'t>, GcmDiagnostics) {
    let ashape = a.shape();
    let gshape = g.shape();
    assert_eq!(ashape.len(), 4, "appearance features must be NCHW");
    assert_eq!(gshape, vec![ashape[0], 1, ashape[2], ashape[3]], "hypothesis shape");
    let n = ashape[0];
    let tape = a.tape();
    let gval = g.value();

    let mut diag = GcmDiagnostics::default();
    // Constant selectors derived from the hypothesis values.
    let mut fg_ok = Arr::zeros(IxDyn(&[n, 1, 1, 1]));
    let mut bg_ok = Arr::zeros(IxDyn(&[n, 1, 1, 1]));
    let mut bg_mask = Arr::zeros(IxDyn(&gshape));
    for ni in 0..n {
        let mut mass = 0.0;
        let mut bg_count = 0usize;
        for y in 0..gshape[2] {
            for x in 0..gshape[3] {
                let v = gval[[ni, 0, y, x]];
                mass += v;
                if v < bg_threshold {
                    bg_mask[[ni, 0, y, x]] = 1.0;
                    bg_count += 1;
                }
            }
        }
        if mass > 0.0 {
            fg_ok[[ni, 0, 0, 0]] = 1.0;
        } else {
            diag.fg_fallbacks += 1;
        }
        if bg_count > 0 {
            bg_ok[[ni, 0, 0, 0]] = 1.0;
        } else {
            diag.bg_fallbacks += 1;
        }
    }

    let stat_shape = [n, ashape[1], 1, 1];
    let global_mean = a.mean_axes(&[2, 3], true); // (N, C, 1, 1)

    // Foreground: sum(A * G) / sum(G), padded where the mass is zero.
    let gb = g.broadcast_to(&ashape);
    let num_fg = a.mul(&gb).sum_axes(&[2, 3], true);
    let mass = g.sum_axes(&[2, 3], true); // (N, 1, 1, 1)
    let fg_sel = tape.constant(fg_ok);
    let pad_fg = fg_sel.scale(-1.0).add_scalar(1.0); // 1 where degenerate
    let denom_fg = mass.add(&pad_fg).broadcast_to(&stat_shape);
    let fg_selb = fg_sel.broadcast_to(&stat_shape);
    let inv_fg_selb = pad_fg.broadcast_to(&stat_shape);
    let f_fg = num_fg
        .div(&denom_fg)
        .mul(&fg_selb)
        .add(&global_mean.mul(&inv_fg_selb));

    // Background: plain mean over the sub-threshold set, same padding trick.
    let mask = tape.constant(bg_mask);
    let mb = mask.broadcast_to(&ashape);
    let num_bg = a.mul(&mb).sum_axes(&[2, 3], true);
    let count = mask.sum_axes(&[2, 3], true);
    let bg_sel = tape.constant(bg_ok);
    let pad_bg = bg_sel.scale(-1.0).add_scalar(1.0);
    let denom_bg = count.add(&pad_bg).broadcast_to(&stat_shape);
    let bg_selb = bg_sel.broadcast_to(&stat_shape);
    let inv_bg_selb = pad_bg.broadcast_to(&stat_shape);
    let f_bg = num_bg
        .div(&denom_bg)
        .mul(&bg_selb)
        .add(&global_mean.mul(&inv_bg_selb));

    (f_fg, f_bg, diag)
}

/// Semantic enhancement unit: a depthwise-separable transform re-weighted by
/// spatial and channel attention in parallel, with a residual connection.
pub struct Seu {
    body: DwSepBlock,
    spatial: SpatialAttention,
    eca: Eca,
}

impl Seu {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        Self {
            body: DwSepBlock::new(store, rng, &format!("{name}.body"), channels, channels),
            spatial: SpatialAttention::new(store, rng, &format!("{name}.spatial")),
            eca: Eca::new(store, rng, &format!("{name}.eca"), channels),
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let b = self.body.forward(store, x);
        let sp = self.spatial.gate(store, b).broadcast_to(&b.shape());
        self.eca.forward(store, b).mul(&sp).add(&x)
    }
}

/// Contrast-driven attention gate. The gate is computed from the features
/// concatenated with the one-channel contrast map; the residual leak is 0 by
/// default so a closed gate suppresses fully.
pub struct ContrastGate {
    conv: Conv2d,
    residual: f64,
}

impl ContrastGate {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        residual: f64,
    ) -> Self {
        let conv = Conv2d::new(store, rng, name, channels + 1, channels, 1, 1, 0, 1, true);
        let bias = conv.bias.unwrap();
        // Positive start: gates begin nearly open and learn to close.
        store.value_mut(bias).fill(2.0);
        Self { conv, residual }
    }

    pub fn apply<'t>(&self, store: &ParamStore, x: Var<'t>, contrast: Var<'t>) -> Var<'t> {
        let gate = self
            .conv
            .forward(store, concat(1, &[x, contrast]))
            .sigmoid();
        let gated = x.mul(&gate);
        if self.residual == 0.0 {
            gated
        } else {
            gated.add(&x.scale(self.residual))
        }
    }
}

pub struct ContextPathConfig {
    pub embed_dim: usize,
    /// Working width at the deep (token-grid) stage.
    pub deep_channels: usize,
    /// Width after fusing the two upsampled streams at the doubled grid.
    pub mid_channels: usize,
    /// Output width at the quadrupled grid.
    pub out_channels: usize,
    pub appearance_channels: usize,
    pub contrast_channels: usize,
    /// Background membership threshold on the hypothesis map.
    pub bg_threshold: f64,
    /// Leak factor added to the gated features (0 = pure gating).
    pub gate_residual: f64,
    /// Use one set of gate weights for both gating passes.
    pub share_gate_weights: bool,
    pub enable_seu: bool,
    pub enable_icg: bool,
    pub bilinear_upsample: bool,
}

pub struct ContextOut<'t> {
    /// `(N, C_out, 4g, 4g)` localization features for fusion.
    pub features: Var<'t>,
    /// `(N, 1, 4g, 4g)` localization logits.
    pub logits: Var<'t>,
    /// Contrast map at the deep grid, present when guidance is enabled.
    pub contrast: Option<Var<'t>>,
    /// Hypothesis map (post-sigmoid) at the deep grid, when guidance is on.
    pub hypothesis: Option<Var<'t>>,
    pub diagnostics: GcmDiagnostics,
}

struct Icg {
    appearance0: ConvBlock,
    appearance1: ConvBlock,
    hypothesis: Conv2d,
    contrast0: ConvBlock,
    contrast1: Conv2d,
    gate0: ContrastGate,
    gate1: Option<ContrastGate>,
    bg_threshold: f64,
}

impl Icg {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ContextPathConfig) -> Self {
        let ca = cfg.appearance_channels;
        let dc = cfg.deep_channels;
        Self {
            appearance0: ConvBlock::new(store, rng, &format!("{name}.appearance0"), 3, ca, 3, 1),
            appearance1: ConvBlock::new(store, rng, &format!("{name}.appearance1"), ca, ca, 3, 1),
            hypothesis: Conv2d::new(store, rng, &format!("{name}.hypothesis"), dc, 1, 1, 1, 0, 1, true),
            contrast0: ConvBlock::new(store, rng, &format!("{name}.contrast0"), 5 * ca, cfg.contrast_channels, 3, 1),
            contrast1: Conv2d::new(store, rng, &format!("{name}.contrast1"), cfg.contrast_channels, 1, 1, 1, 0, 1, true),
            gate0: ContrastGate::new(store, rng, &format!("{name}.gate0"), dc, cfg.gate_residual),
            gate1: (!cfg.share_gate_weights)
                .then(|| ContrastGate::new(store, rng, &format!("{name}.gate1"), dc, cfg.gate_residual)),
            bg_threshold: cfg.bg_threshold,
        }
    }

    /// Gates the deepest enhanced map against the appearance contrast signal.
    /// Returns the modulated features plus the inspection maps.
    fn forward<'t>(
        &self,
        store: &ParamStore,
        x: Var<'t>,
        images: Var<'t>,
    ) -> (Var<'t>, Var<'t>, Var<'t>, GcmDiagnostics) {
        let fs = x.shape();
        let (h, w) = (fs[2], fs[3]);
        let g = self.hypothesis.forward(store, x).sigmoid();
        let a = self.appearance1.forward(
            store,
            self.appearance0.forward(store, images.bilinear_resize(h, w)),
        );
        let (f_fg, f_bg, diag) = gcm(a, g, self.bg_threshold);
        let ashape = a.shape();
        let ffgb = f_fg.broadcast_to(&ashape);
        let fbgb = f_bg.broadcast_to(&ashape);
        let stack = concat(
            1,
            &[a, ffgb, fbgb, a.sub(&ffgb).abs(), a.sub(&fbgb).abs()],
        );
        let contrast = self
            .contrast1
            .forward(store, self.contrast0.forward(store, stack))
            .sigmoid();
        // Two gating passes against the same contrast map.
        let m = self.gate0.apply(store, x, contrast);
        let m = self.gate1.as_ref().unwrap_or(&self.gate0).apply(store, m, contrast);
        (m, contrast, g, diag)
    }
}

pub struct ContextPath {
    reduce: Vec<ConvBlock>,
    seus: Option<Vec<Seu>>,
    icg: Option<Icg>,
    up: Vec<Upsampler>,
    fuse: ConvBlock,
    refine: DwSepBlock,
    project: ConvBlock,
    up_out: Upsampler,
    head: Conv2d,
}

impl ContextPath {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ContextPathConfig,
    ) -> Self {
        let dc = cfg.deep_channels;
        let reduce = (0..2)
            .map(|i| ConvBlock::new(store, rng, &format!("{name}.reduce{i}"), cfg.embed_dim, dc, 1, 0))
            .collect();
        let seus = cfg.enable_seu.then(|| {
            (0..2)
                .map(|i| Seu::new(store, rng, &format!("{name}.seu{i}"), dc))
                .collect()
        });
        let icg = cfg
            .enable_icg
            .then(|| Icg::new(store, rng, &format!("{name}.icg"), cfg));
        let up = (0..2)
            .map(|i| Upsampler::new(store, &format!("{name}.up{i}"), dc, cfg.bilinear_upsample))
            .collect();
        let fuse = ConvBlock::new(store, rng, &format!("{name}.fuse"), 2 * dc, cfg.mid_channels, 3, 1);
        let refine = DwSepBlock::new(store, rng, &format!("{name}.refine"), cfg.mid_channels, cfg.mid_channels);
        let project = ConvBlock::new(store, rng, &format!("{name}.project"), cfg.mid_channels, cfg.out_channels, 1, 0);
        let up_out = Upsampler::new(store, &format!("{name}.up_out"), cfg.out_channels, cfg.bilinear_upsample);
        let head = Conv2d::new(store, rng, &format!("{name}.head"), cfg.out_channels, 1, 1, 1, 0, 1, true);
        Self {
            reduce,
            seus,
            icg,
            up,
            fuse,
            refine,
            project,
            up_out,
            head,
        }
    }

    /// `deep`: the two deepest `(N, D, g, g)` maps, shallower first;
    /// `images`: the normalized network input, used for appearance guidance.
    pub fn forward<'t>(
        &self,
        store: &ParamStore,
        deep: [Var<'t>; 2],
        images: Var<'t>,
    ) -> ContextOut<'t> {
        let mut enhanced = Vec::with_capacity(2);
        for (i, &f) in deep.iter().enumerate() {
            let mut r = self.reduce[i].forward(store, f);
            if let Some(seus) = &self.seus {
                r = seus[i].forward(store, r);
            }
            enhanced.push(r);
        }
        let (mut contrast, mut hypothesis) = (None, None);
        let mut diagnostics = GcmDiagnostics::default();
        let modulated = if let Some(icg) = &self.icg {
            let (m, ctr, hyp, diag) = icg.forward(store, enhanced[1], images);
            contrast = Some(ctr);
            hypothesis = Some(hyp);
            diagnostics = diag;
            m
        } else {
            enhanced[1]
        };
        let um = self.up[1].forward(store, modulated);
        let u0 = self.up[0].forward(store, enhanced[0]);
        let fused = self.fuse.forward(store, concat(1, &[um, u0]));
        let refined = fused.add(&self.refine.forward(store, fused));
        let features = self
            .up_out
            .forward(store, self.project.forward(store, refined));
        let logits = self.head.forward(store, features);
        ContextOut {
            features,
            logits,
            contrast,
            hypothesis,
            diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd::{fd_check_inputs, fd_check_params};
    use crate::tensor::Tape;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_arr(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Arr {
        let n: usize = shape.iter().product();
        Arr::from_shape_vec(IxDyn(shape), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn gcm_uniform_hypothesis_gives_global_mean_fg() {
        // G identically 0.5: foreground statistic reduces to the global mean,
        // background set is empty (0.5 >= 0.1) so it falls back too.
        let mut r = rng(120);
        let a = rand_arr(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
        let tape = Tape::new();
        let av = tape.constant(a.clone());
        let gv = tape.constant(Arr::from_elem(IxDyn(&[2, 1, 4, 4]), 0.5));
        let (ffg, fbg, diag) = gcm(av, gv, 0.1);
        assert_eq!(diag, GcmDiagnostics { fg_fallbacks: 0, bg_fallbacks: 2 });
        let ffg = ffg.value();
        let fbg = fbg.value();
        for ni in 0..2 {
            for c in 0..3 {
                let mean: f64 = a
                    .index_axis(ndarray::Axis(0), ni)
                    .index_axis(ndarray::Axis(0), c)
                    .iter()
                    .sum::<f64>()
                    / 16.0;
                assert!((ffg[[ni, c, 0, 0]] - mean).abs() < 1e-12);
                assert!((fbg[[ni, c, 0, 0]] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcm_separates_disjoint_regions() {
        // Left half hypothesis 1 with A = 2.0; right half hypothesis 0 with
        // A = -1.0: statistics must recover exactly those plateau values.
        let mut a = Arr::zeros(IxDyn(&[1, 2, 4, 4]));
        let mut g = Arr::zeros(IxDyn(&[1, 1, 4, 4]));
        for y in 0..4 {
            for x in 0..4 {
                let fg = x < 2;
                for c in 0..2 {
                    a[[0, c, y, x]] = if fg { 2.0 + c as f64 } else { -1.0 - c as f64 };
                }
                g[[0, 0, y, x]] = if fg { 1.0 } else { 0.0 };
            }
        }
        let tape = Tape::new();
        let (ffg, fbg, diag) = gcm(tape.constant(a), tape.constant(g), 0.1);
        assert_eq!(diag, GcmDiagnostics::default());
        let ffg = ffg.value();
        let fbg = fbg.value();
        assert!((ffg[[0, 0, 0, 0]] - 2.0).abs() < 1e-12);
        assert!((ffg[[0, 1, 0, 0]] - 3.0).abs() < 1e-12);
        assert!((fbg[[0, 0, 0, 0]] + 1.0).abs() < 1e-12);
        assert!((fbg[[0, 1, 0, 0]] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn gcm_zero_mass_falls_back_without_nan() {
        let mut r = rng(121);
        let a = rand_arr(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
        let tape = Tape::new();
        tape.retain_grads(true);
        let av = tape.constant(a.clone());
        let gv = tape.constant(Arr::zeros(IxDyn(&[1, 1, 3, 3])));
        let (ffg, fbg, diag) = gcm(av, gv, 0.1);
        assert_eq!(diag, GcmDiagnostics { fg_fallbacks: 1, bg_fallbacks: 0 });
        let loss = ffg.mul(&ffg).sum_all().add(&fbg.mul(&fbg).sum_all());
        tape.backward(loss);
        let ga = av.grad().unwrap();
        assert!(ga.iter().all(|v| v.is_finite()), "NaN leaked through fallback");
        let mean0: f64 = a.index_axis(ndarray::Axis(0), 0).index_axis(ndarray::Axis(0), 0).iter().sum::<f64>() / 9.0;
        assert!((ffg.value()[[0, 0, 0, 0]] - mean0).abs() < 1e-12);
    }

    #[test]
    fn gcm_gradients() {
        // Hypothesis strictly inside (threshold-kink-free) and away from 0.
        let mut r = rng(122);
        let a = rand_arr(&mut r, &[2, 3, 3, 3], -1.0, 1.0);
        let g = rand_arr(&mut r, &[2, 1, 3, 3], 0.2, 0.9);
        let err = fd_check_inputs(123, &[a, g], 100, |_, v| {
            let (ffg, fbg, _) = gcm(v[0], v[1], 0.1);
            ffg.mul(&ffg).sum_all().add(&fbg.mul(&fbg).sum_all())
        });
        assert!(err < 1e-6, "guided statistics gradient off: {err}");
    }

    #[test]
    fn seu_shape_residual_and_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(124);
        let seu = Seu::new(&mut store, &mut r, "s", 4);
        let x = rand_arr(&mut r, &[2, 4, 5, 5], -1.0, 1.0);
        {
            let tape = Tape::new();
            let y = seu.forward(&store, tape.constant(x.clone()));
            assert_eq!(y.shape(), vec![2, 4, 5, 5]);
        }
        let err = fd_check_params(&mut store, 125, 4, |tape, store| {
            let y = seu.forward(store, tape.constant(x.clone()));
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "semantic unit gradient off: {err}");
    }

    #[test]
    fn gate_bias_extremes_suppress_and_pass() {
        let mut store = ParamStore::new();
        let mut r = rng(130);
        let gate = ContrastGate::new(&mut store, &mut r, "g", 3, 0.0);
        let x = rand_arr(&mut r, &[1, 3, 4, 4], -1.0, 1.0);
        let ctr = rand_arr(&mut r, &[1, 1, 4, 4], 0.0, 1.0);
        // Zero the weights so only the bias drives the gate logits.
        store.value_mut(gate.conv.weight).fill(0.0);
        for (bias, expect_x) in [(-40.0, false), (40.0, true)] {
            store.value_mut(gate.conv.bias.unwrap()).fill(bias);
            let tape = Tape::new();
            let y = gate.apply(&store, tape.constant(x.clone()), tape.constant(ctr.clone()));
            let y = y.value();
            for (yv, xv) in y.iter().zip(x.iter()) {
                let want = if expect_x { *xv } else { 0.0 };
                assert!((yv - want).abs() < 1e-12, "gate extreme wrong: {yv} vs {want}");
            }
        }
    }

    #[test]
    fn sequential_passthrough_gates_compose_to_identity() {
        let mut store = ParamStore::new();
        let mut r = rng(131);
        let cfg = tiny_cfg(true, true);
        let icg = Icg::new(&mut store, &mut r, "icg", &cfg);
        for g in [&icg.gate0, icg.gate1.as_ref().unwrap()] {
            store.value_mut(g.conv.weight).fill(0.0);
            store.value_mut(g.conv.bias.unwrap()).fill(40.0);
        }
        let x = rand_arr(&mut r, &[1, cfg.deep_channels, 3, 3], -1.0, 1.0);
        let ctr = rand_arr(&mut r, &[1, 1, 3, 3], 0.0, 1.0);
        let tape = Tape::new();
        let mut y = tape.constant(x.clone());
        for g in [&icg.gate0, icg.gate1.as_ref().unwrap()] {
            y = g.apply(&store, y, tape.constant(ctr.clone()));
        }
        let y = y.value();
        for (yv, xv) in y.iter().zip(x.iter()) {
            assert!((yv - xv).abs() < 1e-12);
        }
    }

    fn tiny_cfg(enable_seu: bool, enable_icg: bool) -> ContextPathConfig {
        ContextPathConfig {
            embed_dim: 6,
            deep_channels: 8,
            mid_channels: 6,
            out_channels: 4,
            appearance_channels: 4,
            contrast_channels: 4,
            bg_threshold: 0.1,
            gate_residual: 0.0,
            share_gate_weights: false,
            enable_seu,
            enable_icg,
            bilinear_upsample: false,
        }
    }

    #[test]
    fn pathway_shapes_and_inspection_maps() {
        let mut store = ParamStore::new();
        let mut r = rng(126);
        let path = ContextPath::new(&mut store, &mut r, "ctx", &tiny_cfg(true, true));
        let f0 = rand_arr(&mut r, &[1, 6, 3, 3], -1.0, 1.0);
        let f1 = rand_arr(&mut r, &[1, 6, 3, 3], -1.0, 1.0);
        let img = rand_arr(&mut r, &[1, 3, 12, 12], -1.0, 1.0);
        let tape = Tape::new();
        let out = path.forward(
            &store,
            [tape.constant(f0), tape.constant(f1)],
            tape.constant(img),
        );
        assert_eq!(out.features.shape(), vec![1, 4, 12, 12]);
        assert_eq!(out.logits.shape(), vec![1, 1, 12, 12]);
        let ctr = out.contrast.expect("contrast map missing");
        assert_eq!(ctr.shape(), vec![1, 1, 3, 3]);
        assert!(ctr.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let hyp = out.hypothesis.expect("hypothesis map missing");
        assert_eq!(hyp.shape(), vec![1, 1, 3, 3]);
        assert!(hyp.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn disabled_stages_have_no_params() {
        let mut store = ParamStore::new();
        let mut r = rng(127);
        let _ = ContextPath::new(&mut store, &mut r, "ctx", &tiny_cfg(true, false));
        assert!(store.ids_with_prefix("ctx.icg").is_empty());
        let mut store2 = ParamStore::new();
        let _ = ContextPath::new(&mut store2, &mut r, "ctx", &tiny_cfg(false, false));
        assert!(store2.ids_with_prefix("ctx.seu").is_empty());
        // The pass-through branch keeps reduction, fusion, and head.
        assert!(!store2.ids_with_prefix("ctx.reduce").is_empty());
        assert!(!store2.ids_with_prefix("ctx.head").is_empty());
        // Shared gate weights drop the second gate's params.
        let mut shared = tiny_cfg(true, true);
        shared.share_gate_weights = true;
        let mut store3 = ParamStore::new();
        let _ = ContextPath::new(&mut store3, &mut r, "ctx", &shared);
        assert!(store3.ids_with_prefix("ctx.icg.gate1").is_empty());
        assert!(!store3.ids_with_prefix("ctx.icg.gate0").is_empty());
    }

    #[test]
    fn pathway_gradients_with_guidance() {
        let mut store = ParamStore::new();
        let mut r = rng(128);
        let path = ContextPath::new(&mut store, &mut r, "ctx", &tiny_cfg(true, true));
        let f0 = rand_arr(&mut r, &[1, 6, 2, 2], -1.0, 1.0);
        let f1 = rand_arr(&mut r, &[1, 6, 2, 2], -1.0, 1.0);
        let img = rand_arr(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
        let err = fd_check_params(&mut store, 129, 2, |tape, store| {
            let out = path.forward(
                store,
                [tape.constant(f0.clone()), tape.constant(f1.clone())],
                tape.constant(img.clone()),
            );
            out.features
                .mul(&out.features)
                .sum_all()
                .add(&out.logits.mul(&out.logits).sum_all())
        });
        assert!(err < 1e-4, "context pathway gradient off: {err}");
    }
}
