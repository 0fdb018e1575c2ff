//! Reusable building blocks: convolutions with registered parameters,
//! normalization layers, channel/spatial attention, and content-adaptive
//! upsampling. Each layer owns parameter ids; forward passes pull them onto
//! the caller's tape.

use crate::init;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{concat, Arr, Var};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

/// Group count for channel-group normalization: the largest of {8, 4, 2, 1}
/// dividing the channel count, so tiny test configurations still normalize.
pub fn gn_groups(channels: usize) -> usize {
    for g in [8, 4, 2] {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

/// Cross-channel attention kernel size from the channel count:
/// `t = floor((log2 C + 1) / 2)`, rounded up to odd.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (((channels as f64).log2() + 1.0) / 2.0).floor() as usize;
    let k = if t % 2 == 1 { t } else { t + 1 };
    k.max(1)
}

pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub out_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        assert_eq!(in_ch % groups, 0, "{name}: in channels vs groups");
        assert_eq!(out_ch % groups, 0, "{name}: out channels vs groups");
        let cg = in_ch / groups;
        let weight = store.add(
            format!("{name}.weight"),
            init::kaiming_normal(rng, &[out_ch, cg, k, k], cg * k * k),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), init::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            stride,
            pad,
            groups,
            out_ch,
        }
    }

    /// Same geometry, with the weight tensor supplied by the caller
    /// (seeded derivative kernels, zero-initialized offset heads).
    #[allow(clippy::too_many_arguments)]
    pub fn with_weight(
        store: &mut ParamStore,
        name: &str,
        weight: Arr,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let out_ch = weight.shape()[0];
        let weight = store.add(format!("{name}.weight"), weight);
        let bias = bias.then(|| store.add(format!("{name}.bias"), init::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            stride,
            pad,
            groups,
            out_ch,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let w = x.tape().param(store, self.weight);
        let y = x.conv2d(&w, self.stride, self.pad, self.groups);
        match self.bias {
            Some(b) => {
                let shape = y.shape();
                let bv = x
                    .tape()
                    .param(store, b)
                    .reshape(&[1, self.out_ch, 1, 1])
                    .broadcast_to(&shape);
                y.add(&bv)
            }
            None => y,
        }
    }
}

pub struct Linear {
    pub weight: ParamId, // (in, out)
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init::trunc_normal(rng, &[in_dim, out_dim], 0.02),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), init::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Applies to the last axis of an arbitrary-rank input.
    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        assert_eq!(*shape.last().unwrap(), self.in_dim, "linear input dim");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let w = x.tape().param(store, self.weight);
        let y = x.reshape(&[rows, self.in_dim]).matmul(&w);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        let y = y.reshape(&out_shape);
        match self.bias {
            Some(b) => {
                let bv = x.tape().param(store, b).broadcast_to(&out_shape);
                y.add(&bv)
            }
            None => y,
        }
    }
}

pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), init::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), init::zeros(&[dim])),
            dim,
            eps: 1e-6,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        assert_eq!(*shape.last().unwrap(), self.dim, "layernorm dim");
        let xhat = x.normalize_axes(&[shape.len() - 1], self.eps);
        let w = x.tape().param(store, self.weight).broadcast_to(&shape);
        let b = x.tape().param(store, self.bias).broadcast_to(&shape);
        xhat.mul(&w).add(&b)
    }
}

/// Channel-group normalization over NCHW maps: batch-size independent, so
/// single-image inference matches batched training exactly.
pub struct GroupNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let groups = gn_groups(channels);
        Self {
            weight: store.add(format!("{name}.weight"), init::full(&[channels], 1.0)),
            bias: store.add(format!("{name}.bias"), init::zeros(&[channels])),
            groups,
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "groupnorm expects NCHW");
        assert_eq!(s[1], self.channels, "groupnorm channels");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let xhat = x
            .reshape(&[n, self.groups, c / self.groups * h * w])
            .normalize_axes(&[2], self.eps)
            .reshape(&[n, c, h, w]);
        let wt = x
            .tape()
            .param(store, self.weight)
            .reshape(&[1, c, 1, 1])
            .broadcast_to(&s);
        let bs = x
            .tape()
            .param(store, self.bias)
            .reshape(&[1, c, 1, 1])
            .broadcast_to(&s);
        xhat.mul(&wt).add(&bs)
    }
}

/// Convolution + group normalization + rectifier.
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        pad: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), in_ch, out_ch, k, 1, pad, 1, false),
            norm: GroupNorm::new(store, &format!("{name}.norm"), out_ch),
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        self.norm.forward(store, self.conv.forward(store, x)).relu()
    }
}

/// Depthwise 3x3 followed by pointwise 1x1, each normalized and rectified.
pub struct DwSepBlock {
    pub dw: Conv2d,
    pub dw_norm: GroupNorm,
    pub pw: Conv2d,
    pub pw_norm: GroupNorm,
}

impl DwSepBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        Self {
            dw: Conv2d::new(store, rng, &format!("{name}.dw"), in_ch, in_ch, 3, 1, 1, in_ch, false),
            dw_norm: GroupNorm::new(store, &format!("{name}.dwnorm"), in_ch),
            pw: Conv2d::new(store, rng, &format!("{name}.pw"), in_ch, out_ch, 1, 1, 0, 1, false),
            pw_norm: GroupNorm::new(store, &format!("{name}.pwnorm"), out_ch),
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let x = self.dw_norm.forward(store, self.dw.forward(store, x)).relu();
        self.pw_norm.forward(store, self.pw.forward(store, x)).relu()
    }
}

/// Efficient channel attention: global average pool, a 1-d convolution
/// across the channel axis (kernel size adapted to the channel count), and a
/// sigmoid gate multiplied back onto the map.
pub struct Eca {
    pub weight: ParamId,
    pub k: usize,
}

impl Eca {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        let k = eca_kernel_size(channels);
        Self {
            weight: store.add(
                format!("{name}.weight"),
                init::kaiming_normal(rng, &[k], k),
            ),
            k,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "eca expects NCHW");
        let (n, c) = (s[0], s[1]);
        let w = x.tape().param(store, self.weight);
        let gate = x
            .mean_axes(&[2, 3], false) // (N, C)
            .conv1d_seq(&w)
            .sigmoid()
            .reshape(&[n, c, 1, 1])
            .broadcast_to(&s);
        x.mul(&gate)
    }
}

/// Spatial gate over feature maps: channel-wise mean and max pooled into a
/// two-channel map, mixed by a 7x7 convolution, squashed to `[0, 1]`.
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), 2, 1, 7, 1, 3, 1, true),
        }
    }

    /// Returns the `(N, 1, H, W)` gate itself; callers broadcast-multiply.
    pub fn gate<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let avg = x.mean_axes(&[1], true);
        let max = x.max_axis(1);
        let pooled = concat(1, &[avg, max]);
        self.conv.forward(store, pooled).sigmoid()
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let gate = self.gate(store, x).broadcast_to(&x.shape());
        x.mul(&gate)
    }
}

/// Content-adaptive two-times upsampling: a zero-initialized 1x1 head
/// predicts per-group sub-pixel offsets around the fixed half-pixel base
/// grid, and groups are resampled at those positions. With the head at zero
/// this is exactly bilinear doubling.
pub struct DySample {
    pub proj: Conv2d,
    pub groups: usize,
    pub scale: usize,
    pub range: f64,
}

impl DySample {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        let scale = 2usize;
        assert_eq!(channels % groups, 0, "upsample groups must divide channels");
        let head = 2 * groups * scale * scale;
        let proj = Conv2d::with_weight(
            store,
            &format!("{name}.proj"),
            init::zeros(&[head, channels, 1, 1]),
            1,
            0,
            1,
            false,
        );
        Self {
            proj,
            groups,
            scale,
            range: 0.25,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (sc, g) = (self.scale, self.groups);
        let (oh, ow) = (h * sc, w * sc);
        let tape = x.tape();

        // Predicted offsets in input-pixel units, damped by `range`.
        let off = self
            .proj
            .forward(store, x)
            .pixel_shuffle(sc)
            .scale(self.range); // (N, 2g, oh, ow)

        // Fixed base: where plain bilinear doubling would sample, interleaved
        // as (x, y) channel pairs, plus the normalization affine per axis.
        let mut base = Arr::zeros(IxDyn(&[1, 2 * g, oh, ow]));
        let mut norm_a = Arr::zeros(IxDyn(&[1, 2 * g, 1, 1]));
        let mut norm_b = Arr::zeros(IxDyn(&[1, 2 * g, 1, 1]));
        for gi in 0..g {
            for oy in 0..oh {
                for ox in 0..ow {
                    base[[0, 2 * gi, oy, ox]] = (ox as f64 + 0.5) / sc as f64 - 0.5;
                    base[[0, 2 * gi + 1, oy, ox]] = (oy as f64 + 0.5) / sc as f64 - 0.5;
                }
            }
            norm_a[[0, 2 * gi, 0, 0]] = 2.0 / w as f64;
            norm_a[[0, 2 * gi + 1, 0, 0]] = 2.0 / h as f64;
            norm_b[[0, 2 * gi, 0, 0]] = 1.0 / w as f64 - 1.0;
            norm_b[[0, 2 * gi + 1, 0, 0]] = 1.0 / h as f64 - 1.0;
        }
        let full = [n, 2 * g, oh, ow];
        let base = tape.constant(base).broadcast_to(&full);
        let na = tape.constant(norm_a).broadcast_to(&full);
        let nb = tape.constant(norm_b).broadcast_to(&full);
        let coords = off.add(&base).mul(&na).add(&nb); // normalized (x, y)

        let cg = c / g;
        let mut outs = Vec::with_capacity(g);
        for gi in 0..g {
            let grid = coords
                .slice_axis(1, 2 * gi, 2 * gi + 2)
                .permute(&[0, 2, 3, 1]); // (N, oh, ow, 2)
            let xg = x.slice_axis(1, gi * cg, (gi + 1) * cg);
            outs.push(xg.grid_sample(&grid));
        }
        concat(1, &outs)
    }
}

/// x2 upsampler: learned content-aware resampling by default, plain bilinear
/// when the learned variant is toggled off. Offset groups shrink to fit
/// narrow feature maps.
pub enum Upsampler {
    Learned(DySample),
    Bilinear,
}

impl Upsampler {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, bilinear: bool) -> Self {
        if bilinear {
            return Upsampler::Bilinear;
        }
        let groups = [4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap();
        Upsampler::Learned(DySample::new(store, name, channels, groups))
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        match self {
            Upsampler::Learned(d) => d.forward(store, x),
            Upsampler::Bilinear => {
                let s = x.shape();
                x.bilinear_resize(s[2] * 2, s[3] * 2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd::fd_check_params;
    use crate::tensor::Tape;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
        let n: usize = shape.iter().product();
        Arr::from_shape_vec(
            IxDyn(shape),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn eca_kernel_size_table() {
        assert_eq!(eca_kernel_size(512), 5);
        assert_eq!(eca_kernel_size(256), 5);
        assert_eq!(eca_kernel_size(128), 5);
        assert_eq!(eca_kernel_size(64), 3);
        assert_eq!(eca_kernel_size(32), 3);
        assert_eq!(eca_kernel_size(16), 3);
        assert_eq!(eca_kernel_size(8), 3);
        assert_eq!(eca_kernel_size(4), 1);
    }

    #[test]
    fn gn_groups_divide() {
        for c in [1, 2, 3, 4, 6, 7, 8, 16, 30, 128] {
            assert_eq!(c % gn_groups(c), 0, "c={c}");
        }
        assert_eq!(gn_groups(128), 8);
        assert_eq!(gn_groups(6), 2);
        assert_eq!(gn_groups(7), 1);
    }

    #[test]
    fn conv_block_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(70);
        let block = ConvBlock::new(&mut store, &mut r, "b", 3, 4, 3, 1);
        let input = rand_input(&mut r, &[2, 3, 5, 5]);
        let err = fd_check_params(&mut store, 71, 6, |tape, store| {
            let x = tape.constant(input.clone());
            let y = block.forward(store, x);
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "conv block gradient off: {err}");
    }

    #[test]
    fn dwsep_and_eca_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(72);
        let block = DwSepBlock::new(&mut store, &mut r, "d", 4, 6);
        let eca = Eca::new(&mut store, &mut r, "e", 6);
        let input = rand_input(&mut r, &[2, 4, 4, 4]);
        let err = fd_check_params(&mut store, 73, 5, |tape, store| {
            let x = tape.constant(input.clone());
            let y = eca.forward(store, block.forward(store, x));
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "dwsep/eca gradient off: {err}");
    }

    #[test]
    fn linear_and_layernorm_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(74);
        let lin = Linear::new(&mut store, &mut r, "l", 6, 5, true);
        let ln = LayerNorm::new(&mut store, "n", 5);
        let input = rand_input(&mut r, &[3, 2, 6]);
        let err = fd_check_params(&mut store, 75, 8, |tape, store| {
            let x = tape.constant(input.clone());
            let y = ln.forward(store, lin.forward(store, x)).gelu();
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "linear/layernorm gradient off: {err}");
    }

    #[test]
    fn groupnorm_is_batch_independent() {
        let mut store = ParamStore::new();
        let mut r = rng(76);
        let gnorm = GroupNorm::new(&mut store, "g", 4);
        let a = rand_input(&mut r, &[1, 4, 3, 3]);
        let b = rand_input(&mut r, &[1, 4, 3, 3]);
        // Forward each alone.
        let tape = Tape::new();
        let ya = gnorm.forward(&store, tape.constant(a.clone())).value();
        let yb = gnorm.forward(&store, tape.constant(b.clone())).value();
        // Forward as a batch of two.
        let mut both = Arr::zeros(IxDyn(&[2, 4, 3, 3]));
        both.slice_mut(ndarray::s![0..1, .., .., ..]).assign(&a);
        both.slice_mut(ndarray::s![1..2, .., .., ..]).assign(&b);
        let y2 = gnorm.forward(&store, tape.constant(both)).value();
        let merged: Vec<f64> = ya.iter().chain(yb.iter()).copied().collect();
        let batched: Vec<f64> = y2.iter().copied().collect();
        let worst = merged
            .iter()
            .zip(&batched)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12, "batching changed normalization: {worst}");
    }

    #[test]
    fn spatial_attention_gate_range_and_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(77);
        let sa = SpatialAttention::new(&mut store, &mut r, "s");
        let input = rand_input(&mut r, &[2, 5, 6, 6]);
        {
            let tape = Tape::new();
            let gate = sa.gate(&store, tape.constant(input.clone()));
            assert_eq!(gate.shape(), vec![2, 1, 6, 6]);
            assert!(gate.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let err = fd_check_params(&mut store, 78, 10, |tape, store| {
            let x = tape.constant(input.clone());
            let y = sa.forward(store, x);
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "spatial attention gradient off: {err}");
    }

    #[test]
    fn dysample_zero_init_is_exact_bilinear() {
        let mut store = ParamStore::new();
        let mut r = rng(79);
        let up = DySample::new(&mut store, "u", 8, 4);
        let input = rand_input(&mut r, &[2, 8, 5, 4]);
        let tape = Tape::new();
        let x = tape.constant(input);
        let a = up.forward(&store, x).value();
        let b = x.bilinear_resize(10, 8).value();
        let worst = a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12, "zero-offset upsample deviates from bilinear: {worst}");
    }

    #[test]
    fn dysample_grads_flow_to_offset_head() {
        let mut store = ParamStore::new();
        let mut r = rng(80);
        let up = DySample::new(&mut store, "u", 4, 2);
        // Nudge the head off zero so offset gradients are non-trivial and
        // sampling sits away from saturation.
        {
            let id = store.id("u.proj.weight").unwrap();
            let w = store.value_mut(id);
            for v in w.iter_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
        let input = rand_input(&mut r, &[1, 4, 4, 4]);
        let err = fd_check_params(&mut store, 81, 12, |tape, store| {
            let x = tape.constant(input.clone());
            let y = up.forward(store, x);
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "upsample gradient off: {err}");
    }

    #[test]
    fn conv_bias_gradient_via_broadcast() {
        let mut store = ParamStore::new();
        let mut r = rng(82);
        let conv = Conv2d::new(&mut store, &mut r, "c", 2, 3, 3, 1, 1, 1, true);
        let input = rand_input(&mut r, &[2, 2, 4, 4]);
        let err = fd_check_params(&mut store, 83, 8, |tape, store| {
            let x = tape.constant(input.clone());
            let y = conv.forward(store, x);
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-4, "conv bias gradient off: {err}");
    }
}
