//! Edge refinement pathway: shallow encoder features are reduced, upsampled
//! to double the token grid, fused, and sharpened by cascaded enhancement
//! blocks whose derivative branches start from true Sobel / Laplacian
//! kernels instead of random weights.


use crate::layers::{Conv2d, ConvBlock, DwSepBlock, Eca, Upsampler};
use crate::params::ParamStore;
use crate::tensor::{concat, Arr, Var};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// Kernel magnitudes are divided by the Sobel weight sum so a unit-slope ramp
/// produces a unit response at initialization.
pub const KERNEL_SCALE: f64 = 1.0 / 8.0;

/// Grouped-conv weights pairing channels: within each group of two, the first
/// output channel applies the horizontal derivative to the first input
/// channel, the second applies the vertical derivative to the second. Cross
/// taps start at zero. Shape `(C, 2, 3, 3)`.
pub fn sobel_pair_weights(channels: usize) -> Arr {
    assert_eq!(channels % 2, 0, "paired derivative path needs even channels");
    let mut w = Arr::zeros(IxDyn(&[channels, 2, 3, 3]));
    for c in (0..channels).step_by(2) {
        for y in 0..3 {
            for x in 0..3 {
                w[[c, 0, y, x]] = SOBEL_X[y][x] * KERNEL_SCALE;
                w[[c + 1, 1, y, x]] = SOBEL_Y[y][x] * KERNEL_SCALE;
            }
        }
    }
    w
}

/// Depthwise Laplacian weights, shape `(C, 1, 3, 3)`.
pub fn laplacian_depthwise_weights(channels: usize) -> Arr {
    let mut w = Arr::zeros(IxDyn(&[channels, 1, 3, 3]));
    for c in 0..channels {
        for y in 0..3 {
            for x in 0..3 {
                w[[c, 0, y, x]] = LAPLACIAN[y][x] * KERNEL_SCALE;
            }
        }
    }
    w
}

/// Edge enhancement block: three parallel views of the input — a learned
/// local-context path, a first-derivative path, and a second-derivative
/// path — concatenated, projected back to the working width, re-weighted per
/// channel, and (optionally) added back onto the input.
pub struct Eem {
    context: DwSepBlock,
    gradient: Conv2d,
    discontinuity: Conv2d,
    project: Conv2d,
    eca: Eca,
    pub residual: bool,
}

impl Eem {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        random_init: bool,
        residual: bool,
    ) -> Self {
        assert_eq!(channels % 2, 0, "{name}: channels must be even");
        let gradient = if random_init {
            Conv2d::new(store, rng, &format!("{name}.gradient"), channels, channels, 3, 1, 1, channels / 2, false)
        } else {
            Conv2d::with_weight(
                store,
                &format!("{name}.gradient"),
                sobel_pair_weights(channels),
                1,
                1,
                channels / 2,
                false,
            )
        };
        let discontinuity = if random_init {
            Conv2d::new(store, rng, &format!("{name}.discontinuity"), channels, channels, 3, 1, 1, channels, false)
        } else {
            Conv2d::with_weight(
                store,
                &format!("{name}.discontinuity"),
                laplacian_depthwise_weights(channels),
                1,
                1,
                channels,
                false,
            )
        };
        Self {
            context: DwSepBlock::new(store, rng, &format!("{name}.context"), channels, channels),
            gradient,
            discontinuity,
            project: Conv2d::new(store, rng, &format!("{name}.project"), 3 * channels, channels, 1, 1, 0, 1, true),
            eca: Eca::new(store, rng, &format!("{name}.eca"), channels),
            residual,
        }
    }

    /// First-derivative branch alone (spatial response inspection).
    pub fn gradient_path<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        self.gradient.forward(store, x)
    }

    /// Second-derivative branch alone.
    pub fn discontinuity_path<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        self.discontinuity.forward(store, x)
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let ctx = self.context.forward(store, x);
        let grad = self.gradient.forward(store, x);
        let disc = self.discontinuity.forward(store, x);
        let merged = self.project.forward(store, concat(1, &[ctx, grad, disc]));
        let merged = self.eca.forward(store, merged);
        if self.residual {
            merged.add(&x)
        } else {
            merged
        }
    }
}

/// The full pathway: per-level reduction, x2 upsampling, fusion, enhancement
/// cascade, and a one-channel edge head (logits at feature resolution).
pub struct EdgePath {
    reduce: Vec<ConvBlock>,
    up: Vec<Upsampler>,
    fuse: ConvBlock,
    eems: Vec<Eem>,
    head: Conv2d,
}

pub struct EdgePathConfig {
    pub embed_dim: usize,
    pub channels: usize,
    pub num_eems: usize,
    pub random_eem_init: bool,
    pub eem_residual: bool,
    pub bilinear_upsample: bool,
}

impl EdgePath {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &EdgePathConfig,
    ) -> Self {
        let c = cfg.channels;
        let mut reduce = Vec::new();
        let mut up = Vec::new();
        for i in 0..2 {
            reduce.push(ConvBlock::new(store, rng, &format!("{name}.reduce{i}"), cfg.embed_dim, c, 1, 0));
            up.push(Upsampler::new(store, &format!("{name}.up{i}"), c, cfg.bilinear_upsample));
        }
        let fuse = ConvBlock::new(store, rng, &format!("{name}.fuse"), 2 * c, c, 3, 1);
        let eems = (0..cfg.num_eems)
            .map(|i| {
                Eem::new(store, rng, &format!("{name}.eem{i}"), c, cfg.random_eem_init, cfg.eem_residual)
            })
            .collect();
        let head = Conv2d::new(store, rng, &format!("{name}.head"), c, 1, 1, 1, 0, 1, true);
        Self {
            reduce,
            up,
            fuse,
            eems,
            head,
        }
    }

    /// `early`: two `(N, D, g, g)` maps. Returns refined edge features
    /// `(N, C, 2g, 2g)` and edge logits `(N, 1, 2g, 2g)`.
    pub fn forward<'t>(&self, store: &ParamStore, early: [Var<'t>; 2]) -> (Var<'t>, Var<'t>) {
        let mut ups = Vec::with_capacity(2);
        for (i, &f) in early.iter().enumerate() {
            let r = self.reduce[i].forward(store, f);
            ups.push(self.up[i].forward(store, r));
        }
        let mut x = self.fuse.forward(store, concat(1, &[ups[0], ups[1]]));
        for eem in &self.eems {
            x = eem.forward(store, x);
        }
        let logits = self.head.forward(store, x);
        (x, logits)
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

    /// Independent correlation oracle: zero-padded 3x3 filter on one plane.
    fn correlate3(x: &ndarray::Array2<f64>, k: &[[f64; 3]; 3]) -> ndarray::Array2<f64> {
        let (h, w) = x.dim();
        ndarray::Array2::from_shape_fn((h, w), |(y, xx)| {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    let sx = xx as isize + kx as isize - 1;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += k[ky][kx] * x[[sy as usize, sx as usize]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn sobel_pair_weights_structure() {
        let w = sobel_pair_weights(4);
        assert_eq!(w.shape(), &[4, 2, 3, 3]);
        // Horizontal kernel on even outputs (first in-slot only).
        assert_eq!(w[[0, 0, 1, 2]], 2.0 / 8.0);
        assert_eq!(w[[0, 1, 1, 2]], 0.0);
        // Vertical kernel on odd outputs (second in-slot only).
        assert_eq!(w[[1, 1, 2, 1]], 2.0 / 8.0);
        assert_eq!(w[[1, 0, 2, 1]], 0.0);
        assert_eq!(w[[3, 1, 0, 0]], -1.0 / 8.0);
    }

    #[test]
    fn ramp_responses_at_init() {
        // A unit-slope horizontal ramp: the raw Sobel kernel responds with 8,
        // the scaled path with exactly 1 away from the frame.
        let ramp = ndarray::Array2::from_shape_fn((7, 7), |(_, x)| x as f64);
        let raw = correlate3(&ramp, &SOBEL_X);
        assert_eq!(raw[[3, 3]], 8.0);

        let mut store = ParamStore::new();
        let mut r = rng(110);
        let eem = Eem::new(&mut store, &mut r, "e", 2, false, true);
        // Channel 0: horizontal ramp; channel 1: vertical ramp.
        let mut input = Arr::zeros(IxDyn(&[1, 2, 7, 7]));
        for y in 0..7 {
            for x in 0..7 {
                input[[0, 0, y, x]] = x as f64;
                input[[0, 1, y, x]] = y as f64;
            }
        }
        let tape = Tape::new();
        let out = eem.gradient_path(&store, tape.constant(input)).value();
        let ov = out.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        assert!((ov[[0, 0, 3, 3]] - 1.0).abs() < 1e-12, "x-derivative ramp response");
        assert!((ov[[0, 1, 3, 3]] - 1.0).abs() < 1e-12, "y-derivative ramp response");

        // Second derivative of a linear ramp vanishes in the interior.
        let disc = eem.discontinuity_path(&store, tape.constant({
            let mut i2 = Arr::zeros(IxDyn(&[1, 2, 7, 7]));
            for y in 0..7 {
                for x in 0..7 {
                    i2[[0, 0, y, x]] = x as f64;
                    i2[[0, 1, y, x]] = 3.0;
                }
            }
            i2
        }));
        let dv = disc.value();
        let dvv = dv.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        assert!(dvv[[0, 0, 3, 3]].abs() < 1e-12);
        assert!(dvv[[0, 1, 3, 3]].abs() < 1e-12);
    }

    #[test]
    fn derivative_paths_match_reference_filters() {
        let mut store = ParamStore::new();
        let mut r = rng(111);
        let eem = Eem::new(&mut store, &mut r, "e", 4, false, true);
        for trial in 0..10 {
            let input = Arr::from_shape_vec(
                IxDyn(&[1, 4, 6, 6]),
                (0..4 * 36).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let tape = Tape::new();
            let grad = eem.gradient_path(&store, tape.constant(input.clone())).value();
            let disc = eem
                .discontinuity_path(&store, tape.constant(input.clone()))
                .value();
            let gv = grad.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let dv = disc.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            for c in 0..4 {
                let plane = input
                    .index_axis(ndarray::Axis(0), 0)
                    .index_axis(ndarray::Axis(0), c)
                    .to_owned()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                let k = if c % 2 == 0 { &SOBEL_X } else { &SOBEL_Y };
                let want = correlate3(&plane, k);
                for y in 0..6 {
                    for x in 0..6 {
                        assert!(
                            (gv[[0, c, y, x]] - want[[y, x]] / 8.0).abs() < 1e-10,
                            "trial {trial} gradient c={c} ({y}, {x})"
                        );
                    }
                }
                let wantd = correlate3(&plane, &LAPLACIAN);
                for y in 0..6 {
                    for x in 0..6 {
                        assert!(
                            (dv[[0, c, y, x]] - wantd[[y, x]] / 8.0).abs() < 1e-10,
                            "trial {trial} discontinuity c={c}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn random_init_differs_from_seeded_kernels() {
        let mut store = ParamStore::new();
        let mut r = rng(112);
        let _ = Eem::new(&mut store, &mut r, "e", 4, true, true);
        let w = store.value(store.id("e.gradient.weight").unwrap());
        let seeded = sobel_pair_weights(4);
        let diff: f64 = w.iter().zip(seeded.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 0.1, "random init suspiciously close to seeded kernels");
    }

    #[test]
    fn pathway_shapes_and_grads() {
        let mut store = ParamStore::new();
        let mut r = rng(113);
        let cfg = EdgePathConfig {
            embed_dim: 6,
            channels: 4,
            num_eems: 2,
            random_eem_init: false,
            eem_residual: true,
            bilinear_upsample: false,
        };
        let path = EdgePath::new(&mut store, &mut r, "edge", &cfg);
        let f0 = Arr::from_shape_vec(
            IxDyn(&[1, 6, 3, 3]),
            (0..54).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let f1 = Arr::from_shape_vec(
            IxDyn(&[1, 6, 3, 3]),
            (0..54).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        {
            let tape = Tape::new();
            let (feat, logits) =
                path.forward(&store, [tape.constant(f0.clone()), tape.constant(f1.clone())]);
            assert_eq!(feat.shape(), vec![1, 4, 6, 6]);
            assert_eq!(logits.shape(), vec![1, 1, 6, 6]);
        }
        let err = fd_check_params(&mut store, 114, 2, |tape, store| {
            let (feat, logits) =
                path.forward(store, [tape.constant(f0.clone()), tape.constant(f1.clone())]);
            feat.mul(&feat).sum_all().add(&logits.mul(&logits).sum_all())
        });
        assert!(err < 1e-4, "edge pathway gradient off: {err}");
    }

    #[test]
    fn bilinear_variant_has_no_upsample_params(){
        let mut store = ParamStore::new();
        let mut r = rng(115);
        let cfg = EdgePathConfig {
            embed_dim: 4,
            channels: 4,
            num_eems: 1,
            random_eem_init: false,
            eem_residual: true,
            bilinear_upsample: true,
        };
        let _ = EdgePath::new(&mut store, &mut r, "edge", &cfg);
        assert!(store.ids_with_prefix("edge.up").is_empty());
    }
}
