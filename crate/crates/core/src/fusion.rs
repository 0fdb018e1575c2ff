//! Attentive fusion: edge-pathway detail is folded into the localization
//! stream under a spatial gate computed from the localization features, so
//! boundary evidence only sharpens regions the localizer already trusts.

use crate::layers::{Conv2d, ConvBlock, SpatialAttention};
use crate::params::ParamStore;
use crate::tensor::{concat, Var};
use rand_chacha::ChaCha8Rng;

pub struct FusionConfig {
    pub edge_channels: usize,
    pub loc_channels: usize,
    pub out_channels: usize,
}

pub struct FusionOut<'t> {
    /// `(N, C_out, H, W)` fused features.
    pub features: Var<'t>,
    /// `(N, 1, H, W)` segmentation logits.
    pub logits: Var<'t>,
    /// `(N, 1, H, W)` spatial attention over the edge stream, in `[0, 1]`.
    pub attention: Var<'t>,
}

pub struct Fusion {
    adapt_edge: ConvBlock,
    adapt_loc: ConvBlock,
    attention: SpatialAttention,
    refine0: ConvBlock,
    refine1: ConvBlock,
    head: Conv2d,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &FusionConfig) -> Self {
        let c = cfg.out_channels;
        Self {
            adapt_edge: ConvBlock::new(store, rng, &format!("{name}.adapt_edge"), cfg.edge_channels, c, 1, 0),
            adapt_loc: ConvBlock::new(store, rng, &format!("{name}.adapt_loc"), cfg.loc_channels, c, 1, 0),
            attention: SpatialAttention::new(store, rng, &format!("{name}.attention")),
            refine0: ConvBlock::new(store, rng, &format!("{name}.refine0"), 2 * c, c, 3, 1),
            refine1: ConvBlock::new(store, rng, &format!("{name}.refine1"), c, c, 3, 1),
            head: Conv2d::new(store, rng, &format!("{name}.head"), c, 1, 1, 1, 0, 1, true),
        }
    }

    /// Both inputs must share one spatial grid; the output keeps it.
    pub fn forward<'t>(&self, store: &ParamStore, edge: Var<'t>, loc: Var<'t>) -> FusionOut<'t> {
        let e = self.adapt_edge.forward(store, edge);
        let l = self.adapt_loc.forward(store, loc);
        let attention = self.attention.gate(store, l);
        let gated = e.mul(&attention.broadcast_to(&e.shape()));
        let features = self
            .refine1
            .forward(store, self.refine0.forward(store, concat(1, &[gated, l])));
        let logits = self.head.forward(store, features);
        FusionOut {
            features,
            logits,
            attention,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd::fd_check_params;
    use crate::tensor::{Arr, Tape};
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};

    fn rand_arr(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Arr {
        let n: usize = shape.iter().product();
        Arr::from_shape_vec(IxDyn(shape), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
    }

    fn tiny_cfg() -> FusionConfig {
        FusionConfig {
            edge_channels: 6,
            loc_channels: 5,
            out_channels: 4,
        }
    }

    #[test]
    fn output_keeps_grid_and_attention_is_bounded() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(140);
        let fusion = Fusion::new(&mut store, &mut r, "afm", &tiny_cfg());
        let e = rand_arr(&mut r, &[2, 6, 5, 5], -1.0, 1.0);
        let l = rand_arr(&mut r, &[2, 5, 5, 5], -1.0, 1.0);
        let tape = Tape::new();
        let out = fusion.forward(&store, tape.constant(e), tape.constant(l));
        assert_eq!(out.features.shape(), vec![2, 4, 5, 5]);
        assert_eq!(out.logits.shape(), vec![2, 1, 5, 5]);
        assert_eq!(out.attention.shape(), vec![2, 1, 5, 5]);
        assert!(out.attention.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(out.logits.value().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_localization_gives_uniform_attention() {
        // A spatially constant localization stream has nothing to point at:
        // pooling and the conv see the same neighborhood everywhere except at
        // the zero-padded border, so the interior gate must be flat.
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(141);
        let fusion = Fusion::new(&mut store, &mut r, "afm", &tiny_cfg());
        let e = rand_arr(&mut r, &[1, 6, 9, 9], -1.0, 1.0);
        let l = Arr::from_elem(IxDyn(&[1, 5, 9, 9]), 0.7);
        let tape = Tape::new();
        let out = fusion.forward(&store, tape.constant(e), tape.constant(l));
        let att = out.attention.value();
        let center = att[[0, 0, 4, 4]];
        for y in 3..6 {
            for x in 3..6 {
                assert!((att[[0, 0, y, x]] - center).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_edge_stream_still_produces_finite_output() {
        // The edge input is replaced by zeros when that pathway is ablated.
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(142);
        let fusion = Fusion::new(&mut store, &mut r, "afm", &tiny_cfg());
        let l = rand_arr(&mut r, &[1, 5, 4, 4], -1.0, 1.0);
        let tape = Tape::new();
        let e = tape.constant(Arr::zeros(IxDyn(&[1, 6, 4, 4])));
        let out = fusion.forward(&store, e, tape.constant(l));
        assert!(out.features.value().iter().all(|v| v.is_finite()));
        assert!(out.logits.value().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fusion_gradients() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(143);
        let fusion = Fusion::new(&mut store, &mut r, "afm", &tiny_cfg());
        let e = rand_arr(&mut r, &[1, 6, 3, 3], -1.0, 1.0);
        let l = rand_arr(&mut r, &[1, 5, 3, 3], -1.0, 1.0);
        let err = fd_check_params(&mut store, 144, 2, |tape, store| {
            let out = fusion.forward(store, tape.constant(e.clone()), tape.constant(l.clone()));
            out.features
                .mul(&out.features)
                .sum_all()
                .add(&out.logits.mul(&out.logits).sum_all())
        });
        assert!(err < 1e-4, "fusion gradient off: {err}");
    }
}
