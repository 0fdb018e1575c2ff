//! Full detector assembly: encoder -> edge pathway + context pathway ->
//! attentive fusion, with the three prediction heads brought to input
//! resolution and the ablation toggles applied structurally (absent stages
//! contribute no parameters).

use crate::backbone::{BackboneConfig, Encoder, ToyViT};
use crate::context_path::{ContextPath, ContextPathConfig, GcmDiagnostics};
use crate::edge_path::{EdgePath, EdgePathConfig};
use crate::error::Result;
use crate::fusion::{Fusion, FusionConfig};
use crate::layers::Upsampler;
use crate::params::ParamStore;
use crate::tensor::{Arr, Tape, Var};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Structural switches. Each one removes or swaps a stage at construction
/// time, so parameter censuses reflect the change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    /// Drop the edge pathway; fusion receives zeros for that stream.
    pub no_erp: bool,
    /// Strip the localization pathway down to adapted deep features
    /// (implies `no_icg`).
    pub no_clp: bool,
    /// Remove image-based guidance: no hypothesis, contrast, or gates.
    pub no_icg: bool,
    /// Initialize edge-enhancement kernels randomly instead of with the
    /// derivative operators.
    pub random_eem_init: bool,
    /// Replace learned upsampling with plain bilinear everywhere.
    pub bilinear_upsample: bool,
    /// Encoder without register tokens.
    pub plain_backbone: bool,
}

impl AblationToggles {
    /// Applies cross-toggle implications. Returns the normalized set and
    /// whether removing the localization pathway forced guidance off too
    /// (callers surface that as a note).
    pub fn normalized(&self) -> (AblationToggles, bool) {
        let mut t = *self;
        let implied = t.no_clp && !t.no_icg;
        if t.no_clp {
            t.no_icg = true;
        }
        (t, implied)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Decoder width at the token grid.
    pub deep_channels: usize,
    /// Decoder width at the doubled grid (also the edge pathway width).
    pub mid_channels: usize,
    /// Decoder width at the quadrupled (fusion) grid.
    pub out_channels: usize,
    pub appearance_channels: usize,
    pub contrast_channels: usize,
    pub num_eems: usize,
    pub bg_threshold: f64,
    pub gate_residual: f64,
    pub share_gate_weights: bool,
    pub eem_residual: bool,
    /// Apply the final head's sigmoid before resizing to input resolution
    /// instead of after.
    pub sigmoid_before_resize: bool,
    pub ablation: AblationToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            deep_channels: 512,
            mid_channels: 256,
            out_channels: 128,
            appearance_channels: 32,
            contrast_channels: 16,
            num_eems: 2,
            bg_threshold: 0.1,
            gate_residual: 0.0,
            share_gate_weights: false,
            eem_residual: true,
            sigmoid_before_resize: false,
            ablation: AblationToggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        for (what, v) in [
            ("deep_channels", self.deep_channels),
            ("mid_channels", self.mid_channels),
            ("out_channels", self.out_channels),
            ("appearance_channels", self.appearance_channels),
            ("contrast_channels", self.contrast_channels),
            ("num_eems", self.num_eems),
        ] {
            if v == 0 {
                return Err(crate::error::Error::config(format!("{what} must be positive")));
            }
        }
        if !(0.0 < self.bg_threshold && self.bg_threshold < 1.0) {
            return Err(crate::error::Error::config("bg_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Everything a forward pass produces. Probability maps are at input
/// resolution in `[0, 1]`; logits stay at their native grids.
pub struct ModelOut<'t> {
    pub edge_prob: Option<Var<'t>>,
    pub loc_prob: Var<'t>,
    pub final_prob: Var<'t>,
    pub edge_logits: Option<Var<'t>>,
    pub loc_logits: Var<'t>,
    pub final_logits: Var<'t>,
    /// Fusion's spatial attention over the edge stream.
    pub attention: Var<'t>,
    pub contrast: Option<Var<'t>>,
    pub hypothesis: Option<Var<'t>>,
    pub diagnostics: GcmDiagnostics,
}

/// Detached prediction maps at input resolution, each in `[0, 1]`.
pub struct PredictionTriplet {
    /// Absent when the edge pathway is ablated.
    pub edge_map: Option<Arr>,
    pub object_map: Arr,
    pub final_map: Arr,
}

pub struct Model {
    pub config: ModelConfig,
    toggles: AblationToggles,
    icg_implied: bool,
    backbone: Box<dyn Encoder>,
    edge: Option<EdgePath>,
    /// Brings edge features from the doubled to the fusion grid.
    edge_up: Option<Upsampler>,
    context: ContextPath,
    fusion: Fusion,
}

impl Model {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (toggles, icg_implied) = config.ablation.normalized();
        let mut bcfg = config.backbone.clone();
        if toggles.plain_backbone {
            bcfg.num_registers = 0;
        }
        let embed_dim = bcfg.embed_dim;
        let backbone = Box::new(ToyViT::new(store, rng, bcfg)?);
        let edge = (!toggles.no_erp).then(|| {
            EdgePath::new(
                store,
                rng,
                "edge",
                &EdgePathConfig {
                    embed_dim,
                    channels: config.mid_channels,
                    num_eems: config.num_eems,
                    random_eem_init: toggles.random_eem_init,
                    eem_residual: config.eem_residual,
                    bilinear_upsample: toggles.bilinear_upsample,
                },
            )
        });
        let edge_up = (!toggles.no_erp)
            .then(|| Upsampler::new(store, "edge.to_afm", config.mid_channels, toggles.bilinear_upsample));
        let context = ContextPath::new(
            store,
            rng,
            "context",
            &ContextPathConfig {
                embed_dim,
                deep_channels: config.deep_channels,
                mid_channels: config.mid_channels,
                out_channels: config.out_channels,
                appearance_channels: config.appearance_channels,
                contrast_channels: config.contrast_channels,
                bg_threshold: config.bg_threshold,
                gate_residual: config.gate_residual,
                share_gate_weights: config.share_gate_weights,
                enable_seu: !toggles.no_clp,
                enable_icg: !toggles.no_icg,
                bilinear_upsample: toggles.bilinear_upsample,
            },
        );
        let fusion = Fusion::new(
            store,
            rng,
            "afm",
            &FusionConfig {
                edge_channels: config.mid_channels,
                loc_channels: config.out_channels,
                out_channels: config.out_channels,
            },
        );
        Ok(Self {
            config,
            toggles,
            icg_implied,
            backbone,
            edge,
            edge_up,
            context,
            fusion,
        })
    }

    /// The toggle set after cross-implications.
    pub fn toggles(&self) -> AblationToggles {
        self.toggles
    }

    /// True when `no_clp` forced `no_icg` on implicitly.
    pub fn icg_implied(&self) -> bool {
        self.icg_implied
    }

    pub fn forward<'t>(&self, store: &ParamStore, images: Var<'t>) -> ModelOut<'t> {
        let shape = images.shape();
        let s = self.config.backbone.image_size;
        assert_eq!(&shape[1..], &[3, s, s], "input must be (N, 3, {s}, {s})");
        let n = shape[0];
        let tape = images.tape();

        let pyramid = self.backbone.forward(store, images);
        let (mut edge_logits, mut edge_prob) = (None, None);
        let edge_feats = match (&self.edge, &self.edge_up) {
            (Some(edge), Some(up)) => {
                let out = edge.forward(store, pyramid.early());
                edge_logits = Some(out.1);
                edge_prob = Some(out.1.sigmoid().bilinear_resize(s, s));
                up.forward(store, out.0)
            }
            _ => {
                let g4 = 4 * self.config.backbone.grid();
                tape.constant(Arr::zeros(IxDyn(&[n, self.config.mid_channels, g4, g4])))
            }
        };

        let ctx = self.context.forward(store, pyramid.deep(), images);
        let loc_prob = ctx.logits.sigmoid().bilinear_resize(s, s);

        let fused = self.fusion.forward(store, edge_feats, ctx.features);
        let final_prob = if self.config.sigmoid_before_resize {
            fused.logits.sigmoid().bilinear_resize(s, s)
        } else {
            fused.logits.bilinear_resize(s, s).sigmoid()
        };

        ModelOut {
            edge_prob,
            loc_prob,
            final_prob,
            edge_logits,
            loc_logits: ctx.logits,
            final_logits: fused.logits,
            attention: fused.attention,
            contrast: ctx.contrast,
            hypothesis: ctx.hypothesis,
            diagnostics: ctx.diagnostics,
        }
    }

    /// Inference entry point: one fresh graph, detached maps.
    pub fn predict_triplet(&self, store: &ParamStore, images: &Arr) -> PredictionTriplet {
        let tape = Tape::new();
        let out = self.forward(store, tape.constant(images.clone()));
        PredictionTriplet {
            edge_map: out.edge_prob.map(|v| (*v.value()).clone()),
            object_map: (*out.loc_prob.value()).clone(),
            final_map: (*out.final_prob.value()).clone(),
        }
    }
}
