//! The encoder contract and a from-scratch patch-token transformer.
//!
//! The decoder only assumes an [`Encoder`]: four token maps on a common
//! `grid x grid` layout, the first two from shallow blocks (edge-oriented
//! detail), the last two from the deepest blocks (semantic context). Any
//! pretrained transformer exposing per-block tokens can be adapted to this
//! trait; the built-in implementation is small enough to train on a CPU.

use crate::error::{Error, Result};
use crate::init;
use crate::layers::{Conv2d, LayerNorm, Linear};
use crate::params::ParamStore;
use crate::tensor::{concat, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    /// Extra learned tokens that ride along through attention and are
    /// stripped before features leave the encoder. Zero disables them.
    pub num_registers: usize,
    /// Apply the final normalization layer to every extracted feature map.
    pub feature_layernorm: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 392,
            patch_size: 14,
            embed_dim: 64,
            depth: 4,
            num_heads: 4,
            num_registers: 4,
            feature_layernorm: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::config("image and patch size must be positive"));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.depth < 4 {
            return Err(Error::config(format!(
                "depth {} too small: four distinct feature blocks are required",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Block indices (0-based) whose outputs become the four feature levels.
    pub fn feature_blocks(&self) -> [usize; 4] {
        [0, 1, self.depth - 2, self.depth - 1]
    }
}

/// Four `(N, D, g, g)` maps: two shallow, two deep.
pub struct FeaturePyramid<'t> {
    pub levels: [Var<'t>; 4],
}

impl<'t> FeaturePyramid<'t> {
    pub fn early(&self) -> [Var<'t>; 2] {
        [self.levels[0], self.levels[1]]
    }

    pub fn deep(&self) -> [Var<'t>; 2] {
        [self.levels[2], self.levels[3]]
    }
}

pub trait Encoder {
    fn embed_dim(&self) -> usize;
    fn patch_size(&self) -> usize;
    fn image_size(&self) -> usize;
    fn grid(&self) -> usize {
        self.image_size() / self.patch_size()
    }
    /// `images`: `(N, 3, image_size, image_size)`, already normalized.
    fn forward<'t>(&self, store: &ParamStore, images: Var<'t>) -> FeaturePyramid<'t>;
}

struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), dim, 3 * dim, true),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim, true),
            heads,
        }
    }

    fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        let (n, t, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let hd = d / h;
        let qkv = self
            .qkv
            .forward(store, x)
            .reshape(&[n, t, 3, h, hd])
            .permute(&[2, 0, 3, 1, 4]); // (3, N, h, T, hd)
        let q = qkv.slice_axis(0, 0, 1).reshape(&[n * h, t, hd]);
        let k = qkv.slice_axis(0, 1, 2).reshape(&[n * h, t, hd]);
        let v = qkv.slice_axis(0, 2, 3).reshape(&[n * h, t, hd]);
        let attn = q
            .bmm(&k.permute(&[0, 2, 1]))
            .scale(1.0 / (hd as f64).sqrt())
            .softmax_lastdim();
        let out = attn
            .bmm(&v)
            .reshape(&[n, h, t, hd])
            .permute(&[0, 2, 1, 3])
            .reshape(&[n, t, d]);
        self.proj.forward(store, out)
    }
}

struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: Attention::new(store, rng, &format!("{name}.attn"), dim, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, rng, &format!("{name}.mlp.fc1"), dim, 4 * dim, true),
            fc2: Linear::new(store, rng, &format!("{name}.mlp.fc2"), 4 * dim, dim, true),
        }
    }

    fn forward<'t>(&self, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let x = x.add(&self.attn.forward(store, self.norm1.forward(store, x)));
        let mlp = self
            .fc2
            .forward(store, self.fc1.forward(store, self.norm2.forward(store, x)).gelu());
        x.add(&mlp)
    }
}

/// Pre-norm patch-token transformer trained from scratch alongside the
/// decoder. Zeroing every block's attention projection and second MLP weight
/// turns all blocks into identities (pure residual passthrough), which the
/// wiring tests exploit.
pub struct ToyViT {
    pub config: BackboneConfig,
    patch: Conv2d,
    pos: crate::params::ParamId,
    registers: Option<crate::params::ParamId>,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl ToyViT {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = config.patch_size;
        let g = config.grid();
        let patch = Conv2d::with_weight(
            store,
            "backbone.patch_embed",
            init::trunc_normal(rng, &[d, 3, p, p], 0.02),
            p,
            0,
            1,
            true,
        );
        let pos = store.add(
            "backbone.pos_embed",
            init::trunc_normal(rng, &[1, g * g, d], 0.02),
        );
        let registers = (config.num_registers > 0).then(|| {
            store.add(
                "backbone.registers",
                init::trunc_normal(rng, &[1, config.num_registers, d], 0.02),
            )
        });
        let blocks = (0..config.depth)
            .map(|i| Block::new(store, rng, &format!("backbone.block{i}"), d, config.num_heads))
            .collect();
        let norm = LayerNorm::new(store, "backbone.norm", d);
        Ok(Self {
            config,
            patch,
            pos,
            registers,
            blocks,
            norm,
        })
    }

    /// Tokens -> `(N, D, g, g)` map, registers stripped.
    fn to_map<'t>(&self, store: &ParamStore, tokens: Var<'t>, n: usize) -> Var<'t> {
        let g = self.config.grid();
        let d = self.config.embed_dim;
        let patches = tokens.slice_axis(1, 0, g * g);
        let patches = if self.config.feature_layernorm {
            self.norm.forward(store, patches)
        } else {
            patches
        };
        patches.reshape(&[n, g, g, d]).permute(&[0, 3, 1, 2])
    }
}

impl Encoder for ToyViT {
    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    fn image_size(&self) -> usize {
        self.config.image_size
    }

    fn forward<'t>(&self, store: &ParamStore, images: Var<'t>) -> FeaturePyramid<'t> {
        let s = images.shape();
        assert_eq!(s.len(), 4, "encoder expects NCHW");
        assert_eq!(s[1], 3, "encoder expects RGB input");
        assert_eq!(s[2], self.config.image_size, "input height");
        assert_eq!(s[3], self.config.image_size, "input width");
        let n = s[0];
        let g = self.config.grid();
        let d = self.config.embed_dim;
        let tape = images.tape();

        let x = self
            .patch
            .forward(store, images) // (N, D, g, g)
            .reshape(&[n, d, g * g])
            .permute(&[0, 2, 1]); // (N, g*g, D)
        let pos = tape.param(store, self.pos).broadcast_to(&[n, g * g, d]);
        let mut tokens = x.add(&pos);
        if let Some(reg) = self.registers {
            let r = self.config.num_registers;
            let regs = tape.param(store, reg).broadcast_to(&[n, r, d]);
            tokens = concat(1, &[tokens, regs]);
        }

        let wanted = self.config.feature_blocks();
        let mut levels = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            tokens = block.forward(store, tokens);
            for &w in &wanted {
                if w == i {
                    levels.push(self.to_map(store, tokens, n));
                }
            }
        }
        assert_eq!(levels.len(), 4, "feature extraction missed a block");
        FeaturePyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        }
    }
}
