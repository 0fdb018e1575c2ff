//! Dataset types, preprocessing, annotation-edge generation, and image I/O.

pub mod loader;
pub mod synth;

pub use loader::{load_dataset, LoadReport};
pub use synth::{gen_scene, write_dataset, GenConfig, Manifest};

use crate::error::{Error, Result};
use crate::imgproc;
use crate::tensor::Arr;
use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One image with its annotations. `image` is `(3, H, W)` in `[0, 1]`,
/// `mask` and `edge` are binary maps on the same `(H, W)` plane.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub name: String,
    pub image: Array3<f64>,
    pub mask: Array2<f64>,
    pub edge: Array2<f64>,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub foreground_ratio: f64,
    /// `[y0, x0, y1, x1]`, half-open, of the salient non-target object.
    pub distractor_box: Option<[usize; 4]>,
    pub seed: Option<u64>,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image.dim();
        if c != 3 {
            return Err(Error::data(format!("{}: image must have 3 channels", self.name)));
        }
        if self.mask.dim() != (h, w) || self.edge.dim() != (h, w) {
            return Err(Error::data(format!("{}: annotation shape mismatch", self.name)));
        }
        Ok(())
    }
}

/// Resize-and-normalize settings for network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: 392,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("preprocess size must be positive"));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("preprocess std must be positive"));
        }
        Ok(())
    }
}

/// A normalized network input plus the size it came from.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub tensor: Array3<f64>,
    pub original_size: (usize, usize),
}

/// Bilinear resize to the configured grid, then per-channel `(x - mean) / std`.
pub fn preprocess_image(image: &Array3<f64>, cfg: &PreprocessConfig) -> PreparedImage {
    let (_, h, w) = image.dim();
    let s = cfg.size;
    let mut tensor = Array3::<f64>::zeros((3, s, s));
    for c in 0..3 {
        let plane = imgproc::resize_bilinear(&image.index_axis(Axis(0), c).to_owned(), s, s);
        let mut out = tensor.index_axis_mut(Axis(0), c);
        out.assign(&plane.mapv(|v| (v - cfg.mean[c]) / cfg.std[c]));
    }
    PreparedImage { tensor, original_size: (h, w) }
}

/// Inverse of the normalization on the network grid.
pub fn denormalize(tensor: &Array3<f64>, cfg: &PreprocessConfig) -> Array3<f64> {
    let mut out = tensor.clone();
    for c in 0..3 {
        let mut plane = out.index_axis_mut(Axis(0), c);
        plane.mapv_inplace(|v| v * cfg.std[c] + cfg.mean[c]);
    }
    out
}

/// Edge band of a binary mask: ridge detection on the mask followed by a
/// disk dilation of radius 2, giving a band five pixels across.
///
/// Only ridges present under both label polarities are kept, so the band
/// does not depend on which label means background and the image frame
/// never counts as a boundary. A mask with no interior boundary (all one
/// label) therefore has an empty band.
pub fn make_edge_targets(mask: &Array2<f64>) -> Array2<f64> {
    if mask.iter().all(|&v| v == 0.0) {
        return Array2::zeros(mask.dim());
    }
    let pos = imgproc::canny(mask, 0.1, 0.2);
    let neg = imgproc::canny(&mask.mapv(|v| 1.0 - v), 0.1, 0.2);
    let trace = Array2::from_shape_fn(mask.dim(), |ix| {
        if pos[ix] > 0.0 && neg[ix] > 0.0 {
            1.0
        } else {
            0.0
        }
    });
    if trace.iter().all(|&v| v == 0.0) {
        return trace;
    }
    imgproc::dilate_disk(&trace, 2.0)
}

/// Training batch on the network grid.
#[derive(Clone, Debug)]
pub struct Batch {
    pub names: Vec<String>,
    pub images: Arr,
    pub masks: Arr,
    pub edges: Arr,
    pub original_sizes: Vec<(usize, usize)>,
}

/// Stack samples: images are resized and normalized, annotations are
/// nearest-resized so they stay binary.
pub fn make_batch(samples: &[&SceneSample], cfg: &PreprocessConfig) -> Batch {
    let n = samples.len();
    let s = cfg.size;
    let mut images = Array4::<f64>::zeros((n, 3, s, s));
    let mut masks = Array4::<f64>::zeros((n, 1, s, s));
    let mut edges = Array4::<f64>::zeros((n, 1, s, s));
    let mut names = Vec::with_capacity(n);
    let mut original_sizes = Vec::with_capacity(n);
    for (i, sample) in samples.iter().enumerate() {
        let prepared = preprocess_image(&sample.image, cfg);
        images.index_axis_mut(Axis(0), i).assign(&prepared.tensor);
        masks
            .index_axis_mut(Axis(0), i)
            .index_axis_mut(Axis(0), 0)
            .assign(&imgproc::resize_nearest(&sample.mask, s, s));
        edges
            .index_axis_mut(Axis(0), i)
            .index_axis_mut(Axis(0), 0)
            .assign(&imgproc::resize_nearest(&sample.edge, s, s));
        names.push(sample.name.clone());
        original_sizes.push(prepared.original_size);
    }
    Batch {
        names,
        images: images.into_dyn(),
        masks: masks.into_dyn(),
        edges: edges.into_dyn(),
        original_sizes,
    }
}

// ---------------------------------------------------------------------------
// Image file I/O
// ---------------------------------------------------------------------------

/// Load an image as `(3, H, W)` in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Load a grayscale annotation and binarize at half intensity.
pub fn load_mask(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array2::<f64>::zeros((h, w));
    for (x, y, px) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = if px.0[0] >= 128 { 1.0 } else { 0.0 };
    }
    Ok(out)
}

pub fn save_rgb(path: &Path, image: &Array3<f64>) -> Result<()> {
    let (_, h, w) = image.dim();
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((image[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized from dimensions");
    buf.save(path)?;
    Ok(())
}

pub fn save_gray(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut raw = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            raw.push((map[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let buf = image::GrayImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized from dimensions");
    buf.save(path)?;
    Ok(())
}
