//! Procedural scenes: a textured background, a camouflaged object sharing
//! that texture up to a small offset, and optionally a salient distractor
//! whose location is recorded but never annotated.

use super::{make_edge_targets, save_gray, save_rgb, SampleMeta, SceneSample};
use crate::error::{Error, Result};
use crate::imgproc;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub size: usize,
    /// Octaves of value noise in the shared texture.
    pub octaves: usize,
    /// Brightness offset of the camouflaged object over the background.
    pub camouflage_offset: f64,
    /// Bounds on `mask area / image area`.
    pub foreground_ratio: (f64, f64),
    /// Add a salient distractor object.
    pub scod: bool,
    /// Brightness offset of the distractor; large = conspicuous.
    pub distractor_contrast: f64,
    pub max_tries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            size: 128,
            octaves: 4,
            camouflage_offset: 0.08,
            foreground_ratio: (0.05, 0.25),
            scod: false,
            distractor_contrast: 0.6,
            max_tries: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::config("scene size must be at least 16"));
        }
        if self.octaves == 0 {
            return Err(Error::config("need at least one noise octave"));
        }
        let (lo, hi) = self.foreground_ratio;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::config("foreground ratio bounds must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

/// Value noise in `[0, 1]`: bilinearly upsampled random lattices with
/// halving amplitudes.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, octaves: usize) -> Array2<f64> {
    let mut field = Array2::<f64>::zeros((size, size));
    let mut amplitude = 1.0;
    let mut total = 0.0;
    for octave in 0..octaves {
        let cells = (4usize << octave).min(size);
        let lattice =
            Array2::from_shape_fn((cells + 1, cells + 1), |_| rng.random_range(0.0..1.0));
        let up = imgproc::resize_bilinear(&lattice, size, size);
        field.zip_mut_with(&up, |f, u| *f += amplitude * u);
        total += amplitude;
        amplitude *= 0.5;
    }
    field.mapv_into(|v| v / total)
}

/// Star-shaped blob: a radial function of the angle with a few random
/// harmonics. Returns a binary mask.
fn blob_mask(
    size: usize,
    center: (f64, f64),
    base_radius: f64,
    harmonics: &[(f64, f64)],
) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(y, x)| {
        let dy = y as f64 - center.0;
        let dx = x as f64 - center.1;
        let dist = (dy * dy + dx * dx).sqrt();
        let theta = dy.atan2(dx);
        let mut radius = 1.0;
        for (k, (amp, phase)) in harmonics.iter().enumerate() {
            radius += amp * ((k as f64 + 2.0) * theta + phase).cos();
        }
        if dist <= base_radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

fn draw_harmonics(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..4)
        .map(|_| (rng.random_range(-0.12..0.12), rng.random_range(0.0..2.0 * PI)))
        .collect()
}

/// Draw a blob whose area ratio lands inside `bounds`, retrying with a
/// corrected radius. The largest blob that fits with margins caps the
/// reachable ratio; bounds above it fail.
fn draw_blob_in_bounds(
    rng: &mut ChaCha8Rng,
    size: usize,
    bounds: (f64, f64),
    max_tries: usize,
) -> Result<Array2<f64>> {
    let (lo, hi) = bounds;
    let area = (size * size) as f64;
    if hi * area < 1.0 {
        return Err(Error::Generation(format!(
            "upper foreground bound {hi} allows no pixels on a {size}x{size} grid"
        )));
    }
    // Shape wobble (<= 1.48 radius factor) plus a 2-pixel margin.
    let max_radius = (size as f64 / 2.0 - 2.0) / 1.5;
    let reachable = PI * max_radius * max_radius / area;
    if lo > reachable {
        return Err(Error::Generation(format!(
            "lower foreground bound {lo} exceeds reachable ratio {reachable:.3}"
        )));
    }
    let mut target = rng.random_range(lo.max(1.0 / area)..=hi.min(reachable));
    let mut radius = (target * area / PI).sqrt().min(max_radius);
    for _ in 0..max_tries {
        let margin = (radius * 1.5 + 2.0).min(size as f64 / 2.0 - 1.0);
        let center = (
            rng.random_range(margin..=size as f64 - margin),
            rng.random_range(margin..=size as f64 - margin),
        );
        let mask = blob_mask(size, center, radius, &draw_harmonics(rng));
        let ratio = mask.sum() / area;
        if ratio >= lo && ratio <= hi {
            return Ok(mask);
        }
        if ratio == 0.0 {
            radius = (radius * 1.5).min(max_radius);
            continue;
        }
        // Rescale toward the target area and keep the draw loop going.
        target = rng.random_range(lo.max(1.0 / area)..=hi.min(reachable));
        radius = (radius * (target / ratio).sqrt()).min(max_radius);
    }
    Err(Error::Generation(format!(
        "no blob landed in ratio bounds ({lo}, {hi}) after {max_tries} tries"
    )))
}

/// Place a small salient blob at least a tenth of the image width away from
/// the target. Centers are sampled from the zone where the whole blob is
/// guaranteed clear; the blob shrinks when no such zone is left.
fn place_distractor(
    rng: &mut ChaCha8Rng,
    size: usize,
    target: &Array2<f64>,
    max_tries: usize,
) -> Result<Array2<f64>> {
    let (dist_to_target, _) = imgproc::edt(target);
    let min_gap = 0.1 * size as f64;
    let area = (size * size) as f64;
    let mut radius = (rng.random_range(0.02..0.05f64) * area / PI).sqrt();
    let harmonics = draw_harmonics(rng);
    for _ in 0..max_tries {
        if radius < 2.0 {
            break;
        }
        let reach = radius * 1.5 + 2.0;
        let mut feasible: Vec<(usize, usize)> = Vec::new();
        for ((y, x), d) in dist_to_target.indexed_iter() {
            let inside_frame = y as f64 >= reach
                && y as f64 <= size as f64 - 1.0 - reach
                && x as f64 >= reach
                && x as f64 <= size as f64 - 1.0 - reach;
            if inside_frame && *d >= min_gap + reach {
                feasible.push((y, x));
            }
        }
        if feasible.is_empty() {
            radius *= 0.75;
            continue;
        }
        let (cy, cx) = feasible[rng.random_range(0..feasible.len())];
        let candidate = blob_mask(size, (cy as f64, cx as f64), radius, &harmonics);
        let gap = candidate
            .indexed_iter()
            .filter(|(_, v)| **v > 0.0)
            .map(|(ix, _)| dist_to_target[ix])
            .fold(f64::INFINITY, f64::min);
        if candidate.sum() > 0.0 && gap >= min_gap {
            return Ok(candidate);
        }
        radius *= 0.85;
    }
    Err(Error::Generation(
        "could not place a distractor clear of the target".into(),
    ))
}

fn bbox(mask: &Array2<f64>) -> [usize; 4] {
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for ((y, x), v) in mask.indexed_iter() {
        if *v > 0.0 {
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y + 1);
            x1 = x1.max(x + 1);
        }
    }
    [y0, x0, y1, x1]
}

/// Deterministic scene for a seed.
pub fn gen_scene(seed: u64, cfg: &GenConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.size;

    let texture = value_noise(&mut rng, size, cfg.octaves);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..0.6));

    let mask = draw_blob_in_bounds(&mut rng, size, cfg.foreground_ratio, cfg.max_tries)?;

    let distractor = if cfg.scod {
        Some(place_distractor(&mut rng, size, &mask, cfg.max_tries)?)
    } else {
        None
    };

    // Shared texture everywhere; the object only shifts brightness.
    let mut image = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        tint[c] + 0.5 * (texture[[y, x]] - 0.5) + cfg.camouflage_offset * mask[[y, x]]
    });
    if let Some(d) = &distractor {
        // The distractor breaks camouflage: strong offset away from the tint.
        let sign = if tint.iter().sum::<f64>() / 3.0 < 0.5 { 1.0 } else { -1.0 };
        for ((c, y, x), v) in image.indexed_iter_mut() {
            if d[[y, x]] > 0.0 {
                *v = tint[c] + sign * cfg.distractor_contrast * (0.6 + 0.4 * (c as f64 / 2.0));
            }
        }
    }
    image.mapv_inplace(|v| v.clamp(0.0, 1.0));

    let edge = make_edge_targets(&mask);
    let foreground_ratio = mask.sum() / (size * size) as f64;
    Ok(SceneSample {
        name: format!("seed{seed:08}"),
        image,
        mask,
        edge,
        meta: SampleMeta {
            foreground_ratio,
            distractor_box: distractor.as_ref().map(bbox),
            seed: Some(seed),
        },
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestItem {
    pub name: String,
    pub seed: u64,
    pub foreground_ratio: f64,
    pub distractor_box: Option<[usize; 4]>,
}

/// Record of a generated dataset: the exact config and one entry per scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub items: Vec<ManifestItem>,
}

/// Generate scenes for `seeds` and write them in the standard dataset layout
/// (`Image/`, `GT/`, `Edge/`) plus `manifest.json`.
pub fn write_dataset(root: &Path, seeds: &[u64], cfg: &GenConfig) -> Result<Manifest> {
    let image_dir = root.join("Image");
    let gt_dir = root.join("GT");
    let edge_dir = root.join("Edge");
    std::fs::create_dir_all(&image_dir)?;
    std::fs::create_dir_all(&gt_dir)?;
    std::fs::create_dir_all(&edge_dir)?;
    let mut items = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let sample = gen_scene(seed, cfg)?;
        save_rgb(&image_dir.join(format!("{}.png", sample.name)), &sample.image)?;
        save_gray(&gt_dir.join(format!("{}.png", sample.name)), &sample.mask)?;
        save_gray(&edge_dir.join(format!("{}.png", sample.name)), &sample.edge)?;
        items.push(ManifestItem {
            name: sample.name.clone(),
            seed,
            foreground_ratio: sample.meta.foreground_ratio,
            distractor_box: sample.meta.distractor_box,
        });
    }
    let manifest = Manifest { config: cfg.clone(), items };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(root.join("manifest.json"), json)?;
    Ok(manifest)
}
