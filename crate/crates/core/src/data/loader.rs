//! Directory loader: pairs `Image/` entries with `GT/` annotations by file
//! stem, picks up cached `Edge/` bands, and reports what it had to skip.

use super::{load_mask, load_rgb, make_edge_targets, SampleMeta, SceneSample};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// What a directory walk loaded, skipped, and complained about.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl LoadReport {
    fn warn_skip(&mut self, msg: String) {
        self.warnings.push(msg);
        self.skipped += 1;
    }
}

fn stem_map(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    for path in entries {
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            map.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(map)
}

/// Load every matched image/annotation pair under `root`, in stem order.
/// Unmatched or unreadable entries become warnings and are skipped; a cached
/// edge band is used as-is when present.
pub fn load_dataset(root: &Path) -> Result<(Vec<SceneSample>, LoadReport)> {
    let image_dir = root.join("Image");
    let gt_dir = root.join("GT");
    if !image_dir.is_dir() || !gt_dir.is_dir() {
        return Err(Error::data(format!(
            "{} must contain Image/ and GT/ directories",
            root.display()
        )));
    }
    let images = stem_map(&image_dir, &["png", "jpg", "jpeg"])?;
    let masks = stem_map(&gt_dir, &["png"])?;
    let edge_dir = root.join("Edge");
    let edges = if edge_dir.is_dir() {
        stem_map(&edge_dir, &["png"])?
    } else {
        BTreeMap::new()
    };

    let mut report = LoadReport::default();
    for stem in masks.keys() {
        if !images.contains_key(stem) {
            report.warnings.push(format!("annotation {stem} has no image"));
        }
    }

    let mut samples = Vec::new();
    for (stem, image_path) in &images {
        let Some(mask_path) = masks.get(stem) else {
            report.warn_skip(format!("image {stem} has no annotation"));
            continue;
        };
        let image = match load_rgb(image_path) {
            Ok(a) => a,
            Err(e) => {
                report.warn_skip(format!("unreadable image {stem}: {e}"));
                continue;
            }
        };
        let mask = match load_mask(mask_path) {
            Ok(a) => a,
            Err(e) => {
                report.warn_skip(format!("unreadable annotation {stem}: {e}"));
                continue;
            }
        };
        let (_, h, w) = image.dim();
        if mask.dim() != (h, w) {
            report.warn_skip(format!(
                "{stem}: annotation {:?} does not match image ({h}, {w})",
                mask.dim()
            ));
            continue;
        }
        let edge = match edges.get(stem) {
            Some(edge_path) => match load_mask(edge_path) {
                Ok(e) if e.dim() == (h, w) => e,
                Ok(_) => {
                    report.warn_skip(format!("{stem}: cached edge band has a wrong shape"));
                    continue;
                }
                Err(e) => {
                    report.warn_skip(format!("unreadable edge band {stem}: {e}"));
                    continue;
                }
            },
            None => make_edge_targets(&mask),
        };
        let foreground_ratio = mask.sum() / (h * w) as f64;
        samples.push(SceneSample {
            name: stem.clone(),
            image,
            mask,
            edge,
            meta: SampleMeta { foreground_ratio, distractor_box: None, seed: None },
        });
    }
    report.loaded = samples.len();
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{write_dataset, GenConfig};
    use crate::data::save_gray;
    use ndarray::Array2;

    fn make_root(n: usize) -> (tempfile::TempDir, GenConfig) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig { size: 48, ..Default::default() };
        let seeds: Vec<u64> = (0..n as u64).collect();
        write_dataset(dir.path(), &seeds, &cfg).unwrap();
        (dir, cfg)
    }

    #[test]
    fn loads_matched_pairs() {
        let (dir, cfg) = make_root(3);
        let (samples, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(report.loaded, 3);
        assert_eq!(report.skipped, 0);
        assert!(report.warnings.is_empty());
        for s in &samples {
            s.validate().unwrap();
            assert_eq!(s.mask.dim(), (cfg.size, cfg.size));
            assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        // Deterministic stem order.
        let names: Vec<_> = samples.iter().map(|s| s.name.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn missing_annotation_warns_and_skips() {
        let (dir, _) = make_root(3);
        let victim = dir.path().join("GT").join("seed00000001.png");
        std::fs::remove_file(victim).unwrap();
        let (samples, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.skipped, 1);
        assert!(report.warnings.iter().any(|w| w.contains("no annotation")));
    }

    #[test]
    fn unreadable_file_is_skipped_with_count() {
        let (dir, _) = make_root(2);
        std::fs::write(dir.path().join("Image").join("seed00000000.png"), b"not a png")
            .unwrap();
        let (samples, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(report.skipped, 1);
        assert!(report.warnings.iter().any(|w| w.contains("unreadable image")));
    }

    #[test]
    fn cached_edges_are_not_regenerated() {
        let (dir, cfg) = make_root(1);
        // Replace the band with a sentinel pattern; the loader must return it.
        let sentinel = Array2::from_shape_fn((cfg.size, cfg.size), |(y, _)| {
            if y == 0 {
                1.0
            } else {
                0.0
            }
        });
        save_gray(&dir.path().join("Edge").join("seed00000000.png"), &sentinel).unwrap();
        let (samples, _) = load_dataset(dir.path()).unwrap();
        assert_eq!(samples[0].edge, sentinel);
    }

    #[test]
    fn edges_generated_when_cache_absent() {
        let (dir, _) = make_root(1);
        std::fs::remove_dir_all(dir.path().join("Edge")).unwrap();
        let (samples, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(report.loaded, 1);
        let expect = make_edge_targets(&samples[0].mask);
        assert_eq!(samples[0].edge, expect);
    }

    #[test]
    fn orphan_annotation_only_warns() {
        let (dir, cfg) = make_root(1);
        save_gray(
            &dir.path().join("GT").join("orphan.png"),
            &Array2::zeros((cfg.size, cfg.size)),
        )
        .unwrap();
        let (samples, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(report.skipped, 0);
        assert!(report.warnings.iter().any(|w| w.contains("no image")));
    }

    #[test]
    fn missing_layout_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
