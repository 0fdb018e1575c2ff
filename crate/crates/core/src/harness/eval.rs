//! Scoring a model over a dataset (per-image CSV plus aggregate JSON) and
//! batch prediction to image files.

use super::plot::{gray_panel, side_by_side};
use crate::data::{denormalize, preprocess_image, save_gray, save_rgb, PreprocessConfig, SceneSample};
use crate::error::{Error, Result};
use crate::imgproc::resize_bilinear;
use crate::metrics::{
    csv_row, evaluate_pair, summarize, EHeadline, ImageMetrics, MetricSummary, CSV_HEADER,
};
use crate::model::Model;
use crate::params::ParamStore;
use ndarray::{Array2, Array3};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct EvalOutcome {
    pub rows: Vec<(String, ImageMetrics)>,
    pub summary: MetricSummary,
    pub headline: f64,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

#[derive(Serialize)]
struct Aggregate<'a> {
    count: usize,
    headline_e: EHeadline,
    headline_value: f64,
    mean: &'a ImageMetrics,
}

/// Runs the model on one image and returns the fused map resized back to
/// the image's own resolution.
pub fn predict_full(
    model: &Model,
    store: &ParamStore,
    image: &Array3<f64>,
    pre: &PreprocessConfig,
) -> (Array2<f64>, Option<Array2<f64>>, Array2<f64>) {
    let prepared = preprocess_image(image, pre);
    let (h, w) = prepared.original_size;
    let s = pre.size;
    let input = prepared
        .tensor
        .insert_axis(ndarray::Axis(0))
        .into_dyn();
    let triplet = model.predict_triplet(store, &input);
    let to_plane = |arr: &crate::params::Arr| -> Array2<f64> {
        let plane = arr
            .view()
            .into_shape_with_order((s, s))
            .expect("prediction map is one plane at input resolution")
            .to_owned();
        if (h, w) == (s, s) {
            plane
        } else {
            resize_bilinear(&plane, h, w)
        }
    };
    let final_map = to_plane(&triplet.final_map);
    let edge_map = triplet.edge_map.as_ref().map(&to_plane);
    let object_map = to_plane(&triplet.object_map);
    (final_map, edge_map, object_map)
}

/// Scores already-computed prediction maps and writes the two reports.
pub fn evaluate_maps(
    rows_in: &[(String, Array2<f64>, Array2<f64>)],
    headline: EHeadline,
    out_dir: &Path,
) -> Result<EvalOutcome> {
    if rows_in.is_empty() {
        return Err(Error::data("nothing to evaluate: the dataset is empty"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(rows_in.len());
    for (name, pred, gt) in rows_in {
        let m = evaluate_pair(pred, gt)
            .map_err(|e| Error::data(format!("scoring {name}: {e}")))?;
        rows.push((name.clone(), m));
    }
    let summary = summarize(&rows.iter().map(|(_, m)| *m).collect::<Vec<_>>());
    let headline_value = summary.mean.headline_e(headline);

    let csv_path = out_dir.join("per_image.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "{CSV_HEADER}")?;
    for (name, m) in &rows {
        writeln!(csv, "{}", csv_row(name, m))?;
    }
    csv.flush()?;

    let json_path = out_dir.join("summary.json");
    let aggregate = Aggregate {
        count: summary.count,
        headline_e: headline,
        headline_value,
        mean: &summary.mean,
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&aggregate).unwrap())?;

    Ok(EvalOutcome { rows, summary, headline: headline_value, csv_path, json_path })
}

/// Predicts every sample, scores the fused map against its annotation at
/// original resolution, and writes the reports.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    samples: &[SceneSample],
    pre: &PreprocessConfig,
    headline: EHeadline,
    out_dir: &Path,
) -> Result<EvalOutcome> {
    if samples.is_empty() {
        return Err(Error::data("nothing to evaluate: the dataset is empty"));
    }
    let mut rows_in = Vec::with_capacity(samples.len());
    for s in samples {
        let (final_map, _, _) = predict_full(model, store, &s.image, pre);
        rows_in.push((s.name.clone(), final_map, s.mask.clone()));
    }
    evaluate_maps(&rows_in, headline, out_dir)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PredictOptions {
    /// Also write the edge and localization maps.
    pub emit_intermediate: bool,
    /// Also write an input/prediction side-by-side panel.
    pub figures: bool,
}

/// Writes prediction maps as 8-bit grayscale images at each input's own
/// resolution. Returns the fused-map paths in input order.
pub fn predict_to_dir(
    model: &Model,
    store: &ParamStore,
    inputs: &[(String, Array3<f64>)],
    pre: &PreprocessConfig,
    out_dir: &Path,
    opts: PredictOptions,
) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::data("no images to predict"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(inputs.len());
    for (name, image) in inputs {
        let (final_map, edge_map, object_map) = predict_full(model, store, image, pre);
        let final_path = out_dir.join(format!("{name}.png"));
        save_gray(&final_path, &final_map)?;
        if opts.emit_intermediate {
            if let Some(edge) = &edge_map {
                save_gray(&out_dir.join(format!("{name}_edge.png")), edge)?;
            }
            save_gray(&out_dir.join(format!("{name}_object.png")), &object_map)?;
        }
        if opts.figures {
            let mut panels = vec![image.clone(), gray_panel(&final_map)];
            if let Some(edge) = &edge_map {
                panels.push(gray_panel(edge));
            }
            let figure = side_by_side(&panels)?;
            save_rgb(&out_dir.join(format!("{name}_panel.png")), &figure)?;
        }
        written.push(final_path);
    }
    Ok(written)
}

/// Side-by-side qualitative grid for scored samples: input, annotation,
/// prediction. `tensor_space` inputs are denormalized for display.
pub fn qualitative_panel(
    image: &Array3<f64>,
    mask: &Array2<f64>,
    prediction: &Array2<f64>,
    pre: Option<&PreprocessConfig>,
) -> Result<Array3<f64>> {
    let shown = match pre {
        Some(cfg) => denormalize(image, cfg).mapv(|v| v.clamp(0.0, 1.0)),
        None => image.clone(),
    };
    side_by_side(&[shown, gray_panel(mask), gray_panel(prediction)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::tests::{micro_run_config, tiny_scenes};
    use crate::model::Model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_model() -> (Model, ParamStore, crate::harness::RunConfig) {
        let cfg = micro_run_config();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(&mut store, &mut rng, cfg.model.clone()).unwrap();
        (model, store, cfg)
    }

    #[test]
    fn annotation_as_prediction_scores_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = tiny_scenes(3);
        let rows: Vec<_> = scenes
            .iter()
            .map(|s| (s.name.clone(), s.mask.clone(), s.mask.clone()))
            .collect();
        let out = evaluate_maps(&rows, EHeadline::Mean, dir.path()).unwrap();
        assert_eq!(out.summary.count, 3);
        let m = &out.summary.mean;
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.e_mean, 1.0);
        assert_eq!(m.e_max, 1.0);
        assert_eq!(m.e_adaptive, 1.0);
        assert_eq!(m.mean_f, 1.0);
        assert!(m.s_measure > 1.0 - 1e-9);
        assert!(m.weighted_f > 1.0 - 1e-9);
        assert_eq!(out.headline, 1.0);
    }

    #[test]
    fn reports_are_written_and_consistent() {
        let (model, store, cfg) = micro_model();
        let scenes = tiny_scenes(4);
        let dir = tempfile::tempdir().unwrap();
        let out = evaluate_model(&model, &store, &scenes, &cfg.preprocess, EHeadline::Max, dir.path())
            .unwrap();
        assert_eq!(out.rows.len(), 4);

        // Aggregate means equal the mean of the per-image rows.
        let mut s_sum = 0.0;
        let mut mae_sum = 0.0;
        for (_, m) in &out.rows {
            s_sum += m.s_measure;
            mae_sum += m.mae;
        }
        assert!((out.summary.mean.s_measure - s_sum / 4.0).abs() < 1e-12);
        assert!((out.summary.mean.mae - mae_sum / 4.0).abs() < 1e-12);
        assert_eq!(out.headline, out.summary.mean.e_max);

        let csv = std::fs::read_to_string(&out.csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with(&format!("{},", scenes[0].name)));

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out.json_path).unwrap()).unwrap();
        assert_eq!(json["count"], 4);
        assert_eq!(json["headline_e"], "max");
        assert!(json["mean"]["s_measure"].is_number());
        assert!(json["mean"]["mae"].is_number());
        // Every score lands in the unit interval.
        for (_, m) in &out.rows {
            for v in [m.s_measure, m.e_adaptive, m.e_mean, m.e_max, m.weighted_f, m.mean_f, m.mae] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn empty_dataset_is_an_error_not_an_empty_report() {
        let (model, store, cfg) = micro_model();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            evaluate_model(&model, &store, &[], &cfg.preprocess, EHeadline::Mean, dir.path()),
            Err(Error::Data(_))
        ));
        assert!(evaluate_maps(&[], EHeadline::Mean, dir.path()).is_err());
        assert!(!dir.path().join("per_image.csv").exists());
    }

    #[test]
    fn predictions_come_back_at_original_sizes_and_are_idempotent() {
        let (model, store, cfg) = micro_model();
        // Two inputs at different, non-square sizes.
        let a = Array3::from_shape_fn((3, 41, 57), |(c, y, x)| {
            ((c + 1) * (y + 2 * x)) as f64 % 11.0 / 11.0
        });
        let b = Array3::from_shape_fn((3, 30, 22), |(c, y, x)| ((c + y + x) % 7) as f64 / 7.0);
        let inputs = vec![("alpha".to_string(), a), ("beta".to_string(), b)];
        let dir = tempfile::tempdir().unwrap();
        let opts = PredictOptions { emit_intermediate: true, figures: true };
        let written = predict_to_dir(&model, &store, &inputs, &cfg.preprocess, dir.path(), opts)
            .unwrap();
        assert_eq!(written.len(), 2);

        let img = image::open(&written[0]).unwrap();
        assert_eq!((img.height(), img.width()), (41, 57));
        let img = image::open(&written[1]).unwrap();
        assert_eq!((img.height(), img.width()), (30, 22));
        assert!(dir.path().join("alpha_edge.png").exists());
        assert!(dir.path().join("alpha_object.png").exists());
        assert!(dir.path().join("alpha_panel.png").exists());

        // A grayscale 8-bit payload, and a byte-identical rerun.
        let first = std::fs::read(&written[0]).unwrap();
        let img = image::open(&written[0]).unwrap();
        assert!(matches!(img.color(), image::ColorType::L8));
        predict_to_dir(&model, &store, &inputs, &cfg.preprocess, dir.path(), opts).unwrap();
        assert_eq!(first, std::fs::read(&written[0]).unwrap());
    }
}
