//! Python bindings. Arrays cross the boundary as flat row-major `list[float]`
//! plus explicit dimensions, so the module works with or without numpy
//! (`np.asarray(v).reshape(h, w)` on the Python side).

use std::collections::HashMap;
use std::path::Path;

use camonet::data::synth::{gen_scene, GenConfig};
use camonet::data::{make_edge_targets, SceneSample};
use camonet::harness::checkpoint;
use camonet::harness::eval::predict_full;
use camonet::harness::train::train;
use camonet::harness::{ablation_rows, RunConfig};
use camonet::loss::{total_loss, LossConfig};
use camonet::metrics::evaluate_pair;
use camonet::model::Model as CoreModel;
use camonet::params::ParamStore;
use camonet::tensor::{Arr, Tape};
use ndarray::{Array2, Array3, IxDyn};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array2(data: &[f64], height: usize, width: usize, what: &str) -> PyResult<Array2<f64>> {
    if data.len() != height * width {
        return Err(value_err(format!(
            "{what}: expected {height}x{width} = {} values, got {}",
            height * width,
            data.len()
        )));
    }
    Ok(Array2::from_shape_vec((height, width), data.to_vec()).unwrap())
}

fn to_image(data: &[f64], height: usize, width: usize) -> PyResult<Array3<f64>> {
    if data.len() != 3 * height * width {
        return Err(value_err(format!(
            "image: expected 3x{height}x{width} = {} values, got {}",
            3 * height * width,
            data.len()
        )));
    }
    Ok(Array3::from_shape_vec((3, height, width), data.to_vec()).unwrap())
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Map stack of shape `(1, 1, h, w)` for the loss entry points.
fn to_unit_stack(data: &[f64], height: usize, width: usize, what: &str) -> PyResult<Arr> {
    let plane = to_array2(data, height, width, what)?;
    Ok(plane
        .into_shape_with_order(IxDyn(&[1, 1, height, width]))
        .unwrap())
}

fn parse_run_config(config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        None => Ok(RunConfig::default()),
        Some(text) => serde_json::from_str(text).map_err(value_err),
    }
}

/// One synthetic camouflage scene: a textured target blended into a matching
/// background, its mask, and a boundary-band edge target.
#[pyclass(frozen)]
struct Scene {
    #[pyo3(get)]
    name: String,
    #[pyo3(get)]
    size: usize,
    #[pyo3(get)]
    foreground_ratio: f64,
    /// `(y0, x0, y1, x1)`, half-open, of the salient non-target object.
    #[pyo3(get)]
    distractor_box: Option<(usize, usize, usize, usize)>,
    /// Flat `(3, size, size)` RGB in `[0, 1]`.
    #[pyo3(get)]
    image: Vec<f64>,
    /// Flat `(size, size)` binary target mask.
    #[pyo3(get)]
    mask: Vec<f64>,
    /// Flat `(size, size)` binary boundary band.
    #[pyo3(get)]
    edge: Vec<f64>,
}

impl Scene {
    fn from_sample(s: &SceneSample, size: usize) -> Self {
        Scene {
            name: s.name.clone(),
            size,
            foreground_ratio: s.meta.foreground_ratio,
            distractor_box: s.meta.distractor_box.map(|b| (b[0], b[1], b[2], b[3])),
            image: s.image.iter().copied().collect(),
            mask: flat(&s.mask),
            edge: flat(&s.edge),
        }
    }
}

fn scenes_from_seeds(seeds: &[u64], size: usize, scod: bool) -> PyResult<Vec<SceneSample>> {
    let cfg = GenConfig { size, scod, ..GenConfig::default() };
    cfg.validate().map_err(value_err)?;
    seeds
        .iter()
        .map(|&seed| gen_scene(seed, &cfg).map_err(value_err))
        .collect()
}

/// Deterministically generate one synthetic scene. `scod=True` adds a salient
/// distractor object and reports its bounding box.
#[pyfunction]
#[pyo3(signature = (seed, size = 128, scod = false))]
fn generate_scene(seed: u64, size: usize, scod: bool) -> PyResult<Scene> {
    let samples = scenes_from_seeds(&[seed], size, scod)?;
    Ok(Scene::from_sample(&samples[0], size))
}

/// Boundary band for a binary mask: thin zero-crossing trace dilated to a
/// two-pixel halo. Invariant under mask inversion.
#[pyfunction]
fn edge_targets(mask: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<f64>> {
    let m = to_array2(&mask, height, width, "mask")?;
    Ok(flat(&make_edge_targets(&m)))
}

/// All seven evaluation numbers for one prediction/annotation pair.
#[pyfunction]
fn evaluate(
    prediction: Vec<f64>,
    annotation: Vec<f64>,
    height: usize,
    width: usize,
) -> PyResult<HashMap<String, f64>> {
    let p = to_array2(&prediction, height, width, "prediction")?;
    let a = to_array2(&annotation, height, width, "annotation")?;
    let m = evaluate_pair(&p, &a).map_err(value_err)?;
    Ok(HashMap::from([
        ("s_measure".into(), m.s_measure),
        ("e_adaptive".into(), m.e_adaptive),
        ("e_mean".into(), m.e_mean),
        ("e_max".into(), m.e_max),
        ("weighted_f".into(), m.weighted_f),
        ("mean_f".into(), m.mean_f),
        ("mae".into(), m.mae),
    ]))
}

/// Full training objective for a single sample, reported term by term.
/// All maps are probabilities in `[0, 1]`; `edge_map=None` scores a model
/// without the edge pathway.
#[pyfunction]
#[pyo3(signature = (final_map, loc_map, mask, edge_gt, height, width, edge_map = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn loss_report(
    py: Python<'_>,
    final_map: Vec<f64>,
    loc_map: Vec<f64>,
    mask: Vec<f64>,
    edge_gt: Vec<f64>,
    height: usize,
    width: usize,
    edge_map: Option<Vec<f64>>,
    config: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let cfg: LossConfig = match config {
        None => LossConfig::default(),
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
    };
    cfg.validate().map_err(value_err)?;
    let final_p = to_unit_stack(&final_map, height, width, "final_map")?;
    let loc_p = to_unit_stack(&loc_map, height, width, "loc_map")?;
    let mask_a = to_unit_stack(&mask, height, width, "mask")?;
    let edge_a = to_unit_stack(&edge_gt, height, width, "edge_gt")?;
    let edge_p = edge_map
        .map(|e| to_unit_stack(&e, height, width, "edge_map"))
        .transpose()?;

    let tape = Tape::new();
    let (_, report) = total_loss(
        &cfg,
        edge_p.map(|e| tape.constant(e)),
        tape.constant(loc_p),
        tape.constant(final_p),
        &mask_a,
        &edge_a,
        false,
    );

    let out = PyDict::new(py);
    out.set_item("total", report.total)?;
    out.set_item("edge", report.edge)?;
    out.set_item("loc", report.loc)?;
    out.set_item("final", report.final_)?;
    out.set_item("edge_focal", report.edge_focal)?;
    out.set_item("edge_tv", report.edge_tv)?;
    out.set_item("loc_focal", report.loc_focal)?;
    out.set_item("loc_tversky", report.loc_tversky)?;
    out.set_item("final_focal", report.final_focal)?;
    out.set_item("final_tversky", report.final_tversky)?;
    out.set_item("final_edge_dice", report.final_edge_dice)?;
    out.set_item("instance_weights", report.instance_weights)?;
    Ok(out.into())
}

/// Names of the standard ablation grid, `full` first.
#[pyfunction]
fn ablation_names() -> Vec<String> {
    ablation_rows().into_iter().map(|(n, _)| n.to_string()).collect()
}

/// Train on deterministically generated scenes and write checkpoints plus a
/// step log under `out_dir`. Returns the run summary; reload the result with
/// `Model.from_checkpoint`.
#[pyfunction]
#[pyo3(signature = (seeds, out_dir, config = None, size = 48, scod = false, max_steps = None))]
fn train_on_seeds(
    py: Python<'_>,
    seeds: Vec<u64>,
    out_dir: &str,
    config: Option<&str>,
    size: usize,
    scod: bool,
    max_steps: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let cfg = parse_run_config(config)?;
    let scenes = scenes_from_seeds(&seeds, size, scod)?;
    let outcome = train(&cfg, &scenes, Path::new(out_dir), max_steps).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("steps_run", outcome.steps_run)?;
    out.set_item("epochs_run", outcome.epochs_run)?;
    out.set_item("best_monitor", outcome.best_monitor)?;
    out.set_item("lr_scale", outcome.lr_scale)?;
    out.set_item("per_step_total", outcome.per_step_total)?;
    out.set_item("monitor_history", outcome.monitor_history)?;
    out.set_item("best_checkpoint", outcome.best_checkpoint.display().to_string())?;
    out.set_item("last_checkpoint", outcome.last_checkpoint.display().to_string())?;
    out.set_item("log_path", outcome.log_path.display().to_string())?;
    Ok(out.into())
}

/// The segmentation network plus its parameters and preprocessing settings.
#[pyclass(name = "Model")]
struct PyModel {
    store: ParamStore,
    net: CoreModel,
    cfg: RunConfig,
}

#[pymethods]
impl PyModel {
    /// Fresh random initialization. `config` is a JSON run configuration;
    /// omitted fields keep their defaults.
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = parse_run_config(config)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = CoreModel::new(&mut store, &mut rng, cfg.model.clone()).map_err(value_err)?;
        Ok(PyModel { store, net, cfg })
    }

    /// Restore a trained model (configuration and weights) from a checkpoint.
    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let snap = checkpoint::load(Path::new(path)).map_err(value_err)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(snap.config.seed);
        let net =
            CoreModel::new(&mut store, &mut rng, snap.config.model.clone()).map_err(value_err)?;
        snap.restore_params(&mut store).map_err(value_err)?;
        Ok(PyModel { store, net, cfg: snap.config })
    }

    /// Run the full pipeline on one RGB image (flat `(3, height, width)`,
    /// values in `[0, 1]`) and return the three probability maps at the input
    /// resolution. `edge` is None when the edge pathway is ablated.
    fn predict(
        &self,
        py: Python<'_>,
        image: Vec<f64>,
        height: usize,
        width: usize,
    ) -> PyResult<Py<PyDict>> {
        let img = to_image(&image, height, width)?;
        let (final_map, edge_map, object_map) =
            predict_full(&self.net, &self.store, &img, &self.cfg.preprocess);
        let out = PyDict::new(py);
        out.set_item("final", flat(&final_map))?;
        out.set_item("edge", edge_map.as_ref().map(flat))?;
        out.set_item("object", flat(&object_map))?;
        out.set_item("height", height)?;
        out.set_item("width", width)?;
        Ok(out.into())
    }

    /// Total number of learnable scalars.
    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// All parameter tensor names, optionally filtered by prefix.
    #[pyo3(signature = (prefix = ""))]
    fn parameter_names(&self, prefix: &str) -> Vec<String> {
        self.store
            .ids_with_prefix(prefix)
            .into_iter()
            .map(|id| self.store.name(id).to_string())
            .collect()
    }

    /// The run configuration as JSON.
    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.cfg).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input={}, parameters={})",
            self.cfg.preprocess.size,
            self.store.num_scalars()
        )
    }
}

#[pymodule]
fn camonet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Scene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(edge_targets, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(loss_report, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_names, m)?)?;
    m.add_function(wrap_pyfunction!(train_on_seeds, m)?)?;
    Ok(())
}
