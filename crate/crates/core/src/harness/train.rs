//! The training loop: seeded validation split, per-step logging, gradient
//! clipping, plateau-scheduled updates, and best/last checkpoints.

use super::checkpoint;
use super::optim::{clip_grad_norm, AdamW, Plateau};
use super::RunConfig;
use crate::data::{make_batch, SceneSample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossReport};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Salts keep the split, the model init, and the epoch shuffles on
/// independent streams of the one run seed.
const SPLIT_SALT: u64 = 0x5eed_5911;
const EPOCH_SALT: u64 = 0x0e90_c4a7;

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub epochs_run: usize,
    /// Best monitored value (validation loss, or training loss when the
    /// dataset is too small to split).
    pub best_monitor: f64,
    pub lr_scale: f64,
    /// Total loss at every optimization step, in order.
    pub per_step_total: Vec<f64>,
    /// One monitored value per completed epoch.
    pub monitor_history: Vec<f64>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    event: &'static str,
    step: usize,
    epoch: usize,
    lr_scale: f64,
    grad_norm: f64,
    loss: &'a LossReport,
}

#[derive(Serialize)]
struct EpochRecord {
    event: &'static str,
    epoch: usize,
    monitor: f64,
    monitor_source: &'static str,
    improved: bool,
    reduced: bool,
    lr_scale: f64,
}

#[derive(Serialize)]
struct AbortRecord<'a> {
    event: &'static str,
    epoch: usize,
    step: usize,
    seed: u64,
    samples: &'a [String],
    loss: &'a LossReport,
}

/// Splits indices into (validation, training) deterministically from the
/// run seed. Either side collapsing to empty disables the split.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let val_n = (n as f64 * fraction).round() as usize;
    if val_n == 0 || val_n >= n {
        return (Vec::new(), idx);
    }
    let train = idx.split_off(val_n);
    (idx, train)
}

fn batch_total(
    model: &Model,
    store: &ParamStore,
    cfg: &RunConfig,
    samples: &[&SceneSample],
) -> (f64, LossReport) {
    let batch = make_batch(samples, &cfg.preprocess);
    let tape = Tape::new();
    let out = model.forward(store, tape.constant(batch.images.clone()));
    let (_, report) = total_loss(
        &cfg.loss,
        out.edge_prob,
        out.loc_prob,
        out.final_prob,
        &batch.masks,
        &batch.edges,
        model.toggles().no_clp,
    );
    (report.total, report)
}

fn mean_loss_over(
    model: &Model,
    store: &ParamStore,
    cfg: &RunConfig,
    samples: &[SceneSample],
    indices: &[usize],
) -> f64 {
    let mut sum = 0.0;
    for chunk in indices.chunks(cfg.batch_size) {
        let refs: Vec<&SceneSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (total, _) = batch_total(model, store, cfg, &refs);
        sum += total * refs.len() as f64;
    }
    sum / indices.len() as f64
}

/// Runs the full loop. `max_steps` caps optimization steps for smoke runs;
/// `None` trains for `cfg.epochs` epochs.
pub fn train(
    cfg: &RunConfig,
    samples: &[SceneSample],
    out_dir: &Path,
    max_steps: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Train("cannot train on an empty dataset".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let emit = |log: &mut std::io::BufWriter<std::fs::File>, line: String| -> Result<()> {
        writeln!(log, "{line}")?;
        Ok(())
    };

    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(&mut store, &mut init_rng, cfg.model.clone())?;
    if model.icg_implied() {
        emit(
            &mut log,
            "{\"event\":\"note\",\"text\":\"removing the localization pathway also disables image-based guidance\"}".into(),
        )?;
    }

    let (val_idx, train_idx) = split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let monitor_source: &'static str = if val_idx.is_empty() { "train" } else { "val" };

    let mut optimizer = AdamW::new(&store);
    let mut plateau = Plateau::new();
    let best_path = out_dir.join("best.ck");
    let last_path = out_dir.join("last.ck");

    let mut steps_run = 0usize;
    let mut epochs_run = 0usize;
    let mut per_step_total = Vec::new();
    let mut monitor_history = Vec::new();
    let mut best_saved = false;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        let mut erng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ EPOCH_SALT ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut erng);

        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if let Some(cap) = max_steps {
                if steps_run >= cap {
                    break 'epochs;
                }
            }
            let refs: Vec<&SceneSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = make_batch(&refs, &cfg.preprocess);
            let tape = Tape::new();
            let out = model.forward(&store, tape.constant(batch.images.clone()));
            let (loss, report) = total_loss(
                &cfg.loss,
                out.edge_prob,
                out.loc_prob,
                out.final_prob,
                &batch.masks,
                &batch.edges,
                model.toggles().no_clp,
            );
            if !report.total.is_finite() {
                let abort = AbortRecord {
                    event: "abort",
                    epoch,
                    step: steps_run,
                    seed: cfg.seed,
                    samples: &batch.names,
                    loss: &report,
                };
                emit(&mut log, serde_json::to_string(&abort).unwrap())?;
                log.flush()?;
                return Err(Error::Train(format!(
                    "non-finite loss at epoch {epoch} step {steps_run} (seed {}, batch: {})",
                    cfg.seed,
                    batch.names.join(", ")
                )));
            }
            store.zero_grads();
            tape.backward(loss);
            tape.accumulate_grads(&mut store);
            let grad_norm = clip_grad_norm(&mut store, cfg.grad_clip);
            optimizer.step(&mut store, &cfg.optimizer, plateau.scale, cfg.schedule.min_lr);
            store.zero_grads();

            let record = StepRecord {
                event: "step",
                step: steps_run,
                epoch,
                lr_scale: plateau.scale,
                grad_norm,
                loss: &report,
            };
            emit(&mut log, serde_json::to_string(&record).unwrap())?;
            epoch_sum += report.total * refs.len() as f64;
            epoch_count += refs.len();
            per_step_total.push(report.total);
            steps_run += 1;
        }
        if epoch_count == 0 {
            break;
        }

        let monitor = if val_idx.is_empty() {
            epoch_sum / epoch_count as f64
        } else {
            mean_loss_over(&model, &store, cfg, samples, &val_idx)
        };
        if !monitor.is_finite() {
            return Err(Error::Train(format!(
                "non-finite {monitor_source} loss after epoch {epoch} (seed {})",
                cfg.seed
            )));
        }
        let improved = monitor < plateau.best;
        let reduced = plateau.observe(monitor, &cfg.schedule);
        monitor_history.push(monitor);
        epochs_run = epoch + 1;
        emit(
            &mut log,
            serde_json::to_string(&EpochRecord {
                event: "epoch",
                epoch,
                monitor,
                monitor_source,
                improved,
                reduced,
                lr_scale: plateau.scale,
            })
            .unwrap(),
        )?;
        if improved {
            checkpoint::save(
                &best_path,
                &store,
                cfg,
                epoch,
                Some(monitor),
                plateau.scale,
                Some(&optimizer),
            )?;
            best_saved = true;
        }
    }

    let best_metric = if plateau.best.is_finite() { Some(plateau.best) } else { None };
    checkpoint::save(
        &last_path,
        &store,
        cfg,
        epochs_run,
        best_metric,
        plateau.scale,
        Some(&optimizer),
    )?;
    if !best_saved {
        // A run capped before its first epoch boundary still leaves a best
        // checkpoint so downstream commands have one to pick up.
        std::fs::copy(&last_path, &best_path)?;
    }
    log.flush()?;

    if !per_step_total.is_empty() {
        super::plot::line_plot(&out_dir.join("loss_curve.png"), &per_step_total, 640, 320)?;
    }

    Ok(TrainOutcome {
        steps_run,
        epochs_run,
        best_monitor: plateau.best,
        lr_scale: plateau.scale,
        per_step_total,
        monitor_history,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::synth::{gen_scene, GenConfig};
    use crate::model::ModelConfig;

    /// Small enough to train in seconds on one core.
    pub(crate) fn micro_run_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig {
            deep_channels: 12,
            mid_channels: 8,
            out_channels: 8,
            appearance_channels: 4,
            contrast_channels: 4,
            num_eems: 1,
            ..ModelConfig::default()
        };
        cfg.model.backbone.image_size = 28;
        cfg.model.backbone.patch_size = 7;
        cfg.model.backbone.embed_dim = 8;
        cfg.model.backbone.depth = 4;
        cfg.model.backbone.num_heads = 2;
        cfg.model.backbone.num_registers = 1;
        cfg.preprocess.size = 28;
        cfg.epochs = 2;
        cfg.batch_size = 4;
        cfg.seed = 5;
        cfg.val_fraction = 0.25;
        cfg
    }

    pub(crate) fn tiny_scenes(n: usize) -> Vec<SceneSample> {
        let gcfg = GenConfig { size: 32, ..GenConfig::default() };
        (0..n).map(|i| gen_scene(900 + i as u64, &gcfg).unwrap()).collect()
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (va, tra) = split_indices(10, 0.3, 7);
        let (vb, trb) = split_indices(10, 0.3, 7);
        assert_eq!(va, vb);
        assert_eq!(tra, trb);
        assert_eq!(va.len(), 3);
        let mut all: Vec<usize> = va.iter().chain(&tra).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // Different seed, different split.
        let (vc, _) = split_indices(10, 0.3, 8);
        assert_ne!(va, vc);
        // Too small to split.
        let (vd, trd) = split_indices(1, 0.5, 7);
        assert!(vd.is_empty());
        assert_eq!(trd.len(), 1);
    }

    #[test]
    fn empty_dataset_is_a_training_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = train(&micro_run_config(), &[], dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::Train(_)));
    }

    #[test]
    fn same_seed_reproduces_the_loss_curve() {
        let scenes = tiny_scenes(8);
        let cfg = micro_run_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = train(&cfg, &scenes, dir_a.path(), None).unwrap();
        let b = train(&cfg, &scenes, dir_b.path(), None).unwrap();
        assert!(!a.per_step_total.is_empty());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.per_step_total), bits(&b.per_step_total));
        assert_eq!(bits(&a.monitor_history), bits(&b.monitor_history));
    }

    #[test]
    fn artifacts_and_log_land_in_the_run_dir() {
        let scenes = tiny_scenes(8);
        let mut cfg = micro_run_config();
        cfg.epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &scenes, dir.path(), None).unwrap();
        assert_eq!(out.epochs_run, 1);
        // 6 training scenes in batches of 4 -> 2 steps.
        assert_eq!(out.steps_run, 2);
        assert!(out.best_checkpoint.exists());
        assert!(out.last_checkpoint.exists());
        assert!(dir.path().join("config.toml").exists());
        assert!(dir.path().join("loss_curve.png").exists());

        let text = std::fs::read_to_string(&out.log_path).unwrap();
        let mut steps = 0;
        let mut epochs = 0;
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            match v["event"].as_str().unwrap() {
                "step" => {
                    steps += 1;
                    assert!(v["loss"]["total"].is_number());
                    assert!(v["loss"]["final"].is_number());
                    assert!(v["grad_norm"].is_number());
                }
                "epoch" => {
                    epochs += 1;
                    assert_eq!(v["monitor_source"], "val");
                }
                _ => {}
            }
        }
        assert_eq!(steps, 2);
        assert_eq!(epochs, 1);

        // The last checkpoint restores into a fresh model of the same config.
        let snap = checkpoint::load(&out.last_checkpoint).unwrap();
        assert_eq!(snap.epoch, 1);
        assert_eq!(snap.config.seed, cfg.seed);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let _ = Model::new(&mut store, &mut rng, cfg.model.clone()).unwrap();
        snap.restore_params(&mut store).unwrap();
        let opt = snap.restore_optimizer(&store).unwrap();
        assert_eq!(opt.steps(), out.steps_run as u64);
    }

    #[test]
    fn step_cap_stops_early_but_still_checkpoints() {
        let scenes = tiny_scenes(8);
        let cfg = micro_run_config();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &scenes, dir.path(), Some(1)).unwrap();
        assert_eq!(out.steps_run, 1);
        assert!(out.best_checkpoint.exists());
        assert!(out.last_checkpoint.exists());
    }

    #[test]
    fn non_finite_loss_aborts_with_batch_diagnostics() {
        // NaN in a training target reaches the loss arithmetic directly.
        let mut scenes = tiny_scenes(8);
        for (i, s) in scenes.iter_mut().enumerate() {
            s.mask[(1, 1)] = f64::NAN;
            s.name = format!("poisoned{i}");
        }
        let cfg = micro_run_config();
        let dir = tempfile::tempdir().unwrap();
        let err = train(&cfg, &scenes, dir.path(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("poisoned"), "{msg}");
        assert!(msg.contains("seed 5"), "{msg}");
        let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert!(log.lines().any(|l| l.contains("\"abort\"") && l.contains("poisoned")));
    }
}
