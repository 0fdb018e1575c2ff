//! Command-line workbench: train, evaluate, predict, generate synthetic
//! scenes, build edge annotations, and run the component-removal study.

use camonet::data::synth::{write_dataset, GenConfig};
use camonet::data::{load_dataset, load_mask, load_rgb, make_edge_targets, save_gray};
use camonet::error::{Error, Result};
use camonet::harness::eval::{evaluate_model, predict_to_dir, PredictOptions};
use camonet::harness::train::train;
use camonet::harness::{ablation_rows, checkpoint, output_root, RunConfig};
use camonet::model::Model;
use camonet::params::ParamStore;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "camonet",
    about = "Camouflaged-object detection workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on an Image/GT dataset
    Train(TrainArgs),
    /// Score a checkpoint over a dataset (per-image CSV + aggregate JSON)
    Eval(EvalArgs),
    /// Write prediction maps for a directory of images
    Predict(PredictArgs),
    /// Generate a synthetic camouflage dataset
    GenSynth(GenSynthArgs),
    /// Precompute boundary-band annotations for a dataset's masks
    MakeEdges(MakeEdgesArgs),
    /// Train every component-removal row briefly and report parameter census
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. --set optimizer.decoder_lr=2e-4
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::from_file(path, &self.set),
            None => RunConfig::from_toml("", &self.set),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root containing Image/ and GT/ (Edge/ is used when present)
    #[arg(long)]
    data: PathBuf,
    /// Run directory (default: <output root>/train)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many optimization steps
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root containing Image/ and GT/
    #[arg(long)]
    data: PathBuf,
    /// Report directory (default: <output root>/eval)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override configuration keys from the checkpoint, e.g. --set e_headline="max"
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of input images (or a dataset root with an Image/ folder)
    #[arg(long)]
    images: PathBuf,
    /// Output directory (default: <output root>/predict)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the edge and localization maps
    #[arg(long)]
    emit_intermediate: bool,
    /// Also write input/prediction side-by-side panels
    #[arg(long)]
    figures: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Dataset root to create (Image/, GT/, Edge/, manifest.json)
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Seed of the first scene; scene i uses seed_start + i
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    /// Scene resolution
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Add a salient distractor object outside the annotation
    #[arg(long)]
    scod: bool,
    /// Foreground brightness offset against the background texture
    #[arg(long, default_value_t = 0.08)]
    offset: f64,
    /// Distractor contrast against the background
    #[arg(long, default_value_t = 0.6)]
    contrast: f64,
}

#[derive(Args)]
struct MakeEdgesArgs {
    /// Dataset root containing GT/; writes Edge/ beside it
    #[arg(long)]
    data: PathBuf,
    /// Regenerate annotations that already exist
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root containing Image/ and GT/
    #[arg(long)]
    data: PathBuf,
    /// Study directory (default: <output root>/ablate)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optimization steps per row
    #[arg(long, default_value_t = 1)]
    max_steps: usize,
    /// Comma-separated subset of rows (default: all)
    #[arg(long)]
    rows: Option<String>,
    /// Score each row over the dataset after its short training run
    #[arg(long)]
    eval: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("camonet: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Predict(args) => cmd_predict(args),
        Cmd::GenSynth(args) => cmd_gen_synth(args),
        Cmd::MakeEdges(args) => cmd_make_edges(args),
        Cmd::Ablate(args) => cmd_ablate(args),
    }
}

fn resolve_out(flag: Option<PathBuf>, leaf: &str) -> PathBuf {
    flag.unwrap_or_else(|| output_root(None).join(leaf))
}

fn load_samples(root: &Path) -> Result<Vec<camonet::data::SceneSample>> {
    let (samples, report) = load_dataset(root)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "dataset {}: {} samples loaded, {} skipped",
        root.display(),
        report.loaded,
        report.skipped
    );
    Ok(samples)
}

/// Rebuilds the model a checkpoint was trained with and loads its weights.
fn restore_model(path: &Path, overrides: &[String]) -> Result<(Model, ParamStore, RunConfig)> {
    let snap = checkpoint::load(path)?;
    let cfg = if overrides.is_empty() {
        snap.config.clone()
    } else {
        RunConfig::from_toml(&snap.config.to_toml()?, overrides)?
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(&mut store, &mut rng, cfg.model.clone())?;
    snap.restore_params(&mut store)?;
    Ok((model, store, cfg))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let samples = load_samples(&args.data)?;
    let out = resolve_out(args.out, "train");
    let outcome = train(&cfg, &samples, &out, args.max_steps)?;
    println!(
        "trained {} steps over {} epochs; best monitored loss {:.6}",
        outcome.steps_run, outcome.epochs_run, outcome.best_monitor
    );
    println!("best checkpoint: {}", outcome.best_checkpoint.display());
    println!("last checkpoint: {}", outcome.last_checkpoint.display());
    println!("step log: {}", outcome.log_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, store, cfg) = restore_model(&args.checkpoint, &args.set)?;
    let samples = load_samples(&args.data)?;
    let out = resolve_out(args.out, "eval");
    let outcome = evaluate_model(&model, &store, &samples, &cfg.preprocess, cfg.e_headline, &out)?;
    let m = &outcome.summary.mean;
    println!("scored {} images", outcome.summary.count);
    println!(
        "S {:.4}  E(adp) {:.4}  E(mean) {:.4}  E(max) {:.4}  wF {:.4}  mF {:.4}  MAE {:.4}",
        m.s_measure, m.e_adaptive, m.e_mean, m.e_max, m.weighted_f, m.mean_f, m.mae
    );
    println!("per-image report: {}", outcome.csv_path.display());
    println!("aggregate report: {}", outcome.json_path.display());
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dir = if dir.join("Image").is_dir() { dir.join("Image") } else { dir.to_path_buf() };
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                found.push((stem.to_string(), path.clone()));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::data(format!("no images found under {}", dir.display())));
    }
    Ok(found)
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, store, cfg) = restore_model(&args.checkpoint, &args.set)?;
    let mut inputs = Vec::new();
    for (stem, path) in list_images(&args.images)? {
        inputs.push((stem, load_rgb(&path)?));
    }
    let out = resolve_out(args.out, "predict");
    let opts = PredictOptions {
        emit_intermediate: args.emit_intermediate,
        figures: args.figures,
    };
    let written = predict_to_dir(&model, &store, &inputs, &cfg.preprocess, &out, opts)?;
    println!("wrote {} prediction maps to {}", written.len(), out.display());
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let cfg = GenConfig {
        size: args.size,
        scod: args.scod,
        camouflage_offset: args.offset,
        distractor_contrast: args.contrast,
        ..GenConfig::default()
    };
    let seeds: Vec<u64> = (0..args.count as u64).map(|i| args.seed_start + i).collect();
    let manifest = write_dataset(&args.out, &seeds, &cfg)?;
    println!(
        "wrote {} scenes (size {}, scod {}) under {}",
        manifest.items.len(),
        args.size,
        args.scod,
        args.out.display()
    );
    Ok(())
}

fn cmd_make_edges(args: MakeEdgesArgs) -> Result<()> {
    let gt_dir = args.data.join("GT");
    if !gt_dir.is_dir() {
        return Err(Error::data(format!("{} has no GT directory", args.data.display())));
    }
    let edge_dir = args.data.join("Edge");
    std::fs::create_dir_all(&edge_dir)?;
    let mut written = 0usize;
    let mut kept = 0usize;
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&gt_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push((stem.to_string(), path.clone()));
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::data(format!("no masks found under {}", gt_dir.display())));
    }
    for (stem, path) in stems {
        let target = edge_dir.join(format!("{stem}.png"));
        if target.exists() && !args.force {
            kept += 1;
            continue;
        }
        let mask = load_mask(&path)?;
        save_gray(&target, &make_edge_targets(&mask))?;
        written += 1;
    }
    println!("edge annotations: {written} written, {kept} already present");
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let base = args.cfg.load()?;
    let samples = load_samples(&args.data)?;
    let out = resolve_out(args.out, "ablate");
    std::fs::create_dir_all(&out)?;

    let selected: Vec<&str> = match &args.rows {
        Some(list) => list.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).collect(),
        None => Vec::new(),
    };
    let all = ablation_rows();
    let rows: Vec<_> = if selected.is_empty() {
        all
    } else {
        for name in &selected {
            if !all.iter().any(|(n, _)| n == name) {
                return Err(Error::config(format!("unknown study row '{name}'")));
            }
        }
        all.into_iter().filter(|(n, _)| selected.contains(n)).collect()
    };

    let mut summary = Vec::new();
    for (name, toggles) in rows {
        let mut cfg = base.clone();
        cfg.model.ablation = toggles;
        let row_dir = out.join(name);

        // A separate instantiation reports the parameter census for the row.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(&mut store, &mut rng, cfg.model.clone())?;
        let census = store.census(2);
        let icg_params: usize = census
            .iter()
            .filter(|(k, _)| k.starts_with("context.icg"))
            .map(|(_, v)| v)
            .sum();
        let note = if model.icg_implied() {
            " (removing the localization pathway also disables guidance)"
        } else {
            ""
        };

        let outcome = train(&cfg, &samples, &row_dir, Some(args.max_steps))?;
        let first_loss = outcome.per_step_total.first().copied().unwrap_or(f64::NAN);
        println!(
            "row {name}: {} params, {} guidance params, {} steps, first-step loss {:.4}{note}",
            store.num_scalars(),
            icg_params,
            outcome.steps_run,
            first_loss
        );

        let eval_headline = if args.eval {
            // Score with the row's trained weights; the census model shares
            // the parameter layout, so they restore straight into its store.
            let snap = checkpoint::load(&outcome.last_checkpoint)?;
            snap.restore_params(&mut store)?;
            let scored = evaluate_model(
                &model,
                &store,
                &samples,
                &cfg.preprocess,
                cfg.e_headline,
                &row_dir.join("eval"),
            )?;
            println!(
                "row {name}: headline E {:.4}, MAE {:.4}",
                scored.headline, scored.summary.mean.mae
            );
            Some(scored.headline)
        } else {
            None
        };

        summary.push(serde_json::json!({
            "row": name,
            "params": store.num_scalars(),
            "guidance_params": icg_params,
            "steps": outcome.steps_run,
            "first_step_loss": first_loss,
            "guidance_implied_off": model.icg_implied(),
            "headline_e": eval_headline,
        }));
    }
    let path = out.join("rows.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())?;
    println!("study summary: {}", path.display());
    Ok(())
}
