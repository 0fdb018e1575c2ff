//! Experiment harness: run configuration, optimization, checkpointing,
//! the training loop, evaluation, and report plots.

pub mod checkpoint;
pub mod eval;
pub mod optim;
pub mod plot;
pub mod train;

use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::EHeadline;
use crate::model::{AblationToggles, ModelConfig};
use optim::{OptimConfig, PlateauConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that supplies the default output root.
pub const OUT_ENV: &str = "CAMONET_OUT";

/// Everything a run needs, nested so the TOML file mirrors the structure:
/// `[model]`, `[model.backbone]`, `[preprocess]`, `[loss]`, `[optimizer]`,
/// `[schedule]`, and top-level loop settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub loss: LossConfig,
    pub optimizer: OptimConfig,
    pub schedule: PlateauConfig,
    /// Global gradient-norm bound applied before every optimizer step.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the training set held out for plateau monitoring.
    pub val_fraction: f64,
    /// Which alignment-measure column headlines aggregate reports.
    pub e_headline: EHeadline,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            preprocess: PreprocessConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimConfig::default(),
            schedule: PlateauConfig::default(),
            grad_clip: 1.0,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.1,
            e_headline: EHeadline::Mean,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preprocess.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        if self.preprocess.size != self.model.backbone.image_size {
            return Err(Error::config(format!(
                "preprocess size {} does not match the encoder's input size {}",
                self.preprocess.size, self.model.backbone.image_size
            )));
        }
        Ok(())
    }

    /// Parse a TOML document (empty string allowed: all defaults), then
    /// apply `key.path=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value = if text.trim().is_empty() {
            toml::Value::Table(Default::default())
        } else {
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::config(format!("config parse error: {e}")))?;
            toml::Value::Table(table)
        };
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::config(format!("config field error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config encode: {e}")))
    }
}

/// Applies one `dotted.path=value` override in place, creating intermediate
/// tables as needed. The value text is parsed as TOML (so bools, numbers,
/// and arrays work); anything unparseable is taken as a bare string.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{entry}' is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("override '{entry}' has an empty key segment")));
    }
    let parsed = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override '{entry}' descends into a non-table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override '{entry}' descends into a non-table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

/// Where run artifacts land: explicit flag, else the environment variable,
/// else `./runs`.
pub fn output_root(cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var(OUT_ENV) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    PathBuf::from("runs")
}

/// The component-removal study grid: one named toggle set per row.
pub fn ablation_rows() -> Vec<(&'static str, AblationToggles)> {
    let base = AblationToggles::default();
    vec![
        ("full", base),
        ("no_erp", AblationToggles { no_erp: true, ..base }),
        ("no_clp", AblationToggles { no_clp: true, ..base }),
        ("no_icg", AblationToggles { no_icg: true, ..base }),
        ("random_eem_init", AblationToggles { random_eem_init: true, ..base }),
        ("bilinear_upsample", AblationToggles { bilinear_upsample: true, ..base }),
        ("plain_backbone", AblationToggles { plain_backbone: true, ..base }),
    ]
}
