//! Commands behind the `tcgan` binary: train, eval, traverse and report.

pub mod config;
pub mod error;
pub mod report;
pub mod traverse;

use std::path::{Path, PathBuf};

use tcgan::data::FactorDataset;
use tcgan::metrics::{MetricReport, MetricSettings};
use tcgan::nets::NetworkBundle;
use tcgan::trainer::{self, eval_indices, Representation, TrainOptions, TrainState};

pub use config::{DatasetConfig, ExperimentConfig, RESOLVED_CONFIG};
pub use error::{CliError, Result};
pub use traverse::{TraversalSpec, Variable};

/// Outcome of a finished training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub steps: u64,
    pub best_explicitness: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Trains from a config file. `seed` and `out` override the file's values.
pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<TrainSummary> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    train_config(&cfg)
}

pub fn train_config(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let dataset = cfg.dataset.load()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let resolved = dir.join(RESOLVED_CONFIG);
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| CliError::io(&resolved, e))?;
    let opts = TrainOptions {
        arch: cfg.arch.clone(),
        metrics: cfg.metrics.clone(),
        output_dir: dir.clone(),
    };
    let state = trainer::train(&dataset, &cfg.latent, &cfg.train, &opts)?;
    Ok(TrainSummary {
        output_dir: dir.clone(),
        steps: state.step,
        best_explicitness: state.best_explicitness,
        best_checkpoint: state.best_checkpoint_path,
    })
}

/// Networks of a checkpoint, without optimizer state.
pub fn load_networks(checkpoint: &Path) -> Result<NetworkBundle> {
    Ok(TrainState::load(checkpoint)?.bundle)
}

fn check_profile(bundle: &NetworkBundle, cfg: &ExperimentConfig, dataset: &FactorDataset) -> Result<()> {
    if bundle.spec != cfg.latent {
        return Err(CliError::Config(format!(
            "profile mismatch: checkpoint latent {:?}, config latent {:?}",
            bundle.spec, cfg.latent
        )));
    }
    if bundle.shape != dataset.image_shape() {
        return Err(CliError::Config(format!(
            "profile mismatch: checkpoint images {:?}, dataset images {:?}",
            bundle.shape,
            dataset.image_shape()
        )));
    }
    Ok(())
}

/// All five metrics of `rep` on the dataset's evaluation subsample.
pub fn evaluate_on(rep: &dyn Representation, dataset: &FactorDataset, settings: &MetricSettings) -> Result<MetricReport> {
    let rows = eval_indices(dataset.len(), settings);
    Ok(trainer::evaluate(rep, dataset, &rows, settings)?)
}

/// Default report location: next to the checkpoint.
pub fn default_report_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    checkpoint.with_file_name(format!("{stem}_report.json"))
}

/// Evaluates a checkpoint on the config's dataset and writes the report.
pub fn cmd_eval(
    checkpoint: &Path,
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(MetricReport, PathBuf)> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.metrics.seed = s;
    }
    let bundle = load_networks(checkpoint)?;
    let dataset = cfg.dataset.load()?;
    check_profile(&bundle, &cfg, &dataset)?;
    let report = evaluate_on(&bundle, &dataset, &cfg.metrics)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| default_report_path(checkpoint));
    std::fs::write(&path, report.to_json()).map_err(|e| CliError::io(&path, e))?;
    Ok((report, path))
}

/// Writes a traversal grid of the checkpoint's generator to `out`.
pub fn cmd_traverse(checkpoint: &Path, spec: &TraversalSpec, out: &Path) -> Result<()> {
    let bundle = load_networks(checkpoint)?;
    let grid = traverse::traversal_grid(&bundle, spec)?;
    traverse::save_png(&grid, out)
}

/// Groups run directories and formats the comparison table.
pub fn cmd_report(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let rows = report::group_runs(run_dirs)?;
    let table = report::format_table(&rows);
    if let Some(path) = out {
        std::fs::write(path, &table).map_err(|e| CliError::io(path, e))?;
    }
    Ok(table)
}
