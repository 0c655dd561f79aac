//! Cross-run comparison: mean ± sample std of the five scores, one row per
//! group of runs that differ only by seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tcgan::metrics::MetricReport;
use tcgan::trainer::Evaluation;

use crate::config::{ExperimentConfig, RESOLVED_CONFIG};
use crate::error::{CliError, Result};

pub const METRIC_NAMES: [&str; 5] = ["explicitness", "jemmig", "modularity", "sap", "z_diff"];

/// Latest full metric report of a run directory.
pub fn latest_report(run_dir: &Path) -> Result<MetricReport> {
    let dir = run_dir.join("metrics");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    for path in files.iter().rev() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let eval: Evaluation = serde_json::from_str(&text)
            .map_err(|e| CliError::io(path, format!("not a metric snapshot: {e}")))?;
        if let Some(report) = eval.report {
            return Ok(report);
        }
    }
    Err(CliError::io(&dir, "no full metric report in any snapshot"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub hash: String,
    pub lambda_mi: f64,
    pub beta_tc: f64,
    pub runs: Vec<PathBuf>,
    /// `(mean, sample std)` per metric, in [`METRIC_NAMES`] order.
    pub stats: [(f64, f64); 5],
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn group_runs(run_dirs: &[PathBuf]) -> Result<Vec<GroupRow>> {
    if run_dirs.is_empty() {
        return Err(CliError::Config("no run directories given".into()));
    }
    let mut groups: BTreeMap<String, (ExperimentConfig, Vec<(PathBuf, MetricReport)>)> =
        BTreeMap::new();
    for dir in run_dirs {
        let cfg = ExperimentConfig::load(&dir.join(RESOLVED_CONFIG))?;
        let report = latest_report(dir)?;
        groups
            .entry(cfg.group_hash())
            .or_insert_with(|| (cfg, Vec::new()))
            .1
            .push((dir.clone(), report));
    }
    Ok(groups
        .into_iter()
        .map(|(hash, (cfg, runs))| {
            let stats = std::array::from_fn(|m| {
                let v: Vec<f64> = runs.iter().map(|(_, r)| r.scores()[m].1).collect();
                mean_std(&v)
            });
            GroupRow {
                hash,
                lambda_mi: cfg.train.lambda_mi,
                beta_tc: cfg.train.beta_tc,
                runs: runs.into_iter().map(|(d, _)| d).collect(),
                stats,
            }
        })
        .collect())
}

pub fn format_table(rows: &[GroupRow]) -> String {
    let mut out = format!("{:<14}{:>8}{:>8}{:>6}", "group", "lambda", "beta", "runs");
    for name in METRIC_NAMES {
        out.push_str(&format!("{name:>18}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{:<14}{:>8}{:>8}{:>6}",
            row.hash,
            row.lambda_mi,
            row.beta_tc,
            row.runs.len()
        ));
        for (mean, std) in row.stats {
            out.push_str(&format!("{:>18}", format!("{mean:.4} ± {std:.4}")));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_run_set_is_rejected() {
        assert!(group_runs(&[]).is_err());
    }
}
