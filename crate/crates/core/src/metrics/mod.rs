//! Disentanglement metrics over `(codes, factors)` tables: Explicitness,
//! JEMMIG, Modularity, SAP and Z-diff, plus the histogram MI estimators they
//! share.

mod info;
pub mod linear;
mod scores;
mod zdiff;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use info::{
    discretize_codes, entropy, joint_entropy, mutual_information, mutual_information_matrix,
    MiTable,
};
pub use scores::{
    explicitness, explicitness_with, jemmig, jemmig_from_table, modularity,
    modularity_from_table, sap, sap_matrix, FactorScores,
};
pub use zdiff::{z_diff, z_diff_features, PairSampler, TablePairSampler, ZDiffScore};

/// Representation codes paired with ground-truth factor classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCodes {
    /// `[N × D_code]`.
    pub codes: Array2<f64>,
    /// `[N × K]` class indices.
    pub factors: Array2<usize>,
    pub factor_sizes: Vec<usize>,
}

impl FactorCodes {
    pub fn new(codes: Array2<f64>, factors: Array2<usize>, factor_sizes: Vec<usize>) -> Result<Self> {
        let n = codes.nrows();
        if n < 2 {
            return Err(Error::Metric(format!("need at least 2 rows, got {n}")));
        }
        if factors.nrows() != n {
            return Err(Error::Metric(format!(
                "{n} code rows vs {} factor rows",
                factors.nrows()
            )));
        }
        if codes.ncols() == 0 {
            return Err(Error::Metric("codes have no columns".into()));
        }
        if factors.ncols() != factor_sizes.len() {
            return Err(Error::Metric(format!(
                "{} factor columns vs {} factor sizes",
                factors.ncols(),
                factor_sizes.len()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric("codes contain non-finite values".into()));
        }
        for (k, (col, &size)) in factors.columns().into_iter().zip(&factor_sizes).enumerate() {
            if let Some(v) = col.iter().find(|&&v| v >= size) {
                return Err(Error::Metric(format!(
                    "factor {k} has value {v} outside [0, {size})"
                )));
            }
            if col.iter().all(|&v| v == col[0]) {
                return Err(Error::Metric(format!("factor {k} is constant")));
            }
        }
        Ok(FactorCodes {
            codes,
            factors,
            factor_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn code_width(&self) -> usize {
        self.codes.ncols()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSettings {
    pub n_bins: usize,
    pub seed: u64,
    /// Inverse L2 strength of the logistic classifiers.
    pub classifier_c: f64,
    pub train_fraction: f64,
    pub z_diff_votes: usize,
    pub z_diff_pairs: usize,
    /// Images encoded for evaluation (the whole dataset if smaller).
    pub eval_samples: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            n_bins: 20,
            seed: 0,
            classifier_c: 1.0,
            train_fraction: 0.7,
            z_diff_votes: 800,
            z_diff_pairs: 64,
            eval_samples: 5000,
        }
    }
}

impl MetricSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidArgument(format!("n_bins must be ≥ 2, got {}", self.n_bins)));
        }
        if !(self.classifier_c > 0.0) {
            return Err(Error::InvalidArgument("classifier_c must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train_fraction must lie in (0, 1)".into()));
        }
        if self.z_diff_votes < 2 || self.z_diff_pairs == 0 || self.eval_samples < 2 {
            return Err(Error::InvalidArgument(
                "z_diff_votes ≥ 2, z_diff_pairs ≥ 1 and eval_samples ≥ 2 are required".into(),
            ));
        }
        Ok(())
    }

    /// Independent generator for one metric, derived from the shared seed.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Record of how the scores were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    #[serde(flatten)]
    pub metric: MetricSettings,
    pub n_samples: usize,
    pub classifier: String,
    pub entropy_estimator: String,
    pub binning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFactor {
    pub explicitness: Vec<f64>,
    pub jemmig: Vec<f64>,
    pub sap: Vec<f64>,
    /// Per-code-dimension scores.
    pub modularity: Vec<f64>,
    /// Test recall of each usable fixed factor.
    pub z_diff: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub explicitness: f64,
    pub jemmig: f64,
    pub modularity: f64,
    pub sap: f64,
    pub z_diff: f64,
    pub per_factor: PerFactor,
    pub settings: ReportSettings,
}

impl MetricReport {
    pub fn scores(&self) -> [(&'static str, f64); 5] {
        [
            ("explicitness", self.explicitness),
            ("jemmig", self.jemmig),
            ("modularity", self.modularity),
            ("sap", self.sap),
            ("z_diff", self.z_diff),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table of the five scores.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.scores() {
            out.push_str(&format!("{name:<14}{v:>8.4}\n"));
        }
        out
    }
}

const EXPLICITNESS_STREAM: u64 = 1;
const Z_DIFF_STREAM: u64 = 2;

/// Explicitness with the classifier settings and seed stream `full_report` uses.
pub fn explicitness_for(fc: &FactorCodes, settings: &MetricSettings) -> Result<FactorScores> {
    explicitness_with(
        fc,
        settings.classifier_c,
        settings.train_fraction,
        &mut settings.rng(EXPLICITNESS_STREAM),
    )
}

/// All five metrics with one seed and one MI table.
pub fn full_report(
    fc: &FactorCodes,
    pairs: &dyn PairSampler,
    settings: &MetricSettings,
) -> Result<MetricReport> {
    settings.validate()?;
    let table = MiTable::new(fc, settings.n_bins);
    let exp = explicitness_for(fc, settings)?;
    let jem = jemmig_from_table(&table, settings.n_bins)?;
    let (modularity, per_dim) = modularity_from_table(&table)?;
    let sap = sap(fc);
    let zd = z_diff(
        pairs,
        settings.z_diff_votes,
        settings.z_diff_pairs,
        settings.classifier_c,
        settings.train_fraction,
        &mut settings.rng(Z_DIFF_STREAM),
    )?;
    Ok(MetricReport {
        explicitness: exp.mean,
        jemmig: jem.mean,
        modularity,
        sap: sap.mean,
        z_diff: zd.accuracy,
        per_factor: PerFactor {
            explicitness: exp.per_factor,
            jemmig: jem.per_factor,
            sap: sap.per_factor,
            modularity: per_dim,
            z_diff: zd.recall,
        },
        settings: ReportSettings {
            metric: settings.clone(),
            n_samples: fc.len(),
            classifier: format!("multinomial logistic regression, L2, C={}", settings.classifier_c),
            entropy_estimator: "plug-in histogram, no bias correction".into(),
            binning: format!("{} uniform-width bins per code dimension", settings.n_bins),
        },
    })
}
