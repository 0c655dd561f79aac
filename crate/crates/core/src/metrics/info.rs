//! Histogram (plug-in) entropy and mutual information, in nats.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::FactorCodes;

/// Uniform-width binning of each column over its observed range. Bins are
/// half-open except the last; constant columns map to bin 0.
pub fn discretize_codes(codes: ArrayView2<'_, f64>, n_bins: usize) -> Array2<usize> {
    let n_bins = n_bins.max(1);
    let mut out = Array2::zeros(codes.dim());
    for (col, mut dst) in codes.columns().into_iter().zip(out.columns_mut()) {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !(hi > lo) {
            continue;
        }
        let width = hi - lo;
        for (d, &v) in dst.iter_mut().zip(col.iter()) {
            let b = ((v - lo) / width * n_bins as f64).floor();
            *d = (b.max(0.0) as usize).min(n_bins - 1);
        }
    }
    out
}

fn entropy_of_counts<I: IntoIterator<Item = usize>>(counts: I, n: usize) -> f64 {
    let n = n as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn entropy(values: ArrayView1<'_, usize>) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    entropy_of_counts(counts.into_values(), values.len())
}

pub fn joint_entropy(a: ArrayView1<'_, usize>, b: ArrayView1<'_, usize>) -> f64 {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b.iter()) {
        *counts.entry((x, y)).or_default() += 1;
    }
    entropy_of_counts(counts.into_values(), a.len())
}

/// `I(a; b) = H(a) + H(b) - H(a, b)`, clipped to `[0, min(H(a), H(b))]`.
pub fn mutual_information(a: ArrayView1<'_, usize>, b: ArrayView1<'_, usize>) -> f64 {
    let (ha, hb) = (entropy(a), entropy(b));
    (ha + hb - joint_entropy(a, b)).clamp(0.0, ha.min(hb))
}

/// Binned codes and per-column entropies shared by the MI-based metrics.
#[derive(Debug, Clone)]
pub struct MiTable {
    pub binned: Array2<usize>,
    /// `[D_code × K]`.
    pub mi: Array2<f64>,
    pub code_entropy: Vec<f64>,
    pub factor_entropy: Vec<f64>,
    factors: Array2<usize>,
}

impl MiTable {
    pub fn new(fc: &FactorCodes, n_bins: usize) -> Self {
        let binned = discretize_codes(fc.codes.view(), n_bins);
        let code_entropy: Vec<f64> = binned.columns().into_iter().map(entropy).collect();
        let factor_entropy: Vec<f64> = fc.factors.columns().into_iter().map(entropy).collect();
        let mut mi = Array2::zeros((binned.ncols(), fc.factors.ncols()));
        for (i, zc) in binned.columns().into_iter().enumerate() {
            for (k, yc) in fc.factors.columns().into_iter().enumerate() {
                let joint = joint_entropy(zc, yc);
                mi[[i, k]] = (code_entropy[i] + factor_entropy[k] - joint)
                    .clamp(0.0, code_entropy[i].min(factor_entropy[k]));
            }
        }
        MiTable {
            binned,
            mi,
            code_entropy,
            factor_entropy,
            factors: fc.factors.clone(),
        }
    }

    pub fn factor_column(&self, k: usize) -> ArrayView1<'_, usize> {
        self.factors.column(k)
    }
}

/// Plug-in MI between every discretized code dimension and every factor.
pub fn mutual_information_matrix(fc: &FactorCodes, n_bins: usize) -> Array2<f64> {
    MiTable::new(fc, n_bins).mi
}
