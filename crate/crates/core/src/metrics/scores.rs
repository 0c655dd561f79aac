use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linear::{r_squared, roc_auc, LogisticRegression};
use super::{FactorCodes, MiTable};
use crate::error::{Error, Result};

/// A mean score and its per-factor parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    pub mean: f64,
    pub per_factor: Vec<f64>,
}

impl FactorScores {
    fn from_parts(per_factor: Vec<f64>) -> Self {
        let mean = per_factor.iter().sum::<f64>() / per_factor.len().max(1) as f64;
        FactorScores {
            mean: mean.clamp(0.0, 1.0),
            per_factor,
        }
    }
}

/// Top two values of an iterator (the second is 0 if there is only one).
fn top_two(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::NEG_INFINITY, 0.0f64), |(a, b), v| {
        if v > a {
            (v, if a.is_finite() { a } else { b })
        } else {
            (a, b.max(v))
        }
    })
}

/// Explicitness with the default classifier settings.
pub fn explicitness(fc: &FactorCodes, seed: u64) -> Result<FactorScores> {
    super::explicitness_for(
        fc,
        &super::MetricSettings {
            seed,
            ..Default::default()
        },
    )
}

fn split<R: Rng + ?Sized>(n: usize, train_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

fn covers_all_classes(fc: &FactorCodes, train: &[usize]) -> bool {
    fc.factors.columns().into_iter().all(|col| {
        let all: BTreeSet<usize> = col.iter().copied().collect();
        let seen: BTreeSet<usize> = train.iter().map(|&i| col[i]).collect();
        all == seen
    })
}

/// Mean one-vs-rest test AUC of a logistic classifier predicting each factor
/// from the full code vector.
pub fn explicitness_with(
    fc: &FactorCodes,
    c: f64,
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FactorScores> {
    let (mut train, mut test) = split(fc.len(), train_fraction, rng);
    if !covers_all_classes(fc, &train) {
        (train, test) = split(fc.len(), train_fraction, rng);
        if !covers_all_classes(fc, &train) {
            return Err(Error::Metric(
                "a factor class is missing from the training split twice".into(),
            ));
        }
    }
    let x_train = fc.codes.select(Axis(0), &train);
    let x_test = fc.codes.select(Axis(0), &test);
    let mut per_factor = Vec::with_capacity(fc.n_factors());
    for (k, col) in fc.factors.columns().into_iter().enumerate() {
        let classes: Vec<usize> = col.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let label = |v: usize| classes.binary_search(&v).expect("class present");
        let y_train: Vec<usize> = train.iter().map(|&i| label(col[i])).collect();
        let y_test: Vec<usize> = test.iter().map(|&i| label(col[i])).collect();
        let model = LogisticRegression::fit(x_train.view(), &y_train, classes.len(), c);
        let proba = model.predict_proba(x_test.view());
        let aucs: Vec<f64> = (0..classes.len())
            .filter_map(|j| {
                let positive: Vec<bool> = y_test.iter().map(|&y| y == j).collect();
                roc_auc(&proba.column(j).to_vec(), &positive)
            })
            .collect();
        if aucs.is_empty() {
            return Err(Error::Metric(format!(
                "factor {k}: test split has a single class"
            )));
        }
        per_factor.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
    }
    Ok(FactorScores::from_parts(per_factor))
}

pub fn jemmig(fc: &FactorCodes, n_bins: usize) -> Result<FactorScores> {
    jemmig_from_table(&MiTable::new(fc, n_bins), n_bins)
}

/// `1 - (H(z*, y) - I(z*; y) + I(z**; y)) / (H(y) + ln B)` per factor.
pub fn jemmig_from_table(table: &MiTable, n_bins: usize) -> Result<FactorScores> {
    let d = table.mi.nrows();
    if d < 2 {
        return Err(Error::Metric(format!("JEMMIG needs ≥ 2 code dimensions, got {d}")));
    }
    let ln_b = (n_bins as f64).ln();
    let mut per_factor = Vec::with_capacity(table.mi.ncols());
    for (k, mi) in table.mi.columns().into_iter().enumerate() {
        let best = (0..d).fold(0, |b, i| if mi[i] > mi[b] { i } else { b });
        let second = (0..d)
            .filter(|&i| i != best)
            .map(|i| mi[i])
            .fold(0.0f64, f64::max);
        let joint = super::joint_entropy(table.binned.column(best), table.factor_column(k));
        let raw = joint - mi[best] + second;
        let score = 1.0 - raw / (table.factor_entropy[k] + ln_b);
        per_factor.push(score.clamp(0.0, 1.0));
    }
    Ok(FactorScores::from_parts(per_factor))
}

pub fn modularity(fc: &FactorCodes, n_bins: usize) -> Result<f64> {
    modularity_from_table(&MiTable::new(fc, n_bins)).map(|(m, _)| m)
}

/// Mean over code dimensions of `1 - Σ_{k≠k*} m_k² / (θ² (K-1))`, and the
/// per-dimension values.
pub fn modularity_from_table(table: &MiTable) -> Result<(f64, Vec<f64>)> {
    let k = table.mi.ncols();
    if k < 2 {
        return Err(Error::Metric(format!("modularity needs ≥ 2 factors, got {k}")));
    }
    let per_dim: Vec<f64> = table
        .mi
        .rows()
        .into_iter()
        .map(|m| {
            let best = (0..k).fold(0, |b, j| if m[j] > m[b] { j } else { b });
            let theta = m[best];
            if theta <= 1e-12 {
                return 0.0;
            }
            let dev: f64 = (0..k).filter(|&j| j != best).map(|j| m[j] * m[j]).sum();
            (1.0 - dev / (theta * theta * (k - 1) as f64)).clamp(0.0, 1.0)
        })
        .collect();
    let mean = per_dim.iter().sum::<f64>() / per_dim.len() as f64;
    Ok((mean.clamp(0.0, 1.0), per_dim))
}

/// `[D_code × K]` R² of each code dimension regressed onto each factor level.
pub fn sap_matrix(fc: &FactorCodes) -> Array2<f64> {
    let factors = fc.factors.mapv(|v| v as f64);
    let mut s = Array2::zeros((fc.code_width(), fc.n_factors()));
    for (i, z) in fc.codes.columns().into_iter().enumerate() {
        for (k, y) in factors.columns().into_iter().enumerate() {
            s[[i, k]] = r_squared(z, y);
        }
    }
    s
}

/// Per factor, top minus second-best R² over code dimensions.
pub fn sap(fc: &FactorCodes) -> FactorScores {
    let s = sap_matrix(fc);
    let per_factor = s
        .columns()
        .into_iter()
        .map(|col| {
            let (a, b) = top_two(col.iter().copied());
            (a - b).clamp(0.0, 1.0)
        })
        .collect();
    FactorScores::from_parts(per_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    /// Independent factors on a full grid, codes equal to the factor levels.
    fn grid(sizes: &[usize]) -> Array2<usize> {
        let n: usize = sizes.iter().product();
        Array2::from_shape_fn((n, sizes.len()), |(i, k)| {
            let stride: usize = sizes[k + 1..].iter().product();
            (i / stride) % sizes[k]
        })
    }

    fn identity(sizes: &[usize]) -> FactorCodes {
        let f = grid(sizes);
        FactorCodes::new(f.mapv(|v| v as f64), f, sizes.to_vec()).unwrap()
    }

    fn onehots(sizes: &[usize]) -> FactorCodes {
        let f = grid(sizes);
        let width: usize = sizes.iter().sum();
        let codes = Array2::from_shape_fn((f.nrows(), width), |(i, c)| {
            let mut off = 0;
            for (k, &s) in sizes.iter().enumerate() {
                if c < off + s {
                    return (f[[i, k]] == c - off) as u8 as f64;
                }
                off += s;
            }
            unreachable!()
        });
        FactorCodes::new(codes, f, sizes.to_vec()).unwrap()
    }

    fn noise(n: usize, d: usize, sizes: &[usize], seed: u64) -> FactorCodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal));
        let factors = Array2::from_shape_fn((n, sizes.len()), |(_, k)| rng.random_range(0..sizes[k]));
        FactorCodes::new(codes, factors, sizes.to_vec()).unwrap()
    }

    #[test]
    fn explicitness_oracles() {
        let onehot = onehots(&[8, 8, 4]);
        assert!(explicitness(&onehot, 0).unwrap().mean >= 0.99);
        let chance = explicitness(&noise(5000, 10, &[8, 8, 4], 1), 0).unwrap().mean;
        assert!((chance - 0.5).abs() <= 0.05, "{chance}");
    }

    #[test]
    fn explicitness_tolerates_useless_dimensions() {
        let base = onehots(&[8, 8, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let extra = Array2::from_shape_simple_fn((base.len(), 5), || rng.sample::<f64, _>(StandardNormal));
        let codes = ndarray::concatenate![Axis(1), base.codes, extra];
        let padded = FactorCodes::new(codes, base.factors.clone(), base.factor_sizes.clone()).unwrap();
        let a = explicitness(&base, 0).unwrap().mean;
        let b = explicitness(&padded, 0).unwrap().mean;
        assert!(a - b <= 0.02, "{a} -> {b}");
    }

    #[test]
    fn jemmig_identity_and_ordering() {
        let id = identity(&[8, 8, 4]);
        let s_id = jemmig(&id, 20).unwrap().mean;
        assert!((s_id - 1.0).abs() < 1e-9, "{s_id}");
        let ind = noise(256, 3, &[8, 8, 4], 3);
        let s_ind = jemmig(&ind, 20).unwrap().mean;
        assert!(s_id > s_ind + 0.1, "{s_id} vs {s_ind}");

        let dup = ndarray::concatenate![Axis(1), id.codes, id.codes.column(0).insert_axis(Axis(1))];
        let dup = FactorCodes::new(dup, id.factors.clone(), id.factor_sizes.clone()).unwrap();
        assert!(jemmig(&dup, 20).unwrap().mean < s_id);

        let one = FactorCodes::new(id.codes.slice(ndarray::s![.., ..1]).to_owned(), id.factors.clone(), id.factor_sizes.clone()).unwrap();
        assert!(jemmig(&one, 20).is_err());
    }

    #[test]
    fn modularity_cases() {
        assert!((modularity(&identity(&[8, 8, 4]), 20).unwrap() - 1.0).abs() < 1e-9);
        assert!(modularity(&onehots(&[4, 3, 5]), 20).unwrap() >= 0.95);
        // one dim equally informative about both factors
        let f = grid(&[2, 2]);
        let both = f.map_axis(Axis(1), |r| (r[0] * 2 + r[1]) as f64).insert_axis(Axis(1));
        let fc = FactorCodes::new(both, f.clone(), vec![2, 2]).unwrap();
        let (_, per_dim) = modularity_from_table(&MiTable::new(&fc, 20)).unwrap();
        assert!(per_dim[0].abs() < 1e-12);
        let single = FactorCodes::new(f.column(0).mapv(|v| v as f64).insert_axis(Axis(1)), f.slice(ndarray::s![.., ..1]).to_owned(), vec![2]).unwrap();
        assert!(modularity(&single, 20).is_err());
    }

    #[test]
    fn sap_oracles() {
        let mut fc = noise(5000, 4, &[8], 4);
        fc.codes.column_mut(0).assign(&fc.factors.column(0).mapv(|v| v as f64));
        assert!(sap(&fc).mean >= 0.9);
        fc.codes.column_mut(1).assign(&fc.factors.column(0).mapv(|v| v as f64));
        assert!(sap(&fc).mean.abs() < 1e-9);
        assert!(sap(&noise(5000, 6, &[8, 8, 4], 5)).mean < 0.05);
        let mut c = noise(100, 2, &[3], 6);
        c.codes.column_mut(0).fill(1.5);
        assert_eq!(sap_matrix(&c)[[0, 0]], 0.0);
    }

    #[test]
    fn top_two_values() {
        assert_eq!(top_two([0.2, 0.9, 0.5].into_iter()), (0.9, 0.5));
        assert_eq!(top_two([0.9, 0.2].into_iter()), (0.9, 0.2));
        assert_eq!(top_two([0.4].into_iter()), (0.4, 0.0));
    }
}
