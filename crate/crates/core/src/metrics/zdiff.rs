use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::linear::LogisticRegression;
use super::FactorCodes;
use crate::data::FixedFactorPairs;
use crate::error::{Error, Result};

/// Source of code pairs whose underlying examples agree on one factor.
pub trait PairSampler {
    fn n_factors(&self) -> usize;
    fn code_width(&self) -> usize;
    /// Whether pairs agreeing on factor `k` exist.
    fn can_fix(&self, k: usize) -> bool;
    /// Mean absolute code difference over `n_pairs` pairs sharing factor `k`.
    fn mean_abs_diff(&self, k: usize, n_pairs: usize, rng: &mut dyn RngCore) -> Result<Array1<f64>>;
}

/// Pairs drawn from the rows of an encoded table.
pub struct TablePairSampler<'a> {
    codes: &'a Array2<f64>,
    pairs: FixedFactorPairs,
}

impl<'a> TablePairSampler<'a> {
    pub fn new(fc: &'a FactorCodes) -> Self {
        TablePairSampler {
            codes: &fc.codes,
            pairs: FixedFactorPairs::new(fc.factors.view()),
        }
    }
}

impl PairSampler for TablePairSampler<'_> {
    fn n_factors(&self) -> usize {
        self.pairs.n_factors()
    }

    fn code_width(&self) -> usize {
        self.codes.ncols()
    }

    fn can_fix(&self, k: usize) -> bool {
        self.pairs.can_fix(k)
    }

    fn mean_abs_diff(&self, k: usize, n_pairs: usize, rng: &mut dyn RngCore) -> Result<Array1<f64>> {
        let mut acc = Array1::zeros(self.codes.ncols());
        for (a, b) in self.pairs.sample(k, n_pairs, rng)? {
            acc += &(&self.codes.row(a) - &self.codes.row(b)).mapv(f64::abs);
        }
        Ok(acc / n_pairs.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZDiffScore {
    /// Test accuracy.
    pub accuracy: f64,
    /// Indexed by factor; `None` for factors that cannot be fixed or had no
    /// test votes.
    pub recall: Vec<Option<f64>>,
}

fn usable_factors(sampler: &dyn PairSampler) -> Result<Vec<usize>> {
    let usable: Vec<usize> = (0..sampler.n_factors()).filter(|&k| sampler.can_fix(k)).collect();
    for k in (0..sampler.n_factors()).filter(|k| !usable.contains(k)) {
        log::warn!("z-diff: factor {k} has no value shared by two examples; excluded");
    }
    if usable.len() < 2 {
        return Err(Error::Metric(format!(
            "z-diff needs ≥ 2 factors that can be fixed, got {}",
            usable.len()
        )));
    }
    Ok(usable)
}

/// One mean-difference feature row per vote and the fixed factor of each.
pub fn z_diff_features(
    sampler: &dyn PairSampler,
    n_votes: usize,
    n_pairs: usize,
    rng: &mut dyn RngCore,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let usable = usable_factors(sampler)?;
    let mut features = Array2::zeros((n_votes, sampler.code_width()));
    let mut labels = Vec::with_capacity(n_votes);
    for mut row in features.rows_mut() {
        let k = usable[rng.random_range(0..usable.len())];
        row.assign(&sampler.mean_abs_diff(k, n_pairs, rng)?);
        labels.push(k);
    }
    Ok((features, labels))
}

/// Accuracy of a linear classifier predicting the fixed factor from the
/// mean absolute code difference of pairs sharing it.
pub fn z_diff(
    sampler: &dyn PairSampler,
    n_votes: usize,
    n_pairs: usize,
    c: f64,
    train_fraction: f64,
    rng: &mut dyn RngCore,
) -> Result<ZDiffScore> {
    if n_votes < 2 {
        return Err(Error::InvalidArgument("z-diff needs at least 2 votes".into()));
    }
    let (features, labels) = z_diff_features(sampler, n_votes, n_pairs, rng)?;
    let mut idx: Vec<usize> = (0..n_votes).collect();
    idx.shuffle(rng);
    let n_train = ((n_votes as f64 * train_fraction).round() as usize).clamp(1, n_votes - 1);
    let (train, test) = idx.split_at(n_train);
    let n_classes = sampler.n_factors();
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = LogisticRegression::fit(features.select(Axis(0), train).view(), &y_train, n_classes, c);
    let predicted = model.predict(features.select(Axis(0), test).view());
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&i, &p) in test.iter().zip(&predicted) {
        totals[labels[i]] += 1;
        if p == labels[i] {
            hits[labels[i]] += 1;
        }
    }
    let accuracy = hits.iter().sum::<usize>() as f64 / test.len() as f64;
    let recall = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    Ok(ZDiffScore { accuracy, recall })
}
