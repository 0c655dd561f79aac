//! Factor-labelled image datasets.
//!
//! Images are kept as raw intensity levels (`0..=levels`) and normalized to
//! `[-1, 1]` on access, so the binary dSprites archive stays one byte per
//! pixel in memory.

mod idx;
mod npy;
mod npz;

use std::collections::{BTreeMap, HashSet};

use candle_core::Tensor;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ImageShape;

pub use idx::load_idx;
pub use npz::{load_dsprites, save_npz, DSPRITES_FACTOR_NAMES};

#[derive(Debug, Clone)]
pub struct FactorDataset {
    pixels: Vec<u8>,
    levels: u8,
    shape: ImageShape,
    /// `[N × K]` ground-truth factor class indices.
    pub factor_values: Array2<usize>,
    pub factor_sizes: Vec<usize>,
    pub factor_names: Vec<String>,
    pub is_complete_grid: bool,
}

impl FactorDataset {
    pub fn new(
        pixels: Vec<u8>,
        levels: u8,
        shape: ImageShape,
        factor_values: Array2<usize>,
        factor_sizes: Vec<usize>,
        factor_names: Vec<String>,
    ) -> Result<Self> {
        let n = factor_values.nrows();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if pixels.len() != n * shape.pixels() {
            return Err(Error::Data(format!(
                "{} factor rows but {} images of {} pixels",
                n,
                pixels.len() / shape.pixels().max(1),
                shape.pixels()
            )));
        }
        if levels == 0 {
            return Err(Error::Data("pixel level count must be positive".into()));
        }
        if let Some(&p) = pixels.iter().find(|&&p| p > levels) {
            return Err(Error::Data(format!("pixel value {p} exceeds level {levels}")));
        }
        let k = factor_sizes.len();
        if factor_values.ncols() != k || factor_names.len() != k {
            return Err(Error::Data(format!(
                "{} factor columns, {} sizes, {} names",
                factor_values.ncols(),
                k,
                factor_names.len()
            )));
        }
        for (col, &size) in factor_sizes.iter().enumerate() {
            if let Some(&v) = factor_values.column(col).iter().find(|&&v| v >= size) {
                return Err(Error::Data(format!(
                    "factor {} has value {v} but size {size}",
                    factor_names[col]
                )));
            }
        }
        let is_complete_grid = n == factor_sizes.iter().product::<usize>() && {
            let mut seen = HashSet::with_capacity(n);
            factor_values.rows().into_iter().all(|r| seen.insert(r.to_vec()))
        };
        Ok(FactorDataset {
            pixels,
            levels,
            shape,
            factor_values,
            factor_sizes,
            factor_names,
            is_complete_grid,
        })
    }

    pub fn len(&self) -> usize {
        self.factor_values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_factors(&self) -> usize {
        self.factor_sizes.len()
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    /// Raw intensity levels of image `i`.
    pub fn raw_image(&self, i: usize) -> &[u8] {
        let p = self.shape.pixels();
        &self.pixels[i * p..(i + 1) * p]
    }

    pub fn normalize(&self, level: u8) -> f32 {
        2.0 * level as f32 / self.levels as f32 - 1.0
    }

    pub fn denormalize(&self, value: f32) -> u8 {
        ((value + 1.0) * 0.5 * self.levels as f32).round().clamp(0.0, self.levels as f32) as u8
    }

    /// Normalized `[n × C × H × W]` f32 tensor for the given rows.
    pub fn images(&self, indices: &[usize]) -> Result<Tensor> {
        let p = self.shape.pixels();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("index {i} out of range {}", self.len())));
            }
            data.extend(self.raw_image(i).iter().map(|&v| self.normalize(v)));
        }
        crate::nets::images_tensor(data, indices.len(), self.shape)
    }

    /// Rows `indices`, in order, as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<FactorDataset> {
        let mut pixels = Vec::with_capacity(indices.len() * self.shape.pixels());
        let mut values = Array2::zeros((indices.len(), self.n_factors()));
        for (row, &i) in indices.iter().enumerate() {
            pixels.extend_from_slice(self.raw_image(i));
            values.row_mut(row).assign(&self.factor_values.row(i));
        }
        FactorDataset::new(
            pixels,
            self.levels,
            self.shape,
            values,
            self.factor_sizes.clone(),
            self.factor_names.clone(),
        )
    }

    pub fn sample_fixed_factor_pairs<R: Rng + ?Sized>(
        &self,
        factor: usize,
        n_pairs: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        sample_fixed_factor_pairs(self.factor_values.view(), factor, n_pairs, rng)
    }
}

/// Procedural stand-in for dSprites: one filled square per image on a full
/// factorial grid of (x position, y position, size).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub x_positions: usize,
    pub y_positions: usize,
    pub sizes: usize,
    /// Side length grows by this many pixels per size index.
    pub size_step: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 32,
            x_positions: 8,
            y_positions: 8,
            sizes: 4,
            size_step: 2,
        }
    }
}

impl SyntheticSpec {
    fn max_side(&self) -> usize {
        self.size_step * self.sizes
    }

    /// Top-left corner along one axis for grid cell `i` and size index `s`.
    fn corner(&self, i: usize, n: usize, s: usize) -> isize {
        let max = self.max_side();
        let span = self.image_size.saturating_sub(max);
        let center = max / 2 + (i * span + (n - 1) / 2) / (n - 1);
        center as isize - ((s + 1) * self.size_step / 2) as isize
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("x_positions", self.x_positions),
            ("y_positions", self.y_positions),
            ("sizes", self.sizes),
        ] {
            if v < 2 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 2")));
            }
        }
        if self.size_step == 0 || self.max_side() > self.image_size {
            return Err(Error::InvalidArgument(format!(
                "largest square ({} px) does not fit the {} px canvas",
                self.max_side(),
                self.image_size
            )));
        }
        let span = self.image_size - self.max_side();
        if span + 1 < self.x_positions.max(self.y_positions) {
            return Err(Error::InvalidArgument(format!(
                "{} free pixels cannot hold {} distinct positions",
                span + 1,
                self.x_positions.max(self.y_positions)
            )));
        }
        for (n, _) in [(self.x_positions, 'x'), (self.y_positions, 'y')] {
            for i in [0, n - 1] {
                for s in 0..self.sizes {
                    let lo = self.corner(i, n, s);
                    let hi = lo + ((s + 1) * self.size_step) as isize;
                    if lo < 0 || hi > self.image_size as isize {
                        return Err(Error::InvalidArgument(
                            "square would leave the canvas".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Renders the full factorial grid. `seed` is reserved for subsampling and
/// does not affect the full grid.
pub fn generate_synthetic(spec: &SyntheticSpec, _seed: u64) -> Result<FactorDataset> {
    spec.validate()?;
    let w = spec.image_size;
    let n = spec.x_positions * spec.y_positions * spec.sizes;
    let mut pixels = vec![0u8; n * w * w];
    let mut values = Array2::zeros((n, 3));
    let mut row = 0;
    for x in 0..spec.x_positions {
        for y in 0..spec.y_positions {
            for s in 0..spec.sizes {
                let side = (s + 1) * spec.size_step;
                let x0 = spec.corner(x, spec.x_positions, s) as usize;
                let y0 = spec.corner(y, spec.y_positions, s) as usize;
                let img = &mut pixels[row * w * w..(row + 1) * w * w];
                for r in y0..y0 + side {
                    img[r * w + x0..r * w + x0 + side].fill(1);
                }
                values[[row, 0]] = x;
                values[[row, 1]] = y;
                values[[row, 2]] = s;
                row += 1;
            }
        }
    }
    FactorDataset::new(
        pixels,
        1,
        ImageShape::gray(w),
        values,
        vec![spec.x_positions, spec.y_positions, spec.sizes],
        vec!["pos_x".into(), "pos_y".into(), "size".into()],
    )
}

/// Per-factor index of which rows share each value.
#[derive(Debug, Clone)]
pub struct FixedFactorPairs {
    /// `groups[k]` holds, for each value with at least two rows, those rows.
    groups: Vec<Vec<Vec<usize>>>,
    /// `eligible[k]` lists `(group, position)` for every row in `groups[k]`.
    eligible: Vec<Vec<(usize, usize)>>,
}

impl FixedFactorPairs {
    pub fn new(factors: ArrayView2<'_, usize>) -> Self {
        let mut groups = Vec::with_capacity(factors.ncols());
        let mut eligible = Vec::with_capacity(factors.ncols());
        for col in factors.columns() {
            let mut by_value: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (row, &v) in col.iter().enumerate() {
                by_value.entry(v).or_default().push(row);
            }
            let g: Vec<Vec<usize>> = by_value.into_values().filter(|r| r.len() >= 2).collect();
            let e = g
                .iter()
                .enumerate()
                .flat_map(|(gi, rows)| (0..rows.len()).map(move |p| (gi, p)))
                .collect();
            groups.push(g);
            eligible.push(e);
        }
        FixedFactorPairs { groups, eligible }
    }

    pub fn n_factors(&self) -> usize {
        self.groups.len()
    }

    /// Whether some value of factor `k` has at least two rows.
    pub fn can_fix(&self, k: usize) -> bool {
        self.eligible.get(k).is_some_and(|e| !e.is_empty())
    }

    /// `n_pairs` distinct-row pairs agreeing on factor `k`. The anchor is
    /// uniform over eligible rows and the partner uniform over the rest of
    /// its value group.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        k: usize,
        n_pairs: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        if k >= self.n_factors() {
            return Err(Error::InvalidArgument(format!(
                "factor index {k} out of range {}",
                self.n_factors()
            )));
        }
        if !self.can_fix(k) {
            return Err(Error::Data(format!(
                "no value of factor {k} has two examples"
            )));
        }
        let eligible = &self.eligible[k];
        Ok((0..n_pairs)
            .map(|_| {
                let (g, p) = eligible[rng.random_range(0..eligible.len())];
                let rows = &self.groups[k][g];
                let mut q = rng.random_range(0..rows.len() - 1);
                if q >= p {
                    q += 1;
                }
                (rows[p], rows[q])
            })
            .collect())
    }
}

pub fn sample_fixed_factor_pairs<R: Rng + ?Sized>(
    factors: ArrayView2<'_, usize>,
    factor: usize,
    n_pairs: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    FixedFactorPairs::new(factors).sample(factor, n_pairs, rng)
}

/// Seeded epoch-wise shuffling into full batches; the remainder is dropped.
#[derive(Debug, Clone)]
pub struct Batches {
    n: usize,
    batch_size: usize,
    seed: u64,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} invalid for {n} examples"
            )));
        }
        Ok(Batches { n, batch_size, seed })
    }

    pub fn per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    /// Batches of epoch `epoch`; each epoch uses its own rng stream.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        order
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
