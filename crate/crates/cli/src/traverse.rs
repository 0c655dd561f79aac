//! Latent traversal grids: each row holds one base draw fixed while the
//! chosen variable sweeps across the columns.

use std::path::Path;
use std::str::FromStr;

use candle_core::{Device, Tensor};
use image::GrayImage;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcgan::latent::{sample_latent, LatentBatch, LatentSpec};
use tcgan::nets::NetworkBundle;

use crate::error::{CliError, Result};

/// Which generator input to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    /// Index into the continuous codes.
    Continuous(usize),
    /// Index into the discrete codes; columns run over its categories.
    Discrete(usize),
}

impl FromStr for Variable {
    type Err = String;

    /// `3` is continuous code 3, `d0` is discrete code 0.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad variable {s:?}: expected an index such as 2, or d0 for a discrete code");
        match s.strip_prefix('d') {
            Some(rest) => rest.parse().map(Variable::Discrete).map_err(|_| bad()),
            None => s.parse().map(Variable::Continuous).map_err(|_| bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalSpec {
    pub variable: Variable,
    pub range: (f64, f64),
    pub steps: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for TraversalSpec {
    fn default() -> Self {
        TraversalSpec {
            variable: Variable::Continuous(0),
            range: (-2.0, 2.0),
            steps: 10,
            rows: 8,
            seed: 0,
        }
    }
}

impl TraversalSpec {
    pub fn validate(&self, latent: &LatentSpec) -> Result<()> {
        match self.variable {
            Variable::Continuous(i) if i >= latent.continuous => {
                return Err(CliError::Config(format!(
                    "variable {i} out of range: the checkpoint has {} continuous codes",
                    latent.continuous
                )))
            }
            Variable::Discrete(i) if i >= latent.n_discrete() => {
                return Err(CliError::Config(format!(
                    "variable d{i} out of range: the checkpoint has {} discrete codes",
                    latent.n_discrete()
                )))
            }
            _ => {}
        }
        let (lo, hi) = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CliError::Config(format!("degenerate range [{lo}, {hi}]: need lo < hi")));
        }
        if self.steps < 2 {
            return Err(CliError::Config(format!("steps must be at least 2, got {}", self.steps)));
        }
        if self.rows == 0 {
            return Err(CliError::Config("rows must be at least 1".into()));
        }
        Ok(())
    }

    /// Columns of the grid: `steps`, or the category count for a discrete
    /// variable.
    pub fn columns(&self, latent: &LatentSpec) -> usize {
        match self.variable {
            Variable::Continuous(_) => self.steps,
            Variable::Discrete(i) => latent.discrete[i],
        }
    }

    /// Evenly spaced values from `lo` to `hi` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        (0..self.steps)
            .map(|j| lo + (hi - lo) * j as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

/// Generator inputs for the grid, row-major (`rows × columns`).
///
/// When sweeping a continuous code and discrete codes exist, row `r` fixes
/// the first discrete code to category `r mod categories`, so each row shows
/// one class.
pub fn traversal_latents(latent: &LatentSpec, spec: &TraversalSpec) -> Result<LatentBatch> {
    spec.validate(latent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = sample_latent(latent, spec.rows, &mut rng)?;
    let cols = spec.columns(latent);
    let n = spec.rows * cols;
    let mut discrete = Array2::zeros((n, latent.n_discrete()));
    let mut continuous = Array2::zeros((n, latent.continuous));
    let mut noise = Array2::zeros((n, latent.noise));
    let values = spec.values();
    for r in 0..spec.rows {
        for c in 0..cols {
            let i = r * cols + c;
            discrete.row_mut(i).assign(&base.discrete.row(r));
            continuous.row_mut(i).assign(&base.continuous.row(r));
            noise.row_mut(i).assign(&base.noise.row(r));
            match spec.variable {
                Variable::Continuous(k) => {
                    continuous[[i, k]] = values[c] as f32;
                    if let Some(&size) = latent.discrete.first() {
                        discrete[[i, 0]] = r % size;
                    }
                }
                Variable::Discrete(k) => discrete[[i, k]] = c,
            }
        }
    }
    Ok(LatentBatch::from_parts(latent, discrete, continuous, noise)?)
}

/// Renders the grid as one grayscale image of `rows × columns` tiles.
pub fn traversal_grid(bundle: &NetworkBundle, spec: &TraversalSpec) -> Result<GrayImage> {
    let latents = traversal_latents(&bundle.spec, spec)?;
    let images = bundle.generate(&latents.to_input_tensor(&Device::Cpu)?)?;
    let cols = spec.columns(&bundle.spec);
    tile(&images, spec.rows, cols)
}

fn tile(images: &Tensor, rows: usize, cols: usize) -> Result<GrayImage> {
    let (n, c, h, w) = images.dims4().map_err(tcgan::Error::from)?;
    if c != 1 || n != rows * cols {
        return Err(CliError::Config(format!(
            "cannot tile {n} images of {c} channels into {rows}x{cols}"
        )));
    }
    let px: Vec<f32> = images
        .flatten_all()
        .and_then(|t| t.to_vec1())
        .map_err(tcgan::Error::from)?;
    let mut grid = GrayImage::new((cols * w) as u32, (rows * h) as u32);
    for (i, tile) in px.chunks(h * w).enumerate() {
        let (r, c) = (i / cols, i % cols);
        for (j, &v) in tile.iter().enumerate() {
            let level = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            grid.put_pixel((c * w + j % w) as u32, (r * h + j / w) as u32, image::Luma([level]));
        }
    }
    Ok(grid)
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::io(path, e))
}
