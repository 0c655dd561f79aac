//! Latent space layout, prior sampling, the reparameterized Gaussian sample
//! and the permuted-dimension sampler used for total-correlation estimation.
//!
//! The generator input is laid out as `[one-hot discrete codes | continuous
//! codes | noise]`. Only the first two parts are constrained by the mutual
//! information and independence terms.

use candle_core::{DType, Tensor};
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-variance clamp applied before converting to a standard deviation.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Declarative description of the generator input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    /// Category count of every discrete code.
    #[serde(default)]
    pub discrete: Vec<usize>,
    /// Number of continuous codes.
    #[serde(default)]
    pub continuous: usize,
    /// Number of unconstrained noise dimensions.
    #[serde(default)]
    pub noise: usize,
}

impl LatentSpec {
    pub fn new(discrete: Vec<usize>, continuous: usize, noise: usize) -> Result<Self> {
        let spec = LatentSpec {
            discrete,
            continuous,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Five continuous codes plus five noise dimensions.
    pub fn dsprites() -> Self {
        LatentSpec {
            discrete: vec![],
            continuous: 5,
            noise: 5,
        }
    }

    /// One ten-way code, two continuous codes and 62 noise dimensions.
    pub fn mnist() -> Self {
        LatentSpec {
            discrete: vec![10],
            continuous: 2,
            noise: 62,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.discrete.iter().find(|&&c| c < 2) {
            return Err(Error::InvalidArgument(format!(
                "discrete code with {bad} categories (need at least 2)"
            )));
        }
        if self.input_width() == 0 {
            return Err(Error::InvalidArgument(
                "latent space has zero width".into(),
            ));
        }
        Ok(())
    }

    pub fn n_discrete(&self) -> usize {
        self.discrete.len()
    }

    pub fn onehot_width(&self) -> usize {
        self.discrete.iter().sum()
    }

    /// Width of the constrained code (one-hot part plus continuous codes).
    pub fn code_width(&self) -> usize {
        self.onehot_width() + self.continuous
    }

    pub fn input_width(&self) -> usize {
        self.code_width() + self.noise
    }

    /// Column offset of each discrete code inside the one-hot block.
    pub fn onehot_offsets(&self) -> Vec<usize> {
        self.discrete
            .iter()
            .scan(0, |acc, &c| {
                let at = *acc;
                *acc += c;
                Some(at)
            })
            .collect()
    }
}

/// One sampled batch of generator inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    /// `[batch × n_discrete]` category indices.
    pub discrete: Array2<usize>,
    /// `[batch × Σ categories]` one-hot encoding of `discrete`.
    pub discrete_onehot: Array2<f32>,
    /// `[batch × n_continuous]`, entries in `[-1, 1)`.
    pub continuous: Array2<f32>,
    /// `[batch × n_noise]`, standard Gaussian entries.
    pub noise: Array2<f32>,
}

impl LatentBatch {
    pub fn batch_size(&self) -> usize {
        self.continuous.nrows()
    }

    /// Rebuilds the one-hot block from `discrete`.
    pub fn from_parts(
        spec: &LatentSpec,
        discrete: Array2<usize>,
        continuous: Array2<f32>,
        noise: Array2<f32>,
    ) -> Result<Self> {
        let n = continuous.nrows();
        if discrete.dim() != (n, spec.n_discrete())
            || continuous.ncols() != spec.continuous
            || noise.dim() != (n, spec.noise)
        {
            return Err(Error::Shape(format!(
                "latent parts {:?}/{:?}/{:?} do not match spec {:?}",
                discrete.dim(),
                continuous.dim(),
                noise.dim(),
                spec
            )));
        }
        let offsets = spec.onehot_offsets();
        let mut onehot = Array2::<f32>::zeros((n, spec.onehot_width()));
        for row in 0..n {
            for (code, (&size, &offset)) in spec.discrete.iter().zip(&offsets).enumerate() {
                let cat = discrete[[row, code]];
                if cat >= size {
                    return Err(Error::InvalidArgument(format!(
                        "category {cat} out of range for code {code} with {size} categories"
                    )));
                }
                onehot[[row, offset + cat]] = 1.0;
            }
        }
        Ok(LatentBatch {
            discrete,
            discrete_onehot: onehot,
            continuous,
            noise,
        })
    }

    /// Concatenated `[batch × input_width]` matrix in generator input order.
    pub fn input_matrix(&self) -> Array2<f32> {
        let n = self.batch_size();
        let (a, b, c) = (
            self.discrete_onehot.ncols(),
            self.continuous.ncols(),
            self.noise.ncols(),
        );
        let mut out = Array2::<f32>::zeros((n, a + b + c));
        out.slice_mut(s![.., ..a]).assign(&self.discrete_onehot);
        out.slice_mut(s![.., a..a + b]).assign(&self.continuous);
        out.slice_mut(s![.., a + b..]).assign(&self.noise);
        out
    }

    pub fn to_input_tensor(&self, device: &candle_core::Device) -> Result<Tensor> {
        array_to_tensor(self.input_matrix().view(), device)
    }
}

/// Draws a batch from the prior: uniform categories, `Uniform(-1, 1)`
/// continuous codes and standard Gaussian noise.
pub fn sample_latent<R: Rng + ?Sized>(
    spec: &LatentSpec,
    batch_size: usize,
    rng: &mut R,
) -> Result<LatentBatch> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    spec.validate()?;
    let mut discrete = Array2::<usize>::zeros((batch_size, spec.n_discrete()));
    for row in 0..batch_size {
        for (code, &size) in spec.discrete.iter().enumerate() {
            discrete[[row, code]] = rng.random_range(0..size);
        }
    }
    let unit = Uniform::new(-1.0f32, 1.0).expect("valid interval");
    let continuous =
        Array2::from_shape_simple_fn((batch_size, spec.continuous), || rng.sample(unit));
    let noise = Array2::from_shape_simple_fn((batch_size, spec.noise), || {
        rng.sample::<f32, _>(StandardNormal)
    });
    LatentBatch::from_parts(spec, discrete, continuous, noise)
}

/// Predicted Gaussian over the continuous codes.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub std: Tensor,
}

impl GaussianPosterior {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if mean.dims() != std.dims() || mean.rank() != 2 {
            return Err(Error::Shape(format!(
                "posterior mean {:?} vs std {:?}",
                mean.dims(),
                std.dims()
            )));
        }
        Ok(GaussianPosterior { mean, std })
    }

    /// `std = exp(0.5 * clamp(logvar, -10, 10))`.
    pub fn from_mean_logvar(mean: Tensor, logvar: Tensor) -> Result<Self> {
        let std = (logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)? * 0.5)?.exp()?;
        Self::new(mean, std)
    }

    pub fn batch_size(&self) -> usize {
        self.mean.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.mean.dims()[1]
    }
}

/// `mean + std ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`; differentiable in
/// both `mean` and `std`.
pub fn reparameterize<R: Rng + ?Sized>(post: &GaussianPosterior, rng: &mut R) -> Result<Tensor> {
    if post.mean.dims() != post.std.dims() {
        return Err(Error::Shape(format!(
            "posterior mean {:?} vs std {:?}",
            post.mean.dims(),
            post.std.dims()
        )));
    }
    let n: usize = post.mean.elem_count();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eps = Tensor::from_vec(eps, post.mean.dims(), post.mean.device())?
        .to_dtype(post.mean.dtype())?;
    Ok(post.mean.add(&post.std.mul(&eps)?)?)
}

/// Shuffles every column independently across the batch, turning samples
/// from a joint distribution into samples from the product of its marginals.
pub fn permute_dims<T: Clone, R: Rng + ?Sized>(
    samples: ArrayView2<'_, T>,
    rng: &mut R,
) -> Result<Array2<T>> {
    let (n, d) = samples.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("permute_dims needs at least one row".into()));
    }
    let mut out = samples.to_owned();
    let mut order: Vec<usize> = (0..n).collect();
    for col in 0..d {
        for (i, o) in order.iter_mut().enumerate() {
            *o = i;
        }
        order.shuffle(rng);
        for (row, &src) in order.iter().enumerate() {
            out[[row, col]] = samples[[src, col]].clone();
        }
    }
    Ok(out)
}

/// [`permute_dims`] on a rank-2 tensor. The result is detached.
pub fn permute_dims_tensor<R: Rng + ?Sized>(samples: &Tensor, rng: &mut R) -> Result<Tensor> {
    let (n, d) = samples.dims2()?;
    let values: Vec<f64> = samples.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let arr = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    let permuted = permute_dims(arr.view(), rng)?;
    Ok(array_to_tensor(permuted.view(), samples.device())?.to_dtype(samples.dtype())?)
}

pub(crate) fn array_to_tensor<T: candle_core::WithDType>(
    a: ArrayView2<'_, T>,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let (n, d) = a.dim();
    let data: Vec<T> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, (n, d), device)?)
}
