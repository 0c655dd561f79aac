//! Scalar objectives. Everything is computed in logit space; probabilities
//! only show up in the telemetry accuracies.

use std::f64::consts::PI;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{GaussianPosterior, LatentBatch, LatentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the mutual-information term.
    pub lambda_mi: f64,
    /// Weight of the total-correlation term.
    pub beta_tc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mi: 0.1,
            beta_tc: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mi", self.lambda_mi), ("beta_tc", self.beta_tc)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step training telemetry; one JSON object per line in the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub mi_loss: f64,
    pub tc_loss: f64,
    pub tcd_loss: f64,
    pub d_real_acc: f64,
    pub d_fake_acc: f64,
}

impl LossReport {
    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("d_loss", self.d_loss),
            ("g_adv_loss", self.g_adv_loss),
            ("mi_loss", self.mi_loss),
            ("tc_loss", self.tc_loss),
            ("tcd_loss", self.tcd_loss),
            ("d_real_acc", self.d_real_acc),
            ("d_fake_acc", self.d_fake_acc),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `log σ(x) = -(max(-x, 0) + log(1 + exp(-|x|)))`.
pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    let softplus_neg = x.neg()?.relu()?.add(&(x.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    Ok(softplus_neg.neg()?)
}

fn non_empty(t: &Tensor, what: &str) -> Result<()> {
    if t.elem_count() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `-[mean log σ(real) + mean log(1 - σ(fake))]`.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    non_empty(real_logits, "discriminator_loss real")?;
    non_empty(fake_logits, "discriminator_loss fake")?;
    let real = log_sigmoid(real_logits)?.mean_all()?;
    let fake = log_sigmoid(&fake_logits.neg()?)?.mean_all()?;
    Ok(real.add(&fake)?.neg()?)
}

/// Non-saturating generator loss `-mean log σ(fake)`.
pub fn generator_adversarial_loss(fake_logits: &Tensor) -> Result<Tensor> {
    non_empty(fake_logits, "generator_adversarial_loss")?;
    Ok(log_sigmoid(fake_logits)?.mean_all()?.neg()?)
}

/// Mean Gaussian negative log-likelihood of `target` under `post`, averaged
/// over batch and dimensions.
pub fn gaussian_nll(target: &Tensor, post: &GaussianPosterior) -> Result<Tensor> {
    if target.dims() != post.mean.dims() {
        return Err(Error::Shape(format!(
            "code {:?} vs posterior {:?}",
            target.dims(),
            post.mean.dims()
        )));
    }
    non_empty(target, "gaussian_nll")?;
    let min_std = post.std.to_dtype(DType::F64)?.min_all()?.to_scalar::<f64>()?;
    if min_std.is_nan() || min_std <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "posterior std must be positive, got {min_std}"
        )));
    }
    let resid = target.sub(&post.mean)?.div(&post.std)?;
    let nll = ((resid.sqr()? * 0.5)? + post.std.log()?)?;
    Ok((nll.mean_all()? + 0.5 * (2.0 * PI).ln())?)
}

/// Mean cross-entropy of `onehot` targets under `logits`, both `[batch × categories]`.
pub fn categorical_cross_entropy(logits: &Tensor, onehot: &Tensor) -> Result<Tensor> {
    if logits.dims() != onehot.dims() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dims(),
            onehot.dims()
        )));
    }
    non_empty(logits, "categorical_cross_entropy")?;
    let lse = logits.log_sum_exp(D::Minus1)?;
    let picked = logits.mul(onehot)?.sum(D::Minus1)?;
    Ok(lse.sub(&picked)?.mean_all()?)
}

/// Mutual-information regularizer: Gaussian NLL of the continuous codes plus
/// the mean cross-entropy over discrete codes. The constant code entropy is
/// dropped.
pub fn mi_loss(
    spec: &LatentSpec,
    sampled: &LatentBatch,
    posterior: &GaussianPosterior,
    discrete_logits: &[Tensor],
) -> Result<Tensor> {
    let device = posterior.mean.device();
    let dtype = posterior.mean.dtype();
    if discrete_logits.len() != spec.n_discrete() {
        return Err(Error::Shape(format!(
            "{} discrete logit blocks for {} codes",
            discrete_logits.len(),
            spec.n_discrete()
        )));
    }
    let mut total = Tensor::zeros((), dtype, device)?;
    if spec.continuous > 0 {
        let target = crate::latent::array_to_tensor(sampled.continuous.view(), device)?
            .to_dtype(dtype)?;
        total = total.add(&gaussian_nll(&target, posterior)?)?;
    }
    if !discrete_logits.is_empty() {
        let onehot = crate::latent::array_to_tensor(sampled.discrete_onehot.view(), device)?
            .to_dtype(dtype)?;
        let mut ce = Tensor::zeros((), dtype, device)?;
        for (off, (logits, &size)) in spec
            .onehot_offsets()
            .into_iter()
            .zip(discrete_logits.iter().zip(&spec.discrete))
        {
            let target = onehot.narrow(1, off, size)?;
            ce = ce.add(&categorical_cross_entropy(logits, &target)?)?;
        }
        total = total.add(&(ce / discrete_logits.len() as f64)?)?;
    }
    Ok(total)
}

/// Density-ratio total-correlation estimate: `log(σ(t)/(1-σ(t))) = t`, so the
/// estimate is the mean raw logit.
pub fn tc_loss_from_logits(tcd_logits: &Tensor) -> Result<Tensor> {
    non_empty(tcd_logits, "tc_loss_from_logits")?;
    Ok(tcd_logits.mean_all()?)
}

/// Binary cross-entropy with joint samples labelled 1 and permuted samples 0.
pub fn tcd_loss(joint_logits: &Tensor, permuted_logits: &Tensor) -> Result<Tensor> {
    non_empty(joint_logits, "tcd_loss joint")?;
    non_empty(permuted_logits, "tcd_loss permuted")?;
    let joint = log_sigmoid(joint_logits)?.mean_all()?;
    let perm = log_sigmoid(&permuted_logits.neg()?)?.mean_all()?;
    Ok((joint.add(&perm)? * -0.5)?)
}

/// `g_adv + λ·mi + β·tc`, where `mi` is already a negative log-likelihood.
pub fn combined_generator_objective(
    g_adv: &Tensor,
    mi: &Tensor,
    tc: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let mut total = g_adv.clone();
    if w.lambda_mi != 0.0 {
        total = total.add(&(mi * w.lambda_mi)?)?;
    }
    if w.beta_tc != 0.0 {
        total = total.add(&(tc * w.beta_tc)?)?;
    }
    Ok(total)
}

/// Fraction of logits on the positive side (`σ(t) > 0.5`).
pub fn positive_fraction(logits: &Tensor) -> Result<f64> {
    let v: Vec<f64> = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(v.iter().filter(|&&t| t > 0.0).count() as f64 / v.len().max(1) as f64)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
