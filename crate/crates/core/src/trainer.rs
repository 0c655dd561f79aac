//! The per-batch update schedule, the epoch loop with evaluation-based
//! checkpoint selection, and deterministic encoding for the metrics.
//!
//! Every batch runs three updates in order:
//! 1. discriminator: encoder and discriminator head on real vs generated images;
//! 2. generator: generator, auxiliary head and encoder on the adversarial,
//!    mutual-information and total-correlation terms;
//! 3. TC discriminator: joint posterior samples vs dimension-permuted ones.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{Tensor, D};
use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, new_meta, save_checkpoint, Checkpoint};
use crate::data::{Batches, FactorDataset};
use crate::error::{Error, Result};
use crate::latent::{permute_dims_tensor, reparameterize, sample_latent, LatentBatch, LatentSpec};
use crate::losses::{
    combined_generator_objective, discriminator_loss, generator_adversarial_loss, mi_loss,
    positive_fraction, scalar, tc_loss_from_logits, tcd_loss, LossReport, LossWeights,
};
use crate::metrics::{self, FactorCodes, MetricReport, MetricSettings, TablePairSampler};
use crate::nets::{build_networks, ArchConfig, ImageShape, Mode, NetworkBundle, ParamGroup};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_tcd: f64,
    pub lambda_mi: f64,
    pub beta_tc: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    /// Epochs between numbered checkpoints; 0 keeps only `last` and `best`.
    pub checkpoint_every: u64,
    /// Epochs between evaluations; 0 disables them.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_generator: 0.001,
            lr_discriminator: 0.002,
            lr_tcd: 0.002,
            lambda_mi: 0.1,
            beta_tc: 0.001,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            checkpoint_every: 10,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_mi: self.lambda_mi,
            beta_tc: self.beta_tc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_tcd", self.lr_tcd),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        self.weights().validate()
    }
}

/// Non-network settings of a training run.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub arch: ArchConfig,
    pub metrics: MetricSettings,
    /// Receives the loss log, checkpoints and metric snapshots.
    pub output_dir: PathBuf,
}

/// One evaluation of the encoder during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub epoch: u64,
    pub step: u64,
    pub explicitness: f64,
    /// All five scores, when the dataset supports them.
    pub report: Option<MetricReport>,
}

pub struct TrainState {
    pub bundle: NetworkBundle,
    pub cfg: TrainConfig,
    opt_d: Adam,
    opt_gq: Adam,
    opt_tcd: Option<Adam>,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed steps over the whole run.
    pub step: u64,
    rng: ChaCha8Rng,
    pub best_explicitness: Option<f64>,
    pub best_checkpoint_path: Option<PathBuf>,
    pub evaluations: Vec<Evaluation>,
}

/// Result of the discriminator update, consumed by the generator update.
pub struct DiscPhase {
    pub latent: LatentBatch,
    /// Generated images, still attached to the generator graph.
    pub fake: Tensor,
    pub d_loss: f64,
    pub d_real_acc: f64,
    pub d_fake_acc: f64,
}

/// Result of the generator update, consumed by the TC discriminator update.
pub struct GenPhase {
    /// Detached posterior sample of the continuous codes, if any.
    pub z_hat: Option<Tensor>,
    pub g_adv_loss: f64,
    pub mi_loss: f64,
    pub tc_loss: f64,
}

const OPT_D: &str = "opt_d";
const OPT_GQ: &str = "opt_gq";
const OPT_TCD: &str = "opt_tcd";

fn group_params(bundle: &NetworkBundle, groups: &[ParamGroup]) -> Vec<(String, candle_core::Var)> {
    groups.iter().flat_map(|&g| bundle.group_params(g)).collect()
}

fn optimizers(bundle: &NetworkBundle, cfg: &TrainConfig) -> Result<(Adam, Adam, Option<Adam>)> {
    let opt_d = Adam::new(
        group_params(bundle, &[ParamGroup::Encoder, ParamGroup::DiscHead]),
        AdamConfig::gan(cfg.lr_discriminator),
    )?;
    let opt_gq = Adam::new(
        group_params(
            bundle,
            &[ParamGroup::Generator, ParamGroup::QHead, ParamGroup::Encoder],
        ),
        AdamConfig::gan(cfg.lr_generator),
    )?;
    let opt_tcd = match bundle.tcd {
        Some(_) => Some(Adam::new(
            bundle.group_params(ParamGroup::Tcd),
            AdamConfig::gan(cfg.lr_tcd),
        )?),
        None => None,
    };
    Ok((opt_d, opt_gq, opt_tcd))
}

impl TrainState {
    /// Fresh networks and optimizers; initialization and all later sampling
    /// draw from one generator seeded by `cfg.seed`.
    pub fn new(spec: &LatentSpec, shape: ImageShape, arch: &ArchConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bundle = build_networks(spec, shape, arch, &mut rng)?;
        let (opt_d, opt_gq, opt_tcd) = optimizers(&bundle, &cfg)?;
        Ok(TrainState {
            bundle,
            cfg,
            opt_d,
            opt_gq,
            opt_tcd,
            epoch: 0,
            step: 0,
            rng,
            best_explicitness: None,
            best_checkpoint_path: None,
            evaluations: Vec::new(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.meta;
        let cfg: TrainConfig = serde_json::from_value(meta.train.clone())
            .map_err(|e| Error::Checkpoint(format!("training config: {e}")))?;
        let mut state = TrainState::new(&meta.latent, meta.image_shape, &meta.arch, cfg)?;
        ckpt.restore_params(&state.bundle)?;
        let lookup = |k: &str| ckpt.tensors.get(k).cloned();
        state.opt_d.load_state(OPT_D, meta.optimizer_steps(OPT_D)?, &lookup)?;
        state.opt_gq.load_state(OPT_GQ, meta.optimizer_steps(OPT_GQ)?, &lookup)?;
        if let Some(opt) = state.opt_tcd.as_mut() {
            opt.load_state(OPT_TCD, meta.optimizer_steps(OPT_TCD)?, &lookup)?;
        }
        state.epoch = meta.epoch;
        state.step = meta.step;
        state.rng = meta.rng.restore()?;
        state.best_explicitness = meta.best_explicitness;
        Ok(state)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrainState::from_checkpoint(&load_checkpoint(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .bundle
            .state()
            .into_iter()
            .map(|(n, v)| (n, v.as_tensor().clone()))
            .collect();
        tensors.extend(self.opt_d.state(OPT_D));
        tensors.extend(self.opt_gq.state(OPT_GQ));
        let mut steps = vec![
            (OPT_D.to_string(), self.opt_d.steps_taken()),
            (OPT_GQ.to_string(), self.opt_gq.steps_taken()),
        ];
        if let Some(opt) = &self.opt_tcd {
            tensors.extend(opt.state(OPT_TCD));
            steps.push((OPT_TCD.to_string(), opt.steps_taken()));
        }
        let train = serde_json::to_value(&self.cfg).expect("config serializes");
        let meta = new_meta(
            &self.bundle,
            train,
            self.epoch,
            self.step,
            &self.rng,
            steps,
            self.best_explicitness,
        );
        save_checkpoint(path, &meta, &tensors)
    }

    fn check_batch(&self, real: &Tensor) -> Result<()> {
        let n = real.dims4()?.0;
        if n != self.cfg.batch_size {
            return Err(Error::Shape(format!(
                "batch of {n} images, configured batch size is {}",
                self.cfg.batch_size
            )));
        }
        Ok(())
    }

    /// Updates the encoder and discriminator head; the generator is untouched.
    pub fn discriminator_phase(&mut self, real: &Tensor) -> Result<DiscPhase> {
        self.check_batch(real)?;
        let latent = sample_latent(&self.bundle.spec, self.cfg.batch_size, &mut self.rng)?;
        let fake = self
            .bundle
            .generate_in(&latent.to_input_tensor(real.device())?, Mode::Train)?;
        let real_logits = self.bundle.disc(&self.bundle.features_in(real, Mode::Train)?)?;
        let fake_logits = self
            .bundle
            .disc(&self.bundle.features_in(&fake.detach(), Mode::Train)?)?;
        let loss = discriminator_loss(&real_logits, &fake_logits)?;
        let d_loss = scalar(&loss)?;
        self.opt_d.step(&loss.backward()?)?;
        Ok(DiscPhase {
            latent,
            fake,
            d_loss,
            d_real_acc: positive_fraction(&real_logits)?,
            d_fake_acc: 1.0 - positive_fraction(&fake_logits)?,
        })
    }

    /// Updates the generator, auxiliary head and encoder.
    pub fn generator_phase(&mut self, d: &DiscPhase) -> Result<GenPhase> {
        let features = self.bundle.features_in(&d.fake, Mode::Train)?;
        let g_adv = generator_adversarial_loss(&self.bundle.disc(&features)?)?;
        let q = self.bundle.q(&features)?;
        if !scalar(&q.posterior.std.sum_all()?)?.is_finite() {
            return Err(Error::NonFinite { term: "mi_loss", step: self.step + 1 });
        }
        let mi = mi_loss(&self.bundle.spec, &d.latent, &q.posterior, &q.discrete_logits)?;
        let (tc, z_hat) = if self.bundle.tcd.is_some() {
            let z_hat = reparameterize(&q.posterior, &mut self.rng)?;
            let tc = tc_loss_from_logits(&self.bundle.tc_discriminator_forward(&z_hat)?)?;
            (tc, Some(z_hat.detach()))
        } else {
            (g_adv.zeros_like()?, None)
        };
        let weights = self.cfg.weights();
        let total = combined_generator_objective(&g_adv, &mi, &tc, &weights)?;
        let mut grads = total.backward()?;
        // The encoder takes part here as the trunk of Q: it follows the MI and
        // TC terms only. Letting the adversarial term through would train the
        // discriminator's own features to be fooled.
        let aux = combined_generator_objective(&g_adv.zeros_like()?, &mi, &tc, &weights)?;
        let aux_grads = aux.backward()?;
        for (_, v) in self.bundle.group_params(ParamGroup::Encoder) {
            match aux_grads.get(v.as_tensor()) {
                Some(g) => {
                    grads.insert(v.as_tensor(), g.clone());
                }
                None => {
                    grads.remove(v.as_tensor());
                }
            }
        }
        self.opt_gq.step(&grads)?;
        Ok(GenPhase {
            z_hat,
            g_adv_loss: scalar(&g_adv)?,
            mi_loss: scalar(&mi)?,
            tc_loss: scalar(&tc)?,
        })
    }

    /// Updates the TC discriminator on the generator phase's posterior sample
    /// (joint) against a fresh, dimension-permuted one. Returns 0 when there
    /// is no TC discriminator.
    pub fn tcd_phase(&mut self, g: &GenPhase) -> Result<f64> {
        let (Some(z_joint), Some(opt)) = (&g.z_hat, self.opt_tcd.as_mut()) else {
            return Ok(0.0);
        };
        let latent = sample_latent(&self.bundle.spec, self.cfg.batch_size, &mut self.rng)?;
        let fake = self
            .bundle
            .generate_in(&latent.to_input_tensor(z_joint.device())?, Mode::Train)?
            .detach();
        let q = self.bundle.q(&self.bundle.features_in(&fake, Mode::Train)?)?;
        let z2 = reparameterize(&q.posterior, &mut self.rng)?.detach();
        let permuted = permute_dims_tensor(&z2, &mut self.rng)?;
        let loss = tcd_loss(
            &self.bundle.tc_discriminator_forward(&z_joint.detach())?,
            &self.bundle.tc_discriminator_forward(&permuted)?,
        )?;
        let value = scalar(&loss)?;
        opt.step(&loss.backward()?)?;
        Ok(value)
    }

    /// One full three-phase update on a batch of normalized real images.
    pub fn train_step(&mut self, real: &Tensor) -> Result<LossReport> {
        // a diverged phase poisons the next one's inputs, so stop at the first
        let diverged = |term, step| Error::NonFinite { term, step };
        let d = self.discriminator_phase(real)?;
        if !d.d_loss.is_finite() {
            return Err(diverged("d_loss", self.step + 1));
        }
        let g = self.generator_phase(&d)?;
        for (term, v) in [("g_adv_loss", g.g_adv_loss), ("mi_loss", g.mi_loss), ("tc_loss", g.tc_loss)] {
            if !v.is_finite() {
                return Err(diverged(term, self.step + 1));
            }
        }
        let tcd = self.tcd_phase(&g)?;
        self.step += 1;
        let report = LossReport {
            step: self.step,
            d_loss: d.d_loss,
            g_adv_loss: g.g_adv_loss,
            mi_loss: g.mi_loss,
            tc_loss: g.tc_loss,
            tcd_loss: tcd,
            d_real_acc: d.d_real_acc,
            d_fake_acc: d.d_fake_acc,
        };
        if let Some(term) = report.first_non_finite() {
            return Err(Error::NonFinite {
                term,
                step: self.step,
            });
        }
        Ok(report)
    }

    /// Trains from the current position through `cfg.epochs`, appending to
    /// the loss log and writing checkpoints and metric snapshots.
    pub fn run(&mut self, dataset: &FactorDataset, opts: &TrainOptions) -> Result<()> {
        if dataset.image_shape() != self.bundle.shape {
            return Err(Error::Shape(format!(
                "dataset images are {:?}, networks expect {:?}",
                dataset.image_shape(),
                self.bundle.shape
            )));
        }
        let batches = Batches::new(dataset.len(), self.cfg.batch_size, self.cfg.seed)?;
        let per_epoch = batches.per_epoch() as u64;
        let out = &opts.output_dir;
        let ckpt_dir = out.join("checkpoints");
        let metrics_dir = out.join("metrics");
        for dir in [out, &ckpt_dir, &metrics_dir] {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let log_path = out.join("loss_log.jsonl");
        let mut log = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?,
        );
        let eval_rows = eval_indices(dataset.len(), &opts.metrics);

        while self.epoch < self.cfg.epochs {
            let done_in_epoch = self.step.saturating_sub(self.epoch * per_epoch) as usize;
            for batch in batches.epoch(self.epoch).iter().skip(done_in_epoch) {
                let report = self.train_step(&dataset.images(batch)?)?;
                let line = serde_json::to_string(&report).expect("report serializes");
                writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            }
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            self.epoch += 1;
            let e = self.epoch;
            log::info!("epoch {e}/{} done at step {}", self.cfg.epochs, self.step);

            if self.cfg.eval_every > 0 && e % self.cfg.eval_every == 0 {
                let eval = evaluate_during_training(&self.bundle, dataset, &eval_rows, &opts.metrics, e, self.step)?;
                write_json(&metrics_dir.join(format!("epoch_{e:04}.json")), &eval)?;
                log::info!("epoch {e}: explicitness {:.4}", eval.explicitness);
                if self.best_explicitness.is_none_or(|b| eval.explicitness > b) {
                    self.best_explicitness = Some(eval.explicitness);
                    let path = ckpt_dir.join("best.safetensors");
                    self.save(&path)?;
                    self.best_checkpoint_path = Some(path);
                }
                self.evaluations.push(eval);
            }
            if self.cfg.checkpoint_every > 0 && e % self.cfg.checkpoint_every == 0 {
                self.save(&ckpt_dir.join(format!("epoch_{e:04}.safetensors")))?;
            }
        }
        self.save(&ckpt_dir.join("last.safetensors"))?;
        if self.best_checkpoint_path.is_none() {
            // no evaluation ran: the final state is the only candidate
            self.best_checkpoint_path = Some(ckpt_dir.join("last.safetensors"));
        }
        Ok(())
    }
}

/// Builds fresh networks from `cfg.seed` and trains them on `dataset`.
pub fn train(
    dataset: &FactorDataset,
    spec: &LatentSpec,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainState> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut state = TrainState::new(spec, dataset.image_shape(), &opts.arch, cfg.clone())?;
    state.run(dataset, opts)?;
    Ok(state)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A deterministic map from images to code vectors.
pub trait Representation {
    fn encode(&self, images: &Tensor) -> Result<Array2<f64>>;
}

impl Representation for NetworkBundle {
    fn encode(&self, images: &Tensor) -> Result<Array2<f64>> {
        encode_for_eval(self, images)
    }
}

/// Code matrix `[batch × (Σ categories + n_continuous)]`: softmax
/// probabilities of each discrete code followed by the posterior means.
pub fn encode_for_eval(bundle: &NetworkBundle, images: &Tensor) -> Result<Array2<f64>> {
    let q = bundle.q(&bundle.features(images)?)?;
    let mut blocks = Vec::with_capacity(q.discrete_logits.len() + 1);
    for logits in &q.discrete_logits {
        let m = logits.max_keepdim(D::Minus1)?;
        let e = logits.broadcast_sub(&m)?.exp()?;
        blocks.push(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?);
    }
    if bundle.spec.continuous > 0 {
        blocks.push(q.posterior.mean.clone());
    }
    let codes = Tensor::cat(&blocks, 1)?.to_dtype(candle_core::DType::F64)?;
    let (n, w) = codes.dims2()?;
    Ok(Array2::from_shape_vec((n, w), codes.flatten_all()?.to_vec1::<f64>()?)
        .expect("shape matches"))
}

const ENCODE_CHUNK: usize = 256;

/// Encodes rows `indices` of `dataset` in chunks.
pub fn encode_dataset(
    rep: &dyn Representation,
    dataset: &FactorDataset,
    indices: &[usize],
) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in indices.chunks(ENCODE_CHUNK) {
        parts.push(rep.encode(&dataset.images(chunk)?)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::Shape(format!("inconsistent code widths: {e}")))
}

/// Fixed evaluation subsample: all rows if the dataset is small enough,
/// otherwise `eval_samples` rows drawn with the metric seed.
pub fn eval_indices(n: usize, settings: &MetricSettings) -> Vec<usize> {
    if n <= settings.eval_samples {
        return (0..n).collect();
    }
    let mut rng = settings.rng(EVAL_SUBSET_STREAM);
    let mut rows = index::sample(&mut rng, n, settings.eval_samples).into_vec();
    rows.sort_unstable();
    rows
}

const EVAL_SUBSET_STREAM: u64 = 7;

pub fn factor_codes(
    rep: &dyn Representation,
    dataset: &FactorDataset,
    indices: &[usize],
) -> Result<FactorCodes> {
    let codes = encode_dataset(rep, dataset, indices)?;
    let factors = dataset.factor_values.select(ndarray::Axis(0), indices);
    FactorCodes::new(codes, factors, dataset.factor_sizes.clone())
}

/// All five metrics of `rep` on rows `indices` of `dataset`.
pub fn evaluate(
    rep: &dyn Representation,
    dataset: &FactorDataset,
    indices: &[usize],
    settings: &MetricSettings,
) -> Result<MetricReport> {
    let fc = factor_codes(rep, dataset, indices)?;
    metrics::full_report(&fc, &TablePairSampler::new(&fc), settings)
}

fn evaluate_during_training(
    bundle: &NetworkBundle,
    dataset: &FactorDataset,
    indices: &[usize],
    settings: &MetricSettings,
    epoch: u64,
    step: u64,
) -> Result<Evaluation> {
    let fc = factor_codes(bundle, dataset, indices)?;
    let (explicitness, report) = match metrics::full_report(&fc, &TablePairSampler::new(&fc), settings) {
        Ok(r) => (r.explicitness, Some(r)),
        Err(Error::Metric(why)) => {
            log::warn!("epoch {epoch}: full metric report unavailable ({why}); explicitness only");
            (metrics::explicitness_for(&fc, settings)?.mean, None)
        }
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        epoch,
        step,
        explicitness,
        report,
    })
}
