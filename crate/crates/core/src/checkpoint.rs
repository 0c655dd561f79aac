//! Single-file checkpoints: network parameters and optimizer moments as
//! safetensors, with the run profile, counters and rng position stored as
//! JSON in the header metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentSpec;
use crate::nets::{ArchConfig, ImageShape, NetworkBundle};

const META_KEY: &str = "tcgan";
const FORMAT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything in a checkpoint except the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub latent: LatentSpec,
    pub image_shape: ImageShape,
    pub arch: ArchConfig,
    /// Training configuration as JSON, kept opaque here.
    pub train: serde_json::Value,
    pub epoch: u64,
    pub step: u64,
    pub rng: RngState,
    /// Step counts of the named optimizers.
    pub optimizer_steps: Vec<(String, u64)>,
    pub best_explicitness: Option<f64>,
}

impl CheckpointMeta {
    pub fn optimizer_steps(&self, name: &str) -> Result<u64> {
        self.optimizer_steps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::Checkpoint(format!("missing step count of optimizer {name}")))
    }
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: HashMap<String, Tensor>,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let json = serde_json::to_string(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metadata = HashMap::from([(META_KEY.to_string(), json)]);
    let tmp = path.with_extension("partial");
    safetensors::serialize_to_file(
        tensors.iter().map(|(k, t)| (k.as_str(), t)),
        Some(metadata),
        &tmp,
    )
    .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) =
        safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| bad("not a training checkpoint (no run metadata)".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    if meta.format != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint format {}", meta.format)));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok(Checkpoint { meta, tensors })
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Copies every network parameter and buffer out of the checkpoint into
    /// `bundle`.
    pub fn restore_params(&self, bundle: &NetworkBundle) -> Result<()> {
        for (name, var) in bundle.state() {
            let t = self.tensor(&name)?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, network expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }
}

pub(crate) fn new_meta(
    bundle: &NetworkBundle,
    train: serde_json::Value,
    epoch: u64,
    step: u64,
    rng: &ChaCha8Rng,
    optimizer_steps: Vec<(String, u64)>,
    best_explicitness: Option<f64>,
) -> CheckpointMeta {
    CheckpointMeta {
        format: FORMAT_VERSION,
        latent: bundle.spec.clone(),
        image_shape: bundle.shape,
        arch: bundle.arch.clone(),
        train,
        epoch,
        step,
        rng: RngState::capture(rng),
        optimizer_steps,
        best_explicitness,
    }
}
