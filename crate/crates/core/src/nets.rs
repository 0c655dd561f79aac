//! Network definitions: generator, shared encoder with discriminator and
//! auxiliary heads, and the total-correlation discriminator.
//!
//! Layers own their parameters as [`Var`]s so optimizers can address them
//! by parameter group. Initialization draws from a caller-supplied rng, which
//! keeps a whole run reproducible from one seed.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{GaussianPosterior, LatentSpec};

/// Channel-first image shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const DSPRITES: ImageShape = ImageShape::gray(64);
    pub const SYNTHETIC: ImageShape = ImageShape::gray(32);
    pub const MNIST: ImageShape = ImageShape::gray(28);

    pub const fn gray(size: usize) -> Self {
        ImageShape {
            channels: 1,
            height: size,
            width: size,
        }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn layout(&self) -> Result<ConvLayout> {
        match (self.channels, self.height, self.width) {
            (1, 64, 64) => Ok(ConvLayout {
                base: 4,
                blocks: vec![Block::Resample; 4],
            }),
            (1, 32, 32) => Ok(ConvLayout {
                base: 4,
                blocks: vec![Block::Resample; 3],
            }),
            (1, 28, 28) => Ok(ConvLayout {
                base: 7,
                blocks: vec![Block::Resample, Block::Resample, Block::Same],
            }),
            _ => Err(Error::InvalidArgument(format!(
                "no registered architecture for image shape {}x{}x{}",
                self.channels, self.height, self.width
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Block {
    /// Stride-2, 4x4 kernel: doubles (generator) or halves (encoder) the size.
    Resample,
    /// Stride-1, 3x3 kernel.
    Same,
}

struct ConvLayout {
    /// Spatial size at the dense/conv boundary.
    base: usize,
    /// Generator order; the encoder runs them reversed.
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Channel count of the widest encoder block is `base_channels * 2^(blocks-1)`.
    pub base_channels: usize,
    /// Same for the generator. A generator wider than the encoder keeps the
    /// discriminator from winning outright on small datasets.
    pub generator_channels: usize,
    pub feature_width: usize,
    pub tcd_hidden: usize,
    pub tcd_layers: usize,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_channels: 32,
            generator_channels: 64,
            feature_width: 64,
            tcd_hidden: 1000,
            tcd_layers: 6,
            leaky_slope: 0.2,
        }
    }
}

// max(x, slope·x) keeps NaN visible; relu-based forms silently map it to 0
fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Whether normalization layers use batch statistics (and update their
/// running averages) or the running averages alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `[batch × channels (× h × w)]`.
#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm {
    fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: new_var(vec![1.0; channels], &[channels])?,
            beta: new_var(vec![0.0; channels], &[channels])?,
            running_mean: new_var(vec![0.0; channels], &[channels])?,
            running_var: new_var(vec![1.0; channels], &[channels])?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let c = dims[1];
        let x4 = x.reshape((dims[0], c, (), 1))?;
        let per_channel = (1, c, 1, 1);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x4.mean_keepdim(0)?.mean_keepdim(2)?;
                let var = x4.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?;
                let n = (x4.elem_count() / c) as f64;
                let unbiased = (var.detach() * (n / (n - 1.0).max(1.0)))?.flatten_all()?;
                let blend = |run: &Var, batch: &Tensor| -> Result<()> {
                    let next = ((run.as_tensor() * (1.0 - BN_MOMENTUM))? + (batch * BN_MOMENTUM)?)?;
                    Ok(run.set(&next)?)
                };
                blend(&self.running_mean, &mean.detach().flatten_all()?)?;
                blend(&self.running_var, &unbiased)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().reshape(per_channel)?,
                self.running_var.as_tensor().reshape(per_channel)?,
            ),
        };
        let y = x4
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BN_EPS)?.sqrt()?)?
            .broadcast_mul(&self.gamma.as_tensor().reshape(per_channel)?)?
            .broadcast_add(&self.beta.as_tensor().reshape(per_channel)?)?;
        Ok(y.reshape(dims)?)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }

    fn deep_clone(&self) -> Result<Self> {
        Ok(BatchNorm {
            gamma: revar(&self.gamma)?,
            beta: revar(&self.beta)?,
            running_mean: revar(&self.running_mean)?,
            running_var: revar(&self.running_var)?,
        })
    }
}

fn new_var(data: Vec<f32>, shape: &[usize]) -> Result<Var> {
    Ok(Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    /// Fan-in uniform initialization for both weight and bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (inputs.max(1) as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w = (0..inputs * outputs).map(|_| rng.sample(dist)).collect();
        let b = (0..outputs).map(|_| rng.sample(dist)).collect();
        Ok(Linear {
            weight: new_var(w, &[outputs, inputs])?,
            bias: new_var(b, &[outputs])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// `Conv2d` (encoder) or `ConvTranspose2d` (generator). Encoder weights are
/// `N(0, 0.02)`; generator weights use He scaling so the signal survives the
/// unnormalized stack.
#[derive(Debug, Clone)]
struct Conv {
    weight: Var,
    bias: Var,
    block: Block,
    transposed: bool,
}

impl Conv {
    fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        block: Block,
        transposed: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let k = match block {
            Block::Resample => 4,
            Block::Same => 3,
        };
        let sigma = if transposed {
            // each output pixel of a stride-2 transposed conv sees a quarter of the kernel
            let taps = if block == Block::Resample { k * k / 4 } else { k * k };
            (2.0 / (c_in * taps) as f32).sqrt()
        } else {
            0.02
        };
        let dist = Normal::new(0.0f32, sigma).expect("valid sigma");
        let w = (0..c_in * c_out * k * k).map(|_| rng.sample(dist)).collect();
        // conv kernels are [out, in, k, k]; transposed kernels are [in, out, k, k]
        let shape = if transposed && block == Block::Resample {
            [c_in, c_out, k, k]
        } else {
            [c_out, c_in, k, k]
        };
        Ok(Conv {
            weight: new_var(w, &shape)?,
            bias: new_var(vec![0.0; c_out], &[c_out])?,
            block,
            transposed,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let y = match (self.block, self.transposed) {
            (Block::Resample, true) => conv_transpose2d(x, w, 2, 1)?,
            (Block::Resample, false) => conv2d(x, w, 2, 1)?,
            (Block::Same, _) => conv2d(x, w, 1, 1)?,
        };
        let c = self.bias.dims()[0];
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

fn index_tensor(idx: Vec<u32>, device: &Device) -> Result<Tensor> {
    let n = idx.len();
    Ok(Tensor::from_vec(idx, n, device)?)
}

/// Square-kernel convolution as patch gathering plus one matrix product.
/// Both pieces have fast backward passes, unlike direct convolution on CPU.
/// `x` is `[b, c, h, w]`, `kernel` is `[out, c, k, k]`.
pub(crate) fn conv2d(x: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oc, kc, k, _) = kernel.dims4()?;
    if kc != c {
        return Err(Error::Shape(format!("conv kernel expects {kc} channels, got {c}")));
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let (oh, ow) = ((hp - k) / stride + 1, (wp - k) / stride + 1);
    let mut idx = Vec::with_capacity(oh * ow * k * k);
    for i in 0..oh {
        for j in 0..ow {
            for ki in 0..k {
                for kj in 0..k {
                    idx.push(((i * stride + ki) * wp + j * stride + kj) as u32);
                }
            }
        }
    }
    let idx = index_tensor(idx, x.device())?;
    let patches = x
        .pad_with_zeros(2, pad, pad)?
        .pad_with_zeros(3, pad, pad)?
        .reshape((b, c, hp * wp))?
        .index_select(&idx, 2)?
        .reshape((b, c, oh * ow, k * k))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * oh * ow, c * k * k))?;
    let y = patches.matmul(&kernel.reshape((oc, c * k * k))?.t()?)?;
    Ok(y.reshape((b, oh * ow, oc))?
        .transpose(1, 2)?
        .reshape((b, oc, oh, ow))?)
}

/// Transposed convolution: per-pixel kernel products scattered into the
/// (cropped) output. `kernel` is `[c, out, k, k]`.
pub(crate) fn conv_transpose2d(
    x: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (kc, oc, k, _) = kernel.dims4()?;
    if kc != c {
        return Err(Error::Shape(format!("deconv kernel expects {kc} channels, got {c}")));
    }
    let (hf, wf) = ((h - 1) * stride + k, (w - 1) * stride + k);
    let mut idx = Vec::with_capacity(h * w * k * k);
    for i in 0..h {
        for j in 0..w {
            for ki in 0..k {
                for kj in 0..k {
                    idx.push(((i * stride + ki) * wf + j * stride + kj) as u32);
                }
            }
        }
    }
    let idx = index_tensor(idx, x.device())?;
    let cols = x
        .reshape((b, c, h * w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * h * w, c))?
        .matmul(&kernel.reshape((c, oc * k * k))?)?
        .reshape((b, h * w, oc, k * k))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, oc, h * w * k * k))?;
    let full = Tensor::zeros((b, oc, hf * wf), x.dtype(), x.device())?
        .index_add(&idx, &cols, 2)?
        .reshape((b, oc, hf, wf))?;
    Ok(full
        .narrow(2, pad, hf - 2 * pad)?
        .narrow(3, pad, wf - 2 * pad)?)
}

fn block_channels(base: usize, n_blocks: usize) -> Vec<usize> {
    // encoder-order output channels: base, 2·base, 4·base, ...
    (0..n_blocks).map(|i| base << i).collect()
}

#[derive(Debug, Clone)]
pub struct Generator {
    fc: Linear,
    convs: Vec<Conv>,
    /// After the dense layer and every conv but the last.
    norms: Vec<BatchNorm>,
    top_channels: usize,
    base: usize,
}

impl Generator {
    fn new<R: Rng + ?Sized>(
        input_width: usize,
        shape: ImageShape,
        arch: &ArchConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let layout = shape.layout()?;
        let n = layout.blocks.len();
        let enc = block_channels(arch.generator_channels, n);
        let top = enc[n - 1];
        let fc = Linear::new(input_width, top * layout.base * layout.base, rng)?;
        let mut convs = Vec::with_capacity(n);
        let mut norms = vec![BatchNorm::new(top)?];
        for (i, &block) in layout.blocks.iter().enumerate() {
            let c_in = enc[n - 1 - i];
            let c_out = if i + 1 == n {
                shape.channels
            } else {
                enc[n - 2 - i]
            };
            convs.push(Conv::new(c_in, c_out, block, true, rng)?);
            if i + 1 < n {
                norms.push(BatchNorm::new(c_out)?);
            }
        }
        Ok(Generator {
            fc,
            convs,
            norms,
            top_channels: top,
            base: layout.base,
        })
    }

    /// `[batch × input_width]` latent matrix to images in `[-1, 1]`.
    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let b = z.dim(0)?;
        let h = self
            .fc
            .forward(z)?
            .reshape((b, self.top_channels, self.base, self.base))?;
        let mut h = self.norms[0].forward(&h, mode)?.relu()?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            h = if i == last {
                h.tanh()?
            } else {
                self.norms[i + 1].forward(&h, mode)?.relu()?
            };
        }
        Ok(h)
    }

    fn params(&self, out: &mut Vec<(String, Var)>) {
        self.fc.params("generator.fc", out);
        for (i, c) in self.convs.iter().enumerate() {
            c.params(&format!("generator.deconv{i}"), out);
        }
        for (i, n) in self.norms.iter().enumerate() {
            n.params(&format!("generator.bn{i}"), out);
        }
    }

    fn buffers(&self, out: &mut Vec<(String, Var)>) {
        for (i, n) in self.norms.iter().enumerate() {
            n.buffers(&format!("generator.bn{i}"), out);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    convs: Vec<Conv>,
    /// After every conv but the first, then after the dense layer.
    norms: Vec<BatchNorm>,
    fc: Linear,
    slope: f64,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(shape: ImageShape, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let layout = shape.layout()?;
        let n = layout.blocks.len();
        let enc = block_channels(arch.base_channels, n);
        let mut convs = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut c_in = shape.channels;
        for (i, &block) in layout.blocks.iter().rev().enumerate() {
            convs.push(Conv::new(c_in, enc[i], block, false, rng)?);
            if i > 0 {
                norms.push(BatchNorm::new(enc[i])?);
            }
            c_in = enc[i];
        }
        norms.push(BatchNorm::new(arch.feature_width)?);
        let fc = Linear::new(
            enc[n - 1] * layout.base * layout.base,
            arch.feature_width,
            rng,
        )?;
        Ok(Encoder {
            convs,
            norms,
            fc,
            slope: arch.leaky_slope,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i > 0 {
                h = self.norms[i - 1].forward(&h, mode)?;
            }
            h = leaky_relu(&h, self.slope)?;
        }
        let h = self.fc.forward(&h.flatten_from(1)?)?;
        let h = self.norms[self.norms.len() - 1].forward(&h, mode)?;
        leaky_relu(&h, self.slope)
    }

    fn params(&self, out: &mut Vec<(String, Var)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.params(&format!("encoder.conv{i}"), out);
        }
        self.fc.params("encoder.fc", out);
        for (i, n) in self.norms.iter().enumerate() {
            n.params(&format!("encoder.bn{i}"), out);
        }
    }

    fn buffers(&self, out: &mut Vec<(String, Var)>) {
        for (i, n) in self.norms.iter().enumerate() {
            n.buffers(&format!("encoder.bn{i}"), out);
        }
    }
}

/// Output of the auxiliary head.
#[derive(Debug, Clone)]
pub struct QOutput {
    pub posterior: GaussianPosterior,
    /// One `[batch × categories]` block per discrete code.
    pub discrete_logits: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct QHead {
    linear: Linear,
    discrete: Vec<usize>,
    continuous: usize,
}

impl QHead {
    pub fn forward(&self, features: &Tensor) -> Result<QOutput> {
        let out = self.linear.forward(features)?;
        let mut discrete_logits = Vec::with_capacity(self.discrete.len());
        let mut at = 0;
        for &c in &self.discrete {
            discrete_logits.push(out.narrow(1, at, c)?);
            at += c;
        }
        let mean = out.narrow(1, at, self.continuous)?;
        let logvar = out.narrow(1, at + self.continuous, self.continuous)?;
        Ok(QOutput {
            posterior: GaussianPosterior::from_mean_logvar(mean, logvar)?,
            discrete_logits,
        })
    }

    pub fn output_width(&self) -> usize {
        self.discrete.iter().sum::<usize>() + 2 * self.continuous
    }
}

/// Multilayer perceptron scoring whether a code vector came from the joint
/// distribution (positive logit) or the product of marginals.
#[derive(Debug, Clone)]
pub struct TcDiscriminator {
    hidden: Vec<Linear>,
    out: Linear,
    slope: f64,
    width: usize,
}

impl TcDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden: usize,
        layers: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "TC discriminator needs nonzero input and hidden width".into(),
            ));
        }
        let mut layers_v = Vec::with_capacity(layers);
        let mut w = inputs;
        for _ in 0..layers {
            layers_v.push(Linear::new(w, hidden, rng)?);
            w = hidden;
        }
        Ok(TcDiscriminator {
            hidden: layers_v,
            out: Linear::new(w, 1, rng)?,
            slope,
            width: inputs,
        })
    }

    /// One logit per row.
    pub fn forward(&self, samples: &Tensor) -> Result<Tensor> {
        let (_, d) = samples.dims2()?;
        if d != self.width {
            return Err(Error::Shape(format!(
                "TC discriminator expects width {}, got {d}",
                self.width
            )));
        }
        let mut h = samples.clone();
        for l in &self.hidden {
            h = leaky_relu(&l.forward(&h)?, self.slope)?;
        }
        Ok(self.out.forward(&h)?.squeeze(D::Minus1)?)
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            l.params(&format!("{prefix}.hidden{i}"), &mut out);
        }
        self.out.params(&format!("{prefix}.out"), &mut out);
        out
    }
}

/// Parameter groups, each trained by exactly the phases that own it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Generator,
    Encoder,
    DiscHead,
    QHead,
    Tcd,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Generator,
        ParamGroup::Encoder,
        ParamGroup::DiscHead,
        ParamGroup::QHead,
        ParamGroup::Tcd,
    ];
}

#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub spec: LatentSpec,
    pub shape: ImageShape,
    pub arch: ArchConfig,
    pub generator: Generator,
    pub encoder: Encoder,
    pub disc_head: Linear,
    pub q_head: QHead,
    /// Absent when the latent space has no continuous codes.
    pub tcd: Option<TcDiscriminator>,
}

/// Builds all networks for `spec` and `shape`, initializing from `rng`.
pub fn build_networks<R: Rng + ?Sized>(
    spec: &LatentSpec,
    shape: ImageShape,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<NetworkBundle> {
    spec.validate()?;
    shape.layout()?;
    if arch.base_channels == 0 || arch.generator_channels == 0 || arch.feature_width == 0 {
        return Err(Error::InvalidArgument(
            "architecture widths must be nonzero".into(),
        ));
    }
    let generator = Generator::new(spec.input_width(), shape, arch, rng)?;
    let encoder = Encoder::new(shape, arch, rng)?;
    let disc_head = Linear::new(arch.feature_width, 1, rng)?;
    let q_head = QHead {
        linear: Linear::new(
            arch.feature_width,
            spec.onehot_width() + 2 * spec.continuous,
            rng,
        )?,
        discrete: spec.discrete.clone(),
        continuous: spec.continuous,
    };
    let tcd = if spec.continuous > 0 {
        Some(TcDiscriminator::new(
            spec.continuous,
            arch.tcd_hidden,
            arch.tcd_layers,
            arch.leaky_slope,
            rng,
        )?)
    } else {
        None
    };
    Ok(NetworkBundle {
        spec: spec.clone(),
        shape,
        arch: arch.clone(),
        generator,
        encoder,
        disc_head,
        q_head,
        tcd,
    })
}

impl NetworkBundle {
    /// Inference-mode generation.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.generate_in(z, Mode::Eval)
    }

    /// Inference-mode encoder features.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        self.features_in(images, Mode::Eval)
    }

    pub fn generate_in(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, w) = z.dims2()?;
        if w != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "generator expects width {}, got {w}",
                self.spec.input_width()
            )));
        }
        self.generator.forward(z, mode)
    }

    pub fn features_in(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if (c, h, w) != (self.shape.channels, self.shape.height, self.shape.width) {
            return Err(Error::Shape(format!(
                "encoder expects {:?}, got {c}x{h}x{w}",
                self.shape
            )));
        }
        self.encoder.forward(images, mode)
    }

    /// One discriminator logit per row.
    pub fn disc(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.disc_head.forward(features)?.squeeze(D::Minus1)?)
    }

    pub fn q(&self, features: &Tensor) -> Result<QOutput> {
        self.q_head.forward(features)
    }

    pub fn tc_discriminator_forward(&self, samples: &Tensor) -> Result<Tensor> {
        match &self.tcd {
            Some(t) => t.forward(samples),
            None => Err(Error::Shape(
                "no continuous codes, so there is no TC discriminator".into(),
            )),
        }
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        match group {
            ParamGroup::Generator => self.generator.params(&mut out),
            ParamGroup::Encoder => self.encoder.params(&mut out),
            ParamGroup::DiscHead => self.disc_head.params("disc_head", &mut out),
            ParamGroup::QHead => self.q_head.linear.params("q_head", &mut out),
            ParamGroup::Tcd => {
                if let Some(t) = &self.tcd {
                    out = t.params("tcd");
                }
            }
        }
        out
    }

    pub fn all_params(&self) -> Vec<(String, Var)> {
        ParamGroup::ALL
            .iter()
            .flat_map(|&g| self.group_params(g))
            .collect()
    }

    /// Normalization running averages: state that is saved but not trained.
    pub fn buffers(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.generator.buffers(&mut out);
        self.encoder.buffers(&mut out);
        out
    }

    /// Parameters followed by buffers; everything a checkpoint stores.
    pub fn state(&self) -> Vec<(String, Var)> {
        let mut out = self.all_params();
        out.extend(self.buffers());
        out
    }

    /// Deep copy with freshly allocated parameter storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let copy = self.clone();
        let mut fresh = self.clone();
        // Var clones share storage; rebuild every Var from a copied tensor.
        fresh.generator.fc = relinear(&copy.generator.fc)?;
        for (dst, src) in fresh.generator.convs.iter_mut().zip(&copy.generator.convs) {
            dst.weight = revar(&src.weight)?;
            dst.bias = revar(&src.bias)?;
        }
        for (dst, src) in fresh.encoder.convs.iter_mut().zip(&copy.encoder.convs) {
            dst.weight = revar(&src.weight)?;
            dst.bias = revar(&src.bias)?;
        }
        fresh.encoder.fc = relinear(&copy.encoder.fc)?;
        for (dst, src) in fresh.generator.norms.iter_mut().zip(&copy.generator.norms) {
            *dst = src.deep_clone()?;
        }
        for (dst, src) in fresh.encoder.norms.iter_mut().zip(&copy.encoder.norms) {
            *dst = src.deep_clone()?;
        }
        fresh.disc_head = relinear(&copy.disc_head)?;
        fresh.q_head.linear = relinear(&copy.q_head.linear)?;
        if let (Some(dst), Some(src)) = (fresh.tcd.as_mut(), copy.tcd.as_ref()) {
            for (d, s) in dst.hidden.iter_mut().zip(&src.hidden) {
                *d = relinear(s)?;
            }
            dst.out = relinear(&src.out)?;
        }
        Ok(fresh)
    }
}

fn revar(v: &Var) -> Result<Var> {
    Ok(Var::from_tensor(&v.as_tensor().copy()?)?)
}

fn relinear(l: &Linear) -> Result<Linear> {
    Ok(Linear {
        weight: revar(&l.weight)?,
        bias: revar(&l.bias)?,
    })
}

/// Converts a normalized image tensor to `f32` on the CPU device.
pub(crate) fn images_tensor(data: Vec<f32>, n: usize, shape: ImageShape) -> Result<Tensor> {
    Ok(Tensor::from_vec(
        data,
        (n, shape.channels, shape.height, shape.width),
        &Device::Cpu,
    )?
    .to_dtype(DType::F32)?)
}
