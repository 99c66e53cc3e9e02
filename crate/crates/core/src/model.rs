//! The two BlockCNN variants: artifact removal (AR), which predicts a
//! correction for the centre block of a decoded context, and causal
//! prediction (PRED), which predicts the centre block from the four blocks
//! above and to the left.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::image::{
    extract_block, extract_context, Block8, ByteImage, ColorSpace, Context24, ImageError, BLOCK,
    CONTEXT,
};
use crate::jpeg::{baseline, JpegError};
use crate::nn::layers::LEAKY_SLOPE;
use crate::nn::{
    ArchRecord, Checkpoint, CheckpointError, ConvSpec, Layer, LayerSpec, Network, NnError, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Ar,
    Pred,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Ar => 0,
            Variant::Pred => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Ar),
            1 => Some(Variant::Pred),
            _ => None,
        }
    }
}

/// Colorspace code shared by checkpoints and containers.
pub fn colorspace_code(cs: ColorSpace) -> Option<u8> {
    match cs {
        ColorSpace::YCbCr => Some(0),
        ColorSpace::Lab => Some(1),
        ColorSpace::Rgb => None,
    }
}

pub fn colorspace_from_code(code: u8) -> Option<ColorSpace> {
    match code {
        0 => Some(ColorSpace::YCbCr),
        1 => Some(ColorSpace::Lab),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model is a {actual:?} model, {expected:?} required")]
    Variant { expected: Variant, actual: Variant },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub n_res_blocks: usize,
    /// Colorspace of the byte images the model reads and writes.
    pub colorspace: ColorSpace,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            channels: 64,
            n_res_blocks: 9,
            colorspace: ColorSpace::YCbCr,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels < 8 {
            return Err(ModelError::Config(format!(
                "channels must be at least 8, got {}",
                self.channels
            )));
        }
        if self.n_res_blocks < 1 {
            return Err(ModelError::Config("at least one residual block is required".into()));
        }
        if colorspace_code(self.colorspace).is_none() {
            return Err(ModelError::Config("models work in YCbCr or Lab".into()));
        }
        if u32::try_from(self.channels).is_err() || u32::try_from(self.n_res_blocks).is_err() {
            return Err(ModelError::Config("layer sizes exceed 32 bits".into()));
        }
        Ok(())
    }

    fn arch(&self) -> ArchRecord {
        ArchRecord {
            variant: self.variant.code(),
            colorspace: colorspace_code(self.colorspace).expect("validated"),
            channels: self.channels as u32,
            n_res_blocks: self.n_res_blocks as u32,
        }
    }
}

fn conv(in_ch: usize, out_ch: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec {
        in_ch,
        out_ch,
        kernel: 3,
        stride,
        pad,
    })
}

/// Layer list: three 3×3 convolutions at full 24×24 resolution, a crop to
/// the centre 8×8 (so every output pixel sits over the pixel it corrects or
/// predicts), the residual chain, and a 3×3 head to three channels.
pub fn layer_specs(config: &ModelConfig) -> Vec<(String, LayerSpec)> {
    let c = config.channels;
    let act = LayerSpec::LeakyRelu { slope: LEAKY_SLOPE };
    let mut specs = vec![
        ("stem1".to_string(), conv(3, 32, 1, 1)),
        ("stem1_act".to_string(), act),
        ("stem2".to_string(), conv(32, c, 1, 1)),
        ("stem2_act".to_string(), act),
        ("mix".to_string(), conv(c, c, 1, 1)),
        ("crop".to_string(), LayerSpec::CenterCrop { size: BLOCK }),
    ];
    for i in 0..config.n_res_blocks {
        specs.push((format!("res{i}"), LayerSpec::ResBlock { channels: c }));
    }
    specs.push(("head".to_string(), conv(c, 3, 1, 1)));
    specs
}

/// Closed-form trainable parameter count for a configuration.
pub fn expected_param_count(channels: usize, n_res_blocks: usize) -> usize {
    let conv = |i: usize, o: usize| o * i * 9 + o;
    let res = 2 * conv(channels, channels) + 2 * 2 * channels;
    conv(3, 32) + conv(32, channels) + conv(channels, channels) + n_res_blocks * res + conv(channels, 3)
}

/// The AR network emits its correction multiplied by this factor. JPEG
/// corrections are a few gray levels, about 0.03 in network units, which is
/// far below the step Adam takes at the training learning rate.
pub const AR_GAIN: f32 = 8.0;

/// Maps a byte to `[-1, 1]`.
pub fn to_network_domain(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Clamps to `[-1, 1]`, maps back to `[0, 255]` and rounds half away from zero.
pub fn from_network_domain(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5).round() as u8
}

/// Offsets from the centre block kept by the causal mask: the three blocks
/// above and the one to the left.
pub const CAUSAL_OFFSETS: [(isize, isize); 4] = [(-1, -1), (0, -1), (1, -1), (-1, 0)];

/// Mask fill, network-domain zero.
pub const MASK_FILL: u8 = 128;

fn is_causal(gx: usize, gy: usize) -> bool {
    gy == 0 || (gy == 1 && gx == 0)
}

/// Sets the centre and the four blocks right and below it to [`MASK_FILL`].
pub fn apply_causal_mask(ctx: &Context24) -> Context24 {
    let mut out = ctx.clone();
    let fill = Block8::constant(MASK_FILL);
    for gy in 0..3 {
        for gx in 0..3 {
            if !is_causal(gx, gy) {
                out.set_sub_block(gx, gy, &fill);
            }
        }
    }
    out
}

/// Masked context for block `(bx, by)` built from whole blocks; `block`
/// returns `None` for positions outside the block grid, which become
/// [`MASK_FILL`].
pub fn causal_context<E>(
    bx: usize,
    by: usize,
    mut block: impl FnMut(isize, isize) -> Result<Option<Block8>, E>,
) -> Result<Context24, E> {
    let mut ctx = Context24::uniform(MASK_FILL, bx, by);
    for (dx, dy) in CAUSAL_OFFSETS {
        if let Some(b) = block(bx as isize + dx, by as isize + dy)? {
            ctx.set_sub_block((1 + dx) as usize, (1 + dy) as usize, &b);
        }
    }
    Ok(ctx)
}

/// Causal context of block `(bx, by)` read from a fully decoded image.
pub fn causal_context_from_image(
    img: &ByteImage,
    bx: usize,
    by: usize,
) -> Result<Context24, ImageError> {
    let (gw, gh) = img.block_grid();
    if bx >= gw || by >= gh {
        return Err(ImageError::BlockOutOfRange {
            bx,
            by,
            grid_w: gw,
            grid_h: gh,
        });
    }
    causal_context(bx, by, |x, y| {
        if x < 0 || y < 0 || x as usize >= gw || y as usize >= gh {
            Ok(None)
        } else {
            extract_block(img, x as usize, y as usize).map(Some)
        }
    })
}

/// Network input for one context, `3 × 24 × 24` floats.
pub fn context_values(ctx: &Context24) -> [[f32; CONTEXT * CONTEXT]; 3] {
    ctx.samples.map(|plane| plane.map(to_network_domain))
}

/// Regression target for one training pair in network units: the clean
/// block itself for PRED, the correction clean − centre for AR.
pub fn target_values(variant: Variant, ctx: &Context24, clean: &Block8) -> [[f32; BLOCK * BLOCK]; 3] {
    let center = ctx.center();
    std::array::from_fn(|c| {
        std::array::from_fn(|i| {
            let t = to_network_domain(clean.samples[c][i]);
            match variant {
                Variant::Ar => (t - to_network_domain(center.samples[c][i])) * AR_GAIN,
                Variant::Pred => t,
            }
        })
    })
}

/// Stacks contexts into an `N × 3 × 24 × 24` batch.
pub fn contexts_to_tensor(ctxs: &[Context24]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(ctxs.len() * 3 * CONTEXT * CONTEXT);
    for ctx in ctxs {
        for plane in context_values(ctx) {
            data.extend_from_slice(&plane);
        }
    }
    Tensor::from_vec([ctxs.len(), 3, CONTEXT, CONTEXT], data).expect("sized above")
}

/// A training example: network input context and clean target block.
pub fn make_training_pair(
    clean: &ByteImage,
    quality: u8,
    bx: usize,
    by: usize,
    variant: Variant,
) -> Result<(Context24, Block8), ModelError> {
    let (degraded, _) = baseline::round_trip(clean, quality)?;
    Ok(pair_from_degraded(clean, &degraded, bx, by, variant)?)
}

/// [`make_training_pair`] with the JPEG round trip already done. For AR the
/// input is the degraded context; for PRED it is the causal context of the
/// degraded image, which is what a prediction-off decode reconstructs.
pub fn pair_from_degraded(
    clean: &ByteImage,
    degraded: &ByteImage,
    bx: usize,
    by: usize,
    variant: Variant,
) -> Result<(Context24, Block8), ImageError> {
    let target = extract_block(clean, bx, by)?;
    let input = match variant {
        Variant::Ar => extract_context(degraded, bx, by)?,
        Variant::Pred => causal_context_from_image(degraded, bx, by)?,
    };
    Ok((input, target))
}

/// Contexts per inference batch. Bounds the im2col buffers to a few tens of
/// megabytes at the default width.
const INFER_BATCH: usize = 32;

/// A BlockCNN network with its configuration.
pub struct BlockCnn {
    config: ModelConfig,
    net: Network<f32>,
}

impl BlockCnn {
    /// Fresh He-initialised model.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut net = Network::new(&layer_specs(&config))?;
        net.init_he(config.seed);
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn param_count(&mut self) -> usize {
        self.net.param_count()
    }

    /// Zeroes the head convolution, so the network outputs exactly zero.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Conv(head)) = self.net.layer_mut("head") {
            head.weight.data_mut().fill(0.0);
            head.bias.data_mut().fill(0.0);
        }
    }

    fn require(&self, variant: Variant) -> Result<(), ModelError> {
        if self.config.variant != variant {
            return Err(ModelError::Variant {
                expected: variant,
                actual: self.config.variant,
            });
        }
        Ok(())
    }

    /// Raw network output for a batch of contexts, `N × 3 × 8 × 8`.
    pub fn forward_contexts(&self, ctxs: &[Context24]) -> Result<Vec<f32>, ModelError> {
        let chunks: Vec<Result<Vec<f32>, ModelError>> = ctxs
            .par_chunks(INFER_BATCH)
            .map(|chunk| Ok(self.net.infer(&contexts_to_tensor(chunk))?.into_vec()))
            .collect();
        let mut out = Vec::with_capacity(ctxs.len() * 3 * BLOCK * BLOCK);
        for chunk in chunks {
            out.extend(chunk?);
        }
        Ok(out)
    }

    /// Artifact removal for a batch of degraded contexts.
    pub fn infer_ar_batch(&self, ctxs: &[Context24]) -> Result<Vec<Block8>, ModelError> {
        self.require(Variant::Ar)?;
        let raw = self.forward_contexts(ctxs)?;
        Ok(ctxs
            .iter()
            .zip(raw.chunks_exact(3 * BLOCK * BLOCK))
            .map(|(ctx, r)| {
                let center = ctx.center();
                let mut out = Block8::constant(0);
                for c in 0..3 {
                    for i in 0..BLOCK * BLOCK {
                        let v = r[c * BLOCK * BLOCK + i] / AR_GAIN + to_network_domain(center.samples[c][i]);
                        out.samples[c][i] = from_network_domain(v);
                    }
                }
                out
            })
            .collect())
    }

    /// Causal prediction for a batch of masked contexts.
    pub fn infer_pred_batch(&self, ctxs: &[Context24]) -> Result<Vec<Block8>, ModelError> {
        self.require(Variant::Pred)?;
        let raw = self.forward_contexts(ctxs)?;
        Ok(raw
            .chunks_exact(3 * BLOCK * BLOCK)
            .map(|r| {
                let mut out = Block8::constant(0);
                for c in 0..3 {
                    for i in 0..BLOCK * BLOCK {
                        out.samples[c][i] = from_network_domain(r[c * BLOCK * BLOCK + i]);
                    }
                }
                out
            })
            .collect())
    }

    pub fn infer_ar(&self, ctx: &Context24) -> Result<Block8, ModelError> {
        Ok(self.infer_ar_batch(std::slice::from_ref(ctx))?[0])
    }

    pub fn infer_pred(&self, masked: &Context24) -> Result<Block8, ModelError> {
        Ok(self.infer_pred_batch(std::slice::from_ref(masked))?[0])
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        Checkpoint::capture(self.config.arch(), &mut self.net)
    }

    pub fn save(&mut self) -> Vec<u8> {
        self.to_checkpoint().to_bytes()
    }

    /// Rebuilds a model from checkpoint bytes. The seed is not stored and
    /// reads back as zero.
    pub fn load(bytes: &[u8]) -> Result<Self, ModelError> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        Self::from_checkpoint(&ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let a = ckpt.arch;
        let mismatch = |what: String| ModelError::Checkpoint(CheckpointError::ArchitectureMismatch(what));
        let config = ModelConfig {
            variant: Variant::from_code(a.variant)
                .ok_or_else(|| mismatch(format!("unknown variant code {}", a.variant)))?,
            channels: a.channels as usize,
            n_res_blocks: a.n_res_blocks as usize,
            colorspace: colorspace_from_code(a.colorspace)
                .ok_or_else(|| mismatch(format!("unknown colorspace code {}", a.colorspace)))?,
            seed: 0,
        };
        config.validate()?;
        let mut net = Network::new(&layer_specs(&config))?;
        ckpt.restore(&mut net)?;
        Ok(Self { config, net })
    }

    /// Loads checkpoint bytes into this model, whose configuration must
    /// match the stored one.
    pub fn load_into(&mut self, bytes: &[u8]) -> Result<(), ModelError> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        if ckpt.arch != self.config.arch() {
            return Err(ModelError::Checkpoint(CheckpointError::ArchitectureMismatch(format!(
                "checkpoint {:?} does not match model {:?}",
                ckpt.arch,
                self.config.arch()
            ))));
        }
        ckpt.restore(&mut self.net)?;
        Ok(())
    }

    /// Content hash of this model's checkpoint.
    pub fn model_id(&mut self) -> [u8; 8] {
        model_id(&self.save())
    }
}

/// First eight bytes of the SHA-256 of checkpoint bytes.
pub fn model_id(checkpoint: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(checkpoint);
    digest[..8].try_into().expect("digest is 32 bytes")
}

/// A loaded model paired with its id, ready for sharing across threads.
pub struct LoadedModel {
    pub id: [u8; 8],
    pub model: BlockCnn,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Ok(Self {
            id: model_id(bytes),
            model: BlockCnn::load(bytes)?,
        })
    }

    pub fn from_model(mut model: BlockCnn) -> Self {
        Self {
            id: model.model_id(),
            model,
        }
    }
}
