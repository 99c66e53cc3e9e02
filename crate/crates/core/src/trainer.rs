//! Corpus loading, training-pair sampling and the training loop for both
//! model variants.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{load_ppm, Block8, ByteImage, ColorSpace, Context24, ImageError, BLOCK};
use crate::jpeg::{baseline, JpegError};
use crate::model::{
    context_values, pair_from_degraded, target_values, BlockCnn, ModelConfig, ModelError, Variant,
};
use crate::nn::{mse_loss, AdamState, Mode, NnError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step} (lr {lr}): {what}")]
    NonFinite { step: usize, lr: f64, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub quality: u8,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Fraction of images held out for validation.
    pub val_fraction: f64,
    /// Fixed validation pairs scored at every checkpoint.
    pub val_pairs: usize,
    pub channels: usize,
    pub n_res_blocks: usize,
    pub colorspace: ColorSpace,
}

impl TrainConfig {
    pub fn new(variant: Variant, quality: u8) -> Self {
        Self {
            variant,
            quality,
            iterations: 120_000,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            checkpoint_every: 1000,
            val_fraction: 0.2,
            val_pairs: 512,
            channels: 64,
            n_res_blocks: 9,
            colorspace: ColorSpace::YCbCr,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            channels: self.channels,
            n_res_blocks: self.n_res_blocks,
            colorspace: self.colorspace,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch normalization");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie strictly between 0 and 1");
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint interval must be at least 1");
        }
        if self.val_pairs < 1 {
            return bad("at least one validation pair is required");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if !(1..=100).contains(&self.quality) {
            return Err(JpegError::Quality(self.quality).into());
        }
        self.model_config().validate()?;
        Ok(())
    }
}

/// Named byte images in one colorspace.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub images: Vec<(String, ByteImage)>,
}

impl Corpus {
    /// Loads every `*.ppm` in `dir`, sorted by file name, converted to `colorspace`.
    pub fn load_dir(dir: &Path, colorspace: ColorSpace) -> Result<Self, TrainError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| TrainError::Data(format!("cannot read corpus {}: {e}", dir.display())))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")));
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for path in paths {
            let bytes = std::fs::read(&path)?;
            let img = load_ppm(&bytes)
                .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            images.push((name, crate::codec::to_coding_bytes(&img, colorspace)));
        }
        if images.is_empty() {
            return Err(TrainError::Data(format!("no PPM images in {}", dir.display())));
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn total_blocks(&self) -> usize {
        self.images
            .iter()
            .map(|(_, img)| {
                let (w, h) = img.block_grid();
                w * h
            })
            .sum()
    }
}

/// Image-level split: shuffles image indices with `seed` and holds out
/// `round(n · fraction)` of them, at least one on each side.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if n < 2 {
        return Err(TrainError::Data(format!(
            "a train/validation split needs at least 2 images, corpus has {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Clean images with their JPEG-degraded versions, ready for pair sampling.
pub struct PairSource {
    clean: Vec<ByteImage>,
    degraded: Vec<ByteImage>,
    variant: Variant,
}

impl PairSource {
    pub fn new(images: Vec<ByteImage>, quality: u8, variant: Variant) -> Result<Self, TrainError> {
        if images.is_empty() {
            return Err(TrainError::Data("no images to sample from".into()));
        }
        let degraded = images
            .iter()
            .map(|img| baseline::round_trip(img, quality).map(|(d, _)| d))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            clean: images,
            degraded,
            variant,
        })
    }

    pub fn clean(&self) -> &[ByteImage] {
        &self.clean
    }

    pub fn degraded(&self) -> &[ByteImage] {
        &self.degraded
    }

    pub fn pair(&self, image: usize, bx: usize, by: usize) -> Result<(Context24, Block8), TrainError> {
        Ok(pair_from_degraded(
            &self.clean[image],
            &self.degraded[image],
            bx,
            by,
            self.variant,
        )?)
    }

    /// `count` pairs, each from a uniformly drawn image and then a uniformly
    /// drawn block of that image.
    pub fn sample(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<(Context24, Block8)> {
        (0..count)
            .map(|_| {
                let i = rng.random_range(0..self.clean.len());
                let (bw, bh) = self.clean[i].block_grid();
                let (bx, by) = (rng.random_range(0..bw), rng.random_range(0..bh));
                self.pair(i, bx, by).expect("sampled block is in range")
            })
            .collect()
    }
}

/// Input and target tensors for a batch of pairs.
pub fn batch_tensors(variant: Variant, pairs: &[(Context24, Block8)]) -> (Tensor<f32>, Tensor<f32>) {
    let n = pairs.len();
    let mut input = Vec::with_capacity(n * 3 * 576);
    let mut target = Vec::with_capacity(n * 3 * 64);
    for (ctx, clean) in pairs {
        for plane in context_values(ctx) {
            input.extend_from_slice(&plane);
        }
        for plane in target_values(variant, ctx, clean) {
            target.extend_from_slice(&plane);
        }
    }
    (
        Tensor::from_vec([n, 3, 3 * BLOCK, 3 * BLOCK], input).expect("sized above"),
        Tensor::from_vec([n, 3, BLOCK, BLOCK], target).expect("sized above"),
    )
}

/// One log line. `train_mse` averages the batch losses since the previous
/// line (the first line holds the loss of the first batch before any
/// update); `wallclock` is seconds since training started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wallclock: f64,
}

pub fn write_log_csv<W: std::io::Write>(rows: &[LogRow], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv<R: std::io::Read>(input: R) -> Result<Vec<LogRow>, TrainError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub struct TrainOutcome {
    pub model: BlockCnn,
    pub checkpoint: Vec<u8>,
    pub log: Vec<LogRow>,
    pub train_images: Vec<usize>,
    pub val_images: Vec<usize>,
}

/// Mean per-element MSE of the model on pairs, in network units.
pub fn evaluate_mse(model: &BlockCnn, pairs: &[(Context24, Block8)]) -> Result<f64, TrainError> {
    let ctxs: Vec<Context24> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let out = model.forward_contexts(&ctxs)?;
    let variant = model.config().variant;
    let mut sum = 0.0f64;
    for ((ctx, clean), o) in pairs.iter().zip(out.chunks_exact(192)) {
        let t = target_values(variant, ctx, clean);
        for (p, t) in o.iter().zip(t.iter().flatten()) {
            let d = (*p - *t) as f64;
            sum += d * d;
        }
    }
    Ok(sum / (pairs.len() * 192) as f64)
}

/// Seeded model with a zero head, so training starts from the identity
/// correction (AR) or the mid-gray prediction (PRED).
pub fn initial_model(config: &TrainConfig) -> Result<BlockCnn, TrainError> {
    let mut model = BlockCnn::build(config.model_config())?;
    model.zero_head();
    Ok(model)
}

/// Trains a fresh model. `on_checkpoint` receives the step and checkpoint
/// bytes every `checkpoint_every` steps and after the last step.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    mut on_checkpoint: impl FnMut(usize, &[u8]) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::Data("empty corpus".into()));
    }
    if let Some((name, img)) = corpus.images.iter().find(|(_, i)| i.colorspace != config.colorspace) {
        return Err(TrainError::Data(format!(
            "image {name} is {:?}, training runs in {:?}",
            img.colorspace, config.colorspace
        )));
    }
    let start = Instant::now();
    let (train_idx, val_idx) = split_indices(corpus.len(), config.val_fraction, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.images[i].1.clone()).collect();
    let train_src = PairSource::new(pick(&train_idx), config.quality, config.variant)?;
    let val_src = PairSource::new(pick(&val_idx), config.quality, config.variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1);
    let val_pairs = val_src.sample(&mut val_rng, config.val_pairs);

    let mut model = initial_model(config)?;
    let mut adam = AdamState::<f32>::new(config.lr, config.weight_decay);
    let mut log = Vec::new();
    let mut window = (0.0f64, 0usize);
    let diverged = |step: usize, what: String| TrainError::NonFinite {
        step,
        lr: config.lr,
        what,
    };

    for step in 1..=config.iterations {
        let pairs = train_src.sample(&mut rng, config.batch_size);
        let (input, target) = batch_tensors(config.variant, &pairs);
        let net = model.network_mut();
        net.zero_grad();
        let pred = net
            .forward(&input, Mode::Train)
            .map_err(|e| diverged(step, e.to_string()))?;
        let (loss, grad) = mse_loss(&pred, &target)?;
        if !loss.is_finite() {
            return Err(diverged(step, "loss".into()));
        }
        net.backward(&grad).map_err(|e| diverged(step, e.to_string()))?;
        net.clear_cache();
        adam.update(&mut net.params_mut());

        if step == 1 {
            // Loss of the untrained model on its first batch.
            log.push(LogRow {
                step: 0,
                train_mse: loss as f64,
                val_mse: f64::NAN,
                wallclock: 0.0,
            });
        }
        window.0 += loss as f64;
        window.1 += 1;
        if step % config.checkpoint_every == 0 || step == config.iterations {
            let val_mse = evaluate_mse(&model, &val_pairs)?;
            if !val_mse.is_finite() {
                return Err(diverged(step, "validation loss".into()));
            }
            log.push(LogRow {
                step,
                train_mse: window.0 / window.1 as f64,
                val_mse,
                wallclock: start.elapsed().as_secs_f64(),
            });
            log::info!(
                "step {step}: train mse {:.6}, val mse {val_mse:.6}",
                log.last().map_or(0.0, |r| r.train_mse)
            );
            window = (0.0, 0);
            on_checkpoint(step, &model.save())?;
        }
    }
    // The step-0 validation score needs the untrained weights, which are
    // gone by now; rebuild them from the seed.
    log[0].val_mse = evaluate_mse(&initial_model(config)?, &val_pairs)?;
    let checkpoint = model.save();
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
        train_images: train_idx,
        val_images: val_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> ByteImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ByteImage::filled(32, 32, ColorSpace::YCbCr, [0; 3]);
        let f: f64 = rng.random_range(0.2..0.6);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let v = 128.0 + 80.0 * ((x as f64 * f).sin() + (y as f64 * f * 0.7 + c as f64).cos()) / 2.0;
                    img.planes[c][y * 32 + x] = v as u8;
                }
            }
        }
        img
    }

    fn corpus(n: u64) -> Corpus {
        Corpus {
            images: (0..n).map(|i| (format!("img{i}"), textured(i))).collect(),
        }
    }

    fn tiny(variant: Variant) -> TrainConfig {
        TrainConfig {
            iterations: 6,
            batch_size: 4,
            checkpoint_every: 3,
            val_pairs: 8,
            channels: 8,
            n_res_blocks: 1,
            seed: 3,
            ..TrainConfig::new(variant, 20)
        }
    }

    #[test]
    fn split_is_image_level_and_seeded() {
        let (t, v) = split_indices(10, 0.2, 1).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let mut all: Vec<_> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.2, 1).unwrap(), (t, v));
        assert_eq!(split_indices(2, 0.01, 0).unwrap().1.len(), 1);
        assert!(split_indices(1, 0.5, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let src = PairSource::new(vec![textured(1), textured(2)], 20, Variant::Ar).unwrap();
        let a = src.sample(&mut ChaCha8Rng::seed_from_u64(4), 16);
        let b = src.sample(&mut ChaCha8Rng::seed_from_u64(4), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Variant::Ar);
        c.batch_size = 1;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let mut c = tiny(Variant::Ar);
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny(Variant::Ar);
        c.iterations = 0;
        assert!(c.validate().is_err());
        assert!(tiny(Variant::Pred).validate().is_ok());
    }

    #[test]
    fn runs_are_reproducible_and_log_every_interval() {
        let corpus = corpus(4);
        let mut seen = Vec::new();
        let a = train(&tiny(Variant::Pred), &corpus, |step, _| {
            seen.push(step);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6]);
        assert_eq!(a.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 3, 6]);
        let b = train(&tiny(Variant::Pred), &corpus, |_, _| Ok(())).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!((x.step, x.train_mse, x.val_mse), (y.step, y.train_mse, y.val_mse));
        }
    }

    #[test]
    fn log_csv_round_trips() {
        let rows = vec![
            LogRow { step: 0, train_mse: 0.25, val_mse: 0.5, wallclock: 0.0 },
            LogRow { step: 100, train_mse: 0.125, val_mse: 0.2, wallclock: 1.5 },
        ];
        let mut buf = Vec::new();
        write_log_csv(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"step,train_mse,val_mse,wallclock\n"));
        assert_eq!(read_log_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn divergence_is_reported_with_step_and_lr() {
        let mut c = tiny(Variant::Ar);
        c.lr = 1e30;
        c.iterations = 20;
        match train(&c, &corpus(3), |_, _| Ok(())) {
            Err(TrainError::NonFinite { step, lr, .. }) => {
                assert!(step >= 1);
                assert_eq!(lr, 1e30);
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
        }
    }
}
