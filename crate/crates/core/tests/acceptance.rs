//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Trains two desk-scale models, so expect tens of minutes on a
//! single core.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use blockcnn::codec::{self, NoModels};
use blockcnn::enhance::enhance_bytes;
use blockcnn::eval::{self, Mode, SweepModels};
use blockcnn::image::{ByteImage, ColorSpace};
use blockcnn::jpeg::{
    baseline, build_quant_tables, dequantize_block, entropy_decode_block, entropy_encode_block,
    fdct_8x8, idct_8x8, quantize_block, unzigzag, zigzag, BitReader, BitWriter, ChannelClass,
    CoeffBlock, ZIGZAG,
};
use blockcnn::model::{layer_specs, LoadedModel, ModelConfig, Variant};
use blockcnn::nn::layers::LEAKY_SLOPE;
use blockcnn::nn::{ConvSpec, LayerSpec};
use blockcnn::trainer::{self, Corpus, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

const DESK_QUALITY: u8 = 20;
const DESK_SEED: u64 = 1;
const RATE_TARGET: f64 = 0.45;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Res<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus")
}

struct Data {
    rgb: Corpus,
    ycc: Corpus,
}

struct Desk {
    ar: TrainOutcome,
    pred: TrainOutcome,
}

impl Desk {
    /// Held-out images as (name, original RGB, YCbCr bytes).
    fn held_out<'a>(&self, data: &'a Data) -> Vec<(&'a str, &'a ByteImage, &'a ByteImage)> {
        self.ar
            .val_images
            .iter()
            .map(|&i| (data.rgb.images[i].0.as_str(), &data.rgb.images[i].1, &data.ycc.images[i].1))
            .collect()
    }
}

fn desk_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        iterations: 2000,
        batch_size: 32,
        lr: 1e-3,
        weight_decay: 1e-4,
        seed: DESK_SEED,
        checkpoint_every: 500,
        val_pairs: 256,
        channels: 32,
        n_res_blocks: 2,
        ..TrainConfig::new(variant, DESK_QUALITY)
    }
}

fn random_crop(img: &ByteImage, rng: &mut ChaCha8Rng) -> ByteImage {
    let w = rng.random_range(20..=img.width.min(160));
    let h = rng.random_range(20..=img.height.min(160));
    let x0 = rng.random_range(0..=img.width - w);
    let y0 = rng.random_range(0..=img.height - h);
    let planes = std::array::from_fn(|c| {
        (0..h)
            .flat_map(|y| {
                let row = (y0 + y) * img.width + x0;
                img.planes[c][row..row + w].iter().copied()
            })
            .collect()
    });
    ByteImage {
        width: w,
        height: h,
        colorspace: img.colorspace,
        planes,
    }
}

fn differing_samples(a: &ByteImage, b: &ByteImage) -> usize {
    if (a.width, a.height) != (b.width, b.height) {
        return usize::MAX;
    }
    (0..3)
        .map(|c| a.planes[c].iter().zip(&b.planes[c]).filter(|(x, y)| x != y).count())
        .sum()
}

fn criterion_1(data: &Data) -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut cases = 0;
    let mut bad = 0usize;
    for i in 0..12 {
        let src = &data.rgb.images[i % data.rgb.len()].1;
        let crop = random_crop(src, &mut rng);
        let raster = crop.to_raster();
        for q in [10, 20, 50, 80] {
            let stream = codec::encode_image(&raster, q, ColorSpace::YCbCr, None)?;
            let ycc = codec::to_coding_bytes(&raster, ColorSpace::YCbCr);
            let scan = baseline::encode(&ycc, q)?;
            let reference =
                baseline::decode(&scan, crop.width, crop.height, q, ColorSpace::YCbCr)?;
            let (_, decoded) = codec::decode_bytes(&stream, &NoModels, |_| {})?;
            if stream[codec::HEADER_LEN..] != scan[..] {
                bad += 1;
            }
            bad += differing_samples(&decoded, &reference).min(1 << 30);
            cases += 1;
        }
    }
    verdict(bad == 0, format!("{cases} image/quality cases, {bad} mismatches"))
}

fn criterion_2(data: &Data, desk: &Desk) -> Res<Verdict> {
    let model = LoadedModel::from_bytes(&desk.pred.checkpoint)?;
    type Trace = Vec<(usize, [[u8; 64]; 3], Vec<u8>)>;
    let snapshot = |e: &codec::BlockEvent| -> (usize, [[u8; 64]; 3], Vec<u8>) {
        let buf: Vec<u8> = e
            .recon
            .written_prefix()
            .flat_map(|b| b.samples.iter().flatten().copied().collect::<Vec<_>>())
            .collect();
        (e.index, e.prediction.samples, buf)
    };
    let mut blocks = 0;
    let mut mismatches = 0;
    for (_, img) in data.ycc.images.iter().take(3) {
        let mut enc: Trace = Vec::new();
        let mut dec: Trace = Vec::new();
        let stream = codec::encode_bytes(img, DESK_QUALITY, Some(&model), |e| enc.push(snapshot(e)))?;
        codec::decode_bytes(&stream, &model, |e| dec.push(snapshot(e)))?;
        blocks += enc.len();
        mismatches += enc.len().abs_diff(dec.len());
        mismatches += enc.iter().zip(&dec).filter(|(a, b)| a != b).count();
    }
    verdict(
        mismatches == 0 && blocks > 0,
        format!("3 images, {blocks} blocks compared after every block, {mismatches} mismatches"),
    )
}

fn criterion_3() -> Res<Verdict> {
    const N: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    let mut dct_err = 0.0f64;
    for _ in 0..N {
        let block: [f64; 64] = std::array::from_fn(|_| rng.random_range(-128.0..128.0));
        let back = idct_8x8(&fdct_8x8(&block));
        for (a, b) in block.iter().zip(&back) {
            dct_err = dct_err.max((a - b).abs());
        }
    }

    let mut entropy_bad = 0usize;
    for class in [ChannelClass::Luma, ChannelClass::Chroma] {
        let blocks: Vec<CoeffBlock> = (0..N / 2)
            .map(|_| CoeffBlock {
                coeffs: std::array::from_fn(|i| {
                    let limit = if i == 0 { 2047 } else { 1023 };
                    match rng.random_range(0..10) {
                        0..=5 => 0,
                        6..=8 => rng.random_range(-15..=15),
                        _ => rng.random_range(-limit..=limit),
                    }
                }),
            })
            .collect();
        let mut w = BitWriter::new();
        let mut pred = 0;
        for b in &blocks {
            pred = entropy_encode_block(b, pred, class, &mut w);
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        let mut pred = 0;
        for b in &blocks {
            let (d, p) = entropy_decode_block(&mut r, pred, class)?;
            pred = p;
            entropy_bad += usize::from(&d != b);
        }
        r.expect_padding()?;
    }

    let mut algebra_bad = 0usize;
    // Zigzag: a permutation visiting anti-diagonals in order, inverse of unzigzag.
    let mut seen = [false; 64];
    for (k, &n) in ZIGZAG.iter().enumerate() {
        seen[n] = true;
        if k > 0 {
            let (a, b) = (ZIGZAG[k - 1], n);
            algebra_bad += usize::from(a / 8 + a % 8 > b / 8 + b % 8);
        }
    }
    algebra_bad += seen.iter().filter(|s| !**s).count();
    for _ in 0..1000 {
        let v: [i32; 64] = std::array::from_fn(|_| rng.random_range(-2047..=2047));
        algebra_bad += usize::from(unzigzag(&zigzag(&v)) != v);
        algebra_bad += usize::from(zigzag(&unzigzag(&v)) != v);
    }
    // Quantization: odd, monotone and idempotent, for every quality.
    for q in 1..=100u8 {
        let (luma, chroma) = build_quant_tables(q)?;
        for qt in [&luma, &chroma] {
            for _ in 0..50 {
                let x: [f64; 64] = std::array::from_fn(|_| rng.random_range(-2100.0..2100.0));
                let bump: [f64; 64] = std::array::from_fn(|_| rng.random_range(0.0..40.0));
                let y: [f64; 64] = std::array::from_fn(|i| x[i] + bump[i]);
                let neg: [f64; 64] = std::array::from_fn(|i| -x[i]);
                let qx = quantize_block(&x, qt);
                let qn = quantize_block(&neg, qt);
                let qy = quantize_block(&y, qt);
                algebra_bad += (0..64).filter(|&i| qn.coeffs[i] != -qx.coeffs[i]).count();
                algebra_bad += (0..64).filter(|&i| qy.coeffs[i] < qx.coeffs[i]).count();
                algebra_bad += usize::from(quantize_block(&dequantize_block(&qx, qt), qt) != qx);
            }
        }
        if q > 1 {
            let (prev, _) = build_quant_tables(q - 1)?;
            algebra_bad += (0..64).filter(|&i| luma.entries[i] > prev.entries[i]).count();
        }
    }

    verdict(
        dct_err < 1e-3 && entropy_bad == 0 && algebra_bad == 0,
        format!(
            "DCT round trip max error {dct_err:.2e} over {N} blocks, entropy mismatches {entropy_bad} over {N} blocks, algebraic violations {algebra_bad}"
        ),
    )
}

fn criterion_4() -> Res<Verdict> {
    let one = |spec: LayerSpec| vec![("layer".to_string(), spec)];
    let conv = |in_ch, out_ch, kernel, stride, pad| {
        LayerSpec::Conv(ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        })
    };
    let cases: Vec<(&str, Vec<(String, LayerSpec)>, [usize; 4], Option<usize>)> = vec![
        ("conv3x3", one(conv(2, 3, 3, 1, 1)), [2, 2, 6, 5], None),
        ("conv-stride3", one(conv(3, 2, 3, 3, 0)), [2, 3, 9, 6], None),
        ("batchnorm", one(LayerSpec::BatchNorm { channels: 3 }), [3, 3, 4, 4], None),
        ("leaky-relu", one(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }), [2, 2, 5, 5], None),
        ("resblock", one(LayerSpec::ResBlock { channels: 3 }), [2, 3, 5, 5], None),
        ("crop", one(LayerSpec::CenterCrop { size: 3 }), [2, 2, 7, 6], None),
        (
            "model-ar",
            layer_specs(&ModelConfig {
                channels: 4,
                n_res_blocks: 2,
                ..ModelConfig::new(Variant::Ar)
            }),
            [2, 3, 12, 12],
            Some(48),
        ),
        (
            "model-pred",
            layer_specs(&ModelConfig {
                channels: 4,
                n_res_blocks: 2,
                ..ModelConfig::new(Variant::Pred)
            }),
            [2, 3, 12, 12],
            Some(48),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, specs, shape, per) in cases {
        let r = common::grad_check(&specs, shape, 17, per);
        pass &= r.worst < 1e-3 && r.kinked * 4 <= r.checked;
        parts.push(format!("{name} {:.1e} ({} kinked of {})", r.worst, r.kinked, r.checked));
    }
    verdict(pass, parts.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(data: &Data, desk: &Desk) -> Res<Verdict> {
    let cfg = desk_config(Variant::Ar);
    let (mut jpeg, mut enhanced) = (Vec::new(), Vec::new());
    for (_, rgb, ycc) in desk.held_out(data) {
        let (deg, _) = baseline::round_trip(ycc, DESK_QUALITY)?;
        let enh = enhance_bytes(&deg, &desk.ar.model)?;
        jpeg.push(eval::psnr(rgb, &deg.convert(ColorSpace::Rgb))?);
        enhanced.push(eval::psnr(rgb, &enh.convert(ColorSpace::Rgb))?);
    }
    let gain = mean(&enhanced) - mean(&jpeg);
    verdict(
        gain >= 0.2,
        format!(
            "{} held-out images, {} sampled pairs, PSNR JPEG {:.3} dB, enhanced {:.3} dB, gain {gain:+.3} dB (need >= +0.2)",
            jpeg.len(),
            cfg.iterations * cfg.batch_size,
            mean(&jpeg),
            mean(&enhanced)
        ),
    )
}

/// Qualities for the low-rate comparisons.
const SWEEP_QUALITIES: [u8; 12] = [2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30];

fn criterion_6(data: &Data, desk: &Desk) -> Res<Verdict> {
    let model = LoadedModel::from_bytes(&desk.pred.checkpoint)?;
    let held = desk.held_out(data);
    // Residual energy of the predictions the encoder actually makes.
    let (mut e_model, mut e_const) = (0.0f64, 0.0f64);
    for (_, _, ycc) in &held {
        let mut preds = Vec::new();
        codec::encode_bytes(ycc, DESK_QUALITY, Some(&model), |e| {
            preds.push((e.bx, e.by, *e.prediction))
        })?;
        for (bx, by, p) in preds {
            let clean = blockcnn::image::extract_block(ycc, bx, by)?;
            for c in 0..3 {
                for i in 0..64 {
                    let t = clean.samples[c][i] as f64;
                    e_model += (p.samples[c][i] as f64 - t).powi(2);
                    e_const += (128.0 - t).powi(2);
                }
            }
        }
    }
    let ratio = e_model / e_const;

    let pixels: usize = held.iter().map(|(_, _, i)| i.width * i.height).sum();
    let mut low_rate = Vec::new();
    for q in SWEEP_QUALITIES {
        let (mut off, mut on) = (0usize, 0usize);
        for (_, _, ycc) in &held {
            off += codec::encode_bytes(ycc, q, None, |_| {})?.len();
            on += codec::encode_bytes(ycc, q, Some(&model), |_| {})?.len();
        }
        let (off, on) = (eval::bpp(off, pixels, 1), eval::bpp(on, pixels, 1));
        if off <= 0.5 {
            low_rate.push((q, off, on));
        }
    }
    let rate_ok = !low_rate.is_empty() && low_rate.iter().all(|(_, off, on)| on < off);
    let rates: Vec<String> =
        low_rate.iter().map(|(q, off, on)| format!("Q{q} {off:.3}->{on:.3}")).collect();
    verdict(
        ratio <= 0.9 && rate_ok,
        format!(
            "residual energy vs constant-128 {:.1}% (need <= 90%), bpp off->on at low rates: {}",
            100.0 * ratio,
            rates.join(", ")
        ),
    )
}

fn criterion_7(data: &Data) -> Res<Verdict> {
    let images: Vec<ByteImage> = data.ycc.images.iter().map(|(_, i)| i.clone()).collect();
    let grid = eval::block_position_mse(&images, DESK_QUALITY)?;
    let blocks = data.ycc.total_blocks();
    let (border, center) = (eval::border_mean(&grid), eval::center_mean(&grid));
    verdict(
        blocks >= 10_000 && border > center,
        format!("{blocks} blocks, border mean {border:.3}, centre mean {center:.3}"),
    )
}

fn criterion_8(data: &Data, desk: &Desk) -> Res<Verdict> {
    let pred = LoadedModel::from_bytes(&desk.pred.checkpoint)?;
    let corpus: Vec<(String, ByteImage)> = desk
        .held_out(data)
        .into_iter()
        .map(|(n, rgb, _)| (n.to_string(), rgb.clone()))
        .collect();
    let modes = [Mode::Jpeg, Mode::JpegAr, Mode::Bcnn, Mode::BcnnAr];
    let records = eval::rd_sweep(
        &corpus,
        &SWEEP_QUALITIES,
        &modes,
        SweepModels {
            ar: Some(&desk.ar.model),
            pred: Some(&pred),
        },
        ColorSpace::YCbCr,
    )?;
    let all_modes = modes.iter().all(|m| records.iter().any(|r| r.mode == *m));
    let at = |m: Mode| eval::psnr_at_bpp(&records, m, RATE_TARGET);
    let (Some(j), Some(ja), Some(b), Some(ba)) =
        (at(Mode::Jpeg), at(Mode::JpegAr), at(Mode::Bcnn), at(Mode::BcnnAr))
    else {
        return verdict(false, format!("sweep does not bracket {RATE_TARGET} bpp"));
    };
    let ordered = ba.0 >= ja.0 && ba.0 >= b.0 && ja.0 >= j.0 && b.0 >= j.0;
    verdict(
        all_modes && ordered,
        format!(
            "PSNR at {RATE_TARGET} bpp: JPEG {:.3}, JPEG+AR {:.3}, BCNN {:.3}, BCNN+AR {:.3} ({} images)",
            j.0, ja.0, b.0, ba.0, j.1
        ),
    )
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> Res<T> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f))
}

fn criterion_9(data: &Data, desk: &Desk) -> Res<Verdict> {
    let model = LoadedModel::from_bytes(&desk.pred.checkpoint)?;
    let img = &data.ycc.images[0].1;
    let mut diffs = Vec::new();

    let code = |n| {
        with_threads(n, || -> Res<(Vec<u8>, ByteImage, ByteImage)> {
            let s = codec::encode_bytes(img, DESK_QUALITY, Some(&model), |_| {})?;
            let (_, d) = codec::decode_bytes(&s, &model, |_| {})?;
            let e = enhance_bytes(&d, &desk.ar.model)?;
            Ok((s, d, e))
        })?
    };
    let first = code(1)?;
    for n in [1, 2, 3] {
        if code(n)? != first {
            diffs.push(format!("codec at {n} threads"));
        }
    }

    let small: Vec<(String, ByteImage)> =
        data.ycc.images.iter().take(4).map(|(n, i)| (n.clone(), i.crop(64, 64).unwrap())).collect();
    let corpus = Corpus { images: small };
    let cfg = TrainConfig {
        iterations: 30,
        batch_size: 8,
        checkpoint_every: 10,
        val_pairs: 32,
        channels: 8,
        n_res_blocks: 1,
        seed: 9,
        ..TrainConfig::new(Variant::Pred, DESK_QUALITY)
    };
    let run = |n| {
        with_threads(n, || -> Res<(Vec<u8>, Vec<(usize, f64, f64)>)> {
            let mut saved = Vec::new();
            let out = trainer::train(&cfg, &corpus, |_, b| {
                saved.extend_from_slice(b);
                Ok(())
            })?;
            let log = out.log.iter().map(|r| (r.step, r.train_mse, r.val_mse)).collect();
            saved.extend_from_slice(&out.checkpoint);
            Ok((saved, log))
        })?
    };
    let base = run(1)?;
    for n in [1, 2, 3] {
        let (ckpts, log) = run(n)?;
        if ckpts != base.0 || log.iter().zip(&base.1).any(|(a, b)| a.0 != b.0 || a.1.to_bits() != b.1.to_bits() || a.2.to_bits() != b.2.to_bits()) {
            diffs.push(format!("training at {n} threads"));
        }
    }
    verdict(
        diffs.is_empty(),
        if diffs.is_empty() {
            "encode, decode, enhance and training identical across repeats and 1/2/3 threads".to_string()
        } else {
            format!("differences: {}", diffs.join(", "))
        },
    )
}

fn train_desk(data: &Data) -> Res<Desk> {
    let t = Instant::now();
    let ar = trainer::train(&desk_config(Variant::Ar), &data.ycc, |_, _| Ok(()))?;
    eprintln!("trained AR desk model in {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let pred = trainer::train(&desk_config(Variant::Pred), &data.ycc, |_, _| Ok(()))?;
    eprintln!("trained PRED desk model in {:.0}s", t.elapsed().as_secs_f64());
    Ok(Desk { ar, pred })
}

fn report(n: usize, name: &str, result: Res<Verdict>, secs: f64) -> bool {
    let (pass, detail) = match result {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} criterion {n} [{name}] {detail} ({secs:.1}s)",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() {
    let data = Data {
        rgb: Corpus::load_dir(&corpus_dir(), ColorSpace::Rgb).expect("corpus"),
        ycc: Corpus::load_dir(&corpus_dir(), ColorSpace::YCbCr).expect("corpus"),
    };
    let mut ok = true;
    let mut timed = |n: usize, name: &str, f: &mut dyn FnMut() -> Res<Verdict>| {
        let t = Instant::now();
        let r = f();
        ok &= report(n, name, r, t.elapsed().as_secs_f64());
    };
    timed(1, "baseline equivalence", &mut || criterion_1(&data));
    timed(3, "codec kernels", &mut || criterion_3());
    timed(4, "gradients", &mut || criterion_4());
    timed(7, "block-position error", &mut || criterion_7(&data));

    let desk = train_desk(&data);
    match &desk {
        Ok(desk) => {
            timed(2, "lockstep", &mut || criterion_2(&data, desk));
            timed(5, "AR desk gain", &mut || criterion_5(&data, desk));
            timed(6, "PRED desk gain", &mut || criterion_6(&data, desk));
            timed(8, "rate-distortion ordering", &mut || criterion_8(&data, desk));
            timed(9, "determinism", &mut || criterion_9(&data, desk));
        }
        Err(e) => {
            for (n, name) in [(2, "lockstep"), (5, "AR desk gain"), (6, "PRED desk gain"), (8, "rate-distortion ordering"), (9, "determinism")] {
                println!("FAIL criterion {n} [{name}] desk training failed: {e}");
            }
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
