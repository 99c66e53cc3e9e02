//! Quality and rate metrics, the within-block error statistic, and
//! rate–distortion sweeps over the four codec/enhancement combinations.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_bytes, encode_bytes, CodecError, NoModels};
use crate::enhance::enhance_bytes;
use crate::image::{ByteImage, ColorSpace, BLOCK};
use crate::jpeg::{baseline, JpegError};
use crate::model::{BlockCnn, LoadedModel, ModelError};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn same_shape(a: &ByteImage, b: &ByteImage) -> Result<(), EvalError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(EvalError::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.colorspace != b.colorspace {
        return Err(EvalError::Dimension(format!(
            "{:?} vs {:?} images",
            a.colorspace, b.colorspace
        )));
    }
    Ok(())
}

/// Sum of squared differences over all three planes.
fn sse(a: &ByteImage, b: &ByteImage) -> f64 {
    a.planes
        .iter()
        .zip(&b.planes)
        .flat_map(|(pa, pb)| pa.iter().zip(pb))
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as f64
        })
        .sum()
}

/// `10·log10(255² / MSE)` over all channels jointly; [`PSNR_CAP`] when equal.
pub fn psnr(a: &ByteImage, b: &ByteImage) -> Result<f64, EvalError> {
    same_shape(a, b)?;
    let mse = sse(a, b) / (3 * a.width * a.height) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

/// Luma on the 0–255 scale: BT.601 weights for RGB, plane 0 otherwise.
pub fn luma(img: &ByteImage) -> Vec<f64> {
    match img.colorspace {
        ColorSpace::Rgb => (0..img.width * img.height)
            .map(|i| {
                0.299 * img.planes[0][i] as f64
                    + 0.587 * img.planes[1][i] as f64
                    + 0.114 * img.planes[2][i] as f64
            })
            .collect(),
        _ => img.planes[0].iter().map(|&v| v as f64).collect(),
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = raw.iter().sum();
    raw.map(|v| v / sum)
}

/// Separable Gaussian filter over valid window positions only.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the luma channels over every valid 11×11 window position.
pub fn ssim(a: &ByteImage, b: &ByteImage) -> Result<f64, EvalError> {
    same_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::Dimension(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, w, h, &taps);
    let mu_y = filter_valid(&y, w, h, &taps);
    let xx = filter_valid(&prod(&x, &x), w, h, &taps);
    let yy = filter_valid(&prod(&y, &y), w, h, &taps);
    let xy = filter_valid(&prod(&x, &y), w, h, &taps);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Bits per pixel of an encoded stream for the original image size.
pub fn bpp(encoded_bytes: usize, width: usize, height: usize) -> f64 {
    encoded_bytes as f64 * 8.0 / (width * height) as f64
}

/// Running per-position squared error of luma within 8×8 blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMseAccumulator {
    sum: [f64; 64],
    count: [u64; 64],
}

impl Default for BlockMseAccumulator {
    fn default() -> Self {
        Self {
            sum: [0.0; 64],
            count: [0; 64],
        }
    }
}

impl BlockMseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the luma (plane 0) errors of one image pair.
    pub fn add(&mut self, clean: &ByteImage, degraded: &ByteImage) -> Result<(), EvalError> {
        same_shape(clean, degraded)?;
        let w = clean.width;
        for (i, (&a, &b)) in clean.planes[0].iter().zip(&degraded.planes[0]).enumerate() {
            let pos = (i / w % BLOCK) * BLOCK + i % w % BLOCK;
            let d = a as i64 - b as i64;
            self.sum[pos] += (d * d) as f64;
            self.count[pos] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for i in 0..64 {
            self.sum[i] += other.sum[i];
            self.count[i] += other.count[i];
        }
    }

    pub fn samples(&self) -> u64 {
        self.count.iter().sum()
    }

    pub fn grid(&self) -> Result<[f64; 64], EvalError> {
        if self.count.contains(&0) {
            return Err(EvalError::Data("no samples for some block positions".into()));
        }
        Ok(std::array::from_fn(|i| self.sum[i] / self.count[i] as f64))
    }
}

/// Per-position mean squared luma error after a JPEG round trip at `quality`.
/// Images must be in a luma-first colorspace (YCbCr or Lab).
pub fn block_position_mse(corpus: &[ByteImage], quality: u8) -> Result<[f64; 64], EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Data("empty corpus".into()));
    }
    let parts = corpus
        .par_iter()
        .map(|img| {
            let (degraded, _) = baseline::round_trip(img, quality)?;
            let mut acc = BlockMseAccumulator::new();
            acc.add(img, &degraded)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut total = BlockMseAccumulator::new();
    for p in &parts {
        total.merge(p);
    }
    total.grid()
}

fn is_border(pos: usize) -> bool {
    let (y, x) = (pos / BLOCK, pos % BLOCK);
    x == 0 || y == 0 || x == BLOCK - 1 || y == BLOCK - 1
}

fn is_center(pos: usize) -> bool {
    let (y, x) = (pos / BLOCK, pos % BLOCK);
    (3..=4).contains(&x) && (3..=4).contains(&y)
}

/// Mean over the 28 positions on the block border.
pub fn border_mean(grid: &[f64; 64]) -> f64 {
    (0..64).filter(|&p| is_border(p)).map(|p| grid[p]).sum::<f64>() / 28.0
}

/// Mean over the 4 central positions.
pub fn center_mean(grid: &[f64; 64]) -> f64 {
    (0..64).filter(|&p| is_center(p)).map(|p| grid[p]).sum::<f64>() / 4.0
}

/// Grid as 8 lines of 8 comma-separated values.
pub fn write_grid_csv<W: std::io::Write>(grid: &[f64; 64], out: W) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in grid.chunks(BLOCK) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv<R: std::io::Read>(input: R) -> Result<[f64; 64], EvalError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut values = Vec::with_capacity(64);
    for rec in r.records() {
        for field in rec?.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| EvalError::Data(e.to_string()))?);
        }
    }
    values
        .try_into()
        .map_err(|v: Vec<f64>| EvalError::Data(format!("grid has {} values, expected 64", v.len())))
}

/// Binary PGM heat map: each position a `scale × scale` square, brightness
/// proportional to error (maximum maps to 255).
pub fn grid_pgm(grid: &[f64; 64], scale: usize) -> Vec<u8> {
    let max = grid.iter().cloned().fold(0.0f64, f64::max);
    let side = BLOCK * scale;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = grid[(y / scale) * BLOCK + x / scale];
            out.push(if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Jpeg,
    JpegAr,
    Bcnn,
    BcnnAr,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Jpeg, Mode::JpegAr, Mode::Bcnn, Mode::BcnnAr];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Jpeg => "JPEG",
            Mode::JpegAr => "JPEG+AR",
            Mode::Bcnn => "BCNN",
            Mode::BcnnAr => "BCNN+AR",
        }
    }

    pub fn uses_ar(self) -> bool {
        matches!(self, Mode::JpegAr | Mode::BcnnAr)
    }

    pub fn uses_pred(self) -> bool {
        matches!(self, Mode::Bcnn | Mode::BcnnAr)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown mode {s:?} (expected jpeg, jpeg+ar, bcnn or bcnn+ar)"))
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of a rate–distortion sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub image: String,
    pub quality: u8,
    pub mode: Mode,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Models for the learned modes.
#[derive(Clone, Copy, Default)]
pub struct SweepModels<'a> {
    pub ar: Option<&'a BlockCnn>,
    pub pred: Option<&'a LoadedModel>,
}

/// Evaluates every (image, quality, mode) cell. `corpus` holds clean RGB
/// images; coding happens in `colorspace`, metrics are computed in RGB.
/// Rows come out ordered by image, quality, then mode.
pub fn rd_sweep(
    corpus: &[(String, ByteImage)],
    qualities: &[u8],
    modes: &[Mode],
    models: SweepModels<'_>,
    colorspace: ColorSpace,
) -> Result<Vec<MetricsRecord>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Data("empty corpus".into()));
    }
    if modes.iter().any(|m| m.uses_ar()) && models.ar.is_none() {
        return Err(EvalError::Config("an AR model is required for the +AR modes".into()));
    }
    if modes.iter().any(|m| m.uses_pred()) && models.pred.is_none() {
        return Err(EvalError::Config("a PRED model is required for the BCNN modes".into()));
    }
    if let Some((name, _)) = corpus.iter().find(|(_, img)| img.colorspace != ColorSpace::Rgb) {
        return Err(EvalError::Data(format!("image {name} is not RGB")));
    }
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let cells: Vec<(usize, u8)> = (0..corpus.len())
        .flat_map(|i| qualities.iter().map(move |&q| (i, q)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, q)| evaluate_cell(&corpus[i].0, &corpus[i].1, q, &modes, models, colorspace))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn evaluate_cell(
    name: &str,
    clean: &ByteImage,
    quality: u8,
    modes: &[Mode],
    models: SweepModels<'_>,
    colorspace: ColorSpace,
) -> Result<Vec<MetricsRecord>, EvalError> {
    let coded = clean.convert(colorspace);
    let mut out = Vec::new();
    for predictive in [false, true] {
        let wanted: Vec<Mode> = modes.iter().copied().filter(|m| m.uses_pred() == predictive).collect();
        if wanted.is_empty() {
            continue;
        }
        let model = if predictive { models.pred } else { None };
        let stream = encode_bytes(&coded, quality, model, |_| {})?;
        let (_, decoded) = match model {
            Some(m) => decode_bytes(&stream, m, |_| {})?,
            None => decode_bytes(&stream, &NoModels, |_| {})?,
        };
        let rate = bpp(stream.len(), clean.width, clean.height);
        for mode in wanted {
            let recon = if mode.uses_ar() {
                enhance_bytes(&decoded, models.ar.expect("checked above"))?
            } else {
                decoded.clone()
            };
            let rgb = recon.convert(ColorSpace::Rgb);
            out.push(MetricsRecord {
                image: name.to_string(),
                quality,
                mode,
                bpp: rate,
                psnr: psnr(clean, &rgb)?,
                ssim: ssim(clean, &rgb)?,
            });
        }
    }
    out.sort_by_key(|r| r.mode);
    Ok(out)
}

/// Mean over images of PSNR linearly interpolated in bpp at `target`.
/// Images whose sweep does not bracket `target` are skipped; returns the
/// mean and the number of images used.
pub fn psnr_at_bpp(records: &[MetricsRecord], mode: Mode, target: f64) -> Option<(f64, usize)> {
    let mut images: Vec<&str> = records.iter().map(|r| r.image.as_str()).collect();
    images.sort();
    images.dedup();
    let mut values = Vec::new();
    for image in images {
        let mut pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.image == image && r.mode == mode)
            .map(|r| (r.bpp, r.psnr))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(v) = pts.windows(2).find_map(|w| {
            let ((b0, p0), (b1, p1)) = (w[0], w[1]);
            (b0 <= target && target <= b1).then(|| {
                if b1 == b0 {
                    p0
                } else {
                    p0 + (p1 - p0) * (target - b0) / (b1 - b0)
                }
            })
        }) {
            values.push(v);
        }
    }
    (!values.is_empty()).then(|| (values.iter().sum::<f64>() / values.len() as f64, values.len()))
}
