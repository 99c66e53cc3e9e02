//! Predictive block codec. Each block is predicted from already
//! reconstructed neighbours, and only the transform-coded residual is
//! stored. With the predictor off every prediction is the constant 128 block
//! and the scan is exactly a baseline JPEG scan.
//!
//! Container layout (23-byte header, little-endian integers):
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4  | magic `BCN1` |
//! | 4     | version (1) |
//! | 5     | flags: bit 0 predictor on, bits 1–2 colorspace (0 YCbCr, 1 Lab) |
//! | 6..10 | width |
//! | 10..14| height |
//! | 14    | quality |
//! | 15..23| model id (zero when the predictor is off) |
//!
//! The Huffman scan follows: blocks in raster order, channels 0, 1, 2 within
//! a block, one DC predictor per channel.

use std::collections::HashMap;
use std::path::Path;

use crate::image::{
    assemble_blocks, convert_colorspace, Block8, BlockGrid, ByteImage, ColorSpace, ImageError,
    RasterImage, BLOCK,
};
use crate::jpeg::{
    build_quant_tables, dequantize_block, entropy_decode_block, entropy_encode_block, fdct_8x8,
    idct_8x8, quantize_block, to_byte, BitReader, BitWriter, ChannelClass, JpegError, QuantTable,
};
use crate::model::{
    apply_causal_mask, causal_context, colorspace_code, colorspace_from_code, LoadedModel,
    ModelError, Variant,
};

pub const MAGIC: &[u8; 4] = b"BCN1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("container error: {0}")]
    Container(String),
    #[error("no model with id {} is available", hex(.0))]
    ModelMissing([u8; 8]),
    #[error("block ({bx}, {by}) read before it was reconstructed")]
    Sequencing { bx: usize, by: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub predictor: bool,
    pub colorspace: ColorSpace,
    pub width: u32,
    pub height: u32,
    pub quality: u8,
    pub model_id: [u8; 8],
}

impl ContainerHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = VERSION;
        let cs = colorspace_code(self.colorspace).expect("header colorspace is YCbCr or Lab");
        out[5] = self.predictor as u8 | cs << 1;
        out[6..10].copy_from_slice(&self.width.to_le_bytes());
        out[10..14].copy_from_slice(&self.height.to_le_bytes());
        out[14] = self.quality;
        out[15..23].copy_from_slice(&self.model_id);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        let bad = |m: String| Err(CodecError::Container(m));
        if bytes.len() < HEADER_LEN {
            return bad(format!("{} bytes is shorter than the header", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return bad("bad magic".into());
        }
        if bytes[4] != VERSION {
            return bad(format!("unsupported version {}", bytes[4]));
        }
        let flags = bytes[5];
        if flags & !0b111 != 0 {
            return bad(format!("reserved flag bits set in {flags:#04x}"));
        }
        let Some(colorspace) = colorspace_from_code((flags >> 1) & 0b11) else {
            return bad(format!("unknown colorspace code {}", (flags >> 1) & 0b11));
        };
        let h = Self {
            predictor: flags & 1 == 1,
            colorspace,
            width: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            height: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            quality: bytes[14],
            model_id: bytes[15..23].try_into().unwrap(),
        };
        if h.width == 0 || h.height == 0 {
            return bad(format!("empty image {}x{}", h.width, h.height));
        }
        if !(1..=100).contains(&h.quality) {
            return bad(format!("quality {} outside 1..=100", h.quality));
        }
        if h.predictor == (h.model_id == [0; 8]) {
            return bad("model id must be zero exactly when the predictor is off".into());
        }
        Ok(h)
    }
}

/// Reconstructed blocks, written in raster order by both encoder and decoder.
#[derive(Clone, Debug)]
pub struct ReconBuffer {
    blocks_w: usize,
    blocks_h: usize,
    blocks: Vec<Option<Block8>>,
}

impl ReconBuffer {
    pub fn new(blocks_w: usize, blocks_h: usize) -> Self {
        Self {
            blocks_w,
            blocks_h,
            blocks: vec![None; blocks_w * blocks_h],
        }
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    pub fn contains(&self, bx: isize, by: isize) -> bool {
        bx >= 0 && by >= 0 && (bx as usize) < self.blocks_w && (by as usize) < self.blocks_h
    }

    /// Reconstructed block; an in-range block that is not yet written is a
    /// sequencing error.
    pub fn get(&self, bx: usize, by: usize) -> Result<&Block8, CodecError> {
        self.blocks
            .get(by * self.blocks_w + bx)
            .filter(|_| bx < self.blocks_w)
            .and_then(Option::as_ref)
            .ok_or(CodecError::Sequencing { bx, by })
    }

    pub fn set(&mut self, bx: usize, by: usize, block: Block8) {
        self.blocks[by * self.blocks_w + bx] = Some(block);
    }

    /// Written blocks in raster order, stopping at the first gap.
    pub fn written_prefix(&self) -> impl Iterator<Item = &Block8> {
        self.blocks.iter().map_while(Option::as_ref)
    }

    pub fn into_grid(self) -> Result<BlockGrid, CodecError> {
        let (w, h) = (self.blocks_w, self.blocks_h);
        let blocks = self
            .blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or(CodecError::Sequencing { bx: i % w, by: i / w }))
            .collect::<Result<_, _>>()?;
        Ok(BlockGrid {
            blocks_w: w,
            blocks_h: h,
            blocks,
        })
    }
}

/// Prediction for block `(bx, by)`: constant 128 without a model, else the
/// PRED network applied to the masked causal context read from `recon`.
pub fn predict_block(
    recon: &ReconBuffer,
    bx: usize,
    by: usize,
    model: Option<&LoadedModel>,
) -> Result<Block8, CodecError> {
    let Some(m) = model else {
        return Ok(Block8::constant(128));
    };
    let ctx = causal_context(bx, by, |x, y| {
        if recon.contains(x, y) {
            recon.get(x as usize, y as usize).map(|b| Some(*b))
        } else {
            Ok(None)
        }
    })?;
    Ok(m.model.infer_pred(&apply_causal_mask(&ctx))?)
}

/// Per-block event reported to an observer during encode or decode.
pub struct BlockEvent<'a> {
    pub index: usize,
    pub bx: usize,
    pub by: usize,
    pub prediction: &'a Block8,
    pub recon: &'a ReconBuffer,
}

fn tables(quality: u8) -> Result<[QuantTable; 3], CodecError> {
    let (luma, chroma) = build_quant_tables(quality)?;
    Ok([luma, chroma.clone(), chroma])
}

fn reconstruct(cb: &crate::jpeg::CoeffBlock, qt: &QuantTable, pred: &[u8; 64]) -> [u8; 64] {
    let spatial = idct_8x8(&dequantize_block(cb, qt));
    std::array::from_fn(|i| to_byte(spatial[i] + pred[i] as f64))
}

fn check_model(model: Option<&LoadedModel>, colorspace: ColorSpace) -> Result<(), CodecError> {
    if let Some(m) = model {
        let cfg = m.model.config();
        if cfg.variant != Variant::Pred {
            return Err(ModelError::Variant {
                expected: Variant::Pred,
                actual: cfg.variant,
            }
            .into());
        }
        if cfg.colorspace != colorspace {
            return Err(CodecError::Config(format!(
                "model works in {:?} but the stream is {:?}",
                cfg.colorspace, colorspace
            )));
        }
    }
    Ok(())
}

/// Quantizes an image to bytes in the coding colorspace.
pub fn to_coding_bytes(img: &RasterImage, colorspace: ColorSpace) -> ByteImage {
    ByteImage::from_raster(&convert_colorspace(img, colorspace))
}

/// Encodes an image (any colorspace) after converting it to `colorspace`.
pub fn encode_image(
    img: &RasterImage,
    quality: u8,
    colorspace: ColorSpace,
    model: Option<&LoadedModel>,
) -> Result<Vec<u8>, CodecError> {
    encode_bytes(&to_coding_bytes(img, colorspace), quality, model, |_| {})
}

/// Encodes a byte image already in its coding colorspace.
pub fn encode_bytes(
    img: &ByteImage,
    quality: u8,
    model: Option<&LoadedModel>,
    mut observer: impl FnMut(&BlockEvent),
) -> Result<Vec<u8>, CodecError> {
    if colorspace_code(img.colorspace).is_none() {
        return Err(CodecError::Config("the codec stores YCbCr or Lab images".into()));
    }
    check_model(model, img.colorspace)?;
    let (width, height) = (
        u32::try_from(img.width).map_err(|_| CodecError::Config("width exceeds 32 bits".into()))?,
        u32::try_from(img.height).map_err(|_| CodecError::Config("height exceeds 32 bits".into()))?,
    );
    let qts = tables(quality)?;
    let header = ContainerHeader {
        predictor: model.is_some(),
        colorspace: img.colorspace,
        width,
        height,
        quality,
        model_id: model.map_or([0; 8], |m| m.id),
    };

    let grid = BlockGrid::from_image(img);
    let mut recon = ReconBuffer::new(grid.blocks_w, grid.blocks_h);
    let mut out = BitWriter::new();
    let mut dc = [0i32; 3];
    for (index, original) in grid.blocks.iter().enumerate() {
        let (bx, by) = (index % grid.blocks_w, index / grid.blocks_w);
        let pred = predict_block(&recon, bx, by, model)?;
        let mut rec = Block8::constant(0);
        for c in 0..3 {
            let residual: [f64; 64] = std::array::from_fn(|i| {
                (original.samples[c][i] as i32 - pred.samples[c][i] as i32) as f64
            });
            let cb = quantize_block(&fdct_8x8(&residual), &qts[c]);
            dc[c] = entropy_encode_block(&cb, dc[c], ChannelClass::of_channel(c), &mut out);
            rec.samples[c] = reconstruct(&cb, &qts[c], &pred.samples[c]);
        }
        recon.set(bx, by, rec);
        observer(&BlockEvent {
            index,
            bx,
            by,
            prediction: &pred,
            recon: &recon,
        });
    }
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend(out.finish());
    Ok(bytes)
}

/// Source of PRED models by id.
pub trait ModelSource {
    fn find(&self, id: &[u8; 8]) -> Option<&LoadedModel>;
}

/// In-memory set of models keyed by checkpoint hash.
#[derive(Default)]
pub struct ModelRegistry {
    models: HashMap<[u8; 8], LoadedModel>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: LoadedModel) -> [u8; 8] {
        let id = model.id;
        self.models.insert(id, model);
        id
    }

    /// Loads every `*.bckp` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, CodecError> {
        let mut reg = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths {
            if path.extension().is_some_and(|e| e == "bckp") {
                let bytes = std::fs::read(&path)?;
                reg.insert(LoadedModel::from_bytes(&bytes)?);
            }
        }
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl ModelSource for ModelRegistry {
    fn find(&self, id: &[u8; 8]) -> Option<&LoadedModel> {
        self.models.get(id)
    }
}

/// A single model, e.g. the one just used to encode.
impl ModelSource for LoadedModel {
    fn find(&self, id: &[u8; 8]) -> Option<&LoadedModel> {
        (&self.id == id).then_some(self)
    }
}

/// No models; only prediction-off streams decode.
pub struct NoModels;

impl ModelSource for NoModels {
    fn find(&self, _: &[u8; 8]) -> Option<&LoadedModel> {
        None
    }
}

/// Decodes a container to an RGB image.
pub fn decode_image(bytes: &[u8], models: &dyn ModelSource) -> Result<RasterImage, CodecError> {
    let (_, img) = decode_bytes(bytes, models, |_| {})?;
    Ok(convert_colorspace(&img.to_raster(), ColorSpace::Rgb))
}

/// Decodes a container to bytes in its coding colorspace, cropped to the
/// stored dimensions.
pub fn decode_bytes(
    bytes: &[u8],
    models: &dyn ModelSource,
    mut observer: impl FnMut(&BlockEvent),
) -> Result<(ContainerHeader, ByteImage), CodecError> {
    let header = ContainerHeader::parse(bytes)?;
    let model = if header.predictor {
        Some(
            models
                .find(&header.model_id)
                .ok_or(CodecError::ModelMissing(header.model_id))?,
        )
    } else {
        None
    };
    check_model(model, header.colorspace)?;
    let qts = tables(header.quality)?;
    let (width, height) = (header.width as usize, header.height as usize);
    let (bw, bh) = (width.div_ceil(BLOCK), height.div_ceil(BLOCK));
    let mut recon = ReconBuffer::new(bw, bh);
    let mut input = BitReader::new(&bytes[HEADER_LEN..]);
    let mut dc = [0i32; 3];
    for index in 0..bw * bh {
        let (bx, by) = (index % bw, index / bw);
        let pred = predict_block(&recon, bx, by, model)?;
        let mut rec = Block8::constant(0);
        for c in 0..3 {
            let (cb, p) = entropy_decode_block(&mut input, dc[c], ChannelClass::of_channel(c))?;
            dc[c] = p;
            rec.samples[c] = reconstruct(&cb, &qts[c], &pred.samples[c]);
        }
        recon.set(bx, by, rec);
        observer(&BlockEvent {
            index,
            bx,
            by,
            prediction: &pred,
            recon: &recon,
        });
    }
    input.expect_padding()?;
    let img = assemble_blocks(&recon.into_grid()?, width, height, header.colorspace)?;
    Ok((header, img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jpeg::baseline;
    use crate::model::{BlockCnn, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize, seed: u64) -> ByteImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b): (f64, f64) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2));
        let mut img = ByteImage::filled(w, h, ColorSpace::YCbCr, [0; 3]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = 128.0 + 90.0 * ((x as f64 * a + c as f64).sin() * (y as f64 * b).cos());
                    img.planes[c][y * w + x] = (v + rng.random_range(-6.0..6.0)).clamp(0.0, 255.0) as u8;
                }
            }
        }
        img
    }

    fn pred_model(zero_head: bool) -> LoadedModel {
        let mut m = BlockCnn::build(ModelConfig {
            channels: 8,
            n_res_blocks: 1,
            seed: 11,
            ..ModelConfig::new(Variant::Pred)
        })
        .unwrap();
        if zero_head {
            m.zero_head();
        }
        LoadedModel::from_model(m)
    }

    #[test]
    fn header_round_trip_and_layout() {
        let h = ContainerHeader {
            predictor: true,
            colorspace: ColorSpace::Lab,
            width: 513,
            height: 7,
            quality: 20,
            model_id: [1, 2, 3, 4, 5, 6, 7, 8],
        };
        let bytes = h.to_bytes();
        assert_eq!(&bytes[..6], b"BCN1\x01\x03");
        assert_eq!(&bytes[6..10], &[1, 2, 0, 0]);
        assert_eq!(ContainerHeader::parse(&bytes).unwrap(), h);

        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ContainerHeader::parse(&bad), Err(CodecError::Container(_))));
        let mut bad = bytes;
        bad[4] = 2;
        assert!(matches!(ContainerHeader::parse(&bad), Err(CodecError::Container(_))));
        let mut bad = bytes;
        bad[15..].fill(0);
        assert!(matches!(ContainerHeader::parse(&bad), Err(CodecError::Container(_))));
        assert!(ContainerHeader::parse(&bytes[..10]).is_err());
    }

    #[test]
    fn prediction_off_matches_baseline() {
        for (i, &(w, h)) in [(16, 16), (17, 9), (40, 24)].iter().enumerate() {
            let img = smooth_image(w, h, i as u64);
            for q in [10, 50, 90] {
                let stream = encode_bytes(&img, q, None, |_| {}).unwrap();
                let (header, out) = decode_bytes(&stream, &NoModels, |_| {}).unwrap();
                assert!(!header.predictor);
                let scan = baseline::encode(&img, q).unwrap();
                assert_eq!(&stream[HEADER_LEN..], &scan[..]);
                assert_eq!(out, baseline::round_trip(&img, q).unwrap().0);
            }
        }
    }

    #[test]
    fn zero_head_predictor_behaves_like_prediction_off() {
        let img = smooth_image(24, 16, 3);
        let model = pred_model(true);
        let on = encode_bytes(&img, 30, Some(&model), |_| {}).unwrap();
        let off = encode_bytes(&img, 30, None, |_| {}).unwrap();
        assert_eq!(on[HEADER_LEN..], off[HEADER_LEN..]);
    }

    #[test]
    fn predictive_round_trip_is_in_lockstep() {
        let img = smooth_image(32, 24, 4);
        let model = pred_model(false);
        let mut enc_trace = Vec::new();
        let stream = encode_bytes(&img, 40, Some(&model), |e| {
            enc_trace.push((*e.prediction, e.recon.written_prefix().count()))
        })
        .unwrap();
        let mut dec_trace = Vec::new();
        let (_, out) = decode_bytes(&stream, &model, |e| {
            dec_trace.push((*e.prediction, e.recon.written_prefix().count()))
        })
        .unwrap();
        assert_eq!(enc_trace, dec_trace);
        assert_eq!(enc_trace.len(), 12);
        let (_, again) = decode_bytes(&stream, &model, |_| {}).unwrap();
        assert_eq!(out, again);
        assert_eq!(enc_trace.last().unwrap().1, 12);
    }

    #[test]
    fn unknown_model_is_reported() {
        let img = smooth_image(16, 8, 5);
        let model = pred_model(false);
        let mut stream = encode_bytes(&img, 50, Some(&model), |_| {}).unwrap();
        stream[15] ^= 0xff;
        assert!(matches!(
            decode_bytes(&stream, &model, |_| {}),
            Err(CodecError::ModelMissing(_))
        ));
        assert!(matches!(
            decode_image(&stream, &NoModels),
            Err(CodecError::ModelMissing(_))
        ));
    }

    #[test]
    fn truncated_scan_is_a_bitstream_error() {
        let img = smooth_image(32, 32, 6);
        let stream = encode_bytes(&img, 80, None, |_| {}).unwrap();
        let cut = &stream[..HEADER_LEN + (stream.len() - HEADER_LEN) / 2];
        assert!(matches!(
            decode_bytes(cut, &NoModels, |_| {}),
            Err(CodecError::Jpeg(JpegError::Bitstream { .. }))
        ));
    }

    #[test]
    fn unwritten_blocks_are_sequencing_errors() {
        let recon = ReconBuffer::new(3, 2);
        let model = pred_model(false);
        assert!(matches!(
            predict_block(&recon, 1, 1, Some(&model)),
            Err(CodecError::Sequencing { bx: 0, by: 0 })
        ));
        assert_eq!(predict_block(&recon, 1, 1, None).unwrap(), Block8::constant(128));
        // Block (0, 0) needs no neighbours.
        predict_block(&recon, 0, 0, Some(&model)).unwrap();
    }

    #[test]
    fn rgb_entry_point_round_trips() {
        let img = smooth_image(20, 12, 7).to_raster();
        let rgb = convert_colorspace(&img, ColorSpace::Rgb);
        let stream = encode_image(&rgb, 95, ColorSpace::YCbCr, None).unwrap();
        let out = decode_image(&stream, &NoModels).unwrap();
        assert_eq!(out.colorspace(), ColorSpace::Rgb);
        assert_eq!((out.width(), out.height()), (20, 12));
    }
}
