//! Baseline JPEG transform coding: DCT, quantization, zigzag scan and
//! Huffman entropy coding of 8×8 coefficient blocks.

pub mod baseline;
pub mod bitstream;
pub mod dct;
pub mod huffman;
pub mod quant;
pub mod zigzag;

pub use bitstream::{BitReader, BitWriter};
pub use dct::{fdct_8x8, idct_8x8};
pub use huffman::{entropy_decode_block, entropy_encode_block};
pub use quant::{
    build_quant_tables, dequantize_block, quantize_block, ChannelClass, CoeffBlock, QuantTable,
};
pub use zigzag::{unzigzag, zigzag, ZIGZAG};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JpegError {
    #[error("quality {0} is outside 1..=100")]
    Quality(u8),
    #[error("bitstream error at bit {bit_offset}: {reason}")]
    Bitstream { bit_offset: u64, reason: &'static str },
}

/// Rounds half away from zero and clamps to a byte.
pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
