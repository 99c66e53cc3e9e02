//! Baseline Huffman coding of coefficient blocks with the fixed Annex K tables.
//!
//! DC differences of residual blocks can reach ±4094 (category 12), which the
//! Annex K DC tables do not cover. Category 12 takes the one unused code of
//! each DC table (all ones: 9 bits luma, 11 bits chroma); every other code is
//! the Annex K code unchanged.

use std::sync::OnceLock;

use super::bitstream::{BitReader, BitWriter};
use super::quant::{ChannelClass, CoeffBlock, AC_LIMIT, DC_LIMIT};
use super::zigzag::ZIGZAG;
use super::JpegError;

const LUMA_DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 2, 0, 0, 0, 0, 0, 0, 0];
const CHROMA_DC_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 2, 0, 0, 0, 0, 0];
const DC_VALS: [u8; 13] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

const LUMA_AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
#[rustfmt::skip]
const LUMA_AC_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

const CHROMA_AC_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
#[rustfmt::skip]
const CHROMA_AC_VALS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

const EOB: u8 = 0x00;
const ZRL: u8 = 0xf0;

/// Canonical Huffman code derived from a (BITS, HUFFVAL) pair.
pub struct HuffTable {
    code: [u16; 256],
    size: [u8; 256],
    min_code: [i32; 17],
    max_code: [i32; 17],
    val_ptr: [usize; 17],
    vals: &'static [u8],
}

impl HuffTable {
    fn new(bits: &[u8; 16], vals: &'static [u8]) -> Self {
        let mut t = HuffTable {
            code: [0; 256],
            size: [0; 256],
            min_code: [0; 17],
            max_code: [-1; 17],
            val_ptr: [0; 17],
            vals,
        };
        let mut code = 0u32;
        let mut k = 0usize;
        for len in 1..=16 {
            let count = bits[len - 1] as usize;
            if count > 0 {
                t.val_ptr[len] = k;
                t.min_code[len] = code as i32;
                for _ in 0..count {
                    let sym = vals[k] as usize;
                    t.code[sym] = code as u16;
                    t.size[sym] = len as u8;
                    code += 1;
                    k += 1;
                }
                t.max_code[len] = code as i32 - 1;
            }
            code <<= 1;
        }
        assert_eq!(k, vals.len());
        t
    }

    /// Code and length for `symbol`; panics on symbols outside the table.
    pub fn lookup(&self, symbol: u8) -> (u32, u32) {
        let size = self.size[symbol as usize];
        assert!(size > 0, "symbol {symbol:#04x} has no code");
        (self.code[symbol as usize] as u32, size as u32)
    }

    fn encode(&self, symbol: u8, out: &mut BitWriter) {
        let (code, len) = self.lookup(symbol);
        out.write_bits(code, len);
    }

    fn decode(&self, input: &mut BitReader) -> Result<u8, JpegError> {
        let start = input.bit_offset();
        let mut code = input.read_bit()? as i32;
        for len in 1..=16 {
            if code <= self.max_code[len] {
                return Ok(self.vals[self.val_ptr[len] + (code - self.min_code[len]) as usize]);
            }
            if len < 16 {
                code = (code << 1) | input.read_bit()? as i32;
            }
        }
        Err(JpegError::Bitstream {
            bit_offset: start,
            reason: "invalid Huffman code",
        })
    }
}

pub struct ClassTables {
    pub dc: HuffTable,
    pub ac: HuffTable,
}

pub fn tables(class: ChannelClass) -> &'static ClassTables {
    static LUMA: OnceLock<ClassTables> = OnceLock::new();
    static CHROMA: OnceLock<ClassTables> = OnceLock::new();
    match class {
        ChannelClass::Luma => LUMA.get_or_init(|| ClassTables {
            dc: HuffTable::new(&LUMA_DC_BITS, &DC_VALS),
            ac: HuffTable::new(&LUMA_AC_BITS, &LUMA_AC_VALS),
        }),
        ChannelClass::Chroma => CHROMA.get_or_init(|| ClassTables {
            dc: HuffTable::new(&CHROMA_DC_BITS, &DC_VALS),
            ac: HuffTable::new(&CHROMA_AC_BITS, &CHROMA_AC_VALS),
        }),
    }
}

/// Magnitude category: number of bits needed for `|v|`.
pub fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

/// Amplitude bits: `v` for positive values, `v - 1` (ones' complement) for negative.
fn amplitude_bits(v: i32, cat: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v - 1) as u32 & ((1u32 << cat) - 1)
    }
}

fn extend(bits: u32, cat: u32) -> i32 {
    if cat == 0 {
        0
    } else if bits < (1 << (cat - 1)) {
        bits as i32 - (1 << cat) + 1
    } else {
        bits as i32
    }
}

/// Encodes one block; returns the block's DC as the next predictor.
pub fn entropy_encode_block(
    cb: &CoeffBlock,
    dc_pred: i32,
    class: ChannelClass,
    out: &mut BitWriter,
) -> i32 {
    let t = tables(class);
    let dc = cb.coeffs[0];
    let diff = dc - dc_pred;
    let cat = category(diff);
    t.dc.encode(cat as u8, out);
    out.write_bits(amplitude_bits(diff, cat), cat);

    let mut run = 0u32;
    for &nat in &ZIGZAG[1..] {
        let v = cb.coeffs[nat];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            t.ac.encode(ZRL, out);
            run -= 16;
        }
        let cat = category(v);
        t.ac.encode(((run << 4) | cat) as u8, out);
        out.write_bits(amplitude_bits(v, cat), cat);
        run = 0;
    }
    if run > 0 {
        t.ac.encode(EOB, out);
    }
    dc
}

/// Inverse of [`entropy_encode_block`].
pub fn entropy_decode_block(
    input: &mut BitReader,
    dc_pred: i32,
    class: ChannelClass,
) -> Result<(CoeffBlock, i32), JpegError> {
    let t = tables(class);
    let mut cb = CoeffBlock::zero();
    let start = input.bit_offset();
    let cat = t.dc.decode(input)? as u32;
    let diff = extend(input.read_bits(cat)?, cat);
    let dc = dc_pred + diff;
    if dc.abs() > DC_LIMIT {
        return Err(JpegError::Bitstream {
            bit_offset: start,
            reason: "DC coefficient out of range",
        });
    }
    cb.coeffs[0] = dc;

    let mut k = 1usize;
    while k < 64 {
        let at = input.bit_offset();
        let sym = t.ac.decode(input)?;
        let run = (sym >> 4) as usize;
        let cat = (sym & 0x0f) as u32;
        if cat == 0 {
            if sym == EOB {
                break;
            }
            // ZRL
            k += 16;
            if k >= 64 {
                return Err(JpegError::Bitstream {
                    bit_offset: at,
                    reason: "zero run past end of block",
                });
            }
            continue;
        }
        k += run;
        if k >= 64 {
            return Err(JpegError::Bitstream {
                bit_offset: at,
                reason: "coefficient run past end of block",
            });
        }
        let v = extend(input.read_bits(cat)?, cat);
        if v.abs() > AC_LIMIT {
            return Err(JpegError::Bitstream {
                bit_offset: at,
                reason: "AC coefficient out of range",
            });
        }
        cb.coeffs[ZIGZAG[k]] = v;
        k += 1;
    }
    Ok((cb, dc))
}
