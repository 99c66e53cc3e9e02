use super::JpegError;

/// Which Annex K base table a channel uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelClass {
    Luma,
    Chroma,
}

impl ChannelClass {
    /// Channel 0 is luma-class, channels 1 and 2 chroma-class.
    pub fn of_channel(c: usize) -> Self {
        if c == 0 {
            Self::Luma
        } else {
            Self::Chroma
        }
    }
}

/// Annex K luminance table, natural order.
pub const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural order.
pub const BASE_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

pub const DC_LIMIT: i32 = 2047;
pub const AC_LIMIT: i32 = 1023;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTable {
    /// Divisors in natural order, each in `1..=255`.
    pub entries: [u16; 64],
    pub class: ChannelClass,
}

/// Quantized coefficients in natural order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CoeffBlock {
    pub coeffs: [i32; 64],
}

impl CoeffBlock {
    pub fn zero() -> Self {
        Self { coeffs: [0; 64] }
    }
}

/// IJG quality scaling of the Annex K tables.
pub fn build_quant_tables(quality: u8) -> Result<(QuantTable, QuantTable), JpegError> {
    if !(1..=100).contains(&quality) {
        return Err(JpegError::Quality(quality));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let scaled = |base: &[u16; 64]| -> [u16; 64] {
        std::array::from_fn(|i| ((base[i] as u32 * scale + 50) / 100).clamp(1, 255) as u16)
    };
    Ok((
        QuantTable {
            entries: scaled(&BASE_LUMA),
            class: ChannelClass::Luma,
        },
        QuantTable {
            entries: scaled(&BASE_CHROMA),
            class: ChannelClass::Chroma,
        },
    ))
}

/// Rounds half away from zero, then clamps DC to ±2047 and AC to ±1023.
pub fn quantize_block(coeffs: &[f64; 64], qt: &QuantTable) -> CoeffBlock {
    CoeffBlock {
        coeffs: std::array::from_fn(|i| {
            let limit = if i == 0 { DC_LIMIT } else { AC_LIMIT } as f64;
            (coeffs[i] / qt.entries[i] as f64).round().clamp(-limit, limit) as i32
        }),
    }
}

pub fn dequantize_block(cb: &CoeffBlock, qt: &QuantTable) -> [f64; 64] {
    std::array::from_fn(|i| (cb.coeffs[i] * qt.entries[i] as i32) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(q: u16) -> QuantTable {
        QuantTable {
            entries: [q; 64],
            class: ChannelClass::Luma,
        }
    }

    #[test]
    fn quality_fifty_is_the_base_table() {
        let (l, c) = build_quant_tables(50).unwrap();
        assert_eq!(l.entries, BASE_LUMA);
        assert_eq!(c.entries, BASE_CHROMA);
    }

    #[test]
    fn quality_twenty_scales_by_two_and_a_half() {
        // scale = 5000 / 20 = 250; (16·250 + 50) / 100 = 40.
        let (l, c) = build_quant_tables(20).unwrap();
        assert_eq!(l.entries[0], 40);
        assert_eq!(l.entries[1], 28);
        assert_eq!(c.entries[0], 43);
        assert_eq!(c.entries[63], 248);
    }

    #[test]
    fn quality_hundred_is_all_ones() {
        let (l, c) = build_quant_tables(100).unwrap();
        assert!(l.entries.iter().chain(&c.entries).all(|&e| e == 1));
    }

    #[test]
    fn low_quality_saturates_at_255() {
        let (l, _) = build_quant_tables(1).unwrap();
        assert_eq!(l.entries[0], 255);
        assert!(l.entries.iter().all(|&e| (1..=255).contains(&e)));
    }

    #[test]
    fn quality_out_of_range() {
        assert_eq!(build_quant_tables(0), Err(JpegError::Quality(0)));
        assert_eq!(build_quant_tables(101), Err(JpegError::Quality(101)));
    }

    #[test]
    fn rounding_and_clamping() {
        let mut c = [0.0; 64];
        c[0] = 37.0;
        c[1] = -35.0;
        c[2] = 20000.0;
        c[3] = 35.0;
        let q = quantize_block(&c, &table(10));
        assert_eq!(&q.coeffs[..4], &[4, -4, 1023, 4]);
        c[0] = -30000.0;
        c[2] = 20000.0;
        let q = quantize_block(&c, &table(1));
        assert_eq!(q.coeffs[0], -2047);
        assert_eq!(q.coeffs[2], 1023);
    }

    #[test]
    fn dequantize_is_entrywise_product() {
        let mut cb = CoeffBlock::zero();
        cb.coeffs[5] = 4;
        let d = dequantize_block(&cb, &table(10));
        assert_eq!(d[5], 40.0);
        assert_eq!(dequantize_block(&CoeffBlock::zero(), &table(7)), [0.0; 64]);
    }

    proptest! {
        #[test]
        fn quantize_is_odd(c in -5000.0f64..5000.0, q in 1u16..=255, pos in 0usize..64) {
            let mut a = [0.0; 64];
            a[pos] = c;
            let mut b = [0.0; 64];
            b[pos] = -c;
            let t = table(q);
            prop_assert_eq!(quantize_block(&b, &t).coeffs[pos], -quantize_block(&a, &t).coeffs[pos]);
        }

        #[test]
        fn quantize_is_monotone(c in -5000.0f64..5000.0, d in 0.0f64..500.0, q in 1u16..=255, pos in 0usize..64) {
            let t = table(q);
            let mut a = [0.0; 64];
            a[pos] = c;
            let mut b = [0.0; 64];
            b[pos] = c + d;
            prop_assert!(quantize_block(&a, &t).coeffs[pos] <= quantize_block(&b, &t).coeffs[pos]);
        }

        #[test]
        fn quantize_inverts_dequantize(v in prop::array::uniform32(-1023i32..=1023), q in 1u16..=255) {
            let mut cb = CoeffBlock::zero();
            cb.coeffs[..32].copy_from_slice(&v);
            cb.coeffs[40] = -v[0];
            let t = table(q);
            prop_assert_eq!(quantize_block(&dequantize_block(&cb, &t), &t), cb);
        }
    }
}
