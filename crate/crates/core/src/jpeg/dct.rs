//! Separable 8×8 DCT-II / DCT-III with JPEG normalization
//! (`F(u,v) = ¼ C(u) C(v) Σ f(x,y) cos((2x+1)uπ/16) cos((2y+1)vπ/16)`),
//! so the DC of a constant block `c` is `8c`.
//!
//! The cosine table is built from literal constants rather than `cos()` so
//! that transforms agree bit for bit on every platform.

/// `cos(kπ/16)` for `k = 0..=8`.
const COS16: [f64; 9] = [
    1.0,
    0.980_785_280_403_230_4,
    0.923_879_532_511_286_7,
    0.831_469_612_302_545_2,
    0.707_106_781_186_547_6,
    0.555_570_233_019_602_2,
    0.382_683_432_365_089_8,
    0.195_090_322_016_128_25,
    0.0,
];

/// `1 / (2√2)`: the `C(0)/2` factor.
const HALF_INV_SQRT2: f64 = 0.353_553_390_593_273_8;

const fn cos_pi_16(m: usize) -> f64 {
    let m = m % 32;
    let m = if m > 16 { 32 - m } else { m };
    if m <= 8 {
        COS16[m]
    } else {
        -COS16[16 - m]
    }
}

/// `BASIS[u][x] = C(u)/2 · cos((2x+1)uπ/16)`; rows are orthonormal.
const BASIS: [[f64; 8]; 8] = {
    let mut t = [[0.0; 8]; 8];
    let mut u = 0;
    while u < 8 {
        let mut x = 0;
        while x < 8 {
            let c = cos_pi_16((2 * x + 1) * u);
            t[u][x] = if u == 0 { HALF_INV_SQRT2 } else { 0.5 * c };
            x += 1;
        }
        u += 1;
    }
    t
};

/// Forward transform of a row-major 8×8 block; output index is `v * 8 + u`.
pub fn fdct_8x8(block: &[f64; 64]) -> [f64; 64] {
    let mut rows = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += BASIS[u][x] * block[y * 8 + x];
            }
            rows[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += BASIS[v][y] * rows[y * 8 + u];
            }
            out[v * 8 + u] = s;
        }
    }
    out
}

/// Inverse of [`fdct_8x8`].
pub fn idct_8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let mut cols = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += BASIS[v][y] * coeffs[v * 8 + u];
            }
            cols[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += BASIS[u][x] * cols[y * 8 + u];
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Textbook quadruple-sum DCT with runtime cosines.
    fn direct_fdct(f: &[f64; 64]) -> [f64; 64] {
        let c = |k: usize| if k == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += f[y * 8 + x]
                            * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * PI / 16.0).cos();
                    }
                }
                out[v * 8 + u] = 0.25 * c(u) * c(v) * s;
            }
        }
        out
    }

    fn random_block(rng: &mut ChaCha8Rng) -> [f64; 64] {
        std::array::from_fn(|_| rng.random_range(-255.0..255.0))
    }

    #[test]
    fn table_matches_runtime_cosines() {
        for m in 0..64 {
            assert!((cos_pi_16(m) - (m as f64 * PI / 16.0).cos()).abs() < 1e-14, "m={m}");
        }
    }

    #[test]
    fn constant_block_has_dc_eight_times_value() {
        let out = fdct_8x8(&[100.0; 64]);
        assert!((out[0] - 800.0).abs() < 1e-3);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-3));
        let back = idct_8x8(&out);
        assert!(back.iter().all(|v| (v - 100.0).abs() < 1e-3));
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(fdct_8x8(&[0.0; 64]), [0.0; 64]);
        assert_eq!(idct_8x8(&[0.0; 64]), [0.0; 64]);
    }

    #[test]
    fn matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = random_block(&mut rng);
            let fast = fdct_8x8(&b);
            let slow = direct_fdct(&b);
            for i in 0..64 {
                assert!((fast[i] - slow[i]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn basis_images_are_orthonormal() {
        let basis: Vec<[f64; 64]> = (0..64)
            .map(|i| {
                let mut e = [0.0; 64];
                e[i] = 1.0;
                fdct_8x8(&e)
            })
            .collect();
        for i in 0..64 {
            for j in 0..64 {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12, "({i},{j}) {dot}");
            }
        }
    }

    #[test]
    fn inverse_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_block(&mut rng);
            let b = random_block(&mut rng);
            let sum: [f64; 64] = std::array::from_fn(|i| a[i] + b[i]);
            let (ia, ib, isum) = (idct_8x8(&a), idct_8x8(&b), idct_8x8(&sum));
            for i in 0..64 {
                assert!((isum[i] - ia[i] - ib[i]).abs() < 1e-3);
            }
        }
    }
}
