//! Row-major matrix products used by the convolution layers.
//!
//! Every output element is accumulated from zero over the inner dimension in
//! ascending order, whatever the tiling, row partitioning, or thread count.
//! Results are therefore bit-identical across thread counts and batch
//! groupings. No fused multiply-add is used, so they also agree across
//! machines with IEEE arithmetic.

use rayon::prelude::*;

use super::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 24;

/// Below this many multiply-adds the product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 22;

/// Layout of the left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Left {
    /// `a` is `m × k`.
    Normal,
    /// `a` is `k × m` and used transposed.
    Transposed,
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k);
    product(Left::Normal, m, n, k, a, b, c);
}

/// `c[m×n] = aᵀ · b` where `a` is stored `k × m`.
pub fn matmul_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), k * m);
    product(Left::Transposed, m, n, k, a, b, c);
}

/// Out-of-place transpose of a `rows × cols` matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    assert_eq!(src.len(), rows * cols);
    let mut dst = vec![T::zero(); rows * cols];
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

fn product<T: Scalar>(left: Left, m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let group = GROUP_ROWS * n;
    if m * n * k >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(group)
            .enumerate()
            .for_each(|(g, rows)| row_group(left, m, n, k, a, b, g * GROUP_ROWS, rows));
    } else {
        for (g, rows) in c.chunks_mut(group).enumerate() {
            row_group(left, m, n, k, a, b, g * GROUP_ROWS, rows);
        }
    }
}

/// Rows handled per task; every column panel of `b` is reused across them.
const GROUP_ROWS: usize = 8 * MR;

#[allow(clippy::too_many_arguments)]
fn row_group<T: Scalar>(
    left: Left,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    i0: usize,
    out: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            unsafe { row_group_avx2(left, m, n, k, a, b, i0, out) };
            return;
        }
    }
    row_group_generic(left, m, n, k, a, b, i0, out);
}

/// Same code compiled with 256-bit vectors. Only the lane width changes, not
/// the order of operations, so results are identical to the generic path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn row_group_avx2<T: Scalar>(
    left: Left,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    i0: usize,
    out: &mut [T],
) {
    row_group_generic(left, m, n, k, a, b, i0, out);
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn row_group_generic<T: Scalar>(
    left: Left,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    i0: usize,
    out: &mut [T],
) {
    let rows = out.len() / n;
    let full_rows = rows - rows % MR;
    let full_cols = n - n % NR;
    for j in (0..full_cols).step_by(NR) {
        for r in (0..full_rows).step_by(MR) {
            tile_full(left, m, n, k, a, b, i0 + r, j, &mut out[r * n..(r + MR) * n]);
        }
        for r in full_rows..rows {
            tile_row(left, m, n, k, a, b, i0 + r, j, NR, &mut out[r * n..(r + 1) * n]);
        }
    }
    if full_cols < n {
        for r in 0..rows {
            tile_row(
                left,
                m,
                n,
                k,
                a,
                b,
                i0 + r,
                full_cols,
                n - full_cols,
                &mut out[r * n..(r + 1) * n],
            );
        }
    }
}

#[inline(always)]
fn lhs<T: Scalar>(left: Left, m: usize, k: usize, a: &[T], i: usize, p: usize) -> T {
    match left {
        Left::Normal => a[i * k + p],
        Left::Transposed => a[p * m + i],
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile_full<T: Scalar>(
    left: Left,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    i0: usize,
    j0: usize,
    out: &mut [T],
) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = lhs(left, m, k, a, i0 + r, p);
            for l in 0..NR {
                acc_row[l] = acc_row[l] + av * brow[l];
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        out[r * n + j0..r * n + j0 + NR].copy_from_slice(acc_row);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile_row<T: Scalar>(
    left: Left,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    i: usize,
    j0: usize,
    width: usize,
    out_row: &mut [T],
) {
    let mut acc = [T::zero(); NR];
    for p in 0..k {
        let av = lhs(left, m, k, a, i, p);
        let brow = &b[p * n + j0..p * n + j0 + width];
        for (l, &bv) in brow.iter().enumerate() {
            acc[l] = acc[l] + av * bv;
        }
    }
    out_row[j0..j0 + width].copy_from_slice(&acc[..width]);
}
