/// `ZIGZAG[k]` is the natural (row-major) index of the `k`-th coefficient in scan order.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

pub fn zigzag<T: Copy>(natural: &[T; 64]) -> [T; 64] {
    std::array::from_fn(|k| natural[ZIGZAG[k]])
}

pub fn unzigzag<T: Copy + Default>(scan: &[T; 64]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (k, &v) in scan.iter().enumerate() {
        out[ZIGZAG[k]] = v;
    }
    out
}
