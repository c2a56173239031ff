use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn sincos_1d(dim: usize, pos: f64, out: &mut Vec<f64>) {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|i| 1.0 / 10000f64.powf(i as f64 / half as f64)).collect();
    out.extend(freqs.iter().map(|w| (pos * w).sin()));
    out.extend(freqs.iter().map(|w| (pos * w).cos()));
}

/// Fixed 2-D sine-cosine codes for a `rows × cols` grid, one row per
/// position in row-major order. The first half of each code encodes the
/// row index, the second half the column index.
pub fn sincos_2d<T: Scalar>(dim: usize, rows: usize, cols: usize) -> Tensor<T> {
    assert!(dim.is_multiple_of(4), "sin-cos width must be a multiple of 4");
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            sincos_1d(dim / 2, r as f64, &mut data);
            sincos_1d(dim / 2, c as f64, &mut data);
        }
    }
    Tensor::from_f64([rows * cols, dim], &data).expect("shape matches by construction")
}
