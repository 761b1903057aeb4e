use rand::Rng;

use super::tensor::Tensor;

/// Uniform(-r, r) with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-r..r)).collect();
    Tensor::matrix(rows, cols, data).expect("positive extents")
}
