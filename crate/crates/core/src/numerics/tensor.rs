//! Dense row-major tensors and the eager kernels shared by the graph.
//!
//! Everything the models touch is a vector or a matrix, so the kernels
//! treat a rank-1 tensor of length `n` as a `1 x n` row.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(dim_err(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// A `1 x n` matrix.
    pub fn row(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "row must be non-empty");
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err("ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of the matrix view; rank-1 tensors are single rows.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => Err(dim_err(format!(
                "expected a vector or matrix, got shape {s:?}"
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn ensure_finite(&self, op: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }
}

// Kernels. Accumulation always runs over the inner index in ascending
// order so results do not depend on batch composition.

/// `c (m x n) = a (m x k) * b (k x n)`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            for (cij, &bpj) in ci.iter_mut().zip(bp) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `c (m x n) = a (m x k) * b^T` where `b` is stored `n x k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            c[i * n + j] = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c (k x n) = a^T * b` where `a` is stored `m x k` and `b` is `m x n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (cpj, &bij) in cp.iter_mut().zip(bi) {
                *cpj += aip * bij;
            }
        }
    }
    c
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(dim_err(format!("matmul inner dims {k} vs {k2}")));
    }
    let out = Tensor {
        shape: vec![m, n],
        data: gemm_nn(&a.data, &b.data, m, k, n),
    };
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Softmax along the last axis, with max-subtraction.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() {
        return Err(dim_err("softmax of an empty vector"));
    }
    v.ensure_finite("softmax input")?;
    let (_, c) = v.dims2()?;
    let mut out = v.clone();
    for row in out.data.chunks_mut(c) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub fn tanh(v: &Tensor) -> Tensor {
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|x| x.tanh()).collect(),
    }
}

pub fn sigmoid(v: &Tensor) -> Tensor {
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|&x| sigmoid_scalar(x)).collect(),
    }
}

fn zip_same(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(dim_err(format!(
            "{what}: shapes {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let out = Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    };
    out.ensure_finite(what)?;
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "add", |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "mul", |x, y| x * y)
}

/// Concatenation along the last axis.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| dim_err("concat of nothing"))?;
    let rank1 = first.shape.len() == 1;
    let rows = first.rows();
    for p in parts {
        if p.rows() != rows || (p.shape.len() == 1) != rank1 {
            return Err(dim_err("concat: leading dimensions differ"));
        }
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    let shape = if rank1 {
        vec![total]
    } else {
        vec![rows, total]
    };
    Ok(Tensor { shape, data })
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    let n = logits.len();
    if target >= n {
        return Err(Error::Index {
            index: target,
            len: n,
        });
    }
    logits.ensure_finite("cross_entropy input")?;
    Ok(log_sum_exp(&logits.data) - logits.data[target])
}

/// `ln sum exp(row)`, computed around the row maximum.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let z = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let ones = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&z, &ones).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert_eq!(c.get(i, j), acc);
            }
        }
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 3, 5);
        let b = random(&mut rng, 4, 5);
        let bt: Vec<f64> = (0..5)
            .flat_map(|k| (0..4).map(move |j| (j, k)))
            .map(|(j, k)| b.get(j, k))
            .collect();
        assert_eq!(
            gemm_nt(a.data(), b.data(), 3, 5, 4),
            gemm_nn(a.data(), &bt, 3, 5, 4)
        );
        let at: Vec<f64> = (0..5)
            .flat_map(|k| (0..3).map(move |i| (i, k)))
            .map(|(i, k)| a.get(i, k))
            .collect();
        let c = random(&mut rng, 3, 2);
        let lhs = gemm_tn(a.data(), c.data(), 3, 5, 2);
        let rhs = gemm_nn(&at, c.data(), 5, 3, 2);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::vector(vec![0.0; 3])).unwrap();
        for &p in u.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0])).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300);
        let l = softmax(&Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        for (p, e) in l.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_basics() {
        assert_eq!(tanh(&Tensor::vector(vec![0.0])).data(), &[0.0]);
        assert_eq!(sigmoid(&Tensor::vector(vec![0.0])).data(), &[0.5]);
        let c = concat(&[&Tensor::vector(vec![1.0, 2.0]), &Tensor::vector(vec![3.0])]).unwrap();
        assert_eq!(c, Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(add(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&Tensor::vector(vec![0.3; 4]), 2).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        let sure = cross_entropy(&Tensor::vector(vec![50.0, -50.0]), 0).unwrap();
        assert!((0.0..1e-40).contains(&sure));
        assert!(matches!(
            cross_entropy(&Tensor::vector(vec![0.0; 4]), 4),
            Err(Error::Index { index: 4, len: 4 })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let oracle = -((logits[7] - max).exp() / z).ln();
        let got = cross_entropy(&Tensor::vector(logits), 7).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }
}
