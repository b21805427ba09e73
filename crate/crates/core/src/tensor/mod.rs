//! Dense row-major `f64` arrays and the kernels the layers are built from.

mod conv;
mod rng;

pub use conv::{conv2d_backward, conv2d_valid, maxpool2x2, maxpool2x2_backward, ConvGrads};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64` in row-major order.
///
/// Rank 1 to 4 is supported. Batched feature maps use N×C×H×W layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!("rank {} not supported (1 to 4)", shape.len())));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// # Panics
    /// On an unsupported shape (rank outside 1..=4 or a zero dimension).
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// # Panics
    /// On an unsupported shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Leading dimension (batch size for batched tensors).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading-dimension slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Gathers leading-dimension slices in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::shape(format!("row {i} out of range {}", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(&shape, data)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    /// `max(x, threshold)` elementwise; threshold 0 is the ReLU.
    pub fn max_scalar(&self, threshold: f64) -> Tensor {
        self.map(|x| if x > threshold { x } else { threshold })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!("{what} must be a matrix, got {:?}", t.shape()))),
    }
}

/// `c = alpha * a * b + beta * c` over strided row-major views.
///
/// `a` is m×k with strides `sa`, `b` is k×n with strides `sb`, `c` is m×n
/// with row stride `n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if k > 0 {
        assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len(), "gemm: lhs out of bounds");
        assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len(), "gemm: rhs out of bounds");
    }
    // SAFETY: every index touched by dgemm lies within the bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of an m×k and a k×n matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dimensions {k} != {k2}")));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

/// `aᵀ · b` for a k×m and a k×n matrix.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("matmul_tn row counts {k} != {k2}")));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), (1, m), b.data(), (n, 1), 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for an m×k and an n×k matrix.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (n, k2) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("matmul_nt column counts {k} != {k2}")));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), (k, 1), b.data(), (1, k), 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

/// Index of the largest entry of each row of an N×K matrix.
///
/// Ties go to the lowest index.
pub fn argmax_last(t: &Tensor) -> Result<Vec<usize>> {
    let (rows, _) = require_matrix(t, "argmax input")?;
    Ok((0..rows)
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// I.i.d. `N(0, stddev²)` draws.
pub fn randn(shape: &[usize], stddev: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::config(format!("stddev must be positive, got {stddev}")));
    }
    let len = check_shape(shape)?;
    let data = (0..len).map(|_| stddev * rng.normal()).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);
    }

    #[test]
    fn matmul_small_product() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = mat(&[&[5.0], &[6.0]]);
        let expected = naive_matmul(&a, &b);
        assert_eq!(expected.data(), &[17.0, 39.0]);
        assert_eq!(matmul(&a, &b).unwrap(), expected);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut rng = Rng::seed(3);
        let b = randn(&[3, 4], 1.0, &mut rng).unwrap();
        let out = matmul(&Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(out, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn transposed_products_match_naive() {
        let mut rng = Rng::seed(11);
        let a = randn(&[5, 3], 1.0, &mut rng).unwrap();
        let b = randn(&[5, 4], 1.0, &mut rng).unwrap();
        let c = randn(&[4, 3], 1.0, &mut rng).unwrap();
        let transpose = |t: &Tensor| {
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let mut out = Tensor::zeros(&[c, r]);
            for i in 0..r {
                for j in 0..c {
                    out.data_mut()[j * r + i] = t.at(i, j);
                }
            }
            out
        };
        let tn = matmul_tn(&a, &b).unwrap();
        let nt = matmul_nt(&a, &c).unwrap();
        let tn_ref = naive_matmul(&transpose(&a), &b);
        let nt_ref = naive_matmul(&a, &transpose(&c));
        for (x, y) in tn.data().iter().zip(tn_ref.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in nt.data().iter().zip(nt_ref.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_ops() {
        let x = Tensor::new(&[2], vec![-3.0, 2.0]).unwrap();
        assert_eq!(x.max_scalar(0.0).data(), &[0.0, 2.0]);
        assert_eq!(x.add(&Tensor::zeros(&[2])).unwrap(), x);
        let y = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y.scale(2.0).data(), &[2.0, 4.0, 6.0]);
        assert_eq!(y.mul(&y).unwrap().data(), &[1.0, 4.0, 9.0]);
        assert_eq!(y.sub(&y).unwrap(), Tensor::zeros(&[3]));
        assert!(matches!(x.add(&y), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_rows_and_ties() {
        assert_eq!(argmax_last(&mat(&[&[0.1, 0.7, 0.2]])).unwrap(), vec![1]);
        assert_eq!(argmax_last(&mat(&[&[0.5, 0.5]])).unwrap(), vec![0]);
        assert_eq!(argmax_last(&mat(&[&[0.0, 0.0, 0.0]])).unwrap(), vec![0]);
    }

    #[test]
    fn randn_is_seeded_and_sized() {
        let a = randn(&[2, 3], 0.05, &mut Rng::seed(9)).unwrap();
        let b = randn(&[2, 3], 0.05, &mut Rng::seed(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(randn(&[2], 0.0, &mut Rng::seed(1)).is_err());
    }

    #[test]
    fn randn_sample_stddev() {
        let t = randn(&[100_000], 0.05, &mut Rng::seed(2024)).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.05).abs() / 0.05 < 0.02, "sample std {}", var.sqrt());
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        let t = Tensor::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4]).is_err());
    }
}
