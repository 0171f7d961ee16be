//! Dense linear algebra and numeric primitives shared by the whole engine.
//!
//! Storage is 32-bit floating point everywhere; reductions (dot products,
//! mean squares, softmax sums) accumulate in 64-bit before rounding back.

use crate::error::{Error, Result};

/// Row-major dense matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "Matrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// Dense vector of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Self {
        Vector { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

impl From<Vec<f32>> for Vector {
    fn from(data: Vec<f32>) -> Self {
        Vector::new(data)
    }
}

/// Dot product with 64-bit accumulation.
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

pub(crate) fn matvec_into(out: &mut [f32], m: &Matrix, v: &[f32]) {
    debug_assert_eq!(out.len(), m.rows);
    debug_assert_eq!(v.len(), m.cols);
    for (r, slot) in out.iter_mut().enumerate() {
        *slot = dot_f64(m.row(r), v) as f32;
    }
}

/// Matrix-vector product; rows of `m` are dotted against `v`.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.dim() {
        return Err(Error::MatVecShape {
            rows: m.rows,
            cols: m.cols,
            dim: v.dim(),
        });
    }
    let mut out = vec![0.0f32; m.rows];
    matvec_into(&mut out, m, v.data());
    Ok(Vector::new(out))
}

pub(crate) fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0f64;
    for x in xs.iter_mut() {
        let e = ((*x - max) as f64).exp();
        *x = e as f32;
        sum += e;
    }
    let inv = 1.0 / sum;
    for x in xs.iter_mut() {
        *x = (*x as f64 * inv) as f32;
    }
}

/// Probability vector from logits, computed with max-subtraction so large
/// magnitudes cannot overflow.
pub fn softmax(logits: &Vector) -> Result<Vector> {
    if logits.dim() == 0 {
        return Err(Error::EmptyInput("softmax"));
    }
    let mut out = logits.data().to_vec();
    softmax_in_place(&mut out);
    Ok(Vector::new(out))
}

/// SiLU activation: x * sigmoid(x).
pub fn silu(x: f32) -> f32 {
    silu_f64(x as f64) as f32
}

/// SiLU on a double-precision pre-activation, for paths that keep the
/// dot product in f64.
pub(crate) fn silu_f64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// SiLU applied elementwise.
pub fn silu_vector(v: &Vector) -> Vector {
    Vector::new(v.data().iter().map(|&x| silu(x)).collect())
}

pub(crate) fn rmsnorm_into(out: &mut [f32], v: &[f32], gain: &[f32], eps: f32) {
    debug_assert_eq!(out.len(), v.len());
    debug_assert_eq!(gain.len(), v.len());
    if v.is_empty() {
        return;
    }
    let mut ms = 0.0f64;
    for &x in v {
        ms += x as f64 * x as f64;
    }
    ms /= v.len() as f64;
    let inv = 1.0 / (ms + eps as f64).sqrt();
    for i in 0..v.len() {
        out[i] = (v[i] as f64 * inv * gain[i] as f64) as f32;
    }
}

/// Root-mean-square normalization followed by an elementwise gain.
pub fn rmsnorm(v: &Vector, gain: &Vector, eps: f32) -> Result<Vector> {
    if v.dim() != gain.dim() {
        return Err(Error::DimMismatch {
            op: "rmsnorm",
            expected: v.dim(),
            got: gain.dim(),
        });
    }
    let mut out = vec![0.0f32; v.dim()];
    rmsnorm_into(&mut out, v.data(), gain.data(), eps);
    Ok(Vector::new(out))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &Vector) -> Result<usize> {
    if v.dim() == 0 {
        return Err(Error::EmptyInput("argmax"));
    }
    let data = v.data();
    let mut best = 0usize;
    let mut best_val = data[0];
    for (i, &x) in data.iter().enumerate().skip(1) {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity_passes_through() {
        let m = Matrix::identity(2);
        let v = Vector::new(vec![3.0, 4.0]);
        assert_eq!(matvec(&m, &v).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matvec_zero_matrix_gives_zeros() {
        let m = Matrix::zeros(3, 2);
        let v = Vector::new(vec![1.0, 1.0]);
        assert_eq!(matvec(&m, &v).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_small_known_instance() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Vector::new(vec![1.0, 1.0]);
        assert_eq!(matvec(&m, &v).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_rejects_shape_mismatch() {
        let m = Matrix::zeros(2, 3);
        let v = Vector::new(vec![1.0, 1.0]);
        match matvec(&m, &v) {
            Err(Error::MatVecShape { rows: 2, cols: 3, dim: 2 }) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetric_logits_are_uniform() {
        let p = softmax(&Vector::new(vec![0.0, 0.0, 0.0])).unwrap();
        for &x in p.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_survives_huge_gap() {
        let p = softmax(&Vector::new(vec![1000.0, 0.0])).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-6);
        assert!(p.data()[1].abs() < 1e-6);
        assert!(p.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_two_point_closed_form() {
        let p = softmax(&Vector::new(vec![std::f32::consts::LN_2, 0.0])).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_empty_input() {
        assert!(matches!(
            softmax(&Vector::new(vec![])),
            Err(Error::EmptyInput("softmax"))
        ));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&Vector::new(vec![0.3, -1.2, 2.5, 0.0, 4.0])).unwrap();
        let sum: f64 = p.data().iter().map(|&x| x as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silu_zero_is_zero() {
        assert_eq!(silu(0.0), 0.0);
    }

    #[test]
    fn silu_large_positive_approaches_identity() {
        assert!((silu(20.0) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn silu_one_matches_logistic_value() {
        assert!((silu(1.0) - 0.731_058_6).abs() < 1e-6);
    }

    #[test]
    fn silu_vector_applies_elementwise() {
        let v = silu_vector(&Vector::new(vec![0.0, 1.0]));
        assert_eq!(v.data()[0], 0.0);
        assert!((v.data()[1] - silu(1.0)).abs() < 1e-9);
    }

    #[test]
    fn rmsnorm_ones_with_unit_gain_is_identity_at_tiny_eps() {
        let v = Vector::new(vec![1.0; 4]);
        let g = Vector::new(vec![1.0; 4]);
        let out = rmsnorm(&v, &g, 1e-12).unwrap();
        for &x in out.data() {
            assert!((x - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rmsnorm_zero_vector_stays_zero() {
        let v = Vector::zeros(5);
        let g = Vector::new(vec![1.0; 5]);
        let out = rmsnorm(&v, &g, 1e-5).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rmsnorm_three_four_hand_arithmetic() {
        let v = Vector::new(vec![3.0, 4.0]);
        let g = Vector::new(vec![1.0, 1.0]);
        let out = rmsnorm(&v, &g, 0.0).unwrap();
        let scale = 1.0 / 12.5f64.sqrt();
        assert!((out.data()[0] as f64 - 3.0 * scale).abs() < 1e-6);
        assert!((out.data()[1] as f64 - 4.0 * scale).abs() < 1e-6);
    }

    #[test]
    fn rmsnorm_rejects_dim_mismatch() {
        let v = Vector::zeros(3);
        let g = Vector::zeros(2);
        assert!(matches!(
            rmsnorm(&v, &g, 1e-5),
            Err(Error::DimMismatch { op: "rmsnorm", .. })
        ));
    }

    #[test]
    fn argmax_lowest_index_wins_ties() {
        let v = Vector::new(vec![1.0, 5.0, 5.0, 2.0]);
        assert_eq!(argmax(&v).unwrap(), 1);
    }

    #[test]
    fn argmax_rejects_empty() {
        assert!(matches!(
            argmax(&Vector::new(vec![])),
            Err(Error::EmptyInput("argmax"))
        ));
    }

    #[test]
    fn matrix_new_rejects_wrong_length() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
