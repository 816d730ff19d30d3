//! Dense linear algebra and stochastic primitives shared by the rest of the
//! crate.
//!
//! Everything is 64-bit and row-major. Vectors are matrices with a single
//! column. Reductions run in a fixed order so results are reproducible for a
//! fixed seed.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{AcaeError, Result};

/// Norms below this are treated as zero when normalizing.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Default Adagrad damping added to the root of the accumulator.
pub const ADAGRAD_DAMPING: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AcaeError::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Column vector holding `values`.
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(AcaeError::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copy of column `c` as a plain vector.
    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape("Matrix::axpy", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Sum of two same-shaped matrices.
    pub fn plus(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape("Matrix::dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(AcaeError::shape(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }
}

/// Seeded, platform-independent random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed` and a stream id, so that
    /// different consumers of the same seed never share draws.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, values: &mut [T]) {
        values.shuffle(&mut self.rng);
    }

    /// `amount` distinct indices from `0..length`, in draw order.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, length, amount).into_vec()
    }
}

pub fn matvec(m: &Matrix, v: &Matrix) -> Result<Matrix> {
    if v.cols != 1 || m.cols != v.rows {
        return Err(AcaeError::shape(
            "matvec",
            format!("{}x1 vector", m.cols),
            format!("{}x{}", v.rows, v.cols),
        ));
    }
    let mut out = vec![0.0; m.rows];
    matvec_into(m, v.as_slice(), &mut out);
    Ok(Matrix::column(out))
}

/// `out = m * v` without shape checks.
#[inline]
pub(crate) fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot_slices(m.row(r), v);
    }
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums let the compiler vectorize.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy_slices(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn outer(u: &Matrix, v: &Matrix) -> Matrix {
    let (a, b) = (u.as_slice(), v.as_slice());
    let mut out = Matrix::zeros(a.len(), b.len());
    for (r, &ur) in a.iter().enumerate() {
        for (o, &vc) in out.row_mut(r).iter_mut().zip(b) {
            *o = ur * vc;
        }
    }
    out
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.sum_of_squares().sqrt()
}

/// Rescales `m` to Frobenius norm `target`. Inputs whose norm is below
/// [`DEGENERATE_NORM`] map to the zero matrix.
pub fn scale_to_norm(m: &Matrix, target: f64) -> Matrix {
    let norm = frobenius_norm(m);
    if norm < DEGENERATE_NORM {
        return Matrix::zeros(m.rows, m.cols);
    }
    m.scaled(target / norm)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 label.
#[inline]
pub fn bce_with_logits(label: f64, logit: f64) -> f64 {
    logit.max(0.0) - label * logit + (-logit.abs()).exp().ln_1p()
}

/// Loss and derivative `sigma(logit) - label` from a single `exp`.
#[inline]
pub(crate) fn bce_and_grad(label: f64, logit: f64) -> (f64, f64) {
    let e = (-logit.abs()).exp();
    let loss = logit.max(0.0) - label * logit + e.ln_1p();
    let prob = if logit >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    (loss, prob - label)
}

pub fn gaussian_fill(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    if std == 0.0 {
        return m;
    }
    for x in m.as_mut_slice() {
        *x = std * rng.standard_normal();
    }
    m
}

/// One Adagrad update in place:
/// `acc += g*g; param -= rate * g / (sqrt(acc) + damping)`.
pub fn adagrad_step(
    param: &mut Matrix,
    grad: &Matrix,
    accumulator: &mut Matrix,
    base_rate: f64,
    damping: f64,
) -> Result<()> {
    param.check_same_shape("adagrad_step", grad)?;
    param.check_same_shape("adagrad_step", accumulator)?;
    for ((p, &g), a) in param
        .data
        .iter_mut()
        .zip(&grad.data)
        .zip(accumulator.data.iter_mut())
    {
        *a += g * g;
        *p -= base_rate * g / (a.sqrt() + damping);
    }
    Ok(())
}

/// `param -= rate * grad`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, rate: f64) -> Result<()> {
    param.axpy(-rate, grad)
}
