//! Dense row-major matrices, seeded random streams, and standardization.

pub mod kernels;
mod rng;
pub mod vmath;

pub use rng::SeededRng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Rejects a length mismatch and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} entries for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite matrix entry at index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                "equal row lengths",
                "ragged rows",
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// A `1 × n` matrix holding a parameter vector.
    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `start..end` as a contiguous slice.
    pub fn rows_slice(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.cols..end * self.cols]
    }

    pub fn rows_slice_mut(&mut self, start: usize, end: usize) -> &mut [f64] {
        &mut self.data[start * self.cols..end * self.cols]
    }

    /// Matrix product with a fixed left-to-right accumulation order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        kernels::gemm(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: kernels::transpose(&self.data, self.rows, self.cols),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// I.i.d. uniform entries on `[-bound, bound]`, drawn in row-major order.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut SeededRng) -> Result<Matrix> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Config(format!(
                "init bound must be positive, got {bound}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Ok(Matrix { rows, cols, data })
    }
}

/// Uniform initialization with the default `1/√fan_in` bound.
pub fn uniform_init(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    Matrix::uniform(rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}

/// Scalar location and scale used to standardize a dataset channel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::DegenerateScale(std));
        }
        Ok(Self { mean, std })
    }

    /// Population mean and standard deviation of `data`.
    pub fn fit(data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("cannot fit a standardizer to no data"));
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self::new(mean, var.sqrt())
    }

    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        data.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, data: &[f64]) -> Vec<f64> {
        data.iter().map(|v| v * self.std + self.mean).collect()
    }
}

pub fn standardize(data: &[f64], mean: f64, std: f64) -> Result<Vec<f64>> {
    Ok(Standardizer::new(mean, std)?.apply(data))
}

pub fn destandardize(data: &[f64], mean: f64, std: f64) -> Result<Vec<f64>> {
    Ok(Standardizer::new(mean, std)?.invert(data))
}
