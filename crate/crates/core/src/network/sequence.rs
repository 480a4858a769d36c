use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Time-major `[steps × batch × units]` values, stored as a
/// `(steps·batch) × units` matrix whose row `t·batch + b` is sample `b` at
/// step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    steps: usize,
    batch: usize,
    values: Matrix,
}

impl StateSequence {
    pub fn zeros(steps: usize, batch: usize, units: usize) -> Self {
        Self {
            steps,
            batch,
            values: Matrix::zeros(steps * batch, units),
        }
    }

    pub fn from_matrix(steps: usize, batch: usize, values: Matrix) -> Result<Self> {
        if values.rows() != steps * batch {
            return Err(Error::shape(
                "StateSequence",
                format!("{} rows", steps * batch),
                values.rows(),
            ));
        }
        Ok(Self {
            steps,
            batch,
            values,
        })
    }

    /// Builds a sequence from per-sample series laid out `[sample][step][unit]`.
    pub fn from_samples(samples: &[&[f64]], steps: usize, units: usize) -> Result<Self> {
        let batch = samples.len();
        let mut seq = Self::zeros(steps, batch, units);
        for (b, s) in samples.iter().enumerate() {
            if s.len() != steps * units {
                return Err(Error::shape(
                    "StateSequence::from_samples",
                    steps * units,
                    s.len(),
                ));
            }
            for t in 0..steps {
                seq.at_mut(t, b)
                    .copy_from_slice(&s[t * units..(t + 1) * units]);
            }
        }
        Ok(seq)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn units(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Matrix {
        &mut self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// All samples at step `t`, `[batch × units]` row-major.
    pub fn step(&self, t: usize) -> &[f64] {
        self.values.rows_slice(t * self.batch, (t + 1) * self.batch)
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        self.values
            .rows_slice_mut(t * self.batch, (t + 1) * self.batch)
    }

    pub fn at(&self, t: usize, b: usize) -> &[f64] {
        self.values.row(t * self.batch + b)
    }

    pub fn at_mut(&mut self, t: usize, b: usize) -> &mut [f64] {
        self.values.row_mut(t * self.batch + b)
    }

    /// Series of one sample, `[steps × units]` row-major.
    pub fn sample(&self, b: usize) -> Vec<f64> {
        (0..self.steps)
            .flat_map(|t| self.at(t, b).iter().copied())
            .collect()
    }

    pub fn same_shape(&self, other: &StateSequence) -> bool {
        self.steps == other.steps && self.batch == other.batch && self.units() == other.units()
    }
}
