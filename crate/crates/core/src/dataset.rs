//! Row-major regression data shared by the network and GP learners.

use nalgebra::DMatrix;

use crate::error::{LfdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    /// One row per example.
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl RegressionSet {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(LfdError::invalid(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(LfdError::invalid("empty dataset"));
        }
        let din = inputs[0].len();
        let dout = targets.first().map_or(0, |t| t.len());
        if inputs.iter().any(|r| r.len() != din) || targets.iter().any(|r| r.len() != dout) {
            return Err(LfdError::invalid("ragged dataset rows"));
        }
        let x = DMatrix::from_fn(inputs.len(), din, |i, j| inputs[i][j]);
        let y = DMatrix::from_fn(targets.len(), dout, |i, j| targets[i][j]);
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Copy the given rows into a new set.
    pub fn select(&self, rows: &[usize]) -> Self {
        let x = DMatrix::from_fn(rows.len(), self.input_dim(), |i, j| self.inputs[(rows[i], j)]);
        let y = DMatrix::from_fn(rows.len(), self.output_dim(), |i, j| self.targets[(rows[i], j)]);
        Self { inputs: x, targets: y }
    }
}
