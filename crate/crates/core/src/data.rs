use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Input/output record `U` (m×N), `Y` (p×N) with a train/test split index.
///
/// Columns `0..split` form the training window, `split..N` the test window.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub inputs: DMatrix<T>,
    pub outputs: DMatrix<T>,
    pub split: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: DMatrix<T>, outputs: DMatrix<T>, split: usize) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::dim("dataset columns", inputs.ncols(), outputs.ncols()));
        }
        if split > inputs.ncols() {
            return Err(Error::Config(format!(
                "split index {split} exceeds sample count {}",
                inputs.ncols()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            split,
        })
    }

    /// Whole record used as training data (`split = N`).
    pub fn unsplit(inputs: DMatrix<T>, outputs: DMatrix<T>) -> Result<Self> {
        let n = inputs.ncols();
        Self::new(inputs, outputs, n)
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.nrows()
    }

    /// Training window as a standalone record.
    pub fn training(&self) -> Dataset<T> {
        let n = self.split;
        Dataset {
            inputs: self.inputs.columns(0, n).into_owned(),
            outputs: self.outputs.columns(0, n).into_owned(),
            split: n,
        }
    }

    /// Test window as a standalone record.
    pub fn testing(&self) -> Dataset<T> {
        let n = self.len() - self.split;
        Dataset {
            inputs: self.inputs.columns(self.split, n).into_owned(),
            outputs: self.outputs.columns(self.split, n).into_owned(),
            split: n,
        }
    }
}
