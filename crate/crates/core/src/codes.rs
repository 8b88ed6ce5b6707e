//! Binary code matrices with entries in `{-1, +1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sign_pm1;

/// An `L x m` matrix of binary codes, one code per column.
///
/// Entries are stored as `f64` so codes can participate directly in matrix
/// products, but every entry is exactly `-1.0` or `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCodes {
    mat: DMatrix<f64>,
}

impl BinaryCodes {
    /// Wrap a matrix, rejecting any entry that is not exactly `-1` or `+1`.
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        for (idx, &v) in mat.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                let (r, c) = (idx % mat.nrows(), idx / mat.nrows());
                return Err(Error::Invalid(format!(
                    "code entry ({r}, {c}) is {v}, expected -1 or +1"
                )));
            }
        }
        Ok(Self { mat })
    }

    /// Elementwise sign of `mat`, with `sign(0) = +1`.
    pub fn from_signs(mat: &DMatrix<f64>) -> Self {
        Self {
            mat: mat.map(sign_pm1),
        }
    }

    /// Number of bits per code.
    pub fn code_length(&self) -> usize {
        self.mat.nrows()
    }

    /// Number of codes.
    pub fn count(&self) -> usize {
        self.mat.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Code `j` as a `+1 -> true` bit vector.
    pub fn column_bits(&self, j: usize) -> Vec<bool> {
        self.mat.column(j).iter().map(|&v| v > 0.0).collect()
    }
}
