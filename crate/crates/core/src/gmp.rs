//! Generalized max pooling: aggregate the local feature vectors of an image
//! into a single vector whose dot product with every local vector is pushed
//! toward 1, via the ridge-regression closed form
//! `(V V^T + mu I) phi = V 1`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, spd_solve_vec};

/// Regularizer for the pooling solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmpParams {
    pub mu: f64,
}

impl GmpParams {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self { mu })
        } else {
            Err(Error::Invalid(format!("mu must be positive, got {mu}")))
        }
    }
}

impl Default for GmpParams {
    fn default() -> Self {
        Self { mu: 100.0 }
    }
}

/// Aggregate one image's `D x n` local feature set into a length-`D` vector.
///
/// The returned vector solves `(V V^T + mu I) phi = V 1`; the system is SPD
/// because `mu > 0`.
pub fn aggregate(locals: &DMatrix<f64>, params: GmpParams) -> Result<DVector<f64>> {
    if locals.ncols() == 0 {
        return Err(Error::Shape("image has no local features".into()));
    }
    ensure_finite(locals, "local features")?;
    let dim = locals.nrows();
    let mut system = locals * locals.transpose();
    for i in 0..dim {
        system[(i, i)] += params.mu;
    }
    let rhs = locals * DVector::from_element(locals.ncols(), 1.0);
    spd_solve_vec(system, &rhs, "pooling solve")
}

/// Aggregate every image of a dataset; column `i` of the result is the
/// aggregated vector of image `i`.
///
/// Images are processed independently (in parallel), so the output does not
/// depend on thread count.
pub fn aggregate_all(dataset: &[DMatrix<f64>], params: GmpParams) -> Result<DMatrix<f64>> {
    if dataset.is_empty() {
        return Err(Error::Shape("dataset has no images".into()));
    }
    let dim = dataset[0].nrows();
    let columns: Vec<DVector<f64>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, locals)| {
            if locals.nrows() != dim {
                return Err(Error::Shape(format!(
                    "image {i} has dimension {}, expected {dim}",
                    locals.nrows()
                )));
            }
            aggregate(locals, params).map_err(|e| Error::Invalid(format!("image {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&columns))
}
