//! Iterative quantization: PCA projection followed by a learned orthogonal
//! rotation that minimizes the quantization loss `|B - R P Xc|^2`. Used as
//! the binary-code initializer for autoencoder training and as a standalone
//! hashing baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, random_orthogonal};

/// Rotation iterations used when no explicit count is configured.
pub const DEFAULT_ITERATIONS: usize = 50;

/// Trained quantizer: data mean, principal directions, and rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ItqModel {
    /// Training mean, length `D`.
    pub mean: DVector<f64>,
    /// Top-`L` principal directions as rows (`L x D`, orthonormal rows).
    pub projection: DMatrix<f64>,
    /// Learned orthogonal rotation (`L x L`).
    pub rotation: DMatrix<f64>,
}

/// Train on a `D x m` data matrix.
///
/// Returns the model together with the quantization-loss value after each
/// rotation update; the sequence is non-increasing because both alternating
/// steps are exact minimizers.
pub fn train(
    data: &DMatrix<f64>,
    code_length: usize,
    iterations: usize,
    seed: u64,
) -> Result<(ItqModel, Vec<f64>)> {
    let (dim, count) = data.shape();
    if code_length == 0 || code_length > dim {
        return Err(Error::Invalid(format!(
            "code length {code_length} must be in 1..={dim}"
        )));
    }
    if count < code_length {
        return Err(Error::Invalid(format!(
            "need at least {code_length} samples, got {count}; reduce the code length"
        )));
    }
    if iterations == 0 {
        return Err(Error::Invalid("iterations must be at least 1".into()));
    }
    ensure_finite(data, "training data")?;

    let mean = data.column_mean();
    let centered = data - &mean * DMatrix::from_element(1, count, 1.0);
    let covariance = &centered * centered.transpose() / count as f64;

    let eigen = SymmetricEigen::new(covariance);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let top = eigen.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| eigen.eigenvalues[i] > top * 1e-9 && eigen.eigenvalues[i] > 0.0)
        .count();
    if rank < code_length {
        return Err(Error::Invalid(format!(
            "covariance rank {rank} is below the requested code length {code_length}"
        )));
    }

    let projection = DMatrix::from_fn(code_length, dim, |k, d| eigen.eigenvectors[(d, order[k])]);
    let projected = &projection * &centered;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = random_orthogonal(code_length, &mut rng);
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let codes = (&rotation * &projected).map(crate::linalg::sign_pm1);
        // Orthogonal Procrustes: rotation maximizing tr(R * projected * codes^T).
        let svd = (&projected * codes.transpose()).svd(true, true);
        let u = svd.u.as_ref().expect("svd with u");
        let v_t = svd.v_t.as_ref().expect("svd with v_t");
        rotation = v_t.transpose() * u.transpose();
        losses.push((&codes - &rotation * &projected).norm_squared());
    }

    Ok((
        ItqModel {
            mean,
            projection,
            rotation,
        },
        losses,
    ))
}

/// Encode columns of `data` to binary codes: `sign(R P (x - mean))` with
/// `sign(0) = +1`.
pub fn encode(data: &DMatrix<f64>, model: &ItqModel) -> Result<BinaryCodes> {
    if data.nrows() != model.projection.ncols() {
        return Err(Error::Shape(format!(
            "data has dimension {}, model expects {}",
            data.nrows(),
            model.projection.ncols()
        )));
    }
    ensure_finite(data, "data")?;
    let centered = data - &model.mean * DMatrix::from_element(1, data.ncols(), 1.0);
    Ok(BinaryCodes::from_signs(
        &(&model.rotation * (&model.projection * centered)),
    ))
}
