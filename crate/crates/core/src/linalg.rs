//! Small shared numerics helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sign with the fixed convention `sign(0) = +1`.
#[inline]
pub fn sign_pm1(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// The systems solved in this crate are SPD by construction (a Gram matrix
/// plus a positive ridge), so failure here signals NaN contamination or a
/// non-positive regularizer upstream.
pub fn spd_factor(a: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a).ok_or_else(|| {
        Error::Numerical(format!(
            "{context}: SPD factorization failed (non-finite input or non-positive ridge)"
        ))
    })
}

/// Solve `a x = b` for an SPD `a` and matrix right-hand side.
pub fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(a, context)?.solve(b))
}

/// Solve `a x = b` for an SPD `a` and vector right-hand side.
pub fn spd_solve_vec(a: DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    Ok(spd_factor(a, context)?.solve(b))
}

/// Error unless every entry of `m` is finite.
pub fn ensure_finite(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} contains non-finite values")))
    }
}

/// Error unless every entry of `v` is finite.
pub fn ensure_finite_vec(v: &DVector<f64>, name: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} contains non-finite values")))
    }
}

/// Matrix with independent standard normal entries.
pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random orthogonal matrix: Q factor of a seeded Gaussian.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    g.qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sign_zero_is_positive() {
        assert_eq!(sign_pm1(0.0), 1.0);
        assert_eq!(sign_pm1(-0.0), 1.0);
        assert_eq!(sign_pm1(3.5), 1.0);
        assert_eq!(sign_pm1(-1e-300), -1.0);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_orthogonal(6, &mut rng);
        let defect = (q.transpose() * &q - DMatrix::<f64>::identity(6, 6)).norm();
        assert!(defect < 1e-12, "defect {defect}");
    }

    #[test]
    fn spd_solve_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = gaussian_matrix(5, 8, &mut rng);
        let a = &g * g.transpose() + DMatrix::<f64>::identity(5, 5);
        let b = gaussian_matrix(5, 3, &mut rng);
        let x = spd_solve(a.clone(), &b, "test").unwrap();
        let x_lu = a.lu().solve(&b).unwrap();
        assert!((x - x_lu).norm() < 1e-10);
    }
}
