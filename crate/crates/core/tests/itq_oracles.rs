//! Oracle checks for the quantization initializer.

use agh_core::itq::{encode, train};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn center(data: &DMatrix<f64>, mean: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    let mut out = data.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}

#[test]
fn quantization_loss_is_non_increasing_and_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data = gaussian(16, 200, &mut rng);
    let (model, trace) = train(&data, 8, 30, 7).unwrap();
    assert_eq!(trace.len(), 30);
    for w in trace.windows(2) {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-9) + 1e-12,
            "loss increased: {} -> {}",
            w[0],
            w[1]
        );
    }
    // One more code assignment under the returned rotation cannot do worse
    // than the recorded final loss.
    let projected = &model.rotation * &model.projection * center(&data, &model.mean);
    let codes = encode(&data, &model).unwrap();
    let recomputed = (codes.as_matrix() - projected).norm_squared();
    assert!(
        recomputed <= trace.last().unwrap() * (1.0 + 1e-9),
        "recomputed {recomputed} vs trace end {}",
        trace.last().unwrap()
    );
}

#[test]
fn projection_recovers_low_rank_support() {
    // Data with exact 5-dimensional support: the top-5 principal directions
    // must reconstruct the centered data.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let basis = gaussian(12, 5, &mut rng).qr().q();
    let coeffs = gaussian(5, 60, &mut rng);
    let data = basis * coeffs;
    let (model, _) = train(&data, 5, 10, 0).unwrap();
    let centered = center(&data, &model.mean);
    let reconstructed = model.projection.transpose() * &model.projection * &centered;
    let rel = (&reconstructed - &centered).norm() / centered.norm();
    assert!(rel < 1e-8, "relative reconstruction error {rel}");
}

#[test]
fn projection_rows_are_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let data = gaussian(10, 80, &mut rng);
    let (model, _) = train(&data, 4, 15, 3).unwrap();
    let gram = &model.projection * model.projection.transpose();
    let defect = (gram - DMatrix::identity(4, 4)).amax();
    assert!(defect < 1e-8, "orthonormality defect {defect}");
    let rot_defect =
        (&model.rotation * model.rotation.transpose() - DMatrix::identity(4, 4)).amax();
    assert!(rot_defect < 1e-10, "rotation defect {rot_defect}");
}

#[test]
fn encode_matches_explicit_affine_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let data = gaussian(9, 40, &mut rng);
    let (model, _) = train(&data, 3, 10, 5).unwrap();
    let fresh = gaussian(9, 17, &mut rng);
    let codes = encode(&fresh, &model).unwrap();

    for j in 0..17 {
        let centered = fresh.column(j) - &model.mean;
        let projected = &model.rotation * (&model.projection * centered);
        for k in 0..3 {
            let expected = if projected[k] >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(codes.as_matrix()[(k, j)], expected, "bit ({k}, {j})");
        }
    }
}
