//! Independent-oracle checks for the autoencoder trainer: generic
//! least-squares solves, finite-difference gradients, exhaustive code
//! enumeration, and naive recomputations.

use agh_core::codes::BinaryCodes;
use agh_core::itq;
use agh_core::rba::{
    b_step, b_step_objective, objective, reconstruct, reconstruction_error, train, train_from,
    update_biases, update_decoder_weights, update_encoder_weights, HashModel, RbaHyperparams,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

fn random_codes(l: usize, m: usize, rng: &mut ChaCha8Rng) -> BinaryCodes {
    BinaryCodes::from_matrix(DMatrix::from_fn(l, m, |_, _| {
        if rng.gen::<bool>() {
            1.0
        } else {
            -1.0
        }
    }))
    .unwrap()
}

fn random_model(l: usize, d: usize, rng: &mut ChaCha8Rng) -> HashModel {
    HashModel {
        encoder_weights: gaussian(l, d, rng),
        encoder_bias: gaussian_vec(l, rng),
        decoder_weights: gaussian(d, l, rng),
        decoder_bias: gaussian_vec(d, rng),
    }
}

/// Least-squares oracle through a different decomposition: solve
/// `min |A w - y|^2 + reg |w|^2` per row via the SVD of the augmented
/// system.
fn ridge_rows_oracle(a: &DMatrix<f64>, targets: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let (n, p) = a.shape();
    let rows = targets.nrows();
    let mut augmented = DMatrix::zeros(n + p, p);
    augmented.view_mut((0, 0), (n, p)).copy_from(a);
    for i in 0..p {
        augmented[(n + i, i)] = reg.sqrt();
    }
    let svd = augmented.svd(true, true);
    let mut out = DMatrix::zeros(rows, p);
    for r in 0..rows {
        let mut rhs = DVector::zeros(n + p);
        for j in 0..n {
            rhs[j] = targets[(r, j)];
        }
        let w = svd.solve(&rhs, 1e-14).expect("oracle solve");
        out.set_row(r, &w.transpose());
    }
    out
}

#[test]
fn encoder_update_matches_svd_ridge_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for trial in 0..25 {
        let (d, l, m) = (8, 4, 50);
        let x = gaussian(d, m, &mut rng);
        let b = random_codes(l, m, &mut rng);
        let c1 = gaussian_vec(l, &mut rng);
        let (lambda, beta) = (0.01, 1.0);
        let w1 = update_encoder_weights(&x, &b, &c1, lambda, beta).unwrap();

        // Rows of W1 solve min |X^T w - y_l|^2 + (beta/lambda)|w|^2 where
        // y_l is row l of (B - c1 1^T).
        let mut shifted = b.as_matrix().clone();
        for mut col in shifted.column_iter_mut() {
            col -= &c1;
        }
        let oracle = ridge_rows_oracle(&x.transpose(), &shifted, beta / lambda);
        let rel = (&w1 - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-6, "trial {trial}: relative deviation {rel}");

        // Normal-equation residual bound.
        let system = lambda * &x * x.transpose() + beta * DMatrix::identity(d, d);
        let rhs = lambda * shifted * x.transpose();
        let residual = (&w1 * system - &rhs).norm();
        assert!(residual <= 1e-8 * (1.0 + rhs.norm()), "residual {residual}");
    }
}

#[test]
fn decoder_update_matches_svd_ridge_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..25 {
        let (d, l, m) = (8, 4, 50);
        let x = gaussian(d, m, &mut rng);
        let b = random_codes(l, m, &mut rng);
        let c2 = gaussian_vec(d, &mut rng);
        let beta = 1.0;
        let w2 = update_decoder_weights(&x, &b, &c2, beta).unwrap();

        let mut shifted = x.clone();
        for mut col in shifted.column_iter_mut() {
            col -= &c2;
        }
        let oracle = ridge_rows_oracle(&b.as_matrix().transpose(), &shifted, beta);
        let rel = (&w2 - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-6, "trial {trial}: relative deviation {rel}");
    }
}

/// Central-difference gradient of the full objective with respect to one
/// model block; the objective is quadratic in each block, so the result is
/// exact up to rounding.
fn fd_gradient_norm(
    x: &DMatrix<f64>,
    model: &HashModel,
    codes: &BinaryCodes,
    lambda: f64,
    beta: f64,
    block: &str,
) -> f64 {
    let h = 1e-3;
    let mut sq = 0.0;
    let mut probe = |set: &mut dyn FnMut(&mut HashModel, f64)| {
        let mut plus = model.clone();
        set(&mut plus, h);
        let mut minus = model.clone();
        set(&mut minus, -h);
        let g = (objective(x, &plus, codes, lambda, beta)
            - objective(x, &minus, codes, lambda, beta))
            / (2.0 * h);
        sq += g * g;
    };
    match block {
        "encoder_weights" => {
            for r in 0..model.encoder_weights.nrows() {
                for c in 0..model.encoder_weights.ncols() {
                    probe(&mut |m, d| m.encoder_weights[(r, c)] += d);
                }
            }
        }
        "decoder_weights" => {
            for r in 0..model.decoder_weights.nrows() {
                for c in 0..model.decoder_weights.ncols() {
                    probe(&mut |m, d| m.decoder_weights[(r, c)] += d);
                }
            }
        }
        "biases" => {
            for i in 0..model.encoder_bias.len() {
                probe(&mut |m, d| m.encoder_bias[i] += d);
            }
            for i in 0..model.decoder_bias.len() {
                probe(&mut |m, d| m.decoder_bias[i] += d);
            }
        }
        _ => unreachable!(),
    }
    sq.sqrt()
}

#[test]
fn updates_zero_the_objective_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..10 {
        let (d, l, m) = (8, 4, 50);
        let x = gaussian(d, m, &mut rng);
        let b = random_codes(l, m, &mut rng);
        let (lambda, beta) = (0.01, 1.0);
        let mut model = random_model(l, d, &mut rng);
        model.encoder_weights =
            update_encoder_weights(&x, &b, &model.encoder_bias, lambda, beta).unwrap();
        model.decoder_weights = update_decoder_weights(&x, &b, &model.decoder_bias, beta).unwrap();
        let value = objective(&x, &model, &b, lambda, beta);
        for block in ["encoder_weights", "decoder_weights"] {
            let norm = fd_gradient_norm(&x, &model, &b, lambda, beta, block);
            assert!(
                norm < 1e-6 * (1.0 + value),
                "{block}: gradient norm {norm} at objective {value}"
            );
        }

        let (c1, c2) =
            update_biases(&x, &b, &model.encoder_weights, &model.decoder_weights).unwrap();
        model.encoder_bias = c1;
        model.decoder_bias = c2;
        let value = objective(&x, &model, &b, lambda, beta);
        let norm = fd_gradient_norm(&x, &model, &b, lambda, beta, "biases");
        assert!(
            norm < 1e-8 * (1.0 + value),
            "biases: gradient norm {norm} at objective {value}"
        );
    }
}

fn column_objective(
    x: &DMatrix<f64>,
    model: &HashModel,
    code: &DVector<f64>,
    column: usize,
    lambda: f64,
) -> f64 {
    let x_tilde = x.column(column) - &model.decoder_bias;
    let h = &model.encoder_weights * x.column(column) + &model.encoder_bias;
    (x_tilde - &model.decoder_weights * code).norm_squared() + lambda * (h - code).norm_squared()
}

#[test]
fn b_step_fixed_point_survives_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (d, l, m) = (6, 4, 5);
    let lambda = 0.01;
    for trial in 0..10 {
        let x = gaussian(d, m, &mut rng);
        let model = random_model(l, d, &mut rng);
        let init = random_codes(l, m, &mut rng);
        let fixed = b_step(&x, &model, &init, lambda, 64).unwrap();

        let total = b_step_objective(&x, &model, &fixed, lambda);
        let initial = b_step_objective(&x, &model, &init, lambda);
        assert!(
            total <= initial + 1e-9,
            "trial {trial}: {total} > {initial}"
        );

        let mut exhaustive_total = 0.0;
        for i in 0..m {
            let current: DVector<f64> = fixed.as_matrix().column(i).into_owned();
            let current_value = column_objective(&x, &model, &current, i, lambda);

            // Per-bit optimality: no single flip improves the column.
            for k in 0..l {
                let mut flipped = current.clone();
                flipped[k] = -flipped[k];
                let v = column_objective(&x, &model, &flipped, i, lambda);
                assert!(
                    v >= current_value - 1e-9,
                    "trial {trial}: flip ({k}, {i}) improves {current_value} -> {v}"
                );
            }

            // Exhaustive minimum over all 2^L codes lower-bounds the column.
            let mut best = f64::INFINITY;
            for pattern in 0..(1u32 << l) {
                let candidate =
                    DVector::from_fn(l, |k, _| if pattern & (1 << k) != 0 { 1.0 } else { -1.0 });
                best = best.min(column_objective(&x, &model, &candidate, i, lambda));
            }
            assert!(current_value >= best - 1e-9);
            exhaustive_total += best;
        }
        assert!(total >= exhaustive_total - 1e-9);

        // Per-row optimality: replacing any row with any of the 2^m sign
        // patterns cannot improve the fixed point.
        for k in 0..l {
            for pattern in 0..(1u32 << m) {
                let mut altered = fixed.as_matrix().clone();
                for i in 0..m {
                    altered[(k, i)] = if pattern & (1 << i) != 0 { 1.0 } else { -1.0 };
                }
                let altered = BinaryCodes::from_matrix(altered).unwrap();
                let v = b_step_objective(&x, &model, &altered, lambda);
                assert!(
                    v >= total - 1e-9,
                    "trial {trial}: row {k} improves {total} -> {v}"
                );
            }
        }
    }
}

/// Reference sweep that materializes the exclusion matrices instead of using
/// the rank-1 correction.
fn naive_sweep(
    x: &DMatrix<f64>,
    model: &HashModel,
    initial: &BinaryCodes,
    lambda: f64,
) -> DMatrix<f64> {
    let (l, m) = initial.as_matrix().shape();
    let mut x_tilde = x.clone();
    for mut col in x_tilde.column_iter_mut() {
        col -= &model.decoder_bias;
    }
    let mut h = &model.encoder_weights * x;
    for mut col in h.column_iter_mut() {
        col += &model.encoder_bias;
    }
    let q = model.decoder_weights.transpose() * &x_tilde + lambda * &h;

    let mut b = initial.as_matrix().clone();
    for k in 0..l {
        // Explicit deletion of row k / column k.
        let mut w_bar = DMatrix::zeros(x.nrows(), l - 1);
        let mut b_bar = DMatrix::zeros(l - 1, m);
        let mut idx = 0;
        for j in 0..l {
            if j == k {
                continue;
            }
            w_bar.set_column(idx, &model.decoder_weights.column(j));
            b_bar.set_row(idx, &b.row(j));
            idx += 1;
        }
        let w_k = model.decoder_weights.column(k).into_owned();
        let exclusion = w_k.transpose() * w_bar * b_bar;
        for i in 0..m {
            let score = q[(k, i)] - exclusion[(0, i)];
            b[(k, i)] = if score >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    b
}

#[test]
fn b_step_matches_naive_exclusion_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..10 {
        let (d, l, m) = (6, 5, 9);
        let x = gaussian(d, m, &mut rng);
        let model = random_model(l, d, &mut rng);
        let init = random_codes(l, m, &mut rng);
        let fast = b_step(&x, &model, &init, 0.01, 1).unwrap();
        let naive = naive_sweep(&x, &model, &init, 0.01);
        assert_eq!(fast.as_matrix(), &naive);
    }
}

#[test]
fn objective_matches_naive_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (d, l, m) = (7, 3, 11);
    let x = gaussian(d, m, &mut rng);
    let model = random_model(l, d, &mut rng);
    let b = random_codes(l, m, &mut rng);
    let (lambda, beta) = (0.4, 1.3);

    let mut reconstruction = 0.0;
    for i in 0..m {
        for r in 0..d {
            let mut decoded = model.decoder_bias[r];
            for k in 0..l {
                decoded += model.decoder_weights[(r, k)] * b.as_matrix()[(k, i)];
            }
            reconstruction += (x[(r, i)] - decoded).powi(2);
        }
    }
    let mut quantization = 0.0;
    for i in 0..m {
        for k in 0..l {
            let mut predicted = model.encoder_bias[k];
            for r in 0..d {
                predicted += model.encoder_weights[(k, r)] * x[(r, i)];
            }
            quantization += (b.as_matrix()[(k, i)] - predicted).powi(2);
        }
    }
    let mut decay = 0.0;
    for v in model.encoder_weights.iter() {
        decay += v * v;
    }
    for v in model.decoder_weights.iter() {
        decay += v * v;
    }
    let expected = 0.5 * reconstruction + 0.5 * lambda * quantization + 0.5 * beta * decay;
    let got = objective(&x, &model, &b, lambda, beta);
    let rel = (got - expected).abs() / expected.abs();
    assert!(rel < 1e-12, "relative deviation {rel}");
}

#[test]
fn every_substep_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let (d, l, m) = (8, 4, 40);
    let (lambda, beta) = (0.01, 1.0);
    for _ in 0..5 {
        let x = gaussian(d, m, &mut rng);
        let mut model = random_model(l, d, &mut rng);
        let mut codes = random_codes(l, m, &mut rng);
        let mut previous = objective(&x, &model, &codes, lambda, beta);

        let tol = |v: f64| v * 1e-9 + 1e-12;
        model.encoder_weights =
            update_encoder_weights(&x, &codes, &model.encoder_bias, lambda, beta).unwrap();
        let v = objective(&x, &model, &codes, lambda, beta);
        assert!(
            v <= previous + tol(previous),
            "encoder step: {previous} -> {v}"
        );
        previous = v;

        model.decoder_weights =
            update_decoder_weights(&x, &codes, &model.decoder_bias, beta).unwrap();
        let v = objective(&x, &model, &codes, lambda, beta);
        assert!(
            v <= previous + tol(previous),
            "decoder step: {previous} -> {v}"
        );
        previous = v;

        let (c1, c2) =
            update_biases(&x, &codes, &model.encoder_weights, &model.decoder_weights).unwrap();
        model.encoder_bias = c1;
        model.decoder_bias = c2;
        let v = objective(&x, &model, &codes, lambda, beta);
        assert!(
            v <= previous + tol(previous),
            "bias step: {previous} -> {v}"
        );
        previous = v;

        codes = b_step(&x, &model, &codes, lambda, 1).unwrap();
        let v = objective(&x, &model, &codes, lambda, beta);
        assert!(
            v <= previous + tol(previous),
            "code step: {previous} -> {v}"
        );
    }
}

fn gaussian_mixture(
    dim: usize,
    count: usize,
    clusters: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let centers = 3.0 * gaussian(dim, clusters, rng);
    DMatrix::from_fn(dim, count, |r, c| {
        let center = centers[(r, c % clusters)];
        let noise: f64 = StandardNormal.sample(rng);
        center + 0.3 * noise
    })
}

#[test]
fn training_trace_descends_and_beats_the_first_cycle_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let x = gaussian_mixture(16, 400, 10, &mut rng);
    let hp = RbaHyperparams::new(8);
    let out = train(&x, &hp, 11).unwrap();

    assert_eq!(out.objective_trace.len(), hp.iterations);
    for w in out.objective_trace.windows(2) {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-9),
            "trace increased: {} -> {}",
            w[0],
            w[1]
        );
    }

    // Reference point: initial codes with the first cycle's weights and
    // biases, before any code update.
    let (itq_model, _) = itq::train(&x, hp.code_length, hp.init_iterations, 11).unwrap();
    let initial = itq::encode(&x, &itq_model).unwrap();
    let mut reference = HashModel::zeros(hp.code_length, 16);
    reference.encoder_weights =
        update_encoder_weights(&x, &initial, &reference.encoder_bias, hp.lambda, hp.beta).unwrap();
    reference.decoder_weights =
        update_decoder_weights(&x, &initial, &reference.decoder_bias, hp.beta).unwrap();
    let (c1, c2) = update_biases(
        &x,
        &initial,
        &reference.encoder_weights,
        &reference.decoder_weights,
    )
    .unwrap();
    reference.encoder_bias = c1;
    reference.decoder_bias = c2;
    let first_cycle_value = objective(&x, &reference, &initial, hp.lambda, hp.beta);
    let final_value = *out.objective_trace.last().unwrap();
    assert!(
        final_value <= first_cycle_value,
        "final {final_value} vs first-cycle point {first_cycle_value}"
    );
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let x = gaussian(10, 60, &mut rng);
    let hp = RbaHyperparams::new(4);
    let a = train(&x, &hp, 5).unwrap();
    let b = train(&x, &hp, 5).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.codes.as_matrix(), b.codes.as_matrix());
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn training_composes_with_explicit_initial_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    let x = gaussian(10, 60, &mut rng);
    let hp = RbaHyperparams::new(4);
    let (itq_model, _) = itq::train(&x, 4, hp.init_iterations, 9).unwrap();
    let initial = itq::encode(&x, &itq_model).unwrap();
    let via_seed = train(&x, &hp, 9).unwrap();
    let via_codes = train_from(&x, &hp, initial).unwrap();
    assert_eq!(via_seed.model, via_codes.model);
    assert_eq!(via_seed.objective_trace, via_codes.objective_trace);
}

#[test]
fn reconstruction_error_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (d, l, m) = (6, 3, 14);
    let x = gaussian(d, m, &mut rng);
    let model = random_model(l, d, &mut rng);
    let z = random_codes(l, m, &mut rng);

    let reconstruction = reconstruct(&z, &model).unwrap();
    let mut expected = 0.0;
    for i in 0..m {
        for r in 0..d {
            let mut decoded = model.decoder_bias[r];
            for k in 0..l {
                decoded += model.decoder_weights[(r, k)] * z.as_matrix()[(k, i)];
            }
            assert!((reconstruction[(r, i)] - decoded).abs() < 1e-12);
            expected += (x[(r, i)] - decoded).powi(2);
        }
    }
    expected /= m as f64;
    let got = reconstruction_error(&x, &z, &model).unwrap();
    let rel = (got - expected).abs() / expected.abs();
    assert!(rel < 1e-12, "relative deviation {rel}");
}
