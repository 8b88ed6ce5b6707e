//! Simultaneous aggregating and hashing.
//!
//! Instead of aggregating local descriptors first and learning hash
//! functions afterwards, the trainer alternates between the two: the
//! autoencoder of [`crate::rba`] is fit to the current aggregated vectors,
//! then each image's vector is re-solved to balance the aggregation
//! constraints against reconstructibility through the code space.
//!
//! Per image with local descriptors `V` (columns), the aggregation step
//! minimizes
//!
//! ```text
//! |phi - W2 (W1 phi + c1) - c2|^2 + gamma (|V^T phi - 1|^2 + mu |phi|^2)
//! ```
//!
//! whose normal equations are `A phi = r` with `M = I - W2 W1`,
//! `A = M^T M + gamma V V^T + gamma mu I` and
//! `r = M^T (W2 c1 + c2) + gamma V 1`. Queries are folded into the same
//! geometry by solving the identical problem with the trained weights before
//! applying the encoder.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::gmp::{self, GmpParams};
use crate::itq;
use crate::linalg::{ensure_finite, spd_solve_vec};
use crate::rba::{self, HashModel, RbaHyperparams};

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_BETA: f64 = 1e-1;
pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_MU: f64 = 1e2;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_INNER_ITERATIONS: usize = 10;

/// Joint training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SahHyperparams {
    /// Code length `L`.
    pub code_length: usize,
    /// Quantization-loss penalty of the inner autoencoder.
    pub lambda: f64,
    /// Weight decay of the inner autoencoder.
    pub beta: f64,
    /// Weight of the aggregation terms.
    pub gamma: f64,
    /// Aggregation regularizer, shared with the initializer.
    pub mu: f64,
    /// Outer alternations.
    pub iterations: usize,
    /// Autoencoder iterations per alternation.
    pub inner_iterations: usize,
    /// Coordinate-descent sweeps per autoencoder iteration.
    pub sweeps: usize,
    /// Iterations of the code initializer.
    pub init_iterations: usize,
    /// Reuse the previous alternation's codes to initialize the next
    /// autoencoder fit instead of re-initializing from scratch each time.
    /// Off by default; a deviation offered for speed/stability studies.
    pub warm_start: bool,
}

impl SahHyperparams {
    /// Cross-validated defaults: `lambda = 1e-2`, `beta = 1e-1`,
    /// `gamma = 10`, `mu = 100`, 5 outer alternations of 10 inner
    /// iterations.
    pub fn new(code_length: usize) -> Self {
        Self {
            code_length,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            mu: DEFAULT_MU,
            iterations: DEFAULT_ITERATIONS,
            inner_iterations: DEFAULT_INNER_ITERATIONS,
            sweeps: 1,
            init_iterations: itq::DEFAULT_ITERATIONS,
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_length == 0 {
            return Err(Error::Invalid("code length must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.iterations == 0 || self.inner_iterations == 0 || self.sweeps == 0 {
            return Err(Error::Invalid("iteration counts must be at least 1".into()));
        }
        Ok(())
    }

    fn inner(&self) -> RbaHyperparams {
        RbaHyperparams {
            code_length: self.code_length,
            lambda: self.lambda,
            beta: self.beta,
            iterations: self.inner_iterations,
            sweeps: self.sweeps,
            init_iterations: self.init_iterations,
        }
    }
}

/// Log of one outer alternation.
#[derive(Debug, Clone)]
pub struct SahIterationRecord {
    /// Joint objective after the alternation (autoencoder objective on the
    /// aggregated vectors plus the weighted aggregation terms). Logged for
    /// inspection; the aggregation step optimizes the relaxed per-image
    /// objective, so this value is not guaranteed monotone.
    pub joint_objective: f64,
    /// Objective trace of the inner autoencoder fit.
    pub rba_trace: Vec<f64>,
    /// Per-image relaxed objective before the aggregation step, under the
    /// freshly fit model.
    pub phi_objective_before: Vec<f64>,
    /// Per-image relaxed objective after the aggregation step; never above
    /// the corresponding `before` value.
    pub phi_objective_after: Vec<f64>,
}

/// Result of a joint training run.
#[derive(Debug, Clone)]
pub struct SahOutcome {
    pub model: HashModel,
    /// Final aggregated vectors, one column per image.
    pub aggregated: DMatrix<f64>,
    /// Auxiliary codes from the last autoencoder fit.
    pub codes: BinaryCodes,
    pub records: Vec<SahIterationRecord>,
}

/// Shared per-model pieces of the aggregation step.
struct PhiSystem {
    /// `M^T M` for `M = I - W2 W1`.
    mtm: DMatrix<f64>,
    /// `M^T (W2 c1 + c2)`.
    rhs_base: DVector<f64>,
}

impl PhiSystem {
    fn new(model: &HashModel) -> Self {
        let dim = model.dim();
        let mut m = -(&model.decoder_weights * &model.encoder_weights);
        for i in 0..dim {
            m[(i, i)] += 1.0;
        }
        let t = &model.decoder_weights * &model.encoder_bias + &model.decoder_bias;
        Self {
            rhs_base: m.transpose() * t,
            mtm: m.transpose() * &m,
        }
    }

    fn solve(
        &self,
        locals: &DMatrix<f64>,
        gamma: f64,
        mu: f64,
        context: &str,
    ) -> Result<DVector<f64>> {
        let dim = self.mtm.nrows();
        if locals.nrows() != dim {
            return Err(Error::Shape(format!(
                "{context}: descriptors have dimension {}, model expects {dim}",
                locals.nrows()
            )));
        }
        if locals.ncols() == 0 {
            return Err(Error::Shape(format!("{context}: image has no descriptors")));
        }
        ensure_finite(locals, context)?;
        let mut system = &self.mtm + gamma * locals * locals.transpose();
        for i in 0..dim {
            system[(i, i)] += gamma * mu;
        }
        let ones = DVector::from_element(locals.ncols(), 1.0);
        let rhs = &self.rhs_base + gamma * locals * ones;
        spd_solve_vec(system, &rhs, context)
    }
}

/// Aggregation step for a single image (see the module docs).
pub fn phi_step(
    locals: &DMatrix<f64>,
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> Result<DVector<f64>> {
    model.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Invalid(format!(
            "gamma and mu must be positive, got gamma={gamma}, mu={mu}"
        )));
    }
    PhiSystem::new(model).solve(locals, gamma, mu, "aggregation step")
}

/// Aggregation step for every image, sharing the model-dependent blocks.
pub fn phi_step_all(
    dataset: &[DMatrix<f64>],
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Invalid(format!(
            "gamma and mu must be positive, got gamma={gamma}, mu={mu}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Shape("dataset is empty".into()));
    }
    let system = PhiSystem::new(model);
    let columns = dataset
        .par_iter()
        .enumerate()
        .map(|(j, locals)| system.solve(locals, gamma, mu, &format!("image {j}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// The relaxed per-image objective the aggregation step minimizes.
pub fn image_objective(
    locals: &DMatrix<f64>,
    phi: &DVector<f64>,
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> f64 {
    let through = &model.decoder_weights * (&model.encoder_weights * phi + &model.encoder_bias)
        + &model.decoder_bias;
    let residual = phi - through;
    let ones = DVector::from_element(locals.ncols(), 1.0);
    let match_term = (locals.transpose() * phi - ones).norm_squared();
    residual.norm_squared() + gamma * (match_term + mu * phi.norm_squared())
}

/// Joint objective: the autoencoder objective on the aggregated vectors plus
/// `gamma/2 sum_j (|V_j^T phi_j - 1|^2 + mu |phi_j|^2)`.
pub fn joint_objective(
    dataset: &[DMatrix<f64>],
    aggregated: &DMatrix<f64>,
    model: &HashModel,
    codes: &BinaryCodes,
    hp: &SahHyperparams,
) -> f64 {
    let autoencoder = rba::objective(aggregated, model, codes, hp.lambda, hp.beta);
    let aggregation: f64 = dataset
        .iter()
        .zip(aggregated.column_iter())
        .map(|(locals, phi)| {
            let ones = DVector::from_element(locals.ncols(), 1.0);
            (locals.transpose() * phi - ones).norm_squared() + hp.mu * phi.norm_squared()
        })
        .sum();
    autoencoder + 0.5 * hp.gamma * aggregation
}

/// Alternating training (see the module docs). The aggregated vectors are
/// initialized by plain generalized max pooling with the same `mu`.
pub fn train(dataset: &[DMatrix<f64>], hp: &SahHyperparams, seed: u64) -> Result<SahOutcome> {
    hp.validate()?;
    let mut aggregated = gmp::aggregate_all(dataset, GmpParams::new(hp.mu)?)?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);

    let mut model: Option<HashModel> = None;
    let mut codes: Option<BinaryCodes> = None;
    let mut records = Vec::with_capacity(hp.iterations);

    for _ in 0..hp.iterations {
        let inner_seed = seeder.next_u64();
        let outcome = match (codes.take(), hp.warm_start) {
            (Some(previous), true) => rba::train_from(&aggregated, &hp.inner(), previous)?,
            _ => rba::train(&aggregated, &hp.inner(), inner_seed)?,
        };

        let phi_objective_before: Vec<f64> = dataset
            .iter()
            .zip(aggregated.column_iter())
            .map(|(v, phi)| image_objective(v, &phi.into_owned(), &outcome.model, hp.gamma, hp.mu))
            .collect();
        aggregated = phi_step_all(dataset, &outcome.model, hp.gamma, hp.mu)?;
        let phi_objective_after: Vec<f64> = dataset
            .iter()
            .zip(aggregated.column_iter())
            .map(|(v, phi)| image_objective(v, &phi.into_owned(), &outcome.model, hp.gamma, hp.mu))
            .collect();

        records.push(SahIterationRecord {
            joint_objective: joint_objective(
                dataset,
                &aggregated,
                &outcome.model,
                &outcome.codes,
                hp,
            ),
            rba_trace: outcome.objective_trace,
            phi_objective_before,
            phi_objective_after,
        });
        model = Some(outcome.model);
        codes = Some(outcome.codes);
    }

    Ok(SahOutcome {
        model: model.expect("at least one alternation"),
        aggregated,
        codes: codes.expect("at least one alternation"),
        records,
    })
}

/// Query pipeline: aggregation step with the trained weights, then the
/// encoder.
pub fn encode_image(
    locals: &DMatrix<f64>,
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> Result<BinaryCodes> {
    let phi = phi_step(locals, model, gamma, mu)?;
    rba::encode(&DMatrix::from_columns(&[phi]), model)
}

/// [`encode_image`] over a whole dataset; returns the aggregated vectors and
/// their codes.
pub fn encode_dataset(
    dataset: &[DMatrix<f64>],
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> Result<(DMatrix<f64>, BinaryCodes)> {
    let aggregated = phi_step_all(dataset, model, gamma, mu)?;
    let codes = rba::encode(&aggregated, model)?;
    Ok((aggregated, codes))
}

/// Mean squared error between each image's aggregated vector and its decoded
/// code: `(1/m) sum_i |phi_i - (W2 z_i + c2)|^2` with `phi` from the
/// aggregation step and `z` from the encoder.
pub fn reconstruction_error(
    dataset: &[DMatrix<f64>],
    model: &HashModel,
    gamma: f64,
    mu: f64,
) -> Result<f64> {
    let (aggregated, codes) = encode_dataset(dataset, model, gamma, mu)?;
    rba::reconstruction_error(&aggregated, &codes, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset(images: usize, dim: usize, seed: u64) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..images)
            .map(|i| gaussian_matrix(dim, 2 + (i % 3), &mut rng))
            .collect()
    }

    #[test]
    fn phi_step_zero_model_hand_case() {
        // Zero weights reduce the system to (I + gamma v v^T + gamma mu I)
        // phi = gamma v; with gamma = mu = 1 and v = e1 the solution is
        // (1/3, 0).
        let model = HashModel::zeros(2, 2);
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let phi = phi_step(&v, &model, 1.0, 1.0).unwrap();
        assert_relative_eq!(phi[0], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(phi[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_step_perfect_autoencoder_matches_plain_pooling() {
        // W2 W1 = I and zero biases make the reconstruction term vanish, so
        // the solution is exactly generalized max pooling.
        let dim = 4;
        let mut model = HashModel::zeros(dim, dim);
        model.encoder_weights = DMatrix::identity(dim, dim);
        model.decoder_weights = DMatrix::identity(dim, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = gaussian_matrix(dim, 6, &mut rng);
        let mu = 0.5;
        let phi = phi_step(&v, &model, 3.0, mu).unwrap();
        let pooled = gmp::aggregate(&v, GmpParams::new(mu).unwrap()).unwrap();
        assert!((phi - pooled).amax() < 1e-10);
    }

    #[test]
    fn phi_step_dominant_gamma_approaches_plain_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = HashModel::zeros(3, 4);
        model.encoder_weights = gaussian_matrix(3, 4, &mut rng);
        model.decoder_weights = gaussian_matrix(4, 3, &mut rng);
        model.encoder_bias = gaussian_matrix(3, 1, &mut rng).column(0).into_owned();
        model.decoder_bias = gaussian_matrix(4, 1, &mut rng).column(0).into_owned();
        let v = gaussian_matrix(4, 5, &mut rng);
        let mu = 0.8;
        let phi = phi_step(&v, &model, 1e8, mu).unwrap();
        let pooled = gmp::aggregate(&v, GmpParams::new(mu).unwrap()).unwrap();
        assert!((phi - pooled).amax() < 1e-3);
    }

    #[test]
    fn image_objective_zero_model_analytic() {
        let model = HashModel::zeros(2, 2);
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let phi = DVector::from_column_slice(&[0.5, 0.25]);
        let gamma = 2.0;
        let mu = 3.0;
        // |phi|^2 + gamma (v^T phi - 1)^2 + gamma mu |phi|^2.
        let expected =
            phi.norm_squared() + gamma * (0.5f64 - 1.0).powi(2) + gamma * mu * phi.norm_squared();
        assert_relative_eq!(
            image_objective(&v, &phi, &model, gamma, mu),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn phi_step_minimizes_image_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = HashModel::zeros(2, 3);
        model.encoder_weights = gaussian_matrix(2, 3, &mut rng);
        model.decoder_weights = gaussian_matrix(3, 2, &mut rng);
        let v = gaussian_matrix(3, 4, &mut rng);
        let (gamma, mu) = (2.0, 0.5);
        let phi = phi_step(&v, &model, gamma, mu).unwrap();
        let best = image_objective(&v, &phi, &model, gamma, mu);
        for _ in 0..20 {
            let other = &phi + 0.1 * gaussian_matrix(3, 1, &mut rng).column(0).into_owned();
            assert!(image_objective(&v, &other, &model, gamma, mu) >= best - 1e-10);
        }
    }

    #[test]
    fn encode_image_is_phi_step_then_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = HashModel::zeros(2, 3);
        model.encoder_weights = gaussian_matrix(2, 3, &mut rng);
        model.decoder_weights = gaussian_matrix(3, 2, &mut rng);
        model.encoder_bias = gaussian_matrix(2, 1, &mut rng).column(0).into_owned();
        let v = gaussian_matrix(3, 5, &mut rng);
        let phi = phi_step(&v, &model, 10.0, 1.0).unwrap();
        let direct = encode_image(&v, &model, 10.0, 1.0).unwrap();
        let via = rba::encode(&DMatrix::from_columns(&[phi]), &model).unwrap();
        assert_eq!(direct.as_matrix(), via.as_matrix());
    }

    #[test]
    fn train_alternations_descend_per_image() {
        let dataset = small_dataset(8, 4, 5);
        let mut hp = SahHyperparams::new(2);
        hp.iterations = 3;
        hp.inner_iterations = 3;
        let out = train(&dataset, &hp, 0).unwrap();
        assert_eq!(out.records.len(), 3);
        for record in &out.records {
            assert!(record.joint_objective.is_finite());
            for w in record.rba_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }
            for (before, after) in record
                .phi_objective_before
                .iter()
                .zip(&record.phi_objective_after)
            {
                assert!(
                    after <= &(before * (1.0 + 1e-9) + 1e-12),
                    "{after} > {before}"
                );
            }
        }
        assert_eq!(out.aggregated.shape(), (4, 8));
        assert_eq!(out.codes.code_length(), 2);
        assert_eq!(out.codes.count(), 8);
    }

    #[test]
    fn train_is_deterministic() {
        let dataset = small_dataset(6, 3, 6);
        let mut hp = SahHyperparams::new(2);
        hp.iterations = 2;
        hp.inner_iterations = 2;
        let a = train(&dataset, &hp, 42).unwrap();
        let b = train(&dataset, &hp, 42).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.aggregated, b.aggregated);
        assert_eq!(a.codes.as_matrix(), b.codes.as_matrix());
    }

    #[test]
    fn train_with_warm_start() {
        let dataset = small_dataset(6, 3, 7);
        let mut hp = SahHyperparams::new(2);
        hp.iterations = 2;
        hp.inner_iterations = 2;
        hp.warm_start = true;
        let out = train(&dataset, &hp, 1).unwrap();
        assert_eq!(out.records.len(), 2);
    }

    #[test]
    fn reconstruction_error_zero_for_consistent_decoder_bias() {
        // With zero weights the aggregation step returns plain pooling
        // shifted by nothing, and the decoder outputs c2; choosing c2 equal
        // to the pooled vector of identical images makes the error vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = gaussian_matrix(3, 4, &mut rng);
        let (gamma, mu) = (2.0, 0.5);
        let pooled = gmp::aggregate(&v, GmpParams::new(mu).unwrap()).unwrap();
        let mut model = HashModel::zeros(2, 3);
        model.decoder_bias = pooled;
        let dataset = vec![v.clone(), v];
        let err = reconstruction_error(&dataset, &model, gamma, mu).unwrap();
        assert!(err < 1e-18, "error {err}");
    }

    #[test]
    fn reconstruction_error_zero_decoder_is_mean_norm() {
        let dataset = small_dataset(5, 3, 10);
        let model = HashModel::zeros(2, 3);
        let (gamma, mu) = (1.5, 2.0);
        let phi = phi_step_all(&dataset, &model, gamma, mu).unwrap();
        let expected = phi.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 5.0;
        assert_relative_eq!(
            reconstruction_error(&dataset, &model, gamma, mu).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(train(&[], &SahHyperparams::new(2), 0).is_err());
        let mut hp = SahHyperparams::new(2);
        hp.gamma = 0.0;
        assert!(train(&small_dataset(4, 3, 8), &hp, 0).is_err());

        let model = HashModel::zeros(2, 3);
        let wrong = DMatrix::<f64>::zeros(5, 2);
        assert!(phi_step(&wrong, &model, 1.0, 1.0).is_err());
        let empty = DMatrix::<f64>::zeros(3, 0);
        assert!(phi_step(&empty, &model, 1.0, 1.0).is_err());
    }
}
