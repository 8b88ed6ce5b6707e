//! Relaxed binary autoencoder training.
//!
//! The trainer minimizes, over encoder `(W1, c1)`, decoder `(W2, c2)` and an
//! auxiliary binary code matrix `B`,
//!
//! ```text
//! 1/2 |X - (W2 B + c2 1^T)|^2
//!   + lambda/2 |B - (W1 X + c1 1^T)|^2
//!   + beta/2 (|W1|^2 + |W2|^2)
//! ```
//!
//! with `B` constrained to `{-1, +1}`. Each outer iteration applies the
//! closed-form weight updates, the closed-form bias updates, and a
//! coordinate-descent pass over the rows of `B`; every sub-step is the exact
//! minimizer of its block, so the objective never increases.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::itq;
use crate::linalg::{ensure_finite, ensure_finite_vec, sign_pm1, spd_solve};

/// Magic bytes of a serialized model file.
pub const MODEL_MAGIC: [u8; 4] = *b"AGHM";

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_ITERATIONS: usize = 10;

/// Affine encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    /// `L x D` encoder weights.
    pub encoder_weights: DMatrix<f64>,
    /// Length-`L` encoder bias.
    pub encoder_bias: DVector<f64>,
    /// `D x L` decoder weights.
    pub decoder_weights: DMatrix<f64>,
    /// Length-`D` decoder bias.
    pub decoder_bias: DVector<f64>,
}

impl HashModel {
    /// All-zero model of the given shape.
    pub fn zeros(code_length: usize, dim: usize) -> Self {
        Self {
            encoder_weights: DMatrix::zeros(code_length, dim),
            encoder_bias: DVector::zeros(code_length),
            decoder_weights: DMatrix::zeros(dim, code_length),
            decoder_bias: DVector::zeros(dim),
        }
    }

    pub fn code_length(&self) -> usize {
        self.encoder_weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.encoder_weights.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (l, d) = self.encoder_weights.shape();
        if self.encoder_bias.len() != l
            || self.decoder_weights.shape() != (d, l)
            || self.decoder_bias.len() != d
        {
            return Err(Error::Shape("model blocks have inconsistent shapes".into()));
        }
        ensure_finite(&self.encoder_weights, "encoder weights")?;
        ensure_finite_vec(&self.encoder_bias, "encoder bias")?;
        ensure_finite(&self.decoder_weights, "decoder weights")?;
        ensure_finite_vec(&self.decoder_bias, "decoder bias")
    }

    /// Serialize: magic, `u32` code length, `u32` dimension, then row-major
    /// little-endian `f64` blocks in order encoder weights, encoder bias,
    /// decoder weights, decoder bias.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let (l, d) = (self.code_length(), self.dim());
        let mut bytes = Vec::with_capacity(12 + 8 * (2 * l * d + l + d));
        bytes.extend_from_slice(&MODEL_MAGIC);
        bytes.extend_from_slice(&(l as u32).to_le_bytes());
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
        fn push_row_major(bytes: &mut Vec<u8>, m: &DMatrix<f64>) {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
        }
        push_row_major(&mut bytes, &self.encoder_weights);
        for v in self.encoder_bias.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        push_row_major(&mut bytes, &self.decoder_weights);
        for v in self.decoder_bias.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let name = path.as_ref().display().to_string();
        let bytes = fs::read(path.as_ref())?;
        if bytes.len() < 12 {
            return Err(Error::Format(format!("{name}: truncated header")));
        }
        if bytes[0..4] != MODEL_MAGIC {
            return Err(Error::Format(format!("{name}: bad magic bytes")));
        }
        let l = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + 8 * (2 * l * d + l + d);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{name}: file is {} bytes, expected {expected} for L={l}, D={d}",
                bytes.len()
            )));
        }
        let mut offset = 12;
        let mut next = || {
            let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            offset += 8;
            v
        };
        let mut read_row_major = |rows: usize, cols: usize| {
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = next();
                }
            }
            m
        };
        let encoder_weights = read_row_major(l, d);
        let encoder_bias = read_row_major(l, 1).column(0).into_owned();
        let decoder_weights = read_row_major(d, l);
        let decoder_bias = read_row_major(d, 1).column(0).into_owned();
        let model = Self {
            encoder_weights,
            encoder_bias,
            decoder_weights,
            decoder_bias,
        };
        model
            .validate()
            .map_err(|e| Error::Format(format!("{name}: {e}")))?;
        Ok(model)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbaHyperparams {
    /// Code length `L`.
    pub code_length: usize,
    /// Quantization-loss penalty.
    pub lambda: f64,
    /// Weight decay.
    pub beta: f64,
    /// Outer iterations.
    pub iterations: usize,
    /// Coordinate-descent sweeps per iteration (each sweep may exit early
    /// when it changes nothing).
    pub sweeps: usize,
    /// Iterations of the code initializer.
    pub init_iterations: usize,
}

impl RbaHyperparams {
    /// Cross-validated defaults: `lambda = 1e-2`, `beta = 1`, 10 iterations.
    pub fn new(code_length: usize) -> Self {
        Self {
            code_length,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            sweeps: 1,
            init_iterations: itq::DEFAULT_ITERATIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_length == 0 {
            return Err(Error::Invalid("code length must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Invalid(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.iterations == 0 || self.sweeps == 0 || self.init_iterations == 0 {
            return Err(Error::Invalid("iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct RbaOutcome {
    pub model: HashModel,
    /// Final auxiliary codes of the training data.
    pub codes: BinaryCodes,
    /// Objective value after each full iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    /// How many times the constant encoder system matrix was factorized
    /// during the run; always 1.
    pub encoder_kernel_builds: usize,
}

fn plus_bias(mut m: DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        col += bias;
    }
    m
}

fn minus_bias(mut m: DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        col -= bias;
    }
    m
}

/// Closed-form encoder weights:
/// `W1 = lambda (B - c1 1^T) X^T (lambda X X^T + beta I)^{-1}`.
pub fn update_encoder_weights(
    data: &DMatrix<f64>,
    codes: &BinaryCodes,
    encoder_bias: &DVector<f64>,
    lambda: f64,
    beta: f64,
) -> Result<DMatrix<f64>> {
    ensure_finite(data, "data")?;
    ensure_finite_vec(encoder_bias, "encoder bias")?;
    let dim = data.nrows();
    let mut system = lambda * data * data.transpose();
    for i in 0..dim {
        system[(i, i)] += beta;
    }
    let shifted = minus_bias(codes.as_matrix().clone(), encoder_bias);
    // Solve the transposed system: (lambda X X^T + beta I) W1^T = lambda X (B - c1 1^T)^T.
    let rhs = lambda * data * shifted.transpose();
    Ok(spd_solve(system, &rhs, "encoder update")?.transpose())
}

/// Closed-form decoder weights:
/// `W2 = (X - c2 1^T) B^T (B B^T + beta I)^{-1}`.
pub fn update_decoder_weights(
    data: &DMatrix<f64>,
    codes: &BinaryCodes,
    decoder_bias: &DVector<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    ensure_finite(data, "data")?;
    ensure_finite_vec(decoder_bias, "decoder bias")?;
    let b = codes.as_matrix();
    let code_length = b.nrows();
    let mut system = b * b.transpose();
    for i in 0..code_length {
        system[(i, i)] += beta;
    }
    let shifted = minus_bias(data.clone(), decoder_bias);
    let rhs = b * shifted.transpose();
    Ok(spd_solve(system, &rhs, "decoder update")?.transpose())
}

/// Closed-form biases: `c1 = mean(B - W1 X)`, `c2 = mean(X - W2 B)` over
/// columns.
pub fn update_biases(
    data: &DMatrix<f64>,
    codes: &BinaryCodes,
    encoder_weights: &DMatrix<f64>,
    decoder_weights: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = data.ncols();
    if m == 0 {
        return Err(Error::Shape(
            "cannot update biases with zero samples".into(),
        ));
    }
    let encoder_bias = (codes.as_matrix() - encoder_weights * data).column_mean();
    let decoder_bias = (data - decoder_weights * codes.as_matrix()).column_mean();
    Ok((encoder_bias, decoder_bias))
}

/// The objective restricted to `B`:
/// `|X~ - W2 B|^2 + lambda |H - B|^2` with `X~ = X - c2 1^T`,
/// `H = W1 X + c1 1^T`.
pub fn b_step_objective(
    data: &DMatrix<f64>,
    model: &HashModel,
    codes: &BinaryCodes,
    lambda: f64,
) -> f64 {
    let shifted = minus_bias(data.clone(), &model.decoder_bias);
    let predictions = plus_bias(&model.encoder_weights * data, &model.encoder_bias);
    (shifted - &model.decoder_weights * codes.as_matrix()).norm_squared()
        + lambda * (predictions - codes.as_matrix()).norm_squared()
}

/// Coordinate descent over rows of `B`.
///
/// Rows are visited in ascending order; row `k` is replaced by
/// `sign(q_k^T - w_k^T W2 B + |w_k|^2 b_k^T)` (the exclusion product written
/// as a rank-1 correction of the cached product `W2 B`), with `sign(0) = +1`.
/// Runs `sweeps` full sweeps, stopping early when a sweep changes nothing.
pub fn b_step(
    data: &DMatrix<f64>,
    model: &HashModel,
    initial: &BinaryCodes,
    lambda: f64,
    sweeps: usize,
) -> Result<BinaryCodes> {
    model.validate()?;
    ensure_finite(data, "data")?;
    if sweeps == 0 {
        return Err(Error::Invalid("sweeps must be at least 1".into()));
    }
    let (code_length, m) = initial.as_matrix().shape();
    if model.code_length() != code_length || model.dim() != data.nrows() || data.ncols() != m {
        return Err(Error::Shape(format!(
            "inconsistent shapes: data {}x{}, codes {code_length}x{m}, model L={} D={}",
            data.nrows(),
            data.ncols(),
            model.code_length(),
            model.dim()
        )));
    }

    let shifted = minus_bias(data.clone(), &model.decoder_bias);
    let predictions = plus_bias(&model.encoder_weights * data, &model.encoder_bias);
    let scores_base = model.decoder_weights.transpose() * &shifted + lambda * &predictions;

    let mut b = initial.as_matrix().clone();
    let mut decoded = &model.decoder_weights * &b;
    let column_norms: Vec<f64> = (0..code_length)
        .map(|k| model.decoder_weights.column(k).norm_squared())
        .collect();

    for _ in 0..sweeps {
        let mut changed = false;
        for k in 0..code_length {
            let w_k = model.decoder_weights.column(k);
            for i in 0..m {
                let exclusion = w_k.dot(&decoded.column(i)) - column_norms[k] * b[(k, i)];
                let new = sign_pm1(scores_base[(k, i)] - exclusion);
                let old = b[(k, i)];
                if new != old {
                    let mut col = decoded.column_mut(i);
                    col.axpy(new - old, &w_k, 1.0);
                    b[(k, i)] = new;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryCodes::from_matrix(b)
}

/// Full training objective (see the module docs).
pub fn objective(
    data: &DMatrix<f64>,
    model: &HashModel,
    codes: &BinaryCodes,
    lambda: f64,
    beta: f64,
) -> f64 {
    let reconstruction = plus_bias(
        &model.decoder_weights * codes.as_matrix(),
        &model.decoder_bias,
    );
    let predictions = plus_bias(&model.encoder_weights * data, &model.encoder_bias);
    0.5 * (data - reconstruction).norm_squared()
        + 0.5 * lambda * (codes.as_matrix() - predictions).norm_squared()
        + 0.5 * beta * (model.encoder_weights.norm_squared() + model.decoder_weights.norm_squared())
}

/// Train with codes initialized by the quantizer in [`crate::itq`].
pub fn train(data: &DMatrix<f64>, hp: &RbaHyperparams, seed: u64) -> Result<RbaOutcome> {
    hp.validate()?;
    let (itq_model, _) = itq::train(data, hp.code_length, hp.init_iterations, seed)?;
    let initial = itq::encode(data, &itq_model)?;
    train_from(data, hp, initial)
}

/// Train from explicit initial codes.
pub fn train_from(
    data: &DMatrix<f64>,
    hp: &RbaHyperparams,
    initial: BinaryCodes,
) -> Result<RbaOutcome> {
    hp.validate()?;
    ensure_finite(data, "training data")?;
    let (dim, m) = data.shape();
    if initial.code_length() != hp.code_length || initial.count() != m {
        return Err(Error::Shape(format!(
            "initial codes are {}x{}, expected {}x{m}",
            initial.code_length(),
            initial.count(),
            hp.code_length
        )));
    }

    let mut model = HashModel::zeros(hp.code_length, dim);
    let mut codes = initial;
    let mut trace = Vec::with_capacity(hp.iterations);

    // X^T (lambda X X^T + beta I)^{-1} is constant across iterations; build
    // it on first use and count the builds.
    let mut encoder_kernel: Option<DMatrix<f64>> = None;
    let mut encoder_kernel_builds = 0usize;

    for iteration in 1..=hp.iterations {
        let kernel = match &encoder_kernel {
            Some(k) => k,
            None => {
                let mut system = hp.lambda * data * data.transpose();
                for i in 0..dim {
                    system[(i, i)] += hp.beta;
                }
                let solved = spd_solve(system, data, "encoder kernel")?;
                encoder_kernel = Some(solved.transpose());
                encoder_kernel_builds += 1;
                encoder_kernel.as_ref().unwrap()
            }
        };

        let shifted_codes = minus_bias(codes.as_matrix().clone(), &model.encoder_bias);
        model.encoder_weights = hp.lambda * shifted_codes * kernel;
        model.decoder_weights = update_decoder_weights(data, &codes, &model.decoder_bias, hp.beta)?;
        let (encoder_bias, decoder_bias) =
            update_biases(data, &codes, &model.encoder_weights, &model.decoder_weights)?;
        model.encoder_bias = encoder_bias;
        model.decoder_bias = decoder_bias;
        codes = b_step(data, &model, &codes, hp.lambda, hp.sweeps)?;

        let value = objective(data, &model, &codes, hp.lambda, hp.beta);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite at iteration {iteration}"
            )));
        }
        trace.push(value);
    }

    Ok(RbaOutcome {
        model,
        codes,
        objective_trace: trace,
        encoder_kernel_builds,
    })
}

/// Encode columns of `data`: `sign(W1 x + c1)` with `sign(0) = +1`.
pub fn encode(data: &DMatrix<f64>, model: &HashModel) -> Result<BinaryCodes> {
    if data.nrows() != model.dim() {
        return Err(Error::Shape(format!(
            "data has dimension {}, model expects {}",
            data.nrows(),
            model.dim()
        )));
    }
    ensure_finite(data, "data")?;
    Ok(BinaryCodes::from_signs(&plus_bias(
        &model.encoder_weights * data,
        &model.encoder_bias,
    )))
}

/// Decode codes back to feature space: `W2 z + c2`.
pub fn reconstruct(codes: &BinaryCodes, model: &HashModel) -> Result<DMatrix<f64>> {
    if codes.code_length() != model.code_length() {
        return Err(Error::Shape(format!(
            "codes have length {}, model expects {}",
            codes.code_length(),
            model.code_length()
        )));
    }
    Ok(plus_bias(
        &model.decoder_weights * codes.as_matrix(),
        &model.decoder_bias,
    ))
}

/// Mean squared per-sample reconstruction error
/// `(1/m) sum_i |x_i - (W2 z_i + c2)|^2`.
pub fn reconstruction_error(
    data: &DMatrix<f64>,
    codes: &BinaryCodes,
    model: &HashModel,
) -> Result<f64> {
    if data.ncols() != codes.count() {
        return Err(Error::Shape(format!(
            "{} samples but {} codes",
            data.ncols(),
            codes.count()
        )));
    }
    if data.ncols() == 0 {
        return Err(Error::Shape("no samples".into()));
    }
    let reconstruction = reconstruct(codes, model)?;
    Ok((data - reconstruction).norm_squared() / data.ncols() as f64)
}
