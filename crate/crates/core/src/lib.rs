//! Feature aggregation and binary hashing for approximate nearest neighbor
//! search, plus the evaluation harness that goes with them.
//!
//! The crate covers the full pipeline at library level:
//!
//! * [`io`] — fvecs/ivecs readers and writers, local-feature manifests, and
//!   packed binary code files.
//! * [`gmp`] — generalized max pooling: one aggregated vector per image via a
//!   ridge-regression closed form.
//! * [`itq`] — iterative quantization, used both as a standalone baseline and
//!   as the binary-code initializer for autoencoder training.
//! * [`rba`] — relaxed binary autoencoder training: alternating closed-form
//!   weight/bias updates and coordinate descent on the auxiliary code matrix.
//! * [`sah`] — joint optimization of aggregated vectors and hash parameters,
//!   alternating a per-image aggregation solve with autoencoder training.
//! * [`eval`] — Euclidean ground truth, Hamming ranking over packed codes,
//!   and mean average precision.
//!
//! All in-memory computation is in `f64`; on-disk vector payloads are 32-bit
//! little-endian floats (fvecs convention). Binary codes are `{-1, +1}`
//! matrices with one code per column.

pub mod codes;
pub mod error;
pub mod eval;
pub mod gmp;
pub mod io;
pub mod itq;
mod linalg;
pub mod rba;
pub mod sah;

pub use codes::BinaryCodes;
pub use error::{Error, Result};
pub use rba::HashModel;
