//! Expectation maximization for exponential-family approximate posteriors,
//! with moment estimates produced by massively parallel importance weighting
//! over plated hierarchical models.
//!
//! The crate is organized bottom-up:
//!
//! - [`special`]: scalar special functions (log-gamma, digamma, incomplete
//!   gamma/beta, normal CDF and quantile).
//! - [`rng`]: counter-based deterministic random streams.
//! - [`tensor`]: axis-labeled dense tensors with union broadcasting.
//! - [`dist`]: exponential-family distributions in conventional, mean and
//!   natural coordinates.
//! - [`graph`]: plated model declarations, expression evaluation, validation.
//! - [`dsl`]: text format for model declarations, plus dataset loading.
//! - [`engine`]: the importance-weighting engine (sample banks, log factors,
//!   variable elimination, evidence, moments, resampling, prediction).
//! - [`qem`]: the moment-matching EM loop over proposal parameters.
//! - [`oracles`]: slow-but-sure reference posteriors and built-in models for
//!   verification at desk scale.

pub mod dist;
pub mod dsl;
pub mod engine;
pub mod graph;
pub mod oracles;
pub mod qem;
pub mod quad;
pub mod rng;
pub mod special;
pub mod tensor;
