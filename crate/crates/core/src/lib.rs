//! Simulation and analysis of entanglement-based QKD with a biased basis
//! choice.
//!
//! The crate covers the full chain from a parametric photon-pair source to a
//! secure key length:
//!
//! - [`sim`] generates Alice's and Bob's time-tag streams,
//! - [`sync`] recovers the clock offset and matches coincidences,
//! - [`sifting`] keeps same-basis pairs and measures bit error rates,
//! - [`finite_key`] turns counts and error rates into a secure key length,
//! - [`bias`] finds the basis bias that maximizes it.
//!
//! The finite-key and optimizer math is generic over the float type; the
//! aliases below fix it to `f64` (and `f32` where useful).

pub mod basis;
pub mod bias;
pub mod error;
pub mod finite_key;
pub mod io;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod scalar;
pub mod sifting;
pub mod sim;
pub mod sync;
pub mod table1;

pub use error::{Error, Result};
pub use model::{Basis, BitValue, DetectorChannel, SiftedBitPair, TimeTagRecord};
pub use scalar::Real;

pub type FiniteKeyInput = finite_key::FiniteKeyInput<f64>;
pub type FiniteKeyResult = finite_key::FiniteKeyResult<f64>;
pub type RateModel = bias::RateModel<f64>;
pub type BiasCurvePoint = bias::BiasCurvePoint<f64>;
pub type BiasOptimum = bias::BiasOptimum<f64>;

pub type FiniteKeyInputF32 = finite_key::FiniteKeyInput<f32>;
pub type FiniteKeyResultF32 = finite_key::FiniteKeyResult<f32>;
pub type RateModelF32 = bias::RateModel<f32>;

/// A time-ordered detection stream.
pub type TimeTagStream = Vec<TimeTagRecord>;
