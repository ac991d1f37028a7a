//! Transfer-operator numerics for expanding circle maps driven by
//! skew-product random perturbations.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod cli;
pub mod correlations;
pub mod error;
pub mod experiments;
pub mod fiber;
pub mod maps;
pub mod scalar;
pub mod skewprod;
pub mod spectral;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FiberFunction = fiber::FiberFunction<f64>;
pub type CircleMap = maps::CircleMap<f64>;
pub type ComposedMap = maps::ComposedMap<f64>;
pub type FourierOperator = transfer::FourierOperator<f64>;
pub type UlamOperator = transfer::UlamOperator<f64>;
pub type OperatorMatrix = transfer::OperatorMatrix<f64>;
pub type BaseSystem = base::BaseSystem<f64>;
pub type BasePoint = base::BasePoint<f64>;
pub type RandomObservable = base::RandomObservable<f64>;
pub type ScalarObservable = base::ScalarObservable<f64>;
pub type RandomMapFamily = skewprod::RandomMapFamily<f64>;
pub type SkewOperator = skewprod::SkewOperator<f64>;
