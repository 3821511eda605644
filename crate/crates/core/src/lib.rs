//! Desk-scale simulator for data-parallel minibatch SGD with gradient
//! clipping applied at different granularities (per-core, adaptive per-core,
//! per-example, micro-batch), plus a canary-based memorization audit.
//!
//! The crate is organized around five modules:
//!
//! - [`numerics`]: flat vectors, a portable seeded RNG, and a
//!   finite-difference gradient oracle.
//! - [`models`]: a fixed suite of differentiable toy models (linear
//!   regression, logistic regression, one-hidden-layer MLP) with analytic
//!   per-example gradients.
//! - [`clipping`]: the clipping-policy algebra applied to per-core gradients.
//! - [`trainer`]: the sharded SGD loop with deterministic cross-core
//!   aggregation.
//! - [`memorization`]: canary cohorts, exposure scoring, edit-distance
//!   metrics, and the secret-sharer audit harness.
//!
//! All numeric code is generic over the scalar type via [`Scalar`];
//! experiments run in `f64` through the [`Real`] aliases below.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod clipping;
pub mod memorization;
pub mod models;
pub mod numerics;
pub mod trainer;

/// Floating-point scalar the simulator can run on.
///
/// Implemented for `f32` and `f64` via the blanket impl.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
}

/// Scalar type used by the CLI and all shipped experiments.
pub type Real = f64;
/// Concrete vector alias for [`Real`].
pub type RealVector = numerics::Vector<Real>;
/// Flat model parameter vector (same representation as any other vector).
pub type ParamVector = RealVector;

pub use clipping::{ClippedGradientSet, ClippingPolicy, PerCoreGradient};
pub use memorization::{CanaryCohort, ExposureReport, HoldoutSet, SecretSharerSettings};
pub use models::{Dataset, Example, Model, ModelKind, Target};
pub use numerics::{SeededRng, Vector};
pub use trainer::{CanarySchedule, TrainConfig, TrainTrajectory};
