//! Tactile force-field to SE(3) motion estimation.
//!
//! The crate turns per-pixel tactile response fields into contact geometry,
//! fits rigid-body twists to the resulting velocity constraints and integrates
//! them on SE(3). A synthetic sensor simulator provides ground truth for tests
//! and benchmarks.
//!
//! The numeric kernels are generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`). The simulator and the experiment harness run in `f64`;
//! the aliases below name the concrete types most callers want.

pub mod contact;
mod error;
pub mod experiments;
pub mod field;
pub mod format;
pub mod fusion;
pub mod grid;
pub mod pipeline;
pub mod se3;
pub mod sim;
pub mod twist;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar accepted by the numeric kernels: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub(crate) fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a scalar back to `f64` (used for reporting and file output).
#[inline]
pub(crate) fn to_f64<S: Real>(x: S) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

pub type TwistF64 = se3::Twist<f64>;
pub type TwistF32 = se3::Twist<f32>;
pub type PoseF64 = se3::Pose<f64>;
pub type PoseF32 = se3::Pose<f32>;
pub type TrajectoryF64 = se3::TimedTrajectory<f64>;
pub type ForceFieldF64 = field::ForceField<f64>;
pub type ForceFieldF32 = field::ForceField<f32>;
pub type ContactPointSetF64 = contact::ContactPointSet<f64>;
pub type IntrinsicsF64 = contact::SensorIntrinsics<f64>;
pub type TrackerF64 = pipeline::Tracker<f64>;
