//! Diffusion posterior sampling for linear inverse problems.
//!
//! A degradation `y = Hx + σ_y z` is handled through the SVD `H = UΣVᵀ`:
//! the sampler runs a diffusion chain on `x̄ = Vᵀx` where every coordinate
//! is either unobserved, observed with noise above the current level, or
//! observed with noise below it. Denoisers are pluggable; closed-form MMSE
//! denoisers and brute-force oracles make the whole chain checkable.
//!
//! Numeric code is generic over [`Real`] (`f32`/`f64`); the aliases at the
//! crate root fix the scalar.
//!
//! ```
//! use ddrm::{DdrmParams64, GaussianMmse, ImageShape, Problem64, SigmaSchedule64, SvdOperator64};
//!
//! let op = SvdOperator64::block_sr(ImageShape::square(1, 4), 2)?;
//! let y = op.apply(&[0.5; 16])?;
//! let problem = Problem64::new(&op, y, 0.0)?;
//! let schedule = SigmaSchedule64::default_linear();
//! let params = DdrmParams64::new(schedule.subsample(20)?, 7);
//! let x = ddrm::sampler::run(&problem, &mut GaussianMmse::new(0.5, 0.2)?, &schedule, &params)?;
//! assert!((op.apply(&x)?[0] - 0.5).abs() < 1e-9);
//! # Ok::<(), ddrm::DdrmError>(())
//! ```

// `!(x >= 0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod error;
pub mod imaging;
pub mod linops;
pub mod oracle;
pub mod presets;
pub mod sampler;
pub mod scalar;
pub mod schedule;

pub use denoiser::bridge::{BridgeClient, BridgeError, Geometry};
pub use denoiser::{Denoiser, GaussianMmse, GmmComponent, GmmMmse};
pub use error::{DdrmError, Result};
pub use imaging::ImageTensor;
pub use linops::{ImageShape, Mat, OperatorKind, SpectralMeasurement, SvdOperator};
pub use presets::Degradation;
pub use sampler::{DdrmParams, EtaB, Problem};
pub use scalar::Real;
pub use schedule::SigmaSchedule;

pub type SvdOperator64 = SvdOperator<f64>;
pub type SvdOperator32 = SvdOperator<f32>;
pub type SigmaSchedule64 = SigmaSchedule<f64>;
pub type SigmaSchedule32 = SigmaSchedule<f32>;
pub type DdrmParams64 = DdrmParams<f64>;
pub type DdrmParams32 = DdrmParams<f32>;
pub type Problem64<'a> = Problem<'a, f64>;
pub type Problem32<'a> = Problem<'a, f32>;
