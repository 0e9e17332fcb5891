//! Numerical laboratory for effective stability around Diophantine tori of
//! finitely differentiable (Hölder) Hamiltonians `H = ω·I + f(θ, I)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`frequency`]: Diophantine constants and complete non-resonance;
//! * [`series`]: sparse Fourier–Taylor series algebra;
//! * [`smoothing`]: analytic smoothing by sharp Fourier truncation;
//! * [`normal_form`]: Lie-series averaging with contraction certificates;
//! * [`pipeline`]: Taylor split, parameter schedule, remainder bounds and
//!   predicted stability times;
//! * [`dynamics`]: implicit-midpoint integration and escape-time sampling;
//! * [`experiment`]: test Hamiltonians, sweeps, exponent fits and plot data.
//!
//! The numerical core is generic over the scalar ([`Real`], implemented for
//! `f32` and `f64`); the aliases below fix it to `f64`, which is what the
//! pipeline and experiment layers use.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod frequency;
pub mod normal_form;
pub mod pipeline;
pub mod scalar;
pub mod series;
pub mod smoothing;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Series = series::FourierTaylorSeries<f64>;
pub type Widths = series::AnalyticityWidths<f64>;
pub type Frequency = frequency::Frequency<f64>;
pub type DiophantineCertificate = frequency::DiophantineCertificate<f64>;
pub type HolderClass = smoothing::HolderClass<f64>;
pub type SmoothingResult = smoothing::SmoothingResult<f64>;
pub type NormalFormParams = normal_form::NormalFormParams<f64>;
pub type NormalFormResult = normal_form::NormalFormResult<f64>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type EscapeRecord = dynamics::EscapeRecord<f64>;
