//! Space-time Lévy white noise on a truncated jump shell: exact simulation,
//! deterministic integrands, jump integrals, Itô formulas, interlacing
//! approximations and Monte Carlo verification.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod apps;
pub mod cli;
pub mod integrand;
pub mod integrate;
pub mod interlace;
pub mod ito;
pub mod mc;
pub mod measure;
pub mod prm;
pub mod quad;
pub mod scalar;

pub use scalar::Real;

pub type LevyMeasure64 = measure::LevyMeasure<f64>;
pub type LevyMeasure32 = measure::LevyMeasure<f32>;
pub type Shell64 = measure::Shell<f64>;
pub type Shell32 = measure::Shell<f32>;
pub type Window64 = prm::Window<f64>;
pub type Window32 = prm::Window<f32>;
pub type SpaceBox64 = prm::SpaceBox<f64>;
pub type SpaceBox32 = prm::SpaceBox<f32>;
pub type Point64 = prm::Point<f64>;
pub type Point32 = prm::Point<f32>;
pub type PointConfiguration64 = prm::PointConfiguration<f64>;
pub type PointConfiguration32 = prm::PointConfiguration<f32>;
pub type DetIntegrand64 = integrand::DetIntegrand<f64>;
pub type DetIntegrand32 = integrand::DetIntegrand<f32>;
pub type Expr64 = integrand::Expr<f64>;
pub type Expr32 = integrand::Expr<f32>;
pub type CadlagPath64 = integrate::CadlagPath<f64>;
pub type CadlagPath32 = integrate::CadlagPath<f32>;
pub type SmoothFn64 = ito::SmoothFn<f64>;
pub type SmoothFn32 = ito::SmoothFn<f32>;
pub type ItoTerms64 = ito::ItoTerms<f64>;
pub type ItoTerms32 = ito::ItoTerms<f32>;
pub type Ladder64 = interlace::Ladder<f64>;
pub type Ladder32 = interlace::Ladder<f32>;
