//! Fourier–Laplace transform of the Volterra Stein–Stein model from
//! Fredholm determinants, with branch-correct square roots, and the option
//! pricing built on it.

pub mod cmatrix;
pub mod crossing;
pub mod error;
pub mod kernel;
pub mod montecarlo;
pub mod operators;
pub mod pricing;
pub mod specfun;
pub mod transform;

pub use cmatrix::{ComplexMatrix, LogPolarDet, Matrix, RealMatrix};
pub use crossing::{Crossing, CrossingReport, CrossingScan};
pub use error::{Error, Result};
pub use kernel::{KernelMatrices, ModelParams, TimeGrid};
pub use montecarlo::{McConfig, McResult, Payoff};
pub use num_complex::Complex64;
pub use operators::ArgPoint;
pub use pricing::{LewisScheme, PriceRequest, PriceResult, Pricer};
pub use transform::{Axis, EvalOptions, Method, ScanSpec, TransformEngine, TransformValue};
