//! Amortized, context-aware control variates for doubly stochastic gradients.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod cli;
pub mod coefficients;
pub mod config;
pub mod data;
pub mod engine;
pub mod experiments;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod noise;
pub mod objectives;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the generic core.
pub type LogisticModel = models::LogisticRegression<f64>;
pub type Quadratic = models::QuadraticSpec<f64>;
pub type QuadraticFamily = models::QuadraticFamily<f64>;
pub type Net = coefficients::RecognitionNet<f64>;
pub type Provider = coefficients::CoefficientProvider<f64>;
pub type Coefficients = coefficients::CoefficientBlock<f64>;
pub type Noise = noise::NoiseDraw<f64>;
pub type Basis = noise::BasisEval<f64>;
pub type Trainer = engine::Trainer<f64>;
