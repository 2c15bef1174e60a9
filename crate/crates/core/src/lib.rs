pub mod env;
pub mod comm;
pub mod config;
pub mod dagger;
pub mod error;
pub mod eval;
pub mod expert;
pub mod nn;
pub mod runner;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = nn::MlpPolicy<f64>;
pub type Adam = nn::AdamState<f64>;
