//! Simulation and analysis toolkit for heterogeneous distributed quickest change
//! detection with 1-bit sensor feedback.

pub mod asymptotics;
pub mod calibration;
pub mod config;
pub mod cusum;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod models;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod scenarios;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Gaussian64 = models::Gaussian<f64>;
pub type Gaussian32 = models::Gaussian<f32>;
pub type Network64 = models::Network<f64>;
pub type Network32 = models::Network<f32>;
pub type Rule64 = fusion::FusionRuleSpec<f64>;
pub type Rule32 = fusion::FusionRuleSpec<f32>;
pub type Thresholds64 = fusion::ThresholdVector<f64>;
pub type Thresholds32 = fusion::ThresholdVector<f32>;
