//! Forecasting engine for hourly traffic volumes recorded by permanent count
//! stations. Gap-ridden hourly series are repaired by one of seven
//! missing-data treatments, normalized, and fed to a from-scratch recurrent
//! network (simple RNN, GRU, or LSTM) that predicts volumes one to three
//! years ahead. Annual average daily traffic (AADT) is derived from the
//! predictions and scored against actuals per forecast year.
//!
//! All numeric code is generic over the [`Scalar`] floating-point type;
//! concrete `f64` aliases live at the crate root. `f64` is the type the
//! gradient-check tolerances are calibrated for.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod aadt;
pub mod csvio;
pub mod forecast;
pub mod impute;
pub mod linalg;
pub mod neural;
pub mod series;
pub mod synth;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Floating-point scalar the whole engine is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and RNG draws.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + Default
        + Sum
        + Send
        + Sync
        + 'static
{
}

pub type HourlySeries64 = series::HourlySeries<f64>;
pub type PredictionDataset64 = series::PredictionDataset<f64>;
pub type NormalizationParams64 = series::NormalizationParams<f64>;
pub type DayMatrix64 = impute::DayMatrix<f64>;
pub type ModelParams64 = neural::ModelParams<f64>;
pub type ForecastConfig64 = forecast::ForecastConfig<f64>;
pub type TrainedModel64 = forecast::TrainedModel<f64>;
pub type EvaluationReport64 = aadt::EvaluationReport<f64>;
