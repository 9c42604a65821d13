//! Neural topic models with stick-breaking priors.

pub mod autodiff;
pub mod distributions;
pub mod corpus;
pub mod evaluation;
pub mod models;
pub mod synthetic;
