//! Drug-review sentiment benchmark: corpus preparation, text encoders, four
//! classifier families, a deterministic trainer, macro metrics and
//! disagreement analysis.

pub mod analysis;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod seeding;
pub mod trainer;

pub use error::{DataError, EncodeError, EvalError, ModelError};
