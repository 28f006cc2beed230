//! Mapping of failures onto process exit codes.

use std::fmt;

use srtriage::embedding::EmbeddingError;
use srtriage::evaluator::EvalError;
use srtriage::nn::NnError;
use srtriage::trainer::TrainError;

pub const OK: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const NUMERIC: i32 = 3;

/// Bad combination of arguments that clap cannot express.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn nn_numeric(e: &NnError) -> bool {
    matches!(e, NnError::NonFinite(_))
}

pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return USAGE;
        }
        let numeric = if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::NonFiniteLoss { .. } => true,
                TrainError::Nn(inner) => nn_numeric(inner),
                _ => false,
            }
        } else if let Some(e) = cause.downcast_ref::<EmbeddingError>() {
            matches!(e, EmbeddingError::NonFinite(_))
        } else if let Some(e) = cause.downcast_ref::<EvalError>() {
            matches!(e, EvalError::Nn(inner) if nn_numeric(inner))
        } else if let Some(e) = cause.downcast_ref::<NnError>() {
            nn_numeric(e)
        } else {
            false
        };
        if numeric {
            return NUMERIC;
        }
    }
    DATA
}
