//! Command-line driver: configuration, the training loop with
//! checkpoints, evaluation report bundles, and prediction files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod data;
pub mod evaluate;
pub mod predict;
pub mod train;

use thiserror::Error;

use crate::lobdata::DataError;
use crate::model::ModelError;

/// Seed-stream tags; every random stream in a run derives from
/// `(config.seed, tag, ...coords)`.
pub(crate) mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DRAW: u64 = 3;
    pub const EVAL: u64 = 4;

    pub const SPLIT_TRAIN: u64 = 0;
    pub const SPLIT_VALIDATION: u64 = 1;
    pub const SPLIT_TEST: u64 = 2;
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numeric(_) => 4,
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

pub(crate) fn io_err(context: &str, e: std::io::Error) -> AppError {
    AppError::Data(format!("{context}: {e}"))
}
