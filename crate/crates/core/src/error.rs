// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical argument is outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter record or experiment configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A root finder could not bracket or converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Two inputs that must agree in shape do not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    /// A serialized artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
