// SPDX-License-Identifier: Apache-2.0

//! Behavioral Monte-Carlo model of a subthreshold inverter-chain PUF with
//! native-transistor supply regulation, reconfiguration-based stabilization
//! and statistical evaluation.

pub mod bits;
pub mod cell;
pub mod chip;
pub mod config;
pub mod device;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod reference;
pub mod regulator;
pub mod rng;
pub mod solver;
pub mod stabilize;

pub use bits::BitMatrix;
pub use error::{Error, Result};
