//! Active generation of skeleton action data.

#![allow(clippy::needless_range_loop)]

pub mod autograd;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mgn;
pub mod nn;
pub mod recognizer;
pub mod skeleton;
pub mod umn;

pub use error::{Error, Result};
