//! Risk-sensitive generative adversarial imitation learning.

pub mod cli;
pub mod costnoise;
pub mod env;
pub mod error;
pub mod expert;
pub mod fixtures;
pub mod harness;
pub mod imitation;
pub mod nn;
pub mod policy;
pub mod risk;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
