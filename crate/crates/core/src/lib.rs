//! Laboratory for the memory cost of user-level differential privacy in
//! continual-release streaming.
//!
//! The crate builds the phase-structured hard instance for CountDistinct,
//! runs estimators on it, converts their answers into subsets with the
//! fingerprinting-based rounding procedure, plays the AvoidHeavyHitters
//! communication game (including the reduction that forwards estimator
//! snapshots as messages), and evaluates the closed-form bounds.

pub mod algorithms;
pub mod attack;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod extensions;
pub mod fplemma;
pub mod game;
pub mod instance;
pub mod mechanisms;
pub mod model;
pub mod profiles;
pub mod rng;

pub use error::{Error, Result};
