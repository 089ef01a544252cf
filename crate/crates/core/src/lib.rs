//! Compressed Hamiltonian learning and bootstrapping for Ising chains.

pub mod bootstrap;
pub mod bounds;
pub mod cli;
pub mod densesim;
pub mod error;
pub mod experiment_design;
pub mod inference;
pub mod ising_model;
pub mod rng;
pub mod scanner;

pub use error::{Error, Result};
