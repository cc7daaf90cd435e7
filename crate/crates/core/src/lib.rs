pub mod active;
pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod potential;
pub mod service;
pub mod vae;

pub use error::{Error, Result};
