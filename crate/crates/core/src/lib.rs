//! Terrain-aware UAV relay simulation and offline reinforcement-learning
//! workbench.

mod binio;
pub mod config;
pub mod cql;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod feasibility;
pub mod fsutil;
pub mod learnkit;
pub mod par;
pub mod pipeline;
pub mod radio;
pub mod repr;
pub mod terrain;

pub use error::{Error, Result};
