pub mod agent;
pub mod cli;
pub mod envs;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod numcore;
pub mod replay;

pub use error::{Error, Result};
