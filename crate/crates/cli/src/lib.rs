//! Configuration, orchestration and file formats of the `kinfluid` command.

pub mod config;
pub mod run;
pub mod series;

pub use config::RunConfig;
