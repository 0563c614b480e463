//! Command-line front end: config loading, ensemble runs and file output.

pub mod config;
pub mod noise_test;
pub mod run;
