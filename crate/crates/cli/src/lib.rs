//! Command-line entry points and the HTTP simulation service.

pub mod cli;
pub mod config;
pub mod io;
pub mod run;
pub mod service;
