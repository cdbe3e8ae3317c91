//! Experiment launcher and the console link for human safety drivers.

pub mod bridge;
pub mod cli;
pub mod protocol;
pub mod server;
