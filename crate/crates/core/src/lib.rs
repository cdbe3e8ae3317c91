pub mod codec;
pub mod config;
pub mod ddpg;
pub mod env;
pub mod error;
pub mod nn;
pub mod noise;
pub mod replay;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
