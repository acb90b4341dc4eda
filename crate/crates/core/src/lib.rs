//! Model-free and model-aware end-to-end training of autoencoder-based
//! point-to-point communication systems.

pub mod baseline;
pub mod channel;
pub mod cli;
pub mod error;
pub mod eval;
pub mod numkit;
pub mod train;
pub mod transceiver;

pub use error::{Error, Result};
