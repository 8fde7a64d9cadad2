pub mod config;
pub mod envs;
pub mod error;
pub mod funcapprox;
pub mod learner;
pub mod oracle;
pub mod protocol;
pub mod topology;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
