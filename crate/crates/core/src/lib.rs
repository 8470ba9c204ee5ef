pub mod cmdp;
pub mod error;
pub mod gait;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
