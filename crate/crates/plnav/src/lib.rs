pub mod error;
pub mod frames;
pub mod graph;

pub mod preintegration;
pub mod pseudorange;
pub mod sim;

pub use error::{Error, Result};
