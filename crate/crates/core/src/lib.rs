pub mod abel;
pub mod cli;
pub mod error;
pub mod expr;
pub mod quad;
pub mod verify;

pub use error::{Error, Result};
