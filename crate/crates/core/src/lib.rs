pub mod channels;
pub mod cli;
pub mod error;
pub mod protocol;
pub mod qmath;
pub mod security;

pub use error::{Error, Result};
