pub mod error;
pub mod protocol;
pub mod run;
pub mod scenario;
pub mod serve;

pub use error::{Result, RuntimeError};
