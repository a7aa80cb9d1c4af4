pub mod averaging;
pub mod cli;
pub mod compute;
pub mod error;
pub mod lawfit;
pub mod optim;
pub mod schedule;
pub mod util;

pub use error::{Error, Result};
pub mod trainer;
