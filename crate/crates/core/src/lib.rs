pub mod bho;
pub mod diffcore;
pub mod error;
pub mod gib;
pub mod miest;
pub mod pipeline;
pub mod rng;
pub mod rnn;

pub use error::{Error, Result};
