//! Active-memory sequence models: the Neural GPU, its Markovian and
//! Extended (active-memory decoder) variants, and a small attention
//! baseline, together with synthetic tasks whose optimal perplexities are
//! known in closed form.

pub mod autograd;
pub mod checks;
pub mod cli;
pub mod decode;
pub mod error;
pub mod exec;
pub mod models;
pub mod nn;
pub mod tasks;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
