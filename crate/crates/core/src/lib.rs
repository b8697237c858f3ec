//! Registry abstraction and case finding over synthetic clinical notes.

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evalx;
pub mod model;
pub mod numcore;
pub mod par;
pub mod rationale;
pub mod textproc;
pub mod train;

pub use error::{Error, Result};
