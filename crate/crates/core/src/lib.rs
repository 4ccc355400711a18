pub mod cli;
pub mod constraints;
pub mod error;
pub mod expr;
pub mod generate;
pub mod graph;
pub mod identify;
pub mod instrumental;
pub mod oracle;
pub mod separation;

pub use error::{Error, Result};
