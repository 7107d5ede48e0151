pub mod cluster;
pub mod constants;
pub mod error;
pub mod expansion;
pub mod lattice;
pub mod polymer;
pub mod rational;
pub mod spherecalc;
pub mod symbols;

pub use error::{Error, Result};
