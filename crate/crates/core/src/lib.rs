pub mod cks;
pub mod coa;
pub mod embedding;
pub mod eval;
pub mod error;
pub mod hopfield;
pub mod numerics;
pub mod store;
pub mod synthetic;
pub mod text;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
