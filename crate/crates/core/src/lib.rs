pub mod ad;
pub mod error;
pub mod diagnostics;
pub mod evolve;
pub mod exponents;
pub mod geometry;
pub mod identity;
pub mod morawetz;
pub mod numerics;
pub mod rweight;

pub use error::{Error, Result};
