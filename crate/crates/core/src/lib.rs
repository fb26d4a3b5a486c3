//! Nonequilibrium steady states of harmonic probes coupled to structured
//! bosonic baths, and the temperature-estimation precision they allow.

pub mod bath;
pub mod error;
pub mod figures;
pub mod fit;
pub mod gaussian;
pub mod metrology;
pub mod ness;
pub mod oracle;
pub mod quadrature;
pub mod sweep;

pub use error::{Error, Result};
