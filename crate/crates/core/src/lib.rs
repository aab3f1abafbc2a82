//! Peak estimation for polynomial dynamics: moment relaxations, a conic
//! interior-point solver, atom extraction and trajectory recovery.

pub mod conic;
pub mod error;
pub mod extraction;
pub mod moments;
pub mod polyalg;
pub mod problem;
pub mod recovery;
pub mod relaxation;

pub use error::{Error, Result};
