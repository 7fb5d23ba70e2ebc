pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod fno;
pub mod io;
pub mod nn;
pub mod nspde;
pub mod noise;
pub mod solvers;
pub mod tensor;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::{AxisKind, GridFunction, C64};
