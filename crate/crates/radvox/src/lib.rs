//! Volumetric radiomics toolkit: texture matrices and features over CT
//! volumes, per-voxel local texture maps, LASSO-based feature selection, a
//! feature de-correlation training loop and a cross-validation harness for
//! synthetic phantom experiments.

pub mod error;
pub mod features;
pub mod localmap;
pub mod harness;
pub mod losses;
pub mod selection;
pub mod quantize;
pub mod volume;

pub use error::{Error, Result};
