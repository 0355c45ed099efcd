//! The obfuscation detectors.

pub mod cfsig;
pub mod crypto;
pub mod overloading;
pub mod packing;
pub mod reflection;
pub mod registry;
pub mod renaming;
pub mod slicing;
pub mod stringenc;

use crate::features::{CharsetId, ModelError};

pub use registry::{Finding, ReflectionReport, Technique, TechniqueContext, TechniqueRegistry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DetectError {
    #[error("model uses {found}, expected {expected}")]
    ModelCharsetMismatch { expected: CharsetId, found: CharsetId },
    #[error("no {0} model configured")]
    MissingModel(&'static str),
    #[error(transparent)]
    Model(ModelError),
}
