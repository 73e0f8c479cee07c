//! Multimodal CT/PET radiomics for recurrence-free survival modelling.
//!
//! The crate covers the whole workflow: volume I/O and preprocessing
//! ([`volume`]), mask perturbation by binary morphology ([`morphology`]),
//! feature extraction ([`radiomics`]), clinical encoding and design-matrix
//! assembly ([`cohort`]), Cox regression with LASSO selection and the
//! concordance index ([`survival`]), synthetic cohorts ([`phantom`]) and the
//! segmentation-quality experiment grid ([`study`]).

pub mod cohort;
pub mod error;
pub mod morphology;
pub mod phantom;
pub mod radiomics;
pub mod study;
pub mod survival;
pub mod volume;

pub use error::{Error, Result};
pub use radiomics::FeatureVector;
pub use volume::{Geometry, LabelMap, Mask, VoxelGrid};
