//! Private release of a contextual outlier's explaining context.
//!
//! A context is a conjunction of per-attribute disjunctions, encoded as a bit
//! vector over every attribute value of the schema. Given a dataset, a target
//! record and an outlier detector, the samplers release one context in which
//! the target is an outlier, chosen with the exponential mechanism so that
//! the choice is differentially private with respect to the records.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod experiments;
pub mod mechanism;
pub mod oracle;
pub mod samplers;
pub mod utility;

pub use dataset::{Context, Dataset, Record, Schema};
pub use detectors::{DetectorKind, DetectorSpec, OutlierVerifier};
pub use error::{PcorError, Result};
pub use samplers::{SamplerKind, SamplerSpec};
pub use utility::{Scorer, UtilityKind, UtilitySpec, UtilityValue};
