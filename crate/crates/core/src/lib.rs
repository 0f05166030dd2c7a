//! Data-side toolkit for small-object detection experiments on Pascal VOC:
//! annotation parsing and writing, size-stratified dataset statistics,
//! copy-paste oversampling strategies, size-stratified mAP evaluation of
//! detector outputs, and numeric adversarial learning objectives.

pub mod augment;
pub mod error;
pub mod eval;
pub mod gan;
pub mod patch;
pub mod rng;
pub mod voc;

pub use error::{Error, Result};
