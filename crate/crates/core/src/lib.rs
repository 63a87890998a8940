//! Hyperspherical graph invariant learning with a multi-prototype classifier.
//!
//! The pipeline: a pair of GIN stacks produce node representations and
//! per-channel gates ([`encoder`]), a gated mean readout is projected onto the
//! unit sphere ([`hypersphere`]), and each class is represented by several
//! unit prototypes ([`protobank`]) that are matched by attention, pruned to
//! the top-n, updated by EMA and used for classification. Training
//! ([`trainer`]) minimizes the sum of a classification loss, a prototype
//! separation loss and an invariant prototype matching loss ([`losses`]).

pub mod encoder;
pub mod error;
pub mod eval;
pub mod graphdata;
pub mod hypersphere;
pub mod ndtensor;
pub mod par;
pub mod params;
pub mod protobank;
pub mod losses;
pub mod trainer;

pub use error::{Error, Result};
