//! Hybrid rating prediction for sparse user/item datasets with tag metadata.
//!
//! Two predictors are trained side by side: an alternating-least-squares
//! matrix factorization of the rating matrix ([`als`]) and one L1-regularized
//! linear regression per user over item tag probabilities ([`lasso`]). A
//! two-parameter sigmoid gate ([`gate`]) blends the two predictions based on
//! how many training ratings the item has, so little-known items lean on
//! their tags while popular items lean on collaborative filtering. The
//! [`eval`] module runs the cross-validated, cohort-stratified offline
//! protocol, [`explain`] turns learned tag weights into human-readable
//! recommendations, and [`synth`] generates planted-model benchmark data.

pub mod als;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gate;
pub mod lasso;
mod linalg;
pub mod synth;

pub use error::{Error, Result};
