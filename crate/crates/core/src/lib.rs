//! Layer-wise sparsity allocation for post-training pruning.
//!
//! Rates grow along depth as an arithmetic progression whose common
//! difference is picked by a small grid search. The crate also measures
//! per-layer reconstruction errors on synthetic layer chains and checks the
//! properties that motivate increasing rates: error grows with a layer's
//! sparsity, errors propagate to later layers, and under a simple
//! accumulation model the ascending ordering of any set of rates is optimal.

pub mod abstractmodel;
pub mod allocator;
pub mod error;
pub mod format;
pub mod linalg;
pub mod netmodel;
pub mod pruner;
pub mod reconerr;
pub mod report;
pub mod rng;
pub mod search;
pub mod validate;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use netmodel::{Activation, CalibrationSet, LayerNet};
pub use pruner::{Mask, PruneMethod, PruneOptions};
pub use allocator::SparsityProfile;
