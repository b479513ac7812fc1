//! Supervised cross-modal hashing with asymmetric label embedding and
//! collective matrix factorization.
//!
//! The pipeline is:
//!
//! 1. [`kernelfeat`] maps each modality onto RBF similarities against a
//!    random anchor subset and centers the result.
//! 2. [`labelspace`] builds the column-normalized label matrix `G`.
//! 3. [`trainer`] alternates closed-form updates of the modality
//!    projections, the label projection, the rotation, the shared latent
//!    factor and the binary codes.
//! 4. [`encoder`] fits per-modality ridge regressions from kernel features
//!    to the learned codes for out-of-sample hashing.
//! 5. [`retrieval`] packs codes into machine words, ranks by Hamming
//!    distance and scores rankings with AP, mAP and top-N precision.
//!
//! [`dataio`] holds the on-disk formats and the synthetic data generator.

pub mod bench;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod kernelfeat;
pub mod labelspace;
pub mod linalg;
pub mod pipeline;
pub mod retrieval;
pub mod seed;
pub mod trainer;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
