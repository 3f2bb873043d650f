//! Lightweight anchor-based face detector.
//!
//! Inference runs on plain f32 NCHW tensors with direct loops; there is no
//! autograd. The training-side pieces (losses, gradients, prior matching) are
//! standalone functions.

pub mod anchors;
pub mod backbone;
pub mod dcn;
pub mod detector;
pub mod error;
pub mod eval;
pub mod image;
pub mod layers;
pub mod losses;
pub mod neck;
pub mod nn;
pub mod postproc;
pub mod report;
pub mod selfcheck;
pub mod tensor;
pub mod weightfile;
pub mod weights;

pub use anchors::{generate_priors, AnchorConfig, BBox, PriorBox, Variances};
pub use detector::{Detector, DetectorConfig};
pub use error::{Error, Result};
pub use postproc::{Detection, PostprocConfig};
pub use tensor::Tensor;
pub use weights::WeightStore;
