//! Tri-plane video representations fitted to single videos by gradient descent.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: a small dense tensor type and a reverse-mode
//!   tape covering exactly the primitives the representations use, plus a
//!   central-difference gradient checker in [`gradcheck`].
//! - [`repr`]: tri-plane, dense voxel grid and positional-encoding MLP
//!   families, the shared convolutional frame decoder and parameter-budget
//!   matching.
//! - [`motion`]: flow decoding from motion planes, forward warping and the
//!   appearance-volume recurrence of the tri-plane + flow family.
//! - [`fit`]: Adam fitting with interpolation/extrapolation holdouts and the
//!   family comparison harness.
//! - [`metrics`]: PSNR and SSIM.
//! - [`video`]: frame directories, the `.vtf` tensor format, synthetic videos
//!   and checkpoints.

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod fit;
pub mod gradcheck;
pub mod metrics;
pub mod motion;
pub mod repr;
pub mod rng;
pub mod tensor;
pub mod video;

pub use autodiff::{Gradients, Tape, Var};

/// Version tag carried by every JSON document the crate writes.
pub const SCHEMA_VERSION: u32 = 1;
pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor, PRECISION};
