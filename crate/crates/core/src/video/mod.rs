//! Videos, synthetic generators and on-disk formats.
//!
//! A video is a `T × H × W × 3` tensor with values in `[0, 1]`. On disk it is
//! either a directory of zero-padded numbered 8-bit RGB PNG frames or a single
//! `.vtf` tensor file (see [`vtf`]). Checkpoints bundle a representation's
//! configuration and tensors (see [`checkpoint`]).

pub mod checkpoint;
mod frames;
pub mod synth;
pub mod vtf;

use std::path::Path;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use synth::{synth_video, SynthKind, SynthParams};

use crate::error::{Error, Result};
use crate::repr::VideoGeometry;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Tensor,
    /// Informational only.
    pub fps: f64,
}

impl Video {
    /// Wrap a `[T, H, W, 3]` tensor, clamping values into `[0, 1]`.
    pub fn new(frames: Tensor) -> Result<Self> {
        match *frames.shape() {
            [t, h, w, 3] if t >= 2 && h >= 1 && w >= 1 => {}
            _ => {
                return Err(Error::InvalidShape {
                    op: "video",
                    detail: format!("expected T x H x W x 3 with T >= 2, got {:?}", frames.shape()),
                })
            }
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite { op: "video" });
        }
        let frames = frames.map(|v| v.clamp(0.0, 1.0));
        Ok(Video { frames, fps: 25.0 })
    }

    pub fn from_frames(frames: &[Tensor]) -> Result<Self> {
        Self::new(Tensor::stack(frames)?)
    }

    pub fn geometry(&self) -> VideoGeometry {
        let s = self.frames.shape();
        VideoGeometry {
            frames: s[0],
            height: s[1],
            width: s[2],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    /// Frame `k` as `[H, W, 3]`.
    pub fn frame(&self, k: usize) -> Result<Tensor> {
        self.frames.outer_slice(k)
    }

    pub fn frames(&self) -> Result<Vec<Tensor>> {
        (0..self.len()).map(|k| self.frame(k)).collect()
    }

    /// Replace frame `k`.
    pub fn set_frame(&mut self, k: usize, frame: &Tensor) -> Result<()> {
        let g = self.geometry();
        if frame.shape() != [g.height, g.width, 3] || k >= g.frames {
            return Err(Error::shape("set_frame", &[g.height, g.width, 3], frame.shape()));
        }
        let n = frame.len();
        self.frames.data_mut()[k * n..(k + 1) * n]
            .iter_mut()
            .zip(frame.data())
            .for_each(|(o, &v)| *o = v.clamp(0.0, 1.0));
        Ok(())
    }

    pub fn mean(&self) -> Scalar {
        self.frames.data().iter().sum::<Scalar>() / self.frames.len() as Scalar
    }
}

fn is_vtf(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("vtf"))
}

/// Load a frame directory or a `.vtf` file.
pub fn load_video(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    if is_vtf(path) {
        let t = vtf::read_file(path)?;
        Video::new(t)
    } else {
        frames::load_dir(path)
    }
}

/// Save as a `.vtf` file when `path` has that extension, otherwise as a
/// directory of PNG frames.
pub fn save_video(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_vtf(path) {
        vtf::write_file(video.tensor(), path)
    } else {
        frames::save_dir(video, path)
    }
}

pub use frames::{frame_file_name, read_png, write_png};
