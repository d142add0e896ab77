use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMode {
    /// Keep one frame, hold out the next `K`, repeat.
    Interpolation,
    /// Hold out the last `K` frames.
    Extrapolation,
    /// Train on every frame; nothing is held out.
    None,
}

impl HoldoutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HoldoutMode::Interpolation => "interpolation",
            HoldoutMode::Extrapolation => "extrapolation",
            HoldoutMode::None => "none",
        }
    }
}

impl fmt::Display for HoldoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HoldoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" | "interp" => Ok(HoldoutMode::Interpolation),
            "extrapolation" | "extrap" => Ok(HoldoutMode::Extrapolation),
            "none" => Ok(HoldoutMode::None),
            _ => Err(Error::InvalidArgument(format!("unknown holdout mode `{s}`"))),
        }
    }
}

/// Disjoint train/eval frame index sets covering `0..frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutPlan {
    pub mode: HoldoutMode,
    pub window: usize,
    pub frames: usize,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl HoldoutPlan {
    pub fn is_train(&self, k: usize) -> bool {
        self.train.binary_search(&k).is_ok()
    }
}

/// Build the train/eval split of a `frames`-long video.
///
/// Interpolation keeps frames `0, K+1, 2(K+1), …` and always the last frame;
/// extrapolation trains on the first `frames - K` frames.
pub fn make_holdout(frames: usize, mode: HoldoutMode, window: usize) -> Result<HoldoutPlan> {
    if frames < 2 {
        return Err(Error::InvalidArgument(format!("a video needs at least 2 frames, got {frames}")));
    }
    let (train, eval): (Vec<usize>, Vec<usize>) = match mode {
        HoldoutMode::None => ((0..frames).collect(), Vec::new()),
        _ if window == 0 => {
            return Err(Error::InvalidArgument("holdout window must be at least 1".into()));
        }
        _ if window >= frames => {
            return Err(Error::InvalidArgument(format!(
                "holdout window {window} must be smaller than the frame count {frames}"
            )));
        }
        HoldoutMode::Interpolation => {
            (0..frames).partition(|&k| k % (window + 1) == 0 || k == frames - 1)
        }
        HoldoutMode::Extrapolation => (0..frames).partition(|&k| k < frames - window),
    };
    Ok(HoldoutPlan {
        mode,
        window,
        frames,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_pattern() {
        let p = make_holdout(9, HoldoutMode::Interpolation, 3).unwrap();
        assert_eq!(p.train, vec![0, 4, 8]);
        assert_eq!(p.eval, vec![1, 2, 3, 5, 6, 7]);
        let p = make_holdout(10, HoldoutMode::Interpolation, 3).unwrap();
        assert_eq!(p.train, vec![0, 4, 8, 9]);
    }

    #[test]
    fn extrapolation_pattern() {
        let p = make_holdout(10, HoldoutMode::Extrapolation, 3).unwrap();
        assert_eq!(p.train, (0..7).collect::<Vec<_>>());
        assert_eq!(p.eval, vec![7, 8, 9]);
    }

    #[test]
    fn window_must_fit() {
        assert!(make_holdout(3, HoldoutMode::Extrapolation, 3).is_err());
        assert!(make_holdout(3, HoldoutMode::Interpolation, 0).is_err());
        assert!(make_holdout(3, HoldoutMode::None, 0).unwrap().eval.is_empty());
    }
}
