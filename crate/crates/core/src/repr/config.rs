use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, PRECISION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "posenc")]
    PosEnc,
    #[serde(rename = "voxel")]
    Voxel,
    #[serde(rename = "triplane")]
    TriPlane,
    #[serde(rename = "triplane_flow")]
    TriPlaneFlow,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::PosEnc,
        Family::Voxel,
        Family::TriPlane,
        Family::TriPlaneFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::PosEnc => "posenc",
            Family::Voxel => "voxel",
            Family::TriPlane => "triplane",
            Family::TriPlaneFlow => "triplane_flow",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown family `{s}` (expected posenc, voxel, triplane or triplane_flow)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for VideoGeometry {
    fn default() -> Self {
        VideoGeometry {
            frames: 64,
            height: 64,
            width: 64,
        }
    }
}

/// How the three plane samples are combined into the decoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Concat,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriPlaneConfig {
    pub resolution: usize,
    pub channels: usize,
    pub combine: Combine,
}

impl Default for TriPlaneConfig {
    fn default() -> Self {
        TriPlaneConfig {
            resolution: 32,
            channels: 8,
            combine: Combine::Concat,
        }
    }
}

impl TriPlaneConfig {
    pub fn feature_width(&self) -> usize {
        match self.combine {
            Combine::Concat => 3 * self.channels,
            Combine::Sum => self.channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelConfig {
    pub resolution: usize,
    pub channels: usize,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        VoxelConfig {
            resolution: 16,
            channels: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosEncConfig {
    pub frequencies: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        PosEncConfig {
            frequencies: 8,
            hidden_width: 128,
            hidden_layers: 2,
        }
    }
}

impl PosEncConfig {
    pub fn encoding_width(&self) -> usize {
        6 * self.frequencies + 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub global_resolution: usize,
    pub global_channels: usize,
    pub motion_resolution: usize,
    pub motion_channels: usize,
    pub hidden_width: usize,
    /// Appearance-volume slices; `None` means one per video frame.
    pub time_slices: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            global_resolution: 32,
            global_channels: 8,
            motion_resolution: 32,
            motion_channels: 4,
            hidden_width: 32,
            time_slices: None,
        }
    }
}

/// Output width of the flow decoder: local flow, global flow, mask logit.
pub const FLOW_OUTPUTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub hidden_channels: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { hidden_channels: 32 }
    }
}

/// Complete description of a representation; together with `seed` it
/// determines the initial parameters bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepConfig {
    pub family: Family,
    pub video: VideoGeometry,
    pub seed: u64,
    pub precision: Precision,
    pub triplane: TriPlaneConfig,
    pub voxel: VoxelConfig,
    pub posenc: PosEncConfig,
    pub flow: FlowConfig,
    pub decoder: DecoderConfig,
}

impl Default for RepConfig {
    fn default() -> Self {
        RepConfig {
            family: Family::TriPlane,
            video: VideoGeometry::default(),
            seed: 0,
            precision: PRECISION,
            triplane: TriPlaneConfig::default(),
            voxel: VoxelConfig::default(),
            posenc: PosEncConfig::default(),
            flow: FlowConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl RepConfig {
    pub fn new(family: Family, video: VideoGeometry) -> Self {
        RepConfig {
            family,
            video,
            ..Default::default()
        }
    }

    pub fn time_slices(&self) -> usize {
        self.flow.time_slices.unwrap_or(self.video.frames)
    }

    pub fn validate(&self) -> Result<()> {
        super::check_precision(self)?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let v = &self.video;
        if v.frames < 2 || v.height < 2 || v.width < 2 {
            return bad(format!("video geometry {v:?} needs every extent >= 2"));
        }
        if self.decoder.hidden_channels == 0 {
            return bad("decoder.hidden_channels must be positive".into());
        }
        match self.family {
            Family::TriPlane => {
                let t = &self.triplane;
                if t.resolution < 2 || t.channels == 0 {
                    return bad(format!("triplane {t:?} needs resolution >= 2, channels >= 1"));
                }
            }
            Family::Voxel => {
                let x = &self.voxel;
                if x.resolution < 2 || x.channels == 0 {
                    return bad(format!("voxel {x:?} needs resolution >= 2, channels >= 1"));
                }
            }
            Family::PosEnc => {
                let p = &self.posenc;
                if p.frequencies == 0 || p.hidden_width == 0 || p.hidden_layers == 0 {
                    return bad(format!("posenc {p:?} needs every field >= 1"));
                }
            }
            Family::TriPlaneFlow => {
                let f = &self.flow;
                if f.global_resolution < 2
                    || f.motion_resolution < 2
                    || f.global_channels == 0
                    || f.motion_channels == 0
                    || f.hidden_width == 0
                {
                    return bad(format!("flow {f:?} has an empty or sub-2 extent"));
                }
                if self.time_slices() < 2 {
                    return bad("flow.time_slices must be >= 2".into());
                }
            }
        }
        Ok(())
    }
}
