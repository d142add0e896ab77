//! Parameter-budget matching between families.

use serde::{Deserialize, Serialize};

use super::{decoder, posenc, Family, RepConfig, FLOW_OUTPUTS};

/// Allowed relative deviation from the reference parameter count.
pub const BUDGET_TOLERANCE: f64 = 0.05;

/// Total trainable scalars of the representation `cfg` describes.
pub fn param_count(cfg: &RepConfig) -> usize {
    let hidden = cfg.decoder.hidden_channels;
    match cfg.family {
        Family::TriPlane => {
            let t = &cfg.triplane;
            3 * t.resolution * t.resolution * t.channels + decoder::param_count(t.feature_width(), hidden)
        }
        Family::Voxel => {
            let v = &cfg.voxel;
            v.resolution.pow(3) * v.channels + decoder::param_count(v.channels, hidden)
        }
        Family::PosEnc => posenc::param_count(&cfg.posenc),
        Family::TriPlaneFlow => {
            let f = &cfg.flow;
            f.global_resolution.pow(2) * f.global_channels
                + 3 * f.motion_resolution.pow(2) * f.motion_channels
                + 3 * f.motion_channels * f.hidden_width
                + f.hidden_width
                + f.hidden_width * FLOW_OUTPUTS
                + FLOW_OUTPUTS
                + decoder::param_count(f.global_channels, hidden)
        }
    }
}

/// Outcome of [`match_param_budget`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetMatch {
    pub config: RepConfig,
    pub params: usize,
    pub reference_params: usize,
    pub rel_diff: f64,
    pub within_tolerance: bool,
}

fn rel(params: usize, reference: usize) -> f64 {
    (params as f64 - reference as f64) / reference as f64
}

/// Pick the candidate with the smallest `|rel_diff|`; earlier candidates win
/// ties.
fn closest(
    candidates: impl Iterator<Item = RepConfig>,
    reference: usize,
) -> Option<(RepConfig, f64)> {
    let mut best: Option<(RepConfig, f64)> = None;
    for c in candidates {
        let r = rel(param_count(&c), reference);
        if best.as_ref().is_none_or(|(_, b)| r.abs() < b.abs()) {
            best = Some((c, r));
        }
    }
    best
}

/// Size a `target` family so its parameter count matches `reference`.
///
/// Voxel grids solve for the resolution `D` at the requested channels (moving
/// to the nearest channel count that admits a fit if none does), positional
/// encoding MLPs for the hidden width at fixed depth, and the flow family
/// first for the global-plane channels, then for the motion-plane
/// resolution, then for both. When no integer choice lands within
/// [`BUDGET_TOLERANCE`] the closest one is returned with
/// `within_tolerance = false`.
pub fn match_param_budget(reference: &RepConfig, target: Family) -> BudgetMatch {
    let reference_params = param_count(reference);
    let base = RepConfig {
        family: target,
        ..reference.clone()
    };
    let (config, rel_diff) = if target == reference.family {
        (reference.clone(), 0.0)
    } else {
        match target {
            Family::Voxel => {
                // Prefer the requested channel count; widen the channel search
                // step by step only when no resolution fits.
                let requested = base.voxel.channels;
                let mut global_best: Option<(RepConfig, f64)> = None;
                let mut found = None;
                for spread in 0..=64usize {
                    let channels: Vec<usize> = if spread == 0 {
                        vec![requested]
                    } else {
                        [requested.checked_sub(spread), Some(requested + spread)]
                            .into_iter()
                            .flatten()
                            .filter(|&c| c >= 1)
                            .collect()
                    };
                    let best = closest(
                        channels.into_iter().flat_map(|c| {
                            let base = base.clone();
                            (2..=512).map(move |d| {
                                let mut cfg = base.clone();
                                cfg.voxel.channels = c;
                                cfg.voxel.resolution = d;
                                cfg
                            })
                        }),
                        reference_params,
                    );
                    if let Some((cfg, r)) = best {
                        if r.abs() <= BUDGET_TOLERANCE {
                            found = Some((cfg, r));
                            break;
                        }
                        if global_best.as_ref().is_none_or(|(_, b)| r.abs() < b.abs()) {
                            global_best = Some((cfg, r));
                        }
                    }
                }
                found.or(global_best)
            }
            Family::PosEnc => closest(
                (1..=8192).map(|w| {
                    let mut c = base.clone();
                    c.posenc.hidden_width = w;
                    c
                }),
                reference_params,
            ),
            Family::TriPlane => closest(
                (2..=1024).map(|n| {
                    let mut c = base.clone();
                    c.triplane.resolution = n;
                    c
                }),
                reference_params,
            ),
            Family::TriPlaneFlow => {
                let by_channels = closest(
                    (1..=256).map(|g| {
                        let mut c = base.clone();
                        c.flow.global_channels = g;
                        c
                    }),
                    reference_params,
                );
                match by_channels {
                    Some((c, r)) if r.abs() <= BUDGET_TOLERANCE => Some((c, r)),
                    _ => {
                        let by_motion = closest(
                            (2..=1024).map(|n| {
                                let mut c = base.clone();
                                c.flow.motion_resolution = n;
                                c
                            }),
                            reference_params,
                        );
                        match by_motion {
                            Some((c, r)) if r.abs() <= BUDGET_TOLERANCE => Some((c, r)),
                            _ => closest(
                                (1..=64).flat_map(|g| {
                                    let base = base.clone();
                                    (2..=256).map(move |n| {
                                        let mut c = base.clone();
                                        c.flow.global_channels = g;
                                        c.flow.motion_resolution = n;
                                        c
                                    })
                                }),
                                reference_params,
                            ),
                        }
                    }
                }
            }
        }
        .expect("non-empty candidate range")
    };
    BudgetMatch {
        params: param_count(&config),
        config,
        reference_params,
        rel_diff,
        within_tolerance: rel_diff.abs() <= BUDGET_TOLERANCE,
    }
}
