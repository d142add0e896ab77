//! Analytic synthetic videos.
//!
//! Every generator is a pure function of its [`SynthParams`]. Pixel `(i, j)`
//! covers the unit square `[j, j+1] × [i, i+1]`; moving shapes are rendered
//! with exact box coverage, which for sub-pixel shifts equals bilinear
//! interpolation of the pixel-aligned image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Video;
use crate::error::{Error, Result};
use crate::rng::{SeededRng, STREAM_SYNTH};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Constant,
    TranslatingSquare,
    TranslatingTexture,
    RotatingBar,
    TwoObjectsCrossing,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Constant,
        SynthKind::TranslatingSquare,
        SynthKind::TranslatingTexture,
        SynthKind::RotatingBar,
        SynthKind::TwoObjectsCrossing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Constant => "constant",
            SynthKind::TranslatingSquare => "translating_square",
            SynthKind::TranslatingTexture => "translating_texture",
            SynthKind::RotatingBar => "rotating_bar",
            SynthKind::TwoObjectsCrossing => "two_objects_crossing",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic video kind `{s}`")))
    }
}

/// Default translation in pixels per frame, `(dx, dy)`.
pub const DEFAULT_VELOCITY: (f64, f64) = (0.5, 0.25);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Used by the translating kinds.
    #[serde(default = "default_velocity")]
    pub velocity: (f64, f64),
}

fn default_velocity() -> (f64, f64) {
    DEFAULT_VELOCITY
}

impl SynthParams {
    pub fn new(kind: SynthKind, frames: usize, height: usize, width: usize, seed: u64) -> Self {
        SynthParams {
            kind,
            frames,
            height,
            width,
            seed,
            velocity: DEFAULT_VELOCITY,
        }
    }

    pub fn with_velocity(mut self, dx: f64, dy: f64) -> Self {
        self.velocity = (dx, dy);
        self
    }
}

/// Generate with the default velocity.
pub fn synth_video(kind: SynthKind, frames: usize, height: usize, width: usize, seed: u64) -> Result<Video> {
    generate(&SynthParams::new(kind, frames, height, width, seed))
}

pub fn generate(p: &SynthParams) -> Result<Video> {
    if p.frames < 2 || p.height < 4 || p.width < 4 {
        return Err(Error::InvalidArgument(format!(
            "synthetic video needs at least 2 frames of 4x4 pixels, got {}x{}x{}",
            p.frames, p.height, p.width
        )));
    }
    if !(p.velocity.0.is_finite() && p.velocity.1.is_finite()) {
        return Err(Error::InvalidArgument("velocity must be finite".into()));
    }
    let mut rng = SeededRng::new(p.seed, STREAM_SYNTH);
    let shader: Box<dyn Fn(usize, usize, usize) -> [f64; 3]> = match p.kind {
        SynthKind::Constant => {
            let c = color(&mut rng);
            Box::new(move |_, _, _| c)
        }
        SynthKind::TranslatingSquare => translating_square(p, &mut rng),
        SynthKind::TranslatingTexture => translating_texture(p, &mut rng),
        SynthKind::RotatingBar => rotating_bar(p, &mut rng),
        SynthKind::TwoObjectsCrossing => two_objects(p, &mut rng),
    };
    let (t, h, w) = (p.frames, p.height, p.width);
    let mut data = Vec::with_capacity(t * h * w * 3);
    for k in 0..t {
        for i in 0..h {
            for j in 0..w {
                data.extend(shader(k, i, j).iter().map(|&v| v as Scalar));
            }
        }
    }
    Video::new(Tensor::new(&[t, h, w, 3], data)?)
}

fn color(rng: &mut SeededRng) -> [f64; 3] {
    [0; 3].map(|_| rng.uniform_range(0.15, 0.85))
}

fn mix(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - w) + b[c] * w)
}

fn overlap(lo: f64, hi: f64, cell: usize) -> f64 {
    let c = cell as f64;
    (hi.min(c + 1.0) - lo.max(c)).max(0.0)
}

/// Fraction of pixel `(i, j)` covered by `[x, x+sx] × [y, y+sy]`.
fn rect_coverage(x: f64, y: f64, sx: f64, sy: f64, i: usize, j: usize) -> f64 {
    overlap(x, x + sx, j) * overlap(y, y + sy, i)
}

type Shader = Box<dyn Fn(usize, usize, usize) -> [f64; 3]>;

fn translating_square(p: &SynthParams, rng: &mut SeededRng) -> Shader {
    let (bg, fg) = (color(rng), color(rng));
    let size = (p.height.min(p.width) / 4).max(2) as f64;
    let x0 = (p.width / 8) as f64;
    let y0 = ((p.height as f64 - size) / 2.0).floor();
    let (vx, vy) = p.velocity;
    Box::new(move |k, i, j| {
        let cov = rect_coverage(x0 + vx * k as f64, y0 + vy * k as f64, size, size, i, j);
        mix(bg, fg, cov)
    })
}

/// Random-valued lattice textures at several scales, bilinearly
/// interpolated and periodic.
struct Lattice {
    cell: f64,
    nx: usize,
    ny: usize,
    values: Vec<[f64; 3]>,
}

impl Lattice {
    fn new(cell: usize, width: usize, height: usize, rng: &mut SeededRng) -> Self {
        let nx = width.div_ceil(cell).max(2);
        let ny = height.div_ceil(cell).max(2);
        let values = (0..nx * ny).map(|_| [0; 3].map(|_| rng.uniform())).collect();
        Lattice {
            cell: cell as f64,
            nx,
            ny,
            values,
        }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let gx = (x / self.cell).rem_euclid(self.nx as f64);
        let gy = (y / self.cell).rem_euclid(self.ny as f64);
        let (x0, y0) = (gx.floor() as usize % self.nx, gy.floor() as usize % self.ny);
        let (x1, y1) = ((x0 + 1) % self.nx, (y0 + 1) % self.ny);
        let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
        let v = |xx: usize, yy: usize| self.values[yy * self.nx + xx];
        let top = mix(v(x0, y0), v(x1, y0), fx);
        let bottom = mix(v(x0, y1), v(x1, y1), fx);
        mix(top, bottom, fy)
    }
}

const TEXTURE_OCTAVES: [(usize, f64); 3] = [(16, 0.5), (8, 0.3), (4, 0.2)];

fn translating_texture(p: &SynthParams, rng: &mut SeededRng) -> Shader {
    let layers: Vec<(Lattice, f64)> = TEXTURE_OCTAVES
        .iter()
        .map(|&(cell, amp)| (Lattice::new(cell, p.width, p.height, rng), amp))
        .collect();
    let (vx, vy) = p.velocity;
    Box::new(move |k, i, j| {
        // Sample at pixel centres, shifted back along the motion.
        let x = j as f64 + 0.5 - vx * k as f64;
        let y = i as f64 + 0.5 - vy * k as f64;
        let mut out = [0.0; 3];
        for (lat, amp) in &layers {
            let v = lat.at(x, y);
            for c in 0..3 {
                out[c] += amp * v[c];
            }
        }
        out.map(|v| 0.1 + 0.8 * v)
    })
}

const SUPERSAMPLE: usize = 4;

fn rotating_bar(p: &SynthParams, rng: &mut SeededRng) -> Shader {
    let (bg, fg) = (color(rng), color(rng));
    let theta0 = rng.uniform_range(0.0, std::f64::consts::PI);
    let omega = std::f64::consts::PI / p.frames as f64;
    let (cx, cy) = (p.width as f64 / 2.0, p.height as f64 / 2.0);
    let half_len = 0.4 * p.width.min(p.height) as f64;
    let half_wid = (0.06 * p.width.min(p.height) as f64).max(1.0);
    Box::new(move |k, i, j| {
        let th = theta0 + omega * k as f64;
        let (s, c) = th.sin_cos();
        let mut hits = 0usize;
        for a in 0..SUPERSAMPLE {
            for b in 0..SUPERSAMPLE {
                let x = j as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
                let y = i as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
                let along = x * c + y * s;
                let across = -x * s + y * c;
                if along.abs() <= half_len && across.abs() <= half_wid {
                    hits += 1;
                }
            }
        }
        mix(bg, fg, hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64)
    })
}

fn two_objects(p: &SynthParams, rng: &mut SeededRng) -> Shader {
    let (bg, ca, cb) = (color(rng), color(rng), color(rng));
    let size = (p.height.min(p.width) / 4).max(2) as f64;
    let (w, h) = (p.width as f64, p.height as f64);
    let travel = (w - size - 2.0).max(0.0);
    let speed = travel / (p.frames - 1) as f64;
    let ya = (h / 2.0 - size * 0.75).floor();
    let yb = (h / 2.0 - size * 0.25).floor();
    Box::new(move |k, i, j| {
        let t = speed * k as f64;
        let a = rect_coverage(1.0 + t, ya, size, size, i, j);
        let b = rect_coverage(w - size - 1.0 - t, yb, size, size, i, j);
        // `b` is in front.
        mix(mix(bg, ca, a), cb, b)
    })
}
