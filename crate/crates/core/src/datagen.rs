//! Synthetic dynamic scenes: a smooth background, static highlights and
//! moving flat shapes, captured at three exposures.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr::{ExposureStack, HdrImage, LdrFrame, NUM_FRAMES, REFERENCE_INDEX};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_EVS: [f32; NUM_FRAMES] = [-2.0, 0.0, 2.0];
pub const DEFAULT_MAX_DISPLACEMENT: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect { half_height: f64, half_width: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    /// `(row, col)` centre in the reference frame.
    pub center: (f64, f64),
    /// `(row, col)` displacement per frame.
    pub displacement: (f64, f64),
    pub radiance: [f32; 3],
}

impl Shape {
    /// Centre in frame `k` (0-based).
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let step = frame as f64 - REFERENCE_INDEX as f64;
        (
            self.center.0 + step * self.displacement.0,
            self.center.1 + step * self.displacement.1,
        )
    }

    /// Whether the pixel centre `(y, x)` lies inside the shape in frame `k`.
    pub fn covers(&self, y: usize, x: usize, frame: usize) -> bool {
        let (cy, cx) = self.center_at(frame);
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        match self.kind {
            ShapeKind::Rect { half_height, half_width } => dy.abs() <= half_height && dx.abs() <= half_width,
            ShapeKind::Disk { radius } => dy * dy + dx * dx <= radius * radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Seeds the background texture.
    pub texture_seed: u64,
    /// Drawn in order over the background; they move between frames.
    pub objects: Vec<Shape>,
    /// Static near-white regions, drawn before the objects.
    pub highlights: Vec<Shape>,
    pub evs: [f32; NUM_FRAMES],
    pub max_displacement: f64,
}

impl SceneSpec {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            texture_seed: 0,
            objects: Vec::new(),
            highlights: Vec::new(),
            evs: DEFAULT_EVS,
            max_displacement: DEFAULT_MAX_DISPLACEMENT,
        }
    }

    /// A scene with 2-4 moving shapes and 1-2 highlights.
    pub fn random(height: usize, width: usize, seed: u64) -> Self {
        let mut r = rng::seeded(rng::derive_seed(seed, "scene-layout"));
        let mut spec = Self::empty(height, width);
        spec.texture_seed = rng::derive_seed(seed, "scene-texture");
        let min_side = height.min(width) as f64;
        let size = |r: &mut Rng| r.random_range((min_side / 12.0).max(1.5)..(min_side / 5.0).max(2.0));
        let kind = |r: &mut Rng, s: f64| {
            if r.random_bool(0.5) {
                ShapeKind::Disk { radius: s }
            } else {
                ShapeKind::Rect {
                    half_height: s,
                    half_width: s * r.random_range(0.6..1.6),
                }
            }
        };
        let center = |r: &mut Rng| {
            (
                r.random_range(0.0..height as f64),
                r.random_range(0.0..width as f64),
            )
        };
        for _ in 0..r.random_range(1..=2) {
            let s = size(&mut r);
            spec.highlights.push(Shape {
                kind: kind(&mut r, s),
                center: center(&mut r),
                displacement: (0.0, 0.0),
                radiance: [(); 3].map(|_| r.random_range(0.9..=1.0)),
            });
        }
        let max = spec.max_displacement.round() as i64;
        for _ in 0..r.random_range(2..=4) {
            let s = size(&mut r);
            spec.objects.push(Shape {
                kind: kind(&mut r, s),
                center: center(&mut r),
                displacement: (r.random_range(-max..=max) as f64, r.random_range(-max..=max) as f64),
                radiance: [(); 3].map(|_| r.random_range(0.05..0.8)),
            });
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene must be non-empty"));
        }
        if self.evs.windows(2).any(|p| p[0] > p[1]) || self.evs.iter().any(|e| !e.is_finite()) {
            return Err(Error::config("EVs must be finite and ascending"));
        }
        for s in self.objects.iter().chain(&self.highlights) {
            let (dy, dx) = s.displacement;
            if dy.abs() > self.max_displacement || dx.abs() > self.max_displacement {
                return Err(Error::config(format!(
                    "displacement ({dy}, {dx}) exceeds the maximum {}",
                    self.max_displacement
                )));
            }
            if s.radiance.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("shape radiance must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Coverage of one object in frame `k`, row-major.
    pub fn object_mask(&self, object: usize, frame: usize) -> Vec<bool> {
        let s = &self.objects[object];
        (0..self.height * self.width)
            .map(|i| s.covers(i / self.width, i % self.width, frame))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub stack: ExposureStack,
    /// Radiance at the reference frame's object positions.
    pub gt: HdrImage,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn background(spec: &SceneSpec) -> Vec<f32> {
    let mut r = rng::seeded(spec.texture_seed);
    let tau = std::f64::consts::TAU;
    let channels: Vec<(f64, Vec<Wave>)> = (0..3)
        .map(|_| {
            let base = r.random_range(0.12..0.25);
            let waves = (0..3)
                .map(|_| Wave {
                    fy: r.random_range(-2.5..2.5) / spec.height as f64,
                    fx: r.random_range(-2.5..2.5) / spec.width as f64,
                    phase: r.random_range(0.0..tau),
                    amp: r.random_range(0.02..0.06),
                })
                .collect();
            (base, waves)
        })
        .collect();
    let mut out = Vec::with_capacity(spec.height * spec.width * 3);
    for y in 0..spec.height {
        for x in 0..spec.width {
            for (base, waves) in &channels {
                let v: f64 = base
                    + waves
                        .iter()
                        .map(|w| w.amp * (tau * (w.fy * y as f64 + w.fx * x as f64) + w.phase).sin())
                        .sum::<f64>();
                out.push(v.clamp(0.02, 0.4) as f32);
            }
        }
    }
    out
}

fn render(spec: &SceneSpec, bg: &[f32], frame: usize) -> Result<HdrImage> {
    let mut data = bg.to_vec();
    for s in spec.highlights.iter().chain(&spec.objects) {
        for y in 0..spec.height {
            for x in 0..spec.width {
                if s.covers(y, x, frame) {
                    let i = (y * spec.width + x) * 3;
                    data[i..i + 3].copy_from_slice(&s.radiance);
                }
            }
        }
    }
    HdrImage::new(Tensor::new(vec![spec.height, spec.width, 3], data)?)
}

/// Renders the per-frame radiance maps (objects displaced) and exposes them.
/// Shapes leaving the canvas are clipped.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let mut spec = spec.clone();
    spec.texture_seed ^= seed;
    let bg = background(&spec);
    let radiance: Vec<HdrImage> = (0..NUM_FRAMES).map(|k| render(&spec, &bg, k)).collect::<Result<_>>()?;
    let expose = |k: usize| expose_ldr(&radiance[k], (spec.evs[k] as f64).exp2(), crate::hdr::DEFAULT_GAMMA);
    let stack = ExposureStack::new([expose(0)?, expose(1)?, expose(2)?])?;
    Ok(Sample {
        stack,
        gt: radiance[REFERENCE_INDEX].clone(),
    })
}

/// Camera model: `round(255 * clip((R t)^(1/gamma))) / 255`.
pub fn expose_ldr(radiance: &HdrImage, t: f64, gamma: f64) -> Result<LdrFrame> {
    if !(t > 0.0) || !(gamma > 0.0) {
        return Err(Error::Domain(format!("exposure needs t > 0 and gamma > 0, got t={t}, gamma={gamma}")));
    }
    let px = radiance
        .radiance()
        .map(|v| quantize(((v as f64 * t).powf(1.0 / gamma)).clamp(0.0, 1.0)));
    LdrFrame::new(px, t.log2() as f32)
}

fn quantize(v: f64) -> f32 {
    ((v * 255.0).round() / 255.0) as f32
}

/// Regular grid of `size x size` crops with the given stride.
pub fn crop_patches(sample: &Sample, size: usize, stride: usize) -> Result<Vec<Sample>> {
    let (h, w) = (sample.gt.height(), sample.gt.width());
    if size == 0 || stride == 0 {
        return Err(Error::config("crop size and stride must be positive"));
    }
    if size > h || size > w {
        return Err(Error::config(format!("crop {size} exceeds the {h}x{w} image")));
    }
    let mut out = Vec::new();
    for top in (0..=h - size).step_by(stride) {
        for left in (0..=w - size).step_by(stride) {
            out.push(Sample {
                stack: sample.stack.crop(top, left, size, size)?,
                gt: sample.gt.crop(top, left, size, size)?,
            });
        }
    }
    Ok(out)
}

/// Mean `(row, col)` of the set pixels of a row-major mask.
pub fn centroid(mask: &[bool], width: usize) -> Option<(f64, f64)> {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sy += (i / width) as f64;
        sx += (i % width) as f64;
        n += 1;
    }
    (n > 0).then(|| (sy / n as f64, sx / n as f64))
}
