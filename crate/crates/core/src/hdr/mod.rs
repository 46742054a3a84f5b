//! Radiometry: LDR frames, the linear HDR domain, μ-law tonemapping and the
//! training loss.

mod loss;
mod perceptual;

pub use loss::{compute_loss, loss_value, LossBreakdown, LossTerms, DEFAULT_LAMBDA};
pub use perceptual::{PerceptualExtractor, PERCEPTUAL_SEED};

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{hwc, Real, Tensor};

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const DEFAULT_MU: f64 = 5000.0;
/// The middle frame of an exposure stack is the reference.
pub const REFERENCE_INDEX: usize = 1;
pub const NUM_FRAMES: usize = 3;

fn check_rgb(t: &Tensor<f32>, what: &str) -> Result<(usize, usize)> {
    let (h, w, c) = hwc(t)?;
    if c != 3 || h == 0 || w == 0 {
        return Err(Error::shape(format!("{what} must be H x W x 3, got {:?}", t.dims())));
    }
    if !t.is_finite() {
        return Err(Error::Numeric { op: what.to_string() });
    }
    if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain(format!("{what} values must lie in [0, 1]")));
    }
    Ok((h, w))
}

/// One low dynamic range capture.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrFrame {
    pixels: Tensor<f32>,
    ev: f32,
}

impl LdrFrame {
    pub fn new(pixels: Tensor<f32>, ev: f32) -> Result<Self> {
        check_rgb(&pixels, "LDR frame")?;
        if !ev.is_finite() {
            return Err(Error::Domain(format!("exposure value {ev} is not finite")));
        }
        Ok(Self { pixels, ev })
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn ev(&self) -> f32 {
        self.ev
    }

    /// Relative exposure time `2^EV`.
    pub fn exposure_time(&self) -> f64 {
        (self.ev as f64).exp2()
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[1]
    }
}

/// Three frames ordered by ascending EV; the middle one is the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureStack {
    frames: [LdrFrame; NUM_FRAMES],
}

impl ExposureStack {
    pub fn new(frames: [LdrFrame; NUM_FRAMES]) -> Result<Self> {
        let dims = frames[0].pixels.dims();
        if frames.iter().any(|f| f.pixels.dims() != dims) {
            return Err(Error::shape("exposure stack frames differ in size"));
        }
        if frames.windows(2).any(|p| p[0].ev > p[1].ev) {
            return Err(Error::Domain("exposure stack must be ordered by ascending EV".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[LdrFrame; NUM_FRAMES] {
        &self.frames
    }

    pub fn reference(&self) -> &LdrFrame {
        &self.frames[REFERENCE_INDEX]
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Crops every frame to the same window.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let crop = |f: &LdrFrame| -> Result<LdrFrame> {
            Ok(LdrFrame {
                pixels: f.pixels.crop(top, left, h, w)?,
                ev: f.ev,
            })
        };
        Ok(Self {
            frames: [crop(&self.frames[0])?, crop(&self.frames[1])?, crop(&self.frames[2])?],
        })
    }
}

/// Linear-domain radiance normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage {
    radiance: Tensor<f32>,
}

impl HdrImage {
    pub fn new(radiance: Tensor<f32>) -> Result<Self> {
        check_rgb(&radiance, "HDR image")?;
        Ok(Self { radiance })
    }

    pub fn radiance(&self) -> &Tensor<f32> {
        &self.radiance
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.radiance
    }

    pub fn height(&self) -> usize {
        self.radiance.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.radiance.dims()[1]
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            radiance: self.radiance.crop(top, left, h, w)?,
        })
    }
}

/// Maps LDR pixels to the linear domain: `L^gamma / t`.
pub fn gamma_correct(pixels: &Tensor<f32>, exposure_time: f64, gamma: f64) -> Result<Tensor<f32>> {
    if !(exposure_time > 0.0) {
        return Err(Error::Domain(format!("exposure time must be positive, got {exposure_time}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    Ok(pixels.map(|v| ((v as f64).powf(gamma) / exposure_time) as f32))
}

/// Per-frame 6-channel network inputs `[L_i, L_i^gamma / t_i]`.
pub fn build_network_input(stack: &ExposureStack, gamma: f64) -> Result<[Tensor<f32>; NUM_FRAMES]> {
    let one = |f: &LdrFrame| -> Result<Tensor<f32>> {
        let hdr = gamma_correct(&f.pixels, f.exposure_time(), gamma)?;
        Tensor::concat_channels(&[&f.pixels, &hdr])
    };
    let [a, b, c] = stack.frames();
    Ok([one(a)?, one(b)?, one(c)?])
}

pub fn mu_law(x: f64, mu: f64) -> f64 {
    (1.0 + mu * x).ln() / (1.0 + mu).ln()
}

#[derive(Clone, Debug)]
pub struct Tonemapped<T> {
    pub image: Tensor<T>,
    /// How many inputs fell outside `[0, 1]` and were clamped.
    pub clamped: usize,
}

/// Elementwise μ-law compression of a linear-domain tensor.
pub fn mu_law_tonemap<T: Real>(x: &Tensor<T>, mu: f64) -> Result<Tonemapped<T>> {
    if !(mu > 0.0) {
        return Err(Error::config(format!("mu must be positive, got {mu}")));
    }
    let mut clamped = 0;
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let v = v.as_f64();
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            T::lit(mu_law(v.clamp(0.0, 1.0), mu))
        })
        .collect();
    if clamped > 0 {
        warn!("mu-law tonemap clamped {clamped} values outside [0, 1]");
    }
    Ok(Tonemapped {
        image: Tensor::new(x.dims().to_vec(), data)?,
        clamped,
    })
}
