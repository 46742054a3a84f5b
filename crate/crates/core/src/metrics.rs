//! PSNR and SSIM in the linear and μ-law domains.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hdr::{mu_law, HdrImage, DEFAULT_MU};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Linear,
    Mu,
}

/// Peak signal-to-noise ratio in dB, or `Identical` when the error is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    /// Identical images map to positive infinity.
    pub fn as_f64(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }

    pub fn is_identical(self) -> bool {
        matches!(self, Psnr::Identical)
    }

    fn mean(values: &[Psnr]) -> Psnr {
        if values.iter().any(|v| v.is_identical()) {
            return Psnr::Identical;
        }
        Psnr::Db(values.iter().map(|v| v.as_f64()).sum::<f64>() / values.len() as f64)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Identical => s.serialize_str("identical"),
        }
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn values(img: &HdrImage, domain: Domain) -> Vec<f64> {
    let data = img.radiance().data().iter().map(|&v| v as f64);
    match domain {
        Domain::Linear => data.collect(),
        Domain::Mu => data.map(|v| mu_law(v, DEFAULT_MU)).collect(),
    }
}

fn check_dims(a: &HdrImage, b: &HdrImage) -> Result<()> {
    if a.radiance().dims() != b.radiance().dims() {
        return Err(Error::shape(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.radiance().dims(),
            b.radiance().dims()
        )));
    }
    Ok(())
}

pub fn psnr(a: &HdrImage, b: &HdrImage, domain: Domain) -> Result<Psnr> {
    check_dims(a, b)?;
    let (x, y) = (values(a, domain), values(b, domain));
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (1.0 / mse).log10())
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter over the valid region of one channel.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and the valid region, with an 11x11 Gaussian
/// window (sigma 1.5) and unit dynamic range.
pub fn ssim(a: &HdrImage, b: &HdrImage, domain: Domain) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, image is {h}x{w}"
        )));
    }
    let (x, y) = (values(a, domain), values(b, domain));
    let k = gaussian_kernel();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let pa: Vec<f64> = x.iter().skip(ch).step_by(3).copied().collect();
        let pb: Vec<f64> = y.iter().skip(ch).step_by(3).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let e_aa = filter_valid(&prod(&pa, &pa), h, w, &k);
        let e_bb = filter_valid(&prod(&pb, &pb), h, w, &k);
        let e_ab = filter_valid(&prod(&pa, &pb), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_mu: Psnr,
    pub psnr_l: Psnr,
    pub ssim_mu: f64,
    pub ssim_l: f64,
}

impl MetricReport {
    /// Arithmetic means of each field. `Identical` dominates a PSNR mean.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::config("no reports to average"));
        }
        let n = reports.len() as f64;
        let psnr_mu: Vec<Psnr> = reports.iter().map(|r| r.psnr_mu).collect();
        let psnr_l: Vec<Psnr> = reports.iter().map(|r| r.psnr_l).collect();
        Ok(MetricReport {
            psnr_mu: Psnr::mean(&psnr_mu),
            psnr_l: Psnr::mean(&psnr_l),
            ssim_mu: reports.iter().map(|r| r.ssim_mu).sum::<f64>() / n,
            ssim_l: reports.iter().map(|r| r.ssim_l).sum::<f64>() / n,
        })
    }
}

pub fn evaluate_pair(pred: &HdrImage, gt: &HdrImage) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_mu: psnr(pred, gt, Domain::Mu)?,
        psnr_l: psnr(pred, gt, Domain::Linear)?,
        ssim_mu: ssim(pred, gt, Domain::Mu)?,
        ssim_l: ssim(pred, gt, Domain::Linear)?,
    })
}
