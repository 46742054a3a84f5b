//! Binary PPM (P6, 8-bit) and colour PFM readers and writers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Splits `count` whitespace-separated header tokens (skipping `#` comments)
/// and returns them with the offset of the byte after the single separator
/// that follows the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated image header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::Format("image header has no data".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("invalid image dimension `{s}`"))),
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (tok, offset) = header_tokens(bytes, 4)?;
    if tok[0] != "P6" {
        return Err(Error::Format(format!("expected binary PPM (P6), found `{}`", tok[0])));
    }
    let (w, h) = (parse_dim(&tok[1])?, parse_dim(&tok[2])?);
    if tok[3] != "255" {
        return Err(Error::Format(format!("only 8-bit PPM is supported, maxval `{}`", tok[3])));
    }
    let body = &bytes[offset..];
    if body.len() < h * w * 3 {
        return Err(Error::Format(format!(
            "PPM body holds {} bytes, {}x{} needs {}",
            body.len(),
            w,
            h,
            h * w * 3
        )));
    }
    let data = body[..h * w * 3].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![h, w, 3], data)
}

/// Quantizes `[0, 1]` values with `round(255 v)`.
pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = rgb_dims(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (tok, offset) = header_tokens(bytes, 4)?;
    if tok[0] != "PF" {
        return Err(Error::Format(format!("expected colour PFM (PF), found `{}`", tok[0])));
    }
    let (w, h) = (parse_dim(&tok[1])?, parse_dim(&tok[2])?);
    let scale: f32 = tok[3]
        .parse()
        .map_err(|_| Error::Format(format!("invalid PFM scale `{}`", tok[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("invalid PFM scale `{}`", tok[3])));
    }
    let body = &bytes[offset..];
    let n = h * w * 3;
    if body.len() < n * 4 {
        return Err(Error::Format(format!("PFM body holds {} bytes, needs {}", body.len(), n * 4)));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    // Rows are stored bottom to top.
    for (file_row, chunk) in body[..n * 4].chunks_exact(w * 3 * 4).enumerate() {
        let y = h - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[y * w * 3 + i] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Tensor::new(vec![h, w, 3], data)
}

/// Little-endian (scale -1.0), bottom-up rows.
pub fn encode_pfm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = rgb_dims(img)?;
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for v in &img.data()[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn rgb_dims(img: &Tensor<f32>) -> Result<(usize, usize)> {
    match img.dims() {
        &[h, w, 3] => Ok((h, w)),
        d => Err(Error::shape(format!("expected H x W x 3 image, got {d:?}"))),
    }
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ppm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pfm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_pfm(img)?).map_err(|e| Error::io(path, e))
}
