//! Sample directories: `sample_k/{frame_1.ppm, frame_2.ppm, frame_3.ppm,
//! exposures.txt, gt.pfm}`.

use std::fs;
use std::path::{Path, PathBuf};

use super::image::{read_pfm, read_ppm, write_pfm, write_ppm};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::hdr::{ExposureStack, HdrImage, LdrFrame, NUM_FRAMES};

pub const EXPOSURES_FILE: &str = "exposures.txt";
pub const GT_FILE: &str = "gt.pfm";

pub fn frame_file(k: usize) -> String {
    format!("frame_{}.ppm", k + 1)
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut evs = String::new();
    for (k, f) in sample.stack.frames().iter().enumerate() {
        write_ppm(&dir.join(frame_file(k)), f.pixels())?;
        evs.push_str(&format!("{}\n", f.ev()));
    }
    let path = dir.join(EXPOSURES_FILE);
    fs::write(&path, evs).map_err(|e| Error::io(&path, e))?;
    write_pfm(&dir.join(GT_FILE), sample.gt.radiance())
}

fn read_exposures(path: &Path) -> Result<[f32; NUM_FRAMES]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let evs: Vec<f32> = text
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("{}: invalid exposure value `{s}`", path.display())))
        })
        .collect::<Result<_>>()?;
    evs.try_into().map_err(|v: Vec<f32>| {
        Error::Format(format!("{}: expected {NUM_FRAMES} exposure values, found {}", path.display(), v.len()))
    })
}

/// Reads the three LDR frames and their exposure values.
pub fn read_stack(dir: &Path) -> Result<ExposureStack> {
    let evs = read_exposures(&dir.join(EXPOSURES_FILE))?;
    let frame = |k: usize| LdrFrame::new(read_ppm(&dir.join(frame_file(k)))?, evs[k]);
    ExposureStack::new([frame(0)?, frame(1)?, frame(2)?])
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    Ok(Sample {
        stack: read_stack(dir)?,
        gt: HdrImage::new(read_pfm(&dir.join(GT_FILE))?)?,
    })
}

/// `sample_k` directories under `root`, ordered by `k`.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        let k = name
            .to_str()
            .and_then(|n| n.strip_prefix("sample_"))
            .and_then(|k| k.parse::<u64>().ok());
        if let (Some(k), true) = (k, entry.path().is_dir()) {
            found.push((k, entry.path()));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn sample_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("sample_{k}"))
}
