//! The `synth`, `train`, `infer` and `eval` commands.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::datagen::{crop_patches, synth_scene, Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::hdr::{mu_law_tonemap, HdrImage, DEFAULT_MU};
use crate::io::{
    list_samples, load_checkpoint, read_sample, read_stack, sample_dir, save_checkpoint, write_pfm, write_ppm,
    write_sample,
};
use crate::metrics::{evaluate_pair, MetricReport};
use crate::model::HyHdrNet;
use crate::rng;
use crate::train::{StepLog, TrainConfig, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.hyhd";
pub const LOSS_LOG_FILE: &str = "loss.csv";

/// Writes `count` random scenes as `sample_0 .. sample_{count-1}`.
pub fn cmd_synth(out: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let mut dirs = Vec::with_capacity(count);
    for k in 0..count {
        let scene_seed = rng::derive_seed(seed, &format!("sample-{k}"));
        let sample = synth_scene(&SceneSpec::random(height, width, scene_seed), scene_seed)?;
        let dir = sample_dir(out, k);
        write_sample(&dir, &sample)?;
        dirs.push(dir);
    }
    info!("wrote {count} samples to {}", out.display());
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<(String, Sample)>> {
    let dirs = list_samples(root)?;
    if dirs.is_empty() {
        return Err(Error::config(format!("no sample_k directories under {}", root.display())));
    }
    dirs.iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_sample(d)?))
        })
        .collect()
}

pub fn training_crops(samples: &[Sample], crop: usize, stride: usize) -> Result<Vec<Sample>> {
    let mut crops = Vec::new();
    for s in samples {
        crops.extend(crop_patches(s, crop, stride)?);
    }
    Ok(crops)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    pub last: Option<StepLog>,
}

/// Keeps the log rows up to `step` so a resumed run continues the file.
fn truncate_log(path: &Path, step: u64) -> Result<Vec<String>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if row_step.is_some_and(|s| s <= step) {
            kept.push(line);
        }
    }
    Ok(kept)
}

/// Trains on every crop of the dataset and writes `checkpoint.hyhd` and
/// `loss.csv` into `out`. With `resume`, training continues from that
/// checkpoint; only the step budget (`epochs`, `max_steps`) is taken from
/// `config`.
pub fn cmd_train(config: TrainConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (mut trainer, crop_cfg) = match resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            ckpt.config.epochs = config.epochs;
            ckpt.config.max_steps = config.max_steps;
            let cfg = ckpt.config.clone();
            let samples: Vec<Sample> = load_dataset(data)?.into_iter().map(|(_, s)| s).collect();
            let crops = training_crops(&samples, cfg.crop, cfg.stride)?;
            (Trainer::resume(ckpt, &crops)?, cfg)
        }
        None => {
            config.validate()?;
            let samples: Vec<Sample> = load_dataset(data)?.into_iter().map(|(_, s)| s).collect();
            let crops = training_crops(&samples, config.crop, config.stride)?;
            (Trainer::new(config.clone(), &crops)?, config)
        }
    };
    info!(
        "crop {} stride {}, starting at step {}",
        crop_cfg.crop,
        crop_cfg.stride,
        trainer.step()
    );
    let log_path = out.join(LOSS_LOG_FILE);
    let kept = truncate_log(&log_path, trainer.step())?;
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut head = format!("{}\n", StepLog::CSV_HEADER);
    for line in kept {
        let _ = writeln!(head, "{line}");
    }
    log.write_all(head.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
    let mut last = None;
    trainer.run(|l| {
        writeln!(log, "{}", l.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        if l.step % 50 == 0 {
            info!("step {} loss {:.5} lr {:.1e}", l.step, l.total, l.lr);
        }
        last = Some(*l);
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        log: log_path,
        steps: trainer.step(),
        last,
    })
}

fn load_model(ckpt: &Path) -> Result<(HyHdrNet, crate::model::ParamStore<f32>)> {
    let ckpt = load_checkpoint(ckpt)?;
    let net = HyHdrNet::new(ckpt.config.model)?;
    net.check_params(&ckpt.params)?;
    Ok((net, ckpt.params))
}

/// Path of the 8-bit μ-law preview written next to an inferred PFM.
pub fn preview_path(out: &Path) -> PathBuf {
    out.with_extension("ppm")
}

/// Writes the predicted radiance as PFM and a μ-law PPM preview.
pub fn cmd_infer(ckpt: &Path, stack_dir: &Path, out: &Path) -> Result<HdrImage> {
    let (net, params) = load_model(ckpt)?;
    let stack = read_stack(stack_dir)?;
    let hdr = net.infer(&params, &stack)?;
    write_pfm(out, hdr.radiance())?;
    let preview = mu_law_tonemap(hdr.radiance(), DEFAULT_MU)?.image;
    write_ppm(&preview_path(out), &preview)?;
    Ok(hdr)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub sample: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub samples: Vec<EvalRow>,
    pub mean: MetricReport,
}

impl EvalReport {
    pub fn from_rows(samples: Vec<EvalRow>) -> Result<Self> {
        let reports: Vec<MetricReport> = samples.iter().map(|r| r.metrics).collect();
        Ok(Self {
            mean: MetricReport::mean(&reports)?,
            samples,
        })
    }

    pub fn table(&self) -> String {
        let width = self.samples.iter().map(|r| r.sample.len()).max().unwrap_or(0).max(6);
        let mut s = format!(
            "{:<width$}  {:>10}  {:>10}  {:>8}  {:>8}\n",
            "sample", "PSNR-mu", "PSNR-L", "SSIM-mu", "SSIM-L"
        );
        let mut row = |name: &str, m: &MetricReport| {
            let _ = writeln!(
                s,
                "{name:<width$}  {:>10}  {:>10}  {:>8.4}  {:>8.4}",
                m.psnr_mu.to_string(),
                m.psnr_l.to_string(),
                m.ssim_mu,
                m.ssim_l
            );
        };
        for r in &self.samples {
            row(&r.sample, &r.metrics);
        }
        row("mean", &self.mean);
        s
    }
}

/// Runs the checkpoint on every sample and scores it against the ground truth.
pub fn cmd_eval(ckpt: &Path, data: &Path) -> Result<EvalReport> {
    let (net, params) = load_model(ckpt)?;
    let rows = load_dataset(data)?
        .into_iter()
        .map(|(name, s)| {
            let pred = net.infer(&params, &s.stack)?;
            Ok(EvalRow {
                sample: name,
                metrics: evaluate_pair(&pred, &s.gt)?,
            })
        })
        .collect::<Result<_>>()?;
    EvalReport::from_rows(rows)
}

/// Scores the ground truth against itself; a sanity check of the data.
pub fn eval_identity(data: &Path) -> Result<EvalReport> {
    let rows = load_dataset(data)?
        .into_iter()
        .map(|(name, s)| {
            Ok(EvalRow {
                sample: name,
                metrics: evaluate_pair(&s.gt, &s.gt)?,
            })
        })
        .collect::<Result<_>>()?;
    EvalReport::from_rows(rows)
}
