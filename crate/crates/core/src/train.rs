//! Adam, the learning-rate schedule and the training loop.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::hdr::{compute_loss, PerceptualExtractor, DEFAULT_LAMBDA, NUM_FRAMES};
use crate::io::Checkpoint;
use crate::model::{HyHdrNet, ModelConfig, ParamStore};
use crate::rng;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `lr_decay` every `decay_epochs` epochs.
    pub lr_decay: f64,
    pub decay_epochs: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub crop: usize,
    pub stride: usize,
    pub lambda: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch: 4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 0.1,
            decay_epochs: 50,
            epochs: 5,
            max_steps: None,
            crop: 128,
            stride: 64,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.lr > 0.0, "lr must be positive"),
            (self.batch > 0, "batch must be positive"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)"),
            (self.eps > 0.0, "eps must be positive"),
            (self.lr_decay > 0.0, "lr_decay must be positive"),
            (self.decay_epochs > 0, "decay_epochs must be positive"),
            (self.epochs > 0, "epochs must be positive"),
            (self.crop > 0 && self.stride > 0, "crop and stride must be positive"),
            (self.lambda >= 0.0, "lambda must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        self.model.validate()
    }

    /// `lr * lr_decay^floor(epoch / decay_epochs)`
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_epochs) as i32)
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &ParamStore<f32>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::config("Adam steps count from 1"));
    }
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::Numeric {
                op: format!("adam_step: gradient of `{name}`"),
            });
        }
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let m_iter = state.m.iter_mut();
    let v_iter = state.v.iter_mut();
    for ((((name, p), (_, m)), (_, v)), (_, g)) in params.iter_mut().zip(m_iter).zip(v_iter).zip(grads.iter()) {
        if p.dims() != g.dims() {
            return Err(Error::shape(format!("gradient for `{name}` has dims {:?}", g.dims())));
        }
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub total: f64,
    pub l1_term: f64,
    pub perceptual_term: f64,
    pub lr: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,total,l1_term,perceptual_term,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.step, self.total, self.l1_term, self.perceptual_term, self.lr
        )
    }
}

struct Prepared {
    inputs: [Tensor<f32>; NUM_FRAMES],
    gt: Tensor<f32>,
}

pub struct Trainer {
    net: HyHdrNet,
    cfg: TrainConfig,
    params: ParamStore<f32>,
    adam: AdamState,
    step: u64,
    data: Vec<Prepared>,
    extractor: PerceptualExtractor,
}

impl Trainer {
    /// Fresh parameters from `cfg.seed`. `crops` are the training patches.
    pub fn new(cfg: TrainConfig, crops: &[Sample]) -> Result<Self> {
        cfg.validate()?;
        let net = HyHdrNet::new(cfg.model.clone())?;
        let params = net.init_params(cfg.seed);
        let adam = AdamState::new(&params);
        Self::assemble(net, cfg, params, adam, 0, crops)
    }

    pub fn resume(ckpt: Checkpoint, crops: &[Sample]) -> Result<Self> {
        ckpt.config.validate()?;
        let net = HyHdrNet::new(ckpt.config.model.clone())?;
        net.check_params(&ckpt.params)?;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(&ckpt.params));
        Self::assemble(net, ckpt.config, ckpt.params, adam, ckpt.step, crops)
    }

    fn assemble(
        net: HyHdrNet,
        cfg: TrainConfig,
        params: ParamStore<f32>,
        adam: AdamState,
        step: u64,
        crops: &[Sample],
    ) -> Result<Self> {
        if crops.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let data = crops
            .iter()
            .map(|s| {
                Ok(Prepared {
                    inputs: net.prepare_inputs(&s.stack)?,
                    gt: s.gt.radiance().clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            net,
            cfg,
            params,
            adam,
            step,
            data,
            extractor: PerceptualExtractor::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn net(&self) -> &HyHdrNet {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.cfg.batch) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.steps_per_epoch() * self.cfg.epochs as u64;
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    fn batch_indices(&self, step: u64) -> (usize, Vec<usize>) {
        let spe = self.steps_per_epoch();
        let epoch = (step / spe) as usize;
        let pos = (step % spe) as usize;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        let mut r = rng::seeded(rng::derive_seed(self.cfg.seed, &format!("shuffle-{epoch}")));
        order.shuffle(&mut r);
        let end = ((pos + 1) * self.cfg.batch).min(order.len());
        (epoch, order[pos * self.cfg.batch..end].to_vec())
    }

    /// Gradient and loss terms of one prepared crop.
    fn item_gradient(&self, item: &Prepared) -> Result<(ParamStore<f32>, [f64; 3])> {
        let mut g = Graph::<f32>::new();
        let bound = self.params.bind(&mut g);
        let (pred, _) = self.net.forward(&mut g, &bound, &item.inputs)?;
        let target = g.constant(item.gt.clone());
        let terms = compute_loss(&mut g, pred, target, &self.extractor, self.cfg.lambda)?;
        let mut grads = g.backward(terms.total)?;
        let values = [
            g.value(terms.total).data()[0] as f64,
            g.value(terms.l1).data()[0] as f64,
            terms.perceptual.map_or(0.0, |v| g.value(v).data()[0] as f64),
        ];
        Ok((self.params.collect_grads(&bound, &mut grads), values))
    }

    /// Runs one optimizer step and returns its log line.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let (epoch, batch) = self.batch_indices(self.step);
        let mut acc = self.params.zeros_like();
        let mut sums = [0.0; 3];
        for &i in &batch {
            let (grads, values) = self.item_gradient(&self.data[i])?;
            for ((_, a), (_, g)) in acc.iter_mut().zip(grads.iter()) {
                a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
            }
            sums.iter_mut().zip(values).for_each(|(s, v)| *s += v);
        }
        let inv = 1.0 / batch.len() as f32;
        for (_, a) in acc.iter_mut() {
            a.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        let lr = self.cfg.lr_at_epoch(epoch);
        self.step += 1;
        adam_step(&mut self.params, &acc, &mut self.adam, &self.cfg, lr, self.step)?;
        let n = batch.len() as f64;
        let log = StepLog {
            step: self.step,
            total: sums[0] / n,
            l1_term: sums[1] / n,
            perceptual_term: sums[2] / n,
            lr,
        };
        debug!("step {} loss {:.6}", log.step, log.total);
        Ok(log)
    }

    /// Trains until the configured step budget is spent.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<()> {
        info!(
            "training {} crops, {} steps per epoch, {} steps total",
            self.data.len(),
            self.steps_per_epoch(),
            self.total_steps()
        );
        while !self.is_done() {
            let log = self.train_step()?;
            on_step(&log)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            config: self.cfg.clone(),
            step: self.step,
            adam: Some(self.adam.clone()),
        }
    }
}
