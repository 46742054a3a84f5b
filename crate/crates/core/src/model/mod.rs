//! The deghosting network: content alignment followed by transformer fusion.

pub mod alignment;
mod attention;
pub mod fusion;
mod params;

pub use attention::{window_attention, PositionBias};
pub use params::{Bound, ParamStore};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr::{build_network_input, ExposureStack, HdrImage, NUM_FRAMES};
use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Which alignment branches feed the fusion network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Shallow features are concatenated without alignment.
    None,
    GhostOnly,
    PatchOnly,
    /// Patch aggregation and ghost attention combined by the gating module.
    #[default]
    Gated,
}

impl AlignmentMode {
    pub fn uses_patch(self) -> bool {
        matches!(self, Self::PatchOnly | Self::Gated)
    }

    pub fn uses_ghost(self) -> bool {
        matches!(self, Self::GhostOnly | Self::Gated)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub channels: usize,
    /// Width `d` of the shared query/key/value projections.
    pub attn_dim: usize,
    pub encoder_depth: usize,
    /// Patch size of the patch aggregation windows.
    pub pa_window: usize,
    pub pa_heads: usize,
    /// Window size of the Swin and deformable layers.
    pub window: usize,
    pub heads: usize,
    pub stl_per_rdtb: usize,
    pub rdtb_count: usize,
    pub mlp_ratio: usize,
    pub ca_reduction: usize,
    pub alignment: AlignmentMode,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            attn_dim: 16,
            encoder_depth: 1,
            pa_window: 8,
            pa_heads: 1,
            window: 8,
            heads: 2,
            stl_per_rdtb: 6,
            rdtb_count: 3,
            mlp_ratio: 2,
            ca_reduction: 4,
            alignment: AlignmentMode::Gated,
            gamma: crate::hdr::DEFAULT_GAMMA,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks and smoke training.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            attn_dim: 8,
            rdtb_count: 1,
            stl_per_rdtb: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("attn_dim", self.attn_dim),
            ("encoder_depth", self.encoder_depth),
            ("pa_window", self.pa_window),
            ("pa_heads", self.pa_heads),
            ("window", self.window),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("ca_reduction", self.ca_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.channels % self.heads != 0 {
            return Err(Error::config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.attn_dim % self.pa_heads != 0 {
            return Err(Error::config(format!(
                "attn_dim {} not divisible by pa_heads {}",
                self.attn_dim, self.pa_heads
            )));
        }
        if self.channels < self.ca_reduction {
            return Err(Error::config("ca_reduction exceeds channels"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma must be positive"));
        }
        Ok(())
    }

    pub(crate) fn ca_hidden(&self) -> usize {
        self.channels / self.ca_reduction
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    FanIn(usize),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    dims: Vec<usize>,
    init: Init,
}

fn conv(specs: &mut Vec<Spec>, prefix: &str, k: usize, cin: usize, cout: usize) {
    let fan_in = k * k * cin;
    specs.push(Spec { name: format!("{prefix}.w"), dims: vec![k, k, cin, cout], init: Init::FanIn(fan_in) });
    specs.push(Spec { name: format!("{prefix}.b"), dims: vec![cout], init: Init::FanIn(fan_in) });
}

fn linear(specs: &mut Vec<Spec>, prefix: &str, cin: usize, cout: usize, bias: bool) {
    specs.push(Spec { name: format!("{prefix}.w"), dims: vec![cin, cout], init: Init::FanIn(cin) });
    if bias {
        specs.push(Spec { name: format!("{prefix}.b"), dims: vec![cout], init: Init::Zeros });
    }
}

fn norm(specs: &mut Vec<Spec>, prefix: &str, c: usize) {
    specs.push(Spec { name: format!("{prefix}.g"), dims: vec![c], init: Init::Ones });
    specs.push(Spec { name: format!("{prefix}.b"), dims: vec![c], init: Init::Zeros });
}

fn mlp(specs: &mut Vec<Spec>, prefix: &str, c: usize, ratio: usize) {
    linear(specs, &format!("{prefix}.fc1"), c, c * ratio, true);
    linear(specs, &format!("{prefix}.fc2"), c * ratio, c, true);
}

fn table(specs: &mut Vec<Spec>, name: String, window: usize, heads: usize) {
    let span = 2 * window - 1;
    specs.push(Spec { name, dims: vec![span * span, heads], init: Init::Zeros });
}

fn param_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let (c, d) = (cfg.channels, cfg.attn_dim);
    let mut s = Vec::new();
    for frame in 1..=NUM_FRAMES {
        for layer in 0..cfg.encoder_depth {
            let cin = if layer == 0 { 6 } else { c };
            conv(&mut s, &format!("enc.{frame}.{layer}"), 3, cin, c);
        }
    }
    let mode = cfg.alignment;
    if mode != AlignmentMode::None {
        linear(&mut s, "align.wq", c, d, false);
        linear(&mut s, "align.wk", c, d, false);
        linear(&mut s, "align.wv", c, d, false);
    }
    if mode.uses_patch() {
        table(&mut s, "align.pa.bias_table".into(), cfg.pa_window, cfg.pa_heads);
    }
    if mode.uses_ghost() {
        conv(&mut s, "align.ga.conv", 3, 2 * d, d);
    }
    if mode == AlignmentMode::Gated {
        conv(&mut s, "align.gate.phi", 3, d, d);
        conv(&mut s, "align.gate.fuse", 3, 2 * d, c);
        mlp(&mut s, "align.gate.mlp", c, cfg.mlp_ratio);
        norm(&mut s, "align.gate.ln", c);
    }
    let aligned_width = match mode {
        AlignmentMode::None | AlignmentMode::Gated => c,
        AlignmentMode::PatchOnly | AlignmentMode::GhostOnly => d,
    };
    conv(&mut s, "align.reduce", 1, 2 * aligned_width + c, c);

    for r in 0..cfg.rdtb_count {
        for l in 0..cfg.stl_per_rdtb {
            let p = format!("fusion.rdtb.{r}.stl.{l}");
            norm(&mut s, &format!("{p}.ln1"), c);
            linear(&mut s, &format!("{p}.qkv"), c, 3 * c, true);
            linear(&mut s, &format!("{p}.proj"), c, c, true);
            table(&mut s, format!("{p}.bias_table"), cfg.window, cfg.heads);
            norm(&mut s, &format!("{p}.ln2"), c);
            mlp(&mut s, &format!("{p}.mlp"), c, cfg.mlp_ratio);
        }
        let p = format!("fusion.rdtb.{r}.wdtl");
        linear(&mut s, &format!("{p}.wq"), c, c, false);
        linear(&mut s, &format!("{p}.wk"), c, c, false);
        linear(&mut s, &format!("{p}.wv"), c, c, false);
        s.push(Spec { name: format!("{p}.offset.dw.w"), dims: vec![3, 3, c], init: Init::FanIn(9) });
        s.push(Spec { name: format!("{p}.offset.dw.b"), dims: vec![c], init: Init::FanIn(9) });
        linear(&mut s, &format!("{p}.offset.pw"), c, 2, true);
        norm(&mut s, &format!("{p}.ffn.ln"), c);
        mlp(&mut s, &format!("{p}.ffn.mlp"), c, cfg.mlp_ratio);
        linear(&mut s, &format!("{p}.ca.fc1"), c, cfg.ca_hidden(), true);
        linear(&mut s, &format!("{p}.ca.fc2"), cfg.ca_hidden(), c, true);
        conv(&mut s, &format!("{p}.ffn.conv"), 3, c, c);
        conv(&mut s, &format!("fusion.rdtb.{r}.conv"), 3, c, c);
    }
    conv(&mut s, "head", 3, c, 3);
    s
}

/// Parameter counts per top-level group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub tensors: usize,
    pub total: usize,
    pub groups: Vec<(String, usize)>,
}

impl std::fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, n) in &self.groups {
            writeln!(f, "{name:<28}{n:>10}")?;
        }
        write!(f, "{:<28}{:>10}  ({} tensors)", "total", self.total, self.tensors)
    }
}

/// Debug handles into a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Patch aggregation attention maps `[nWin * heads, N, N]`.
    pub pa_attn: Vec<Var>,
    /// Ghost attention maps `A_i`.
    pub ga_maps: Vec<Var>,
    pub stl_attn: Vec<Var>,
    pub wdtl_attn: Vec<Var>,
    pub wdtl_offsets: Vec<Var>,
    pub ca_scales: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct HyHdrNet {
    config: ModelConfig,
}

impl HyHdrNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut r = rng::seeded(rng::derive_seed(seed, "model-init"));
        let mut store = ParamStore::new();
        for spec in param_specs(&self.config) {
            let t = match spec.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(&spec.dims, |_| r.random_range(-bound..bound) as f32)
                }
                Init::Zeros => Tensor::zeros(&spec.dims),
                Init::Ones => Tensor::full(&spec.dims, 1.0),
            };
            store.insert(spec.name, t);
        }
        store
    }

    /// Checks that a parameter store has exactly this model's tensors.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let specs = param_specs(&self.config);
        if specs.len() != params.len() {
            return Err(Error::config(format!(
                "model expects {} parameter tensors, store has {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in specs {
            let t = params.get(&spec.name)?;
            if t.dims() != spec.dims.as_slice() {
                return Err(Error::shape(format!(
                    "parameter `{}` has dims {:?}, expected {:?}",
                    spec.name,
                    t.dims(),
                    spec.dims
                )));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> ModelSummary {
        let specs = param_specs(&self.config);
        let mut groups: Vec<(String, usize)> = Vec::new();
        for spec in &specs {
            let parts: Vec<&str> = spec.name.split('.').collect();
            let key = match parts[0] {
                "fusion" => parts[..3].join("."),
                "align" => parts[..2].join("."),
                other => other.to_string(),
            };
            let n: usize = spec.dims.iter().product();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, total)) => *total += n,
                None => groups.push((key, n)),
            }
        }
        ModelSummary {
            tensors: specs.len(),
            total: groups.iter().map(|(_, n)| n).sum(),
            groups,
        }
    }

    /// Full forward pass on prepared 6-channel inputs; returns the `H x W x 3`
    /// prediction in `[0, 1]` and debug handles.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, inputs: &[Tensor<T>; NUM_FRAMES]) -> Result<(Var, Trace)> {
        let mut trace = Trace::default();
        let xs = [
            g.constant(inputs[0].clone()),
            g.constant(inputs[1].clone()),
            g.constant(inputs[2].clone()),
        ];
        let aligned = alignment::align(g, p, &self.config, xs, &mut trace)?;
        let mut f = aligned;
        for r in 0..self.config.rdtb_count {
            f = fusion::rdtb_block(g, p, &self.config, &format!("fusion.rdtb.{r}"), f, &mut trace)?;
        }
        let y = g.conv2d(f, p.get("head.w")?, p.get("head.b")?, 1, 1)?;
        Ok((g.sigmoid(y)?, trace))
    }

    pub fn prepare_inputs<T: Real>(&self, stack: &ExposureStack) -> Result<[Tensor<T>; NUM_FRAMES]> {
        let [a, b, c] = build_network_input(stack, self.config.gamma)?;
        Ok([a.cast(), b.cast(), c.cast()])
    }

    /// Inference without recording gradients.
    pub fn infer(&self, params: &ParamStore<f32>, stack: &ExposureStack) -> Result<HdrImage> {
        let mut g = Graph::<f32>::new();
        let p = params.bind_frozen(&mut g);
        let inputs = self.prepare_inputs(stack)?;
        let (out, _) = self.forward(&mut g, &p, &inputs)?;
        let radiance = g.value(out).clone();
        HdrImage::new(radiance)
    }
}
