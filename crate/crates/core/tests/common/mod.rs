//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use rand::Rng as _;

use hyhdr_core::hdr::{compute_loss, PerceptualExtractor};
use hyhdr_core::model::alignment::{gating_fuse, ghost_attention, patch_aggregate, project, Projected};
use hyhdr_core::model::fusion::{rdtb_block, stl_layer, wdtl_attention, wdtl_layer};
use hyhdr_core::model::{window_attention, Bound, HyHdrNet, ModelConfig, ParamStore, PositionBias, Trace};
use hyhdr_core::rng;
use hyhdr_core::tensor::{
    grad_check_report, relative_position_index, shifted_window_mask, Graph, Tensor, Var, WindowGrid,
};
use hyhdr_core::Result;

pub const GRAD_TOL: f64 = 1e-4;

pub fn uniform(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(dims, |_| r.random_range(lo..hi))
}

/// Values in `±[0.2, 1]`, away from kinks at zero.
pub fn signed_away_from_zero(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(dims, |_| {
        let m = r.random_range(0.2..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `y` to a scalar with fixed random weights so that every output
/// element contributes a distinct gradient.
pub fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(uniform(g.dims(y), -1.0, 1.0, seed ^ 0x5eed));
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny()
}

pub fn model_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    HyHdrNet::new(cfg.clone()).expect("valid config").init_params(seed).cast()
}

/// Parameters whose names start with one of `prefixes`.
pub fn subset(store: &ParamStore<f64>, prefixes: &[&str]) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for (name, t) in store.iter() {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            out.insert(name, t.clone());
        }
    }
    out
}

type Body = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One differentiable computation with its named inputs.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<(String, Tensor<f64>)>,
    pub body: Body,
    pub samples: usize,
}

impl GradCase {
    fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        body: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            inputs: inputs.into_iter().enumerate().map(|(i, t)| (format!("arg{i}"), t)).collect(),
            body: Box::new(body),
            samples: 24,
        }
    }

    /// A model component evaluated with the parameters under `prefixes`,
    /// which are checked alongside the inputs.
    fn component(
        name: &'static str,
        store: &ParamStore<f64>,
        prefixes: &[&str],
        inputs: Vec<Tensor<f64>>,
        body: impl Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        let params = subset(store, prefixes);
        let n_in = inputs.len();
        let mut named: Vec<(String, Tensor<f64>)> =
            inputs.into_iter().enumerate().map(|(i, t)| (format!("arg{i}"), t)).collect();
        named.extend(params.iter().map(|(n, t)| (n.to_string(), t.clone())));
        Self {
            name,
            inputs: named,
            body: Box::new(move |g, v| {
                let bound = params.bound_from(&v[n_in..])?;
                body(g, &bound, &v[..n_in])
            }),
            samples: 6,
        }
    }

    /// Worst relative error between tape and central-difference gradients.
    pub fn run(&self) -> Result<f64> {
        let named: Vec<(&str, Tensor<f64>)> = self.inputs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        Ok(grad_check_report(&self.body, &named, self.samples)?.max_error())
    }
}

fn unary(name: &'static str, x: Tensor<f64>, op: fn(&mut Graph<f64>, Var) -> Result<Var>) -> GradCase {
    GradCase::new(name, vec![x], move |g, v| {
        let y = op(g, v[0])?;
        probe(g, y, 1)
    })
}

/// Every differentiable operator on the tape.
pub fn op_cases() -> Vec<GradCase> {
    let x = |seed| uniform(&[3, 4, 2], -1.0, 1.0, seed);
    let mut cases = vec![
        GradCase::new("add", vec![x(1), x(2)], |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, 1)
        }),
        GradCase::new("sub", vec![x(3), x(4)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            probe(g, y, 1)
        }),
        GradCase::new("mul", vec![x(5), x(6)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y, 1)
        }),
        unary("scale", x(7), |g, v| g.scale(v, -1.7)),
        GradCase::new("add_channel", vec![x(8), uniform(&[2], -1.0, 1.0, 9)], |g, v| {
            let y = g.add_channel(v[0], v[1])?;
            probe(g, y, 1)
        }),
        GradCase::new("mul_channel", vec![x(10), uniform(&[2], -1.0, 1.0, 11)], |g, v| {
            let y = g.mul_channel(v[0], v[1])?;
            probe(g, y, 1)
        }),
        unary("sigmoid", uniform(&[3, 4, 2], -4.0, 4.0, 12), |g, v| g.sigmoid(v)),
        unary("gelu", uniform(&[3, 4, 2], -3.0, 3.0, 13), |g, v| g.gelu(v)),
        unary("abs", signed_away_from_zero(&[3, 4, 2], 14), |g, v| g.abs(v)),
        unary("mu_law", uniform(&[3, 4, 2], 0.05, 0.95, 15), |g, v| g.mu_law(v, 5000.0)),
        unary("sum", x(16), |g, v| {
            let s = g.sum(v)?;
            g.mul(s, s)
        }),
        unary("mean", x(17), |g, v| {
            let s = g.mean(v)?;
            g.mul(s, s)
        }),
        unary("reshape", x(18), |g, v| g.reshape(v, &[4, 6])),
        GradCase::new("concat_channels", vec![x(19), uniform(&[3, 4, 3], -1.0, 1.0, 20)], |g, v| {
            let y = g.concat_channels(&[v[0], v[1]])?;
            probe(g, y, 1)
        }),
        unary("slice_channels", uniform(&[3, 4, 5], -1.0, 1.0, 21), |g, v| g.slice_channels(v, 1, 3)),
        unary("global_avg_pool", x(22), |g, v| g.global_avg_pool(v)),
        unary("avg_pool2", uniform(&[4, 6, 2], -1.0, 1.0, 23), |g, v| g.avg_pool2(v)),
        GradCase::new(
            "linear",
            vec![
                uniform(&[3, 4, 5], -1.0, 1.0, 24),
                uniform(&[5, 3], -1.0, 1.0, 25),
                uniform(&[3], -1.0, 1.0, 26),
            ],
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                probe(g, y, 1)
            },
        ),
        GradCase::new(
            "linear_no_bias",
            vec![uniform(&[6, 5], -1.0, 1.0, 27), uniform(&[5, 2], -1.0, 1.0, 28)],
            |g, v| {
                let y = g.linear(v[0], v[1], None)?;
                probe(g, y, 1)
            },
        ),
        GradCase::new(
            "bmm",
            vec![uniform(&[2, 3, 4], -1.0, 1.0, 29), uniform(&[2, 4, 5], -1.0, 1.0, 30)],
            |g, v| {
                let y = g.bmm(v[0], v[1], false)?;
                probe(g, y, 1)
            },
        ),
        GradCase::new(
            "bmm_transposed",
            vec![uniform(&[2, 3, 4], -1.0, 1.0, 31), uniform(&[2, 5, 4], -1.0, 1.0, 32)],
            |g, v| {
                let y = g.bmm(v[0], v[1], true)?;
                probe(g, y, 1)
            },
        ),
        unary("split_heads", uniform(&[2, 3, 4], -1.0, 1.0, 33), |g, v| g.split_heads(v, 2)),
        unary("merge_heads", uniform(&[4, 3, 2], -1.0, 1.0, 34), |g, v| g.merge_heads(v, 2)),
    ];
    for (name, stride, pad, k) in [
        ("conv2d", 1, 1, 3),
        ("conv2d_stride2", 2, 1, 3),
        ("conv2d_1x1", 1, 0, 1),
    ] {
        cases.push(GradCase::new(
            name,
            vec![
                uniform(&[5, 6, 2], -1.0, 1.0, 35),
                uniform(&[k, k, 2, 3], -1.0, 1.0, 36),
                uniform(&[3], -1.0, 1.0, 37),
            ],
            move |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                probe(g, y, 1)
            },
        ));
    }
    cases.extend([
        GradCase::new(
            "depthwise_conv2d",
            vec![
                uniform(&[5, 6, 3], -1.0, 1.0, 38),
                uniform(&[3, 3, 3], -1.0, 1.0, 39),
                uniform(&[3], -1.0, 1.0, 40),
            ],
            |g, v| {
                let y = g.depthwise_conv2d(v[0], v[1], v[2])?;
                probe(g, y, 1)
            },
        ),
        unary("softmax", uniform(&[2, 3, 5], -2.0, 2.0, 41), |g, v| g.softmax_lastdim(v)),
        GradCase::new(
            "layer_norm",
            vec![
                uniform(&[3, 4, 5], -1.0, 1.0, 42),
                uniform(&[5], 0.5, 1.5, 43),
                uniform(&[5], -0.5, 0.5, 44),
            ],
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                probe(g, y, 1)
            },
        ),
        unary("window_partition", uniform(&[5, 6, 2], -1.0, 1.0, 45), |g, v| {
            let grid = WindowGrid::new(5, 6, 4, 2)?;
            g.window_partition(v, &grid)
        }),
        unary("window_reverse", uniform(&[4, 16, 2], -1.0, 1.0, 46), |g, v| {
            let grid = WindowGrid::new(5, 6, 4, 2)?;
            g.window_reverse(v, &grid, 5, 6)
        }),
        unary("reflect_pad", uniform(&[3, 4, 2], -1.0, 1.0, 47), |g, v| g.reflect_pad(v, 2, 3)),
        GradCase::new(
            "attention_bias",
            vec![uniform(&[8, 4, 4], -1.0, 1.0, 48), uniform(&[9, 2], -1.0, 1.0, 49)],
            |g, v| {
                let grid = WindowGrid::new(4, 4, 2, 1)?;
                let mask = shifted_window_mask::<f64>(&grid);
                let index = relative_position_index(2);
                let y = g.attention_bias(v[0], v[1], &index, 2, mask.as_ref())?;
                probe(g, y, 1)
            },
        ),
        GradCase::new(
            "bilinear_sample",
            vec![uniform(&[5, 6, 2], -1.0, 1.0, 50), fractional_points(7, 5, 6, 51)],
            |g, v| {
                let y = g.bilinear_sample(v[0], v[1])?;
                probe(g, y, 1)
            },
        ),
        GradCase::new(
            "loss",
            vec![uniform(&[8, 8, 3], 0.05, 0.95, 52)],
            |g, v| {
                let target = g.constant(uniform(&[8, 8, 3], 0.05, 0.95, 53));
                Ok(compute_loss(g, v[0], target, &PerceptualExtractor::new(), 1e-2)?.total)
            },
        ),
    ]);
    cases
}

/// Sample points with fractional parts in `[0.2, 0.8]`, inside the map.
pub fn fractional_points(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(&[n, 2], |i| {
        let extent = if i % 2 == 0 { h } else { w };
        r.random_range(0..extent - 1) as f64 + r.random_range(0.2..0.8)
    })
}

fn stl_config() -> ModelConfig {
    ModelConfig {
        window: 4,
        ..tiny_config()
    }
}

/// Alignment and fusion components of the tiny model.
pub fn component_cases() -> Vec<GradCase> {
    let cfg = stl_config();
    let store = model_params(&cfg, 3);
    let c = cfg.channels;
    let feat = |seed| uniform(&[6, 6, c], -1.0, 1.0, seed);
    let mut cases = Vec::new();

    cases.push(GradCase::new(
        "window_attention",
        vec![
            uniform(&[2, 4, 4], -1.0, 1.0, 60),
            uniform(&[2, 4, 4], -1.0, 1.0, 61),
            uniform(&[2, 4, 4], -1.0, 1.0, 62),
            uniform(&[9, 2], -1.0, 1.0, 63),
        ],
        |g, v| {
            let index = relative_position_index(2);
            let bias = PositionBias {
                table: v[3],
                index: &index,
                mask: None,
            };
            let (y, _) = window_attention(g, v[0], v[1], v[2], 2, Some(bias))?;
            probe(g, y, 1)
        },
    ));
    let pa_cfg = ModelConfig { pa_window: 4, ..cfg.clone() };
    for shifted in [false, true] {
        let pa_cfg = pa_cfg.clone();
        cases.push(GradCase::component(
            if shifted { "patch_aggregate_shifted" } else { "patch_aggregate" },
            &store,
            &["align.wq", "align.wk", "align.wv", "align.pa"],
            vec![feat(64), feat(65)],
            move |g, p, v| {
                let proj = project(g, p, v[0], v[1])?;
                let (y, _) = patch_aggregate(g, p, &pa_cfg, proj, shifted)?;
                probe(g, y, 1)
            },
        ));
    }
    cases.push(GradCase::component(
        "ghost_attention",
        &store,
        &["align.wq", "align.wk", "align.wv", "align.ga"],
        vec![feat(66), feat(67)],
        |g, p, v| {
            let proj: Projected = project(g, p, v[0], v[1])?;
            let (y, _) = ghost_attention(g, p, proj)?;
            probe(g, y, 1)
        },
    ));
    cases.push(GradCase::component(
        "gating_fuse",
        &store,
        &["align.gate"],
        vec![feat(68), feat(69)],
        |g, p, v| {
            let y = gating_fuse(g, p, v[0], v[1])?;
            probe(g, y, 1)
        },
    ));
    for (name, shift) in [("stl", 0), ("stl_shifted", 2)] {
        let cfg = cfg.clone();
        cases.push(GradCase::component(
            name,
            &store,
            &["fusion.rdtb.0.stl.0."],
            vec![uniform(&[6, 7, c], -1.0, 1.0, 70)],
            move |g, p, v| {
                let y = stl_layer(g, p, &cfg, "fusion.rdtb.0.stl.0", v[0], shift, &mut Trace::default())?;
                probe(g, y, 1)
            },
        ));
    }
    let wdtl_cfg = cfg.clone();
    cases.push(GradCase::component(
        "wdtl",
        &store,
        &["fusion.rdtb.0.wdtl."],
        vec![uniform(&[6, 7, c], -1.0, 1.0, 71)],
        move |g, p, v| {
            let y = wdtl_layer(g, p, &wdtl_cfg, "fusion.rdtb.0.wdtl", v[0], &mut Trace::default())?;
            probe(g, y, 1)
        },
    ));
    let rdtb_cfg = cfg.clone();
    let mut rdtb = GradCase::component(
        "rdtb",
        &store,
        &["fusion.rdtb.0."],
        vec![uniform(&[6, 6, c], -1.0, 1.0, 72)],
        move |g, p, v| {
            let y = rdtb_block(g, p, &rdtb_cfg, "fusion.rdtb.0", v[0], &mut Trace::default())?;
            probe(g, y, 1)
        },
    );
    rdtb.samples = 3;
    cases.push(rdtb);
    cases
}

/// Distance from the nearest integer over every deformable sampling
/// coordinate of a forward pass. Bilinear sampling is only piecewise
/// differentiable, with kinks at integer coordinates.
pub fn sampling_margin(net: &HyHdrNet, params: &ParamStore<f64>, inputs: &[Tensor<f64>; 3]) -> f64 {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let (_, trace) = net.forward(&mut g, &p, inputs).expect("forward");
    trace
        .wdtl_offsets
        .iter()
        .flat_map(|&o| g.value(o).data().to_vec())
        .map(|v| (v - v.round()).abs())
        .fold(f64::INFINITY, f64::min)
}

/// The tiny model (width 8, one block of two Swin layers) on a 16x16 input,
/// through the full training loss, checked against every parameter tensor.
/// The initialization seed is the first one whose sampling points keep
/// `1e-3` away from integer coordinates.
pub fn end_to_end_case() -> GradCase {
    let cfg = tiny_config();
    let net = HyHdrNet::new(cfg.clone()).expect("tiny config");
    let inputs: [Tensor<f64>; 3] = [
        uniform(&[16, 16, 6], 0.0, 1.0, 80),
        uniform(&[16, 16, 6], 0.0, 1.0, 81),
        uniform(&[16, 16, 6], 0.0, 1.0, 82),
    ];
    let store = (5..)
        .map(|seed| model_params(&cfg, seed))
        .find(|store| sampling_margin(&net, store, &inputs) > 1e-3)
        .expect("some seed");
    let target = uniform(&[16, 16, 3], 0.05, 0.95, 83);
    let mut case = GradCase::component("end_to_end", &store, &[""], Vec::new(), move |g, p, _| {
        let (pred, _) = net.forward(g, p, &inputs)?;
        let t = g.constant(target.clone());
        Ok(compute_loss(g, pred, t, &PerceptualExtractor::new(), 1e-2)?.total)
    });
    case.samples = 3;
    case
}

/// Direct implementation of unshifted single-head window attention with
/// reflect padding, used as an oracle for the deformable layer at zero
/// offset.
pub fn naive_window_attention(
    x: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    window: usize,
) -> Tensor<f64> {
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let d = wq.dims()[1];
    let mirror = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let m = i % (2 * (n - 1));
        if m < n {
            m
        } else {
            2 * (n - 1) - m
        }
    };
    let ph = h.div_ceil(window) * window;
    let pw = w.div_ceil(window) * window;
    let project = |y: usize, xx: usize, m: &Tensor<f64>| -> Vec<f64> {
        let (sy, sx) = (mirror(y, h), mirror(xx, w));
        (0..d)
            .map(|o| (0..c).map(|i| x.at(&[sy, sx, i]) * m.at(&[i, o])).sum())
            .collect()
    };
    let mut out = Tensor::zeros(&[h, w, d]);
    for wy in (0..ph).step_by(window) {
        for wx in (0..pw).step_by(window) {
            let tokens: Vec<(usize, usize)> = (0..window * window)
                .map(|t| (wy + t / window, wx + t % window))
                .collect();
            let ks: Vec<Vec<f64>> = tokens.iter().map(|&(y, xx)| project(y, xx, wk)).collect();
            let vs: Vec<Vec<f64>> = tokens.iter().map(|&(y, xx)| project(y, xx, wv)).collect();
            for &(y, xx) in &tokens {
                if y >= h || xx >= w {
                    continue;
                }
                let q = project(y, xx, wq);
                let logits: Vec<f64> = ks
                    .iter()
                    .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for o in 0..d {
                    let v: f64 = e.iter().zip(&vs).map(|(a, v)| a * v[o]).sum::<f64>() / z;
                    out.data_mut()[(y * w + xx) * d + o] = v;
                }
            }
        }
    }
    out
}

/// Runs the deformable layer with a zeroed offset network on `n` random
/// configurations (32-bit) and returns the largest deviation from
/// [`naive_window_attention`] (64-bit) for each.
pub fn zero_offset_trials(n: usize) -> Vec<(String, f64)> {
    let mut r = rng::seeded(2024);
    (0..n)
        .map(|trial| {
            let window = [2, 4, 8][trial % 3];
            let channels = [4, 8, 12][(trial / 3) % 3];
            let (h, w) = (r.random_range(3..14), r.random_range(3..14));
            let cfg = ModelConfig {
                channels,
                attn_dim: channels,
                heads: 1,
                window,
                pa_window: window,
                ..ModelConfig::tiny()
            };
            let mut params = model_params(&cfg, trial as u64);
            params.zero_prefix("fusion.rdtb.0.wdtl.offset.");
            let x = uniform(&[h, w, channels], -1.0, 1.0, 100 + trial as u64);
            let want = naive_window_attention(
                &x,
                params.get("fusion.rdtb.0.wdtl.wq.w").unwrap(),
                params.get("fusion.rdtb.0.wdtl.wk.w").unwrap(),
                params.get("fusion.rdtb.0.wdtl.wv.w").unwrap(),
                window,
            );
            let p32: ParamStore<f32> = params.cast();
            let mut g = Graph::<f32>::new();
            let p = p32.bind_frozen(&mut g);
            let xv = g.constant(x.cast());
            let y = wdtl_attention(&mut g, &p, &cfg, "fusion.rdtb.0.wdtl", xv, &mut Trace::default()).unwrap();
            let got: Tensor<f64> = g.value(y).cast();
            (format!("{h}x{w}, C={channels}, M={window}"), got.max_abs_diff(&want))
        })
        .collect()
}
