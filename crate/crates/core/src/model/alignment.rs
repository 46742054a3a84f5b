//! Shallow encoders, patch aggregation, ghost attention and the gating module.

use super::attention::{window_attention, PositionBias};
use super::{AlignmentMode, Bound, ModelConfig, Trace};
use crate::error::{Error, Result};
use crate::hdr::NUM_FRAMES;
use crate::tensor::{relative_position_index, shifted_window_mask, Graph, Real, Var, WindowGrid};

/// Per-frame conv stack `e_i`.
pub fn shallow_encode<T: Real>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, x: Var, frame: usize) -> Result<Var> {
    if !(1..=NUM_FRAMES).contains(&frame) {
        return Err(Error::config(format!("frame index {frame} outside 1..={NUM_FRAMES}")));
    }
    let mut h = x;
    for layer in 0..cfg.encoder_depth {
        if layer > 0 {
            h = g.gelu(h)?;
        }
        let prefix = format!("enc.{frame}.{layer}");
        h = g.conv2d(h, p.get(&format!("{prefix}.w"))?, p.get(&format!("{prefix}.b"))?, 1, 1)?;
    }
    Ok(h)
}

/// Reference queries with one frame's keys and values, all from the shared
/// projections.
#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

pub fn project<T: Real>(g: &mut Graph<T>, p: &Bound, f_r: Var, f_i: Var) -> Result<Projected> {
    if g.dims(f_r) != g.dims(f_i) {
        return Err(Error::shape(format!(
            "reference features {:?} vs frame features {:?}",
            g.dims(f_r),
            g.dims(f_i)
        )));
    }
    Ok(Projected {
        q: g.linear(f_r, p.get("align.wq.w")?, None)?,
        k: g.linear(f_i, p.get("align.wk.w")?, None)?,
        v: g.linear(f_i, p.get("align.wv.w")?, None)?,
    })
}

/// One windowed cross-attention pass. Returns the aggregated map and the
/// attention map `[nWin * heads, N, N]`.
pub fn patch_aggregate<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    proj: Projected,
    shifted: bool,
) -> Result<(Var, Var)> {
    let (h, w) = (g.dims(proj.q)[0], g.dims(proj.q)[1]);
    let m = cfg.pa_window;
    let grid = WindowGrid::new(h, w, m, if shifted { m / 2 } else { 0 })?;
    let q = g.window_partition(proj.q, &grid)?;
    let k = g.window_partition(proj.k, &grid)?;
    let v = g.window_partition(proj.v, &grid)?;
    let index = relative_position_index(m);
    let mask = shifted_window_mask::<T>(&grid);
    let bias = PositionBias {
        table: p.get("align.pa.bias_table")?,
        index: &index,
        mask: mask.as_ref(),
    };
    let (out, attn) = window_attention(g, q, k, v, cfg.pa_heads, Some(bias))?;
    Ok((g.window_reverse(out, &grid, h, w)?, attn))
}

/// Mean of an unshifted and a half-window-shifted aggregation.
fn patch_aggregate_both<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    proj: Projected,
    trace: &mut Trace,
) -> Result<Var> {
    let (a, attn_a) = patch_aggregate(g, p, cfg, proj, false)?;
    let (b, attn_b) = patch_aggregate(g, p, cfg, proj, true)?;
    trace.pa_attn.extend([attn_a, attn_b]);
    let sum = g.add(a, b)?;
    g.scale(sum, 0.5)
}

/// `v_i * sigmoid(conv(concat(q, k_i)))`; also returns the attention map.
pub fn ghost_attention<T: Real>(g: &mut Graph<T>, p: &Bound, proj: Projected) -> Result<(Var, Var)> {
    let qk = g.concat_channels(&[proj.q, proj.k])?;
    let logits = g.conv2d(qk, p.get("align.ga.conv.w")?, p.get("align.ga.conv.b")?, 1, 1)?;
    let a = g.sigmoid(logits)?;
    Ok((g.mul(proj.v, a)?, a))
}

fn gate<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let y = g.conv2d(x, p.get("align.gate.phi.w")?, p.get("align.gate.phi.b")?, 1, 1)?;
    g.sigmoid(y)
}

pub(crate) fn mlp<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = g.linear(x, p.get(&format!("{prefix}.fc1.w"))?, Some(p.get(&format!("{prefix}.fc1.b"))?))?;
    let h = g.gelu(h)?;
    g.linear(h, p.get(&format!("{prefix}.fc2.w"))?, Some(p.get(&format!("{prefix}.fc2.b"))?))
}

pub(crate) fn layer_norm<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    g.layer_norm(x, p.get(&format!("{prefix}.g"))?, p.get(&format!("{prefix}.b"))?, 1e-5)
}

/// Mutual gating of the two branches followed by `F + LN(MLP(F))`.
pub fn gating_fuse<T: Real>(g: &mut Graph<T>, p: &Bound, f_pa: Var, f_ga: Var) -> Result<Var> {
    if g.dims(f_pa) != g.dims(f_ga) {
        return Err(Error::shape(format!("gating: {:?} vs {:?}", g.dims(f_pa), g.dims(f_ga))));
    }
    let w1 = gate(g, p, f_pa)?;
    let w2 = gate(g, p, f_ga)?;
    let a = g.mul(f_ga, w1)?;
    let b = g.mul(f_pa, w2)?;
    let cat = g.concat_channels(&[a, b])?;
    let fused = g.conv2d(cat, p.get("align.gate.fuse.w")?, p.get("align.gate.fuse.b")?, 1, 1)?;
    let h = mlp(g, p, "align.gate.mlp", fused)?;
    let h = layer_norm(g, p, "align.gate.ln", h)?;
    g.add(fused, h)
}

fn align_frame<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    f_r: Var,
    f_i: Var,
    trace: &mut Trace,
) -> Result<Var> {
    let proj = project(g, p, f_r, f_i)?;
    match cfg.alignment {
        AlignmentMode::None => Ok(f_i),
        AlignmentMode::PatchOnly => patch_aggregate_both(g, p, cfg, proj, trace),
        AlignmentMode::GhostOnly => {
            let (out, a) = ghost_attention(g, p, proj)?;
            trace.ga_maps.push(a);
            Ok(out)
        }
        AlignmentMode::Gated => {
            let pa = patch_aggregate_both(g, p, cfg, proj, trace)?;
            let (ga, a) = ghost_attention(g, p, proj)?;
            trace.ga_maps.push(a);
            gating_fuse(g, p, pa, ga)
        }
    }
}

/// Encodes the three frames and aligns the non-reference ones to the
/// reference. Output is `H x W x C`.
pub fn align<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    inputs: [Var; NUM_FRAMES],
    trace: &mut Trace,
) -> Result<Var> {
    let f1 = shallow_encode(g, p, cfg, inputs[0], 1)?;
    let f2 = shallow_encode(g, p, cfg, inputs[1], 2)?;
    let f3 = shallow_encode(g, p, cfg, inputs[2], 3)?;
    let (o1, o3) = if cfg.alignment == AlignmentMode::None {
        (f1, f3)
    } else {
        (
            align_frame(g, p, cfg, f2, f1, trace)?,
            align_frame(g, p, cfg, f2, f3, trace)?,
        )
    };
    let cat = g.concat_channels(&[o1, f2, o3])?;
    g.conv2d(cat, p.get("align.reduce.w")?, p.get("align.reduce.b")?, 1, 0)
}
