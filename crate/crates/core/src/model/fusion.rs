//! Swin layers, the window-based deformable layer and the residual blocks.

use super::alignment::{layer_norm, mlp};
use super::attention::{window_attention, PositionBias};
use super::{Bound, ModelConfig, Trace};
use crate::error::Result;
use crate::tensor::{relative_position_index, shifted_window_mask, Graph, Real, Tensor, Var, WindowGrid};

fn param<T: Real>(p: &Bound, prefix: &str, name: &str) -> Result<Var> {
    p.get(&format!("{prefix}.{name}"))
}

fn hw<T: Real>(g: &Graph<T>, x: Var) -> (usize, usize, usize) {
    let d = g.dims(x);
    (d[0], d[1], d[2])
}

/// Pre-norm windowed multi-head self-attention block with an MLP.
pub fn stl_layer<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    shift: usize,
    trace: &mut Trace,
) -> Result<Var> {
    let (h, w, c) = hw(g, x);
    let grid = WindowGrid::new(h, w, cfg.window, shift)?;
    let normed = layer_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let qkv = g.linear(normed, param::<T>(p, prefix, "qkv.w")?, Some(param::<T>(p, prefix, "qkv.b")?))?;
    let mut parts = [qkv; 3];
    for (i, part) in parts.iter_mut().enumerate() {
        let s = g.slice_channels(qkv, i * c, c)?;
        *part = g.window_partition(s, &grid)?;
    }
    let index = relative_position_index(cfg.window);
    let mask = shifted_window_mask::<T>(&grid);
    let bias = PositionBias {
        table: param::<T>(p, prefix, "bias_table")?,
        index: &index,
        mask: mask.as_ref(),
    };
    let (attn_out, attn) = window_attention(g, parts[0], parts[1], parts[2], cfg.heads, Some(bias))?;
    trace.stl_attn.push(attn);
    let attn_out = g.window_reverse(attn_out, &grid, h, w)?;
    let proj = g.linear(attn_out, param::<T>(p, prefix, "proj.w")?, Some(param::<T>(p, prefix, "proj.b")?))?;
    let x = g.add(x, proj)?;
    let normed = layer_norm(g, p, &format!("{prefix}.ln2"), x)?;
    let m = mlp(g, p, &format!("{prefix}.mlp"), normed)?;
    g.add(x, m)
}

/// Pixel-centre `(row, col)` coordinates of every window token in the
/// padded map, `[nWin * M * M, 2]`.
pub fn reference_points<T: Real>(grid: &WindowGrid) -> Tensor<T> {
    let n = grid.tokens_per_window();
    let mut data = Vec::with_capacity(grid.num_windows() * n * 2);
    for win in 0..grid.num_windows() {
        for t in 0..n {
            let (y, x) = grid.padded_coords(win, t);
            data.push(T::lit(y as f64));
            data.push(T::lit(x as f64));
        }
    }
    Tensor::new(vec![grid.num_windows() * n, 2], data).expect("point count")
}

/// Deformable window attention. Keys and values are bilinearly sampled from
/// the whole padded map at reference points moved by predicted offsets.
pub fn wdtl_attention<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    trace: &mut Trace,
) -> Result<Var> {
    let (h, w, c) = hw(g, x);
    let grid = WindowGrid::new(h, w, cfg.window, 0)?;
    let xp = g.reflect_pad(x, grid.pad_h, grid.pad_w)?;
    let padded = WindowGrid::new(grid.padded_height(), grid.padded_width(), cfg.window, 0)?;
    let qmap = g.linear(xp, param::<T>(p, prefix, "wq.w")?, None)?;

    let o = g.depthwise_conv2d(qmap, param::<T>(p, prefix, "offset.dw.w")?, param::<T>(p, prefix, "offset.dw.b")?)?;
    let o = g.gelu(o)?;
    let o = g.linear(o, param::<T>(p, prefix, "offset.pw.w")?, Some(param::<T>(p, prefix, "offset.pw.b")?))?;
    let o = g.window_partition(o, &padded)?;
    let n_points = padded.num_windows() * padded.tokens_per_window();
    let offsets = g.reshape(o, &[n_points, 2])?;
    trace.wdtl_offsets.push(offsets);

    let reference = g.constant(reference_points(&padded));
    let points = g.add(reference, offsets)?;
    let sampled = g.bilinear_sample(xp, points)?;
    let sampled = g.reshape(sampled, &[padded.num_windows(), padded.tokens_per_window(), c])?;
    let k = g.linear(sampled, param::<T>(p, prefix, "wk.w")?, None)?;
    let v = g.linear(sampled, param::<T>(p, prefix, "wv.w")?, None)?;
    let q = g.window_partition(qmap, &padded)?;

    let (out, attn) = window_attention(g, q, k, v, 1, None)?;
    trace.wdtl_attn.push(attn);
    // Shift-free windows of the padded map coincide with those of `grid`.
    g.window_reverse(out, &grid, h, w)
}

/// `X' = X + MLP(LN X)`, then `conv(GELU(CA(X')))`. Returns the output and
/// the channel scales.
pub fn ffn_channel_attention<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let normed = layer_norm(g, p, &format!("{prefix}.ffn.ln"), x)?;
    let m = mlp(g, p, &format!("{prefix}.ffn.mlp"), normed)?;
    let xr = g.add(x, m)?;
    let pooled = g.global_avg_pool(xr)?;
    let s = g.linear(pooled, param::<T>(p, prefix, "ca.fc1.w")?, Some(param::<T>(p, prefix, "ca.fc1.b")?))?;
    let s = g.gelu(s)?;
    let s = g.linear(s, param::<T>(p, prefix, "ca.fc2.w")?, Some(param::<T>(p, prefix, "ca.fc2.b")?))?;
    let scale = g.sigmoid(s)?;
    let y = g.mul_channel(xr, scale)?;
    let y = g.gelu(y)?;
    let y = g.conv2d(y, param::<T>(p, prefix, "ffn.conv.w")?, param::<T>(p, prefix, "ffn.conv.b")?, 1, 1)?;
    Ok((y, scale))
}

pub fn wdtl_layer<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    trace: &mut Trace,
) -> Result<Var> {
    let t = wdtl_attention(g, p, cfg, prefix, x, trace)?;
    let (y, scale) = ffn_channel_attention(g, p, prefix, t)?;
    trace.ca_scales.push(scale);
    Ok(y)
}

/// `conv(WDTL(STL^N(x))) + x`.
pub fn rdtb_block<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    trace: &mut Trace,
) -> Result<Var> {
    let mut h = x;
    for l in 0..cfg.stl_per_rdtb {
        let shift = if l % 2 == 0 { 0 } else { cfg.window / 2 };
        h = stl_layer(g, p, cfg, &format!("{prefix}.stl.{l}"), h, shift, trace)?;
    }
    h = wdtl_layer(g, p, cfg, &format!("{prefix}.wdtl"), h, trace)?;
    let y = g.conv2d(h, p.get(&format!("{prefix}.conv.w"))?, p.get(&format!("{prefix}.conv.b"))?, 1, 1)?;
    g.add(y, x)
}
