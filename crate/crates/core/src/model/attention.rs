use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Relative-position bias applied to the logits of a windowed attention.
pub struct PositionBias<'a, T: Real> {
    pub table: Var,
    pub index: &'a [usize],
    pub mask: Option<&'a Tensor<T>>,
}

/// Scaled dot-product attention over token blocks `[nWin, N, d]`.
///
/// Returns the attended values `[nWin, N, d]` and the attention map
/// `[nWin * heads, N, N]`.
pub fn window_attention<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    bias: Option<PositionBias<'_, T>>,
) -> Result<(Var, Var)> {
    let d = *g.dims(q).last().unwrap_or(&0);
    if d == 0 || heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("attention width {d} with {heads} heads")));
    }
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let q = g.split_heads(q, heads)?;
    let k = g.split_heads(k, heads)?;
    let v = g.split_heads(v, heads)?;
    let q = g.scale(q, scale)?;
    let mut logits = g.bmm(q, k, true)?;
    if let Some(b) = bias {
        logits = g.attention_bias(logits, b.table, b.index, heads, b.mask)?;
    }
    let attn = g.softmax_lastdim(logits)?;
    let out = g.bmm(attn, v, false)?;
    Ok((g.merge_heads(out, heads)?, attn))
}
