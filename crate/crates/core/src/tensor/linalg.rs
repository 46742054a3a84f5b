use super::graph::reduce_to_channels;
use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// `c += a * b` where `a` is `m x k`, `b` is `k x n`.
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a * b^T` where `a` is `m x k`, `b` is `n x k`.
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c += a^T * b` where `a` is `k x m`, `b` is `k x n`.
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in a[p * m..(p + 1) * m].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn check_linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    let cin = x.last_dim();
    let (wi, wo) = match w.dims() {
        &[i, o] => (i, o),
        d => return Err(Error::shape(format!("linear weight must be 2-d, got {d:?}"))),
    };
    if wi != cin {
        return Err(Error::shape(format!(
            "linear: input has {cin} channels, weight expects {wi}"
        )));
    }
    if let Some(b) = b {
        if b.dims() != [wo] {
            return Err(Error::shape(format!("linear bias {:?} vs {wo}", b.dims())));
        }
    }
    Ok((x.numel() / cin.max(1), cin, wo))
}

/// Applies `x W + b` over the trailing dimension.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, cin, cout) = check_linear(x, w, b)?;
    let mut out = vec![T::zero(); rows * cout];
    if let Some(b) = b {
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm_nn(rows, cin, cout, x.data(), w.data(), &mut out);
    let mut dims = x.dims().to_vec();
    *dims.last_mut().unwrap() = cout;
    Tensor::new(dims, out)
}

impl<T: Real> Graph<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "linear",
            out,
            &inputs,
            Box::new(|ctx| {
                let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
                let (cin, cout) = (wv.dims()[0], wv.dims()[1]);
                let rows = xv.numel() / cin;
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![T::zero(); rows * cin];
                    gemm_nt(rows, cout, cin, ctx.grad.data(), wv.data(), &mut gx);
                    Tensor::new(xv.dims().to_vec(), gx).unwrap()
                });
                let gw = ctx.needs[1].then(|| {
                    let mut gw = vec![T::zero(); cin * cout];
                    gemm_tn(cin, rows, cout, xv.data(), ctx.grad.data(), &mut gw);
                    Tensor::new(vec![cin, cout], gw).unwrap()
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| reduce_to_channels(ctx.grad, cout)));
                }
                grads
            }),
        )
    }

    /// Batched product of `a: [B, N, K]` with `b: [B, K, M]`, or with
    /// `b: [B, M, K]` transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let (batch, n, k, m) = match (ad.as_slice(), bd.as_slice()) {
            (&[ba, n, k], &[bb, x, y]) if ba == bb => {
                let (kb, m) = if trans_b { (y, x) } else { (x, y) };
                if kb != k {
                    return Err(Error::shape(format!("bmm: {ad:?} x {bd:?} (trans_b={trans_b})")));
                }
                (ba, n, k, m)
            }
            _ => return Err(Error::shape(format!("bmm: {ad:?} x {bd:?}"))),
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * n * m];
        for i in 0..batch {
            let (aa, bb) = (&av[i * n * k..(i + 1) * n * k], &bv[i * k * m..(i + 1) * k * m]);
            let cc = &mut out[i * n * m..(i + 1) * n * m];
            if trans_b {
                gemm_nt(n, k, m, aa, bb, cc);
            } else {
                gemm_nn(n, k, m, aa, bb, cc);
            }
        }
        let out = Tensor::new(vec![batch, n, m], out)?;
        self.push(
            "bmm",
            out,
            &[a, b],
            Box::new(move |ctx| {
                let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * n * k];
                    for i in 0..batch {
                        let gi = &g[i * n * m..(i + 1) * n * m];
                        let bi = &bv[i * k * m..(i + 1) * k * m];
                        let dst = &mut ga[i * n * k..(i + 1) * n * k];
                        if trans_b {
                            gemm_nn(n, m, k, gi, bi, dst);
                        } else {
                            gemm_nt(n, m, k, gi, bi, dst);
                        }
                    }
                    Tensor::new(vec![batch, n, k], ga).unwrap()
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![T::zero(); batch * k * m];
                    for i in 0..batch {
                        let gi = &g[i * n * m..(i + 1) * n * m];
                        let ai = &av[i * n * k..(i + 1) * n * k];
                        let dst = &mut gb[i * k * m..(i + 1) * k * m];
                        if trans_b {
                            gemm_tn(m, n, k, gi, ai, dst);
                        } else {
                            gemm_tn(k, n, m, ai, gi, dst);
                        }
                    }
                    Tensor::new(ctx.inputs[1].dims().to_vec(), gb).unwrap()
                });
                vec![ga, gb]
            }),
        )
    }

    /// `[B, N, heads * dh]` to `[B * heads, N, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let (b, n, c) = match self.dims(x) {
            &[b, n, c] if heads > 0 && c % heads == 0 => (b, n, c),
            d => return Err(Error::shape(format!("split_heads({heads}) on {d:?}"))),
        };
        let dh = c / heads;
        let out = permute_heads(self.value(x).data(), b, n, heads, dh, true);
        let out = Tensor::new(vec![b * heads, n, dh], out)?;
        self.push(
            "split_heads",
            out,
            &[x],
            Box::new(move |ctx| {
                let g = permute_heads(ctx.grad.data(), b, n, heads, dh, false);
                vec![Some(Tensor::new(vec![b, n, c], g).unwrap())]
            }),
        )
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let (bh, n, dh) = match self.dims(x) {
            &[bh, n, dh] if heads > 0 && bh % heads == 0 => (bh, n, dh),
            d => return Err(Error::shape(format!("merge_heads({heads}) on {d:?}"))),
        };
        let b = bh / heads;
        let out = permute_heads(self.value(x).data(), b, n, heads, dh, false);
        let out = Tensor::new(vec![b, n, heads * dh], out)?;
        self.push(
            "merge_heads",
            out,
            &[x],
            Box::new(move |ctx| {
                let g = permute_heads(ctx.grad.data(), b, n, heads, dh, true);
                vec![Some(Tensor::new(vec![b * heads, n, dh], g).unwrap())]
            }),
        )
    }
}

fn permute_heads<T: Real>(src: &[T], b: usize, n: usize, heads: usize, dh: usize, split: bool) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let c = heads * dh;
    for bi in 0..b {
        for t in 0..n {
            for h in 0..heads {
                let merged = (bi * n + t) * c + h * dh;
                let split_at = ((bi * heads + h) * n + t) * dh;
                let (from, to) = if split { (merged, split_at) } else { (split_at, merged) };
                out[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
    out
}
