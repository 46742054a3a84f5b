use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

fn softmax_rows<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        let inv = T::one() / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

/// Softmax over the trailing dimension, max-subtracted.
pub fn softmax_lastdim<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if n == 0 {
        return Err(Error::shape("softmax over an empty dimension"));
    }
    Tensor::new(x.dims().to_vec(), softmax_rows(x.data(), n))
}

struct LnStats<T> {
    normed: Vec<T>,
    rstd: Vec<T>,
}

fn ln_stats<T: Real>(x: &[T], c: usize, eps: f64) -> LnStats<T> {
    let rows = x.len() / c;
    let mut normed = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let inv_c = T::lit(1.0 / c as f64);
    for (src, dst) in x.chunks_exact(c).zip(normed.chunks_exact_mut(c)) {
        let mean = src.iter().copied().sum::<T>() * inv_c;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let r = T::one() / (var + T::lit(eps)).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        rstd.push(r);
    }
    LnStats { normed, rstd }
}

fn check_ln<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<usize> {
    let c = x.last_dim();
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape(format!(
            "layer_norm: gamma {:?} / beta {:?} for {c} channels",
            gamma.dims(),
            beta.dims()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config(format!("layer_norm eps must be positive, got {eps}")));
    }
    Ok(c)
}

fn affine<T: Real>(normed: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let c = gamma.len();
    let mut out = vec![T::zero(); normed.len()];
    for (src, dst) in normed.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for k in 0..c {
            dst[k] = gamma[k] * src[k] + beta[k];
        }
    }
    out
}

/// Normalizes each position over its channels, then applies `gamma * x + beta`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let c = check_ln(x, gamma, beta, eps)?;
    let stats = ln_stats(x.data(), c, eps);
    Tensor::new(x.dims().to_vec(), affine(&stats.normed, gamma.data(), beta.data()))
}

impl<T: Real> Graph<T> {
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let out = softmax_lastdim(self.value(x))?;
        let n = out.last_dim();
        self.push(
            "softmax_lastdim",
            out,
            &[x],
            Box::new(move |ctx| {
                let (y, g) = (ctx.output.data(), ctx.grad.data());
                let mut gx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for k in 0..n {
                        dr[k] = yr[k] * (gr[k] - dot);
                    }
                }
                vec![Some(Tensor::new(ctx.output.dims().to_vec(), gx).unwrap())]
            }),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = check_ln(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let LnStats { normed, rstd } = ln_stats(self.value(x).data(), c, eps);
        let out = affine(&normed, self.value(gamma).data(), self.value(beta).data());
        let out = Tensor::new(self.dims(x).to_vec(), out)?;
        self.push(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let (g, gamma) = (ctx.grad.data(), ctx.inputs[1].data());
                let inv_c = T::lit(1.0 / c as f64);
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for (row, ((gr, nr), dr)) in g
                        .chunks_exact(c)
                        .zip(normed.chunks_exact(c))
                        .zip(gx.chunks_exact_mut(c))
                        .enumerate()
                    {
                        let mut mean_g = T::zero();
                        let mut mean_gn = T::zero();
                        for k in 0..c {
                            let gh = gr[k] * gamma[k];
                            mean_g += gh;
                            mean_gn += gh * nr[k];
                        }
                        mean_g = mean_g * inv_c;
                        mean_gn = mean_gn * inv_c;
                        for k in 0..c {
                            dr[k] = rstd[row] * (gr[k] * gamma[k] - mean_g - nr[k] * mean_gn);
                        }
                    }
                    Tensor::new(ctx.inputs[0].dims().to_vec(), gx).unwrap()
                });
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for (gr, nr) in g.chunks_exact(c).zip(normed.chunks_exact(c)) {
                    for k in 0..c {
                        ggamma[k] += gr[k] * nr[k];
                        gbeta[k] += gr[k];
                    }
                }
                vec![
                    gx,
                    ctx.needs[1].then(|| Tensor::new(vec![c], ggamma).unwrap()),
                    ctx.needs[2].then(|| Tensor::new(vec![c], gbeta).unwrap()),
                ]
            }),
        )
    }
}
