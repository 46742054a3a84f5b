use super::graph::reduce_to_channels;
use super::{hwc, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

fn same_dims<T: Real>(g: &Graph<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if g.dims(a) != g.dims(b) {
        return Err(Error::shape(format!(
            "{op}: dims {:?} and {:?} differ",
            g.dims(a),
            g.dims(b)
        )));
    }
    Ok(())
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("zip_with dims")
}

pub(crate) fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub(crate) fn gelu_f64(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad_f64(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "add")?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.push(
            "add",
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "sub")?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.push(
            "sub",
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|v| -v))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "mul")?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx.needs[0].then(|| zip_with(ctx.grad, ctx.inputs[1], |g, y| g * y));
                let gb = ctx.needs[1].then(|| zip_with(ctx.grad, ctx.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::lit(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(
            "scale",
            out,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.map(|v| v * f))]),
        )
    }

    /// `x + b` with `b` broadcast along the trailing dimension.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.dims(b) != [c] {
            return Err(Error::shape(format!(
                "add_channel: bias {:?} vs {c} channels",
                self.dims(b)
            )));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, v) in row.iter_mut().zip(&bias) {
                *o += *v;
            }
        }
        self.push(
            "add_channel",
            out,
            &[x, b],
            Box::new(move |ctx| {
                let gb = ctx.needs[1].then(|| reduce_to_channels(ctx.grad, c));
                vec![Some(ctx.grad.clone()), gb]
            }),
        )
    }

    /// `x * s` with `s` broadcast along the trailing dimension.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.dims(s) != [c] {
            return Err(Error::shape(format!(
                "mul_channel: scale {:?} vs {c} channels",
                self.dims(s)
            )));
        }
        let mut out = self.value(x).clone();
        let scale = self.value(s).data().to_vec();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, v) in row.iter_mut().zip(&scale) {
                *o *= *v;
            }
        }
        self.push(
            "mul_channel",
            out,
            &[x, s],
            Box::new(move |ctx| {
                let (xv, sv) = (ctx.inputs[0], ctx.inputs[1].data());
                let gx = ctx.needs[0].then(|| {
                    let mut gx = ctx.grad.clone();
                    for row in gx.data_mut().chunks_exact_mut(c) {
                        for (o, v) in row.iter_mut().zip(sv) {
                            *o *= *v;
                        }
                    }
                    gx
                });
                let gs = ctx.needs[1].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for (grow, xrow) in ctx
                        .grad
                        .data()
                        .chunks_exact(c)
                        .zip(xv.data().chunks_exact(c))
                    {
                        for k in 0..c {
                            acc[k] += grow[k] * xrow[k];
                        }
                    }
                    Tensor::new(vec![c], acc).unwrap()
                });
                vec![gx, gs]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(
            "sigmoid",
            out,
            &[x],
            Box::new(|ctx| {
                vec![Some(zip_with(ctx.grad, ctx.output, |g, y| {
                    g * y * (T::one() - y)
                }))]
            }),
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::lit(gelu_f64(v.as_f64())));
        self.push(
            "gelu",
            out,
            &[x],
            Box::new(|ctx| {
                vec![Some(zip_with(ctx.grad, ctx.inputs[0], |g, x| {
                    g * T::lit(gelu_grad_f64(x.as_f64()))
                }))]
            }),
        )
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        self.push(
            "abs",
            out,
            &[x],
            Box::new(|ctx| {
                vec![Some(zip_with(ctx.grad, ctx.inputs[0], |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// μ-law compression `ln(1 + μx) / ln(1 + μ)`. Inputs outside `[0, 1]`
    /// are clamped and receive zero gradient.
    pub fn mu_law(&mut self, x: Var, mu: f64) -> Result<Var> {
        if mu <= 0.0 {
            return Err(Error::config(format!("mu must be positive, got {mu}")));
        }
        let m = T::lit(mu);
        let denom = T::lit((1.0 + mu).ln());
        let out = self
            .value(x)
            .map(|v| (T::one() + m * v.max(T::zero()).min(T::one())).ln() / denom);
        self.push(
            "mu_law",
            out,
            &[x],
            Box::new(move |ctx| {
                vec![Some(zip_with(ctx.grad, ctx.inputs[0], |g, x| {
                    if x < T::zero() || x > T::one() {
                        T::zero()
                    } else {
                        g * m / ((T::one() + m * x) * denom)
                    }
                }))]
            }),
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        let out = Tensor::scalar(self.value(x).sum());
        self.push(
            "sum",
            out,
            &[x],
            Box::new(move |ctx| vec![Some(Tensor::full(&dims, ctx.grad.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let in_dims = self.dims(x).to_vec();
        let out = self.value(x).clone().reshape(dims)?;
        self.push(
            "reshape",
            out,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.clone().reshape(&in_dims).unwrap())]),
        )
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let widths: Vec<usize> = tensors.iter().map(|t| t.last_dim()).collect();
        let out = Tensor::concat_channels(&tensors)?;
        self.push(
            "concat_channels",
            out,
            parts,
            Box::new(move |ctx| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(&ctx.needs)
                    .map(|(&w, &need)| {
                        let g = need.then(|| ctx.grad.slice_channels(start, w).unwrap());
                        start += w;
                        g
                    })
                    .collect()
            }),
        )
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let c = self.value(x).last_dim();
        let out = self.value(x).slice_channels(start, len)?;
        self.push(
            "slice_channels",
            out,
            &[x],
            Box::new(move |ctx| {
                let rows = ctx.grad.numel() / len.max(1);
                let mut gx = Tensor::zeros(ctx.inputs[0].dims());
                let dst = gx.data_mut();
                for r in 0..rows {
                    dst[r * c + start..r * c + start + len]
                        .copy_from_slice(&ctx.grad.data()[r * len..(r + 1) * len]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Spatial mean of a `H x W x C` map, giving `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.value(x))?;
        let n = (h * w) as f64;
        let mut out = reduce_to_channels(self.value(x), c);
        let inv = T::lit(1.0 / n);
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        self.push(
            "global_avg_pool",
            out,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let data = (0..h * w * c).map(|i| g[i % c] * inv).collect();
                vec![Some(Tensor::new(vec![h, w, c], data).unwrap())]
            }),
        )
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/cols are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.value(x))?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("avg_pool2 on {h}x{w}")));
        }
        let quarter = T::lit(0.25);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); oh * ow * c];
        for y in 0..oh {
            for xo in 0..ow {
                let o = (y * ow + xo) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((2 * y + dy) * w + 2 * xo + dx) * c;
                    for k in 0..c {
                        out[o + k] += src[s + k];
                    }
                }
                out[o..o + c].iter_mut().for_each(|v| *v *= quarter);
            }
        }
        let out = Tensor::new(vec![oh, ow, c], out)?;
        self.push(
            "avg_pool2",
            out,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![T::zero(); h * w * c];
                for y in 0..oh {
                    for xo in 0..ow {
                        let o = (y * ow + xo) * c;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let s = ((2 * y + dy) * w + 2 * xo + dx) * c;
                            for k in 0..c {
                                gx[s + k] = g[o + k] * quarter;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(vec![h, w, c], gx).unwrap())]
            }),
        )
    }
}
