use super::graph::reduce_to_channels;
use super::{hwc, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Input coordinate for output `o` and tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

fn geometry<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (h, w, cin) = hwc(x)?;
    let (k, wcin, cout) = match weight.dims() {
        &[k1, k2, ci, co] if k1 == k2 => (k1, ci, co),
        d => return Err(Error::shape(format!("conv2d weight must be k x k x Cin x Cout, got {d:?}"))),
    };
    if k % 2 == 0 {
        return Err(Error::shape(format!("conv2d kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be >= 1"));
    }
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if bias.dims() != [cout] {
        return Err(Error::shape(format!("conv2d bias {:?} vs Cout {cout}", bias.dims())));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape(format!("conv2d: {h}x{w} input too small for k={k}, pad={pad}")));
    }
    Ok(ConvGeom {
        h,
        w,
        cin,
        cout,
        k,
        stride,
        pad,
        oh: (h + 2 * pad - k) / stride + 1,
        ow: (w + 2 * pad - k) / stride + 1,
    })
}

fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut out[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            acc.copy_from_slice(bias);
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xs = &x[(iy * g.w + ix) * g.cin..(iy * g.w + ix + 1) * g.cin];
                    let wt = &weight[(ky * g.k + kx) * g.cin * g.cout..];
                    for (ci, &xv) in xs.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &wt[ci * g.cout..(ci + 1) * g.cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn backward_input<T: Real>(g: &ConvGeom, dy: &[T], weight: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let gy = &dy[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let dst = &mut dx[(iy * g.w + ix) * g.cin..(iy * g.w + ix + 1) * g.cin];
                    let wt = &weight[(ky * g.k + kx) * g.cin * g.cout..];
                    for (ci, d) in dst.iter_mut().enumerate() {
                        let wrow = &wt[ci * g.cout..(ci + 1) * g.cout];
                        let mut acc = T::zero();
                        for (&a, &b) in gy.iter().zip(wrow) {
                            acc += a * b;
                        }
                        *d += acc;
                    }
                }
            }
        }
    }
    dx
}

fn backward_weight<T: Real>(g: &ConvGeom, dy: &[T], x: &[T]) -> Vec<T> {
    let mut dw = vec![T::zero(); g.k * g.k * g.cin * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let gy = &dy[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xs = &x[(iy * g.w + ix) * g.cin..(iy * g.w + ix + 1) * g.cin];
                    let wt = &mut dw[(ky * g.k + kx) * g.cin * g.cout..];
                    for (ci, &xv) in xs.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &mut wt[ci * g.cout..(ci + 1) * g.cout];
                        for (a, &b) in wrow.iter_mut().zip(gy) {
                            *a += xv * b;
                        }
                    }
                }
            }
        }
    }
    dw
}

/// 2-d cross-correlation of a `H x W x Cin` map with a `k x k x Cin x Cout`
/// kernel and zero padding.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if !x.is_finite() {
        return Err(Error::Numeric {
            op: "conv2d (input)".into(),
        });
    }
    let g = geometry(x, weight, bias, stride, padding)?;
    let out = forward(&g, x.data(), weight.data(), bias.data());
    Tensor::new(vec![g.oh, g.ow, g.cout], out)
}

/// Per-channel convolution with a `k x k x C` kernel, stride 1, shape preserving.
pub fn depthwise_conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c, k) = depthwise_geometry(x, weight, bias)?;
    let pad = (k / 2) as isize;
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for xo in 0..w {
            let acc = &mut out[(y * w + xo) * c..(y * w + xo + 1) * c];
            acc.copy_from_slice(bias.data());
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = xo as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &xd[(iy as usize * w + ix as usize) * c..][..c];
                    let tap = &wd[(ky * k + kx) * c..][..c];
                    for ((a, &s), &t) in acc.iter_mut().zip(src).zip(tap) {
                        *a += s * t;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out)
}

fn depthwise_geometry<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (h, w, c) = hwc(x)?;
    match weight.dims() {
        &[k1, k2, wc] if k1 == k2 && k1 % 2 == 1 && wc == c && bias.dims() == [c] => Ok((h, w, c, k1)),
        d => Err(Error::shape(format!(
            "depthwise conv: weight {d:?}, bias {:?} for {c} channels",
            bias.dims()
        ))),
    }
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = geometry(self.value(x), self.value(weight), self.value(bias), stride, padding)?;
        let out = forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new(vec![geom.oh, geom.ow, geom.cout], out)?;
        self.push(
            "conv2d",
            out,
            &[x, weight, bias],
            Box::new(move |ctx| {
                let dy = ctx.grad.data();
                let gx = ctx.needs[0].then(|| {
                    let dx = backward_input(&geom, dy, ctx.inputs[1].data());
                    Tensor::new(ctx.inputs[0].dims().to_vec(), dx).unwrap()
                });
                let gw = ctx.needs[1].then(|| {
                    let dw = backward_weight(&geom, dy, ctx.inputs[0].data());
                    Tensor::new(ctx.inputs[1].dims().to_vec(), dw).unwrap()
                });
                let gb = ctx.needs[2].then(|| reduce_to_channels(ctx.grad, geom.cout));
                vec![gx, gw, gb]
            }),
        )
    }

    /// 3x3 (or any odd k) depthwise convolution, shape preserving.
    pub fn depthwise_conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (h, w, c, k) = depthwise_geometry(self.value(x), self.value(weight), self.value(bias))?;
        let out = depthwise_conv2d(self.value(x), self.value(weight), self.value(bias))?;
        self.push(
            "depthwise_conv2d",
            out,
            &[x, weight, bias],
            Box::new(move |ctx| {
                let pad = (k / 2) as isize;
                let (xd, wd, dy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let mut dx = vec![T::zero(); h * w * c];
                let mut dw = vec![T::zero(); k * k * c];
                for y in 0..h {
                    for xo in 0..w {
                        let gy = &dy[(y * w + xo) * c..][..c];
                        for ky in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = xo as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let s = (iy as usize * w + ix as usize) * c;
                                let t = (ky * k + kx) * c;
                                for ch in 0..c {
                                    dx[s + ch] += gy[ch] * wd[t + ch];
                                    dw[t + ch] += gy[ch] * xd[s + ch];
                                }
                            }
                        }
                    }
                }
                vec![
                    ctx.needs[0].then(|| Tensor::new(vec![h, w, c], dx).unwrap()),
                    ctx.needs[1].then(|| Tensor::new(vec![k, k, c], dw).unwrap()),
                    ctx.needs[2].then(|| reduce_to_channels(ctx.grad, c)),
                ]
            }),
        )
    }
}
