use super::{hwc, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Corner indices and weights for one sample point, with border clamping.
#[derive(Clone, Copy)]
struct Tap<T> {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    wy: T,
    wx: T,
    /// Whether the coordinate lies inside the map (gradient flows to it).
    inside_y: bool,
    inside_x: bool,
}

fn tap<T: Real>(py: T, px: T, h: usize, w: usize) -> Tap<T> {
    let (hmax, wmax) = (T::lit((h - 1) as f64), T::lit((w - 1) as f64));
    let y = py.max(T::zero()).min(hmax);
    let x = px.max(T::zero()).min(wmax);
    let y0 = y.floor().to_usize().unwrap_or(0).min(h - 1);
    let x0 = x.floor().to_usize().unwrap_or(0).min(w - 1);
    Tap {
        y0,
        y1: (y0 + 1).min(h - 1),
        x0,
        x1: (x0 + 1).min(w - 1),
        wy: y - T::lit(y0 as f64),
        wx: x - T::lit(x0 as f64),
        inside_y: py >= T::zero() && py <= hmax,
        inside_x: px >= T::zero() && px <= wmax,
    }
}

fn check<T: Real>(x: &Tensor<T>, points: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (h, w, c) = hwc(x)?;
    match points.dims() {
        &[p, 2] => Ok((h, w, c, p)),
        d => Err(Error::shape(format!("sample points must be P x 2, got {d:?}"))),
    }
}

fn sample_into<T: Real>(x: &[T], w: usize, c: usize, t: &Tap<T>, out: &mut [T]) {
    let one = T::one();
    let (a, b) = ((one - t.wy) * (one - t.wx), (one - t.wy) * t.wx);
    let (cc, d) = (t.wy * (one - t.wx), t.wy * t.wx);
    let p00 = &x[(t.y0 * w + t.x0) * c..][..c];
    let p01 = &x[(t.y0 * w + t.x1) * c..][..c];
    let p10 = &x[(t.y1 * w + t.x0) * c..][..c];
    let p11 = &x[(t.y1 * w + t.x1) * c..][..c];
    for k in 0..c {
        out[k] = a * p00[k] + b * p01[k] + cc * p10[k] + d * p11[k];
    }
}

/// Bilinear interpolation of a `H x W x C` map at `P` continuous `(row, col)`
/// coordinates. Coordinates outside the map are clamped to its border.
pub fn bilinear_sample<T: Real>(x: &Tensor<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c, p) = check(x, points)?;
    let mut out = vec![T::zero(); p * c];
    for (i, pt) in points.data().chunks_exact(2).enumerate() {
        let t = tap(pt[0], pt[1], h, w);
        sample_into(x.data(), w, c, &t, &mut out[i * c..(i + 1) * c]);
    }
    Tensor::new(vec![p, c], out)
}

impl<T: Real> Graph<T> {
    pub fn bilinear_sample(&mut self, x: Var, points: Var) -> Result<Var> {
        let (h, w, c, p) = check(self.value(x), self.value(points))?;
        let out = bilinear_sample(self.value(x), self.value(points))?;
        self.push(
            "bilinear_sample",
            out,
            &[x, points],
            Box::new(move |ctx| {
                let (xd, pts, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let one = T::one();
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); h * w * c]);
                let mut gp = ctx.needs[1].then(|| vec![T::zero(); p * 2]);
                for i in 0..p {
                    let t = tap(pts[2 * i], pts[2 * i + 1], h, w);
                    let gi = &g[i * c..(i + 1) * c];
                    let idx = [
                        (t.y0 * w + t.x0) * c,
                        (t.y0 * w + t.x1) * c,
                        (t.y1 * w + t.x0) * c,
                        (t.y1 * w + t.x1) * c,
                    ];
                    if let Some(gx) = gx.as_mut() {
                        let wts = [
                            (one - t.wy) * (one - t.wx),
                            (one - t.wy) * t.wx,
                            t.wy * (one - t.wx),
                            t.wy * t.wx,
                        ];
                        for (&base, &wt) in idx.iter().zip(&wts) {
                            for k in 0..c {
                                gx[base + k] += wt * gi[k];
                            }
                        }
                    }
                    if let Some(gp) = gp.as_mut() {
                        let (mut dy, mut dx) = (T::zero(), T::zero());
                        for k in 0..c {
                            let (v00, v01) = (xd[idx[0] + k], xd[idx[1] + k]);
                            let (v10, v11) = (xd[idx[2] + k], xd[idx[3] + k]);
                            dy += gi[k] * ((one - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                            dx += gi[k] * ((one - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                        }
                        if t.inside_y {
                            gp[2 * i] = dy;
                        }
                        if t.inside_x {
                            gp[2 * i + 1] = dx;
                        }
                    }
                }
                vec![
                    gx.map(|d| Tensor::new(vec![h, w, c], d).unwrap()),
                    gp.map(|d| Tensor::new(vec![p, 2], d).unwrap()),
                ]
            }),
        )
    }
}
