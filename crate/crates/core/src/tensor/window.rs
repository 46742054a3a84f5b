//! Window partitioning for windowed attention.
//!
//! A map is reflect-padded at the bottom/right to a multiple of the window
//! size, cyclically shifted up-left by `shift`, and cut into `M x M` windows
//! in row-major order. Tokens inside a window are row-major too.

use super::{hwc, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Logit offset applied to token pairs that a cyclic shift brought together.
pub const MASK_VALUE: f64 = -100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub window: usize,
    pub shift: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    height: usize,
    width: usize,
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

impl WindowGrid {
    pub fn new(height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("window size must be positive"));
        }
        if shift >= window {
            return Err(Error::config(format!("shift {shift} must be < window {window}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("cannot window a {height}x{width} map")));
        }
        let pad = |n: usize| (window - n % window) % window;
        Ok(Self {
            window,
            shift,
            pad_h: pad(height),
            pad_w: pad(width),
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.pad_h
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.pad_w
    }

    pub fn windows_y(&self) -> usize {
        self.padded_height() / self.window
    }

    pub fn windows_x(&self) -> usize {
        self.padded_width() / self.window
    }

    pub fn num_windows(&self) -> usize {
        self.windows_y() * self.windows_x()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// Coordinates in the padded, unshifted map of a window token.
    pub fn padded_coords(&self, win: usize, token: usize) -> (usize, usize) {
        let m = self.window;
        let (wy, wx) = (win / self.windows_x(), win % self.windows_x());
        let (ty, tx) = (token / m, token % m);
        let (hp, wp) = (self.padded_height(), self.padded_width());
        ((wy * m + ty + self.shift) % hp, (wx * m + tx + self.shift) % wp)
    }

    /// For every `(window, token)` row, the source pixel `y * W + x`.
    fn partition_map(&self) -> Vec<usize> {
        let n = self.tokens_per_window();
        (0..self.num_windows() * n)
            .map(|r| {
                let (py, px) = self.padded_coords(r / n, r % n);
                reflect(py, self.height) * self.width + reflect(px, self.width)
            })
            .collect()
    }

    /// For every pixel of the `H x W` map, the `(window, token)` row holding it.
    fn reverse_map(&self) -> Vec<usize> {
        let m = self.window;
        let (hp, wp) = (self.padded_height(), self.padded_width());
        let mut map = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let sy = (y + hp - self.shift % hp) % hp;
                let sx = (x + wp - self.shift % wp) % wp;
                let win = (sy / m) * self.windows_x() + sx / m;
                map.push(win * m * m + (sy % m) * m + sx % m);
            }
        }
        map
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<usize> {
        let (h, w, c) = hwc(x)?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "grid built for {}x{}, map is {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(c)
    }

    fn check_windows<T: Real>(&self, windows: &Tensor<T>, h: usize, w: usize) -> Result<usize> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "grid built for {}x{}, asked to reverse into {h}x{w}",
                self.height, self.width
            )));
        }
        match windows.dims() {
            &[nw, n, c] if nw == self.num_windows() && n == self.tokens_per_window() => Ok(c),
            d => Err(Error::shape(format!(
                "expected [{}, {}, C] windows, got {d:?}",
                self.num_windows(),
                self.tokens_per_window()
            ))),
        }
    }
}

fn gather_rows<T: Real>(src: &[T], c: usize, map: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(map.len() * c);
    for &r in map {
        out.extend_from_slice(&src[r * c..(r + 1) * c]);
    }
    out
}

fn scatter_rows<T: Real>(grad: &[T], c: usize, map: &[usize], rows: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * c];
    for (i, &r) in map.iter().enumerate() {
        let dst = &mut out[r * c..(r + 1) * c];
        for (d, &g) in dst.iter_mut().zip(&grad[i * c..(i + 1) * c]) {
            *d += g;
        }
    }
    out
}

/// `H x W x C` map to `[nWin, M*M, C]` token blocks.
pub fn window_partition<T: Real>(x: &Tensor<T>, grid: &WindowGrid) -> Result<Tensor<T>> {
    let c = grid.check_input(x)?;
    let data = gather_rows(x.data(), c, &grid.partition_map());
    Tensor::new(vec![grid.num_windows(), grid.tokens_per_window(), c], data)
}

/// Inverse of [`window_partition`]: undoes the shift and crops the padding.
pub fn window_reverse<T: Real>(windows: &Tensor<T>, grid: &WindowGrid, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = grid.check_windows(windows, h, w)?;
    let data = gather_rows(windows.data(), c, &grid.reverse_map());
    Tensor::new(vec![h, w, c], data)
}

/// `[nWin, N, N]` additive mask separating regions that a cyclic shift made
/// adjacent. `None` when the grid is unshifted.
pub fn shifted_window_mask<T: Real>(grid: &WindowGrid) -> Option<Tensor<T>> {
    if grid.shift == 0 {
        return None;
    }
    let (m, s) = (grid.window, grid.shift);
    let region = |p: usize, extent: usize| {
        if p < extent - m {
            0
        } else if p < extent - s {
            1
        } else {
            2
        }
    };
    let n = grid.tokens_per_window();
    let (hp, wp) = (grid.padded_height(), grid.padded_width());
    let mut mask = Vec::with_capacity(grid.num_windows() * n * n);
    for win in 0..grid.num_windows() {
        let (wy, wx) = (win / grid.windows_x(), win % grid.windows_x());
        let labels: Vec<usize> = (0..n)
            .map(|t| region(wy * m + t / m, hp) * 3 + region(wx * m + t % m, wp))
            .collect();
        for i in 0..n {
            for j in 0..n {
                mask.push(if labels[i] == labels[j] { T::zero() } else { T::lit(MASK_VALUE) });
            }
        }
    }
    Some(Tensor::new(vec![grid.num_windows(), n, n], mask).unwrap())
}

/// Index into a `(2M - 1)^2` relative-position table for every token pair.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = (i / window + window - 1) - j / window;
            let dx = (i % window + window - 1) - j % window;
            idx.push(dy * span + dx);
        }
    }
    idx
}

impl<T: Real> Graph<T> {
    fn gather_rows_op(&mut self, op: &'static str, x: Var, map: Vec<usize>, dims: Vec<usize>, c: usize) -> Result<Var> {
        let rows = self.value(x).numel() / c.max(1);
        let in_dims = self.dims(x).to_vec();
        let out = Tensor::new(dims, gather_rows(self.value(x).data(), c, &map))?;
        self.push(
            op,
            out,
            &[x],
            Box::new(move |ctx| {
                let g = scatter_rows(ctx.grad.data(), c, &map, rows);
                vec![Some(Tensor::new(in_dims.clone(), g).unwrap())]
            }),
        )
    }

    pub fn window_partition(&mut self, x: Var, grid: &WindowGrid) -> Result<Var> {
        let c = grid.check_input(self.value(x))?;
        let dims = vec![grid.num_windows(), grid.tokens_per_window(), c];
        self.gather_rows_op("window_partition", x, grid.partition_map(), dims, c)
    }

    pub fn window_reverse(&mut self, windows: Var, grid: &WindowGrid, h: usize, w: usize) -> Result<Var> {
        let c = grid.check_windows(self.value(windows), h, w)?;
        self.gather_rows_op("window_reverse", windows, grid.reverse_map(), vec![h, w, c], c)
    }

    /// Reflect-pads a `H x W x C` map at the bottom and right.
    pub fn reflect_pad(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Result<Var> {
        let (h, w, c) = hwc(self.value(x))?;
        if pad_h == 0 && pad_w == 0 {
            return Ok(x);
        }
        let (hp, wp) = (h + pad_h, w + pad_w);
        let map = (0..hp * wp)
            .map(|i| reflect(i / wp, h) * w + reflect(i % wp, w))
            .collect();
        self.gather_rows_op("reflect_pad", x, map, vec![hp, wp, c], c)
    }

    /// Adds the relative-position bias (and the optional shift mask) to
    /// attention logits shaped `[nWin * heads, N, N]`. `table` is
    /// `[(2M - 1)^2, heads]`.
    pub fn attention_bias(
        &mut self,
        logits: Var,
        table: Var,
        index: &[usize],
        heads: usize,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let (bh, n) = match self.dims(logits) {
            &[bh, n, n2] if n == n2 && heads > 0 && bh % heads == 0 => (bh, n),
            d => return Err(Error::shape(format!("attention_bias: logits {d:?}, {heads} heads"))),
        };
        let entries = self.dims(table)[0];
        if self.dims(table) != [entries, heads] || index.len() != n * n || index.iter().any(|&i| i >= entries) {
            return Err(Error::shape(format!(
                "attention_bias: table {:?} / index of {} for {n} tokens, {heads} heads",
                self.dims(table),
                index.len()
            )));
        }
        let nwin = bh / heads;
        if let Some(m) = mask {
            if m.dims() != [nwin, n, n] {
                return Err(Error::shape(format!("attention mask {:?} vs [{nwin}, {n}, {n}]", m.dims())));
            }
        }
        let mut out = self.value(logits).clone();
        {
            let tab = self.value(table).data();
            let o = out.data_mut();
            for b in 0..bh {
                let (win, head) = (b / heads, b % heads);
                let block = &mut o[b * n * n..(b + 1) * n * n];
                for (k, v) in block.iter_mut().enumerate() {
                    *v += tab[index[k] * heads + head];
                }
                if let Some(m) = mask {
                    for (v, mv) in block.iter_mut().zip(&m.data()[win * n * n..(win + 1) * n * n]) {
                        *v += *mv;
                    }
                }
            }
        }
        let index = index.to_vec();
        self.push(
            "attention_bias",
            out,
            &[logits, table],
            Box::new(move |ctx| {
                let gt = ctx.needs[1].then(|| {
                    let g = ctx.grad.data();
                    let mut acc = vec![T::zero(); entries * heads];
                    for b in 0..bh {
                        let head = b % heads;
                        for (k, &gv) in g[b * n * n..(b + 1) * n * n].iter().enumerate() {
                            acc[index[k] * heads + head] += gv;
                        }
                    }
                    Tensor::new(vec![entries, heads], acc).unwrap()
                });
                vec![Some(ctx.grad.clone()), gt]
            }),
        )
    }
}
