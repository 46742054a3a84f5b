use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Seed of the frozen perceptual feature extractor.
pub const PERCEPTUAL_SEED: u64 = 0x19_5EED;

const WIDTHS: [(usize, usize); 3] = [(3, 8), (8, 16), (16, 16)];

/// Fixed, non-learnable conv stack standing in for a pretrained
/// classification backbone. Features are read after the first and second
/// 2x downsampling.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl Default for PerceptualExtractor {
    fn default() -> Self {
        Self::with_seed(PERCEPTUAL_SEED)
    }
}

impl PerceptualExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let layers = WIDTHS
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (9 * cin) as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                let w = Tensor::from_fn(&[3, 3, cin, cout], |_| normal.sample(&mut r) as f32);
                let b = Tensor::from_fn(&[cout], |_| (normal.sample(&mut r) * 0.1) as f32);
                (w, b)
            })
            .collect();
        Self { layers }
    }

    /// FNV-1a over the weight bits; changes iff any weight changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (w, b) in &self.layers {
            for v in w.data().iter().chain(b.data()) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Feature maps of a `H x W x 3` tonemapped image (`H, W >= 4`).
    pub fn features<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let mut consts = self.layers.iter().map(|(w, b)| (w.cast::<T>(), b.cast::<T>()));
        let mut conv = |g: &mut Graph<T>, x: Var| -> Result<Var> {
            let (w, b) = consts.next().expect("layer count");
            let (w, b) = (g.constant(w), g.constant(b));
            let y = g.conv2d(x, w, b, 1, 1)?;
            g.gelu(y)
        };
        let h = conv(g, x)?;
        let h = g.avg_pool2(h)?;
        let first = conv(g, h)?;
        let h = g.avg_pool2(first)?;
        let second = conv(g, h)?;
        Ok(vec![first, second])
    }

    pub fn features_of(&self, x: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let mut g = Graph::<f32>::new();
        let v = g.constant(x.clone());
        let feats = self.features(&mut g, v)?;
        Ok(feats.into_iter().map(|f| g.value(f).clone()).collect())
    }
}
