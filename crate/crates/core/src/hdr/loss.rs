use super::{HdrImage, PerceptualExtractor, DEFAULT_MU};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

pub const DEFAULT_LAMBDA: f64 = 1e-2;

/// Loss nodes on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l1: Var,
    /// `None` when the perceptual weight is zero.
    pub perceptual: Option<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub perceptual: f64,
}

fn mean_abs_diff<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Tonemapped L1 plus `lambda` times the perceptual L1 over every feature
/// level of the frozen extractor.
pub fn compute_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    extractor: &PerceptualExtractor,
    lambda: f64,
) -> Result<LossTerms> {
    if g.dims(pred) != g.dims(target) {
        return Err(Error::shape(format!(
            "loss: prediction {:?} vs target {:?}",
            g.dims(pred),
            g.dims(target)
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let tp = g.mu_law(pred, DEFAULT_MU)?;
    let tt = g.mu_law(target, DEFAULT_MU)?;
    let l1 = mean_abs_diff(g, tt, tp)?;
    if lambda == 0.0 {
        return Ok(LossTerms {
            total: l1,
            l1,
            perceptual: None,
        });
    }
    let fp = extractor.features(g, tp)?;
    let ft = extractor.features(g, tt)?;
    let mut perceptual: Option<Var> = None;
    for (a, b) in ft.into_iter().zip(fp) {
        let term = mean_abs_diff(g, a, b)?;
        perceptual = Some(match perceptual {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let perceptual = perceptual.expect("extractor yields features");
    let weighted = g.scale(perceptual, lambda)?;
    let total = g.add(l1, weighted)?;
    Ok(LossTerms {
        total,
        l1,
        perceptual: Some(perceptual),
    })
}

/// Evaluates the loss between two images in 64-bit precision.
pub fn loss_value(pred: &HdrImage, target: &HdrImage, lambda: f64) -> Result<LossBreakdown> {
    let mut g = Graph::<f64>::new();
    let p = g.constant(pred.radiance().cast());
    let t = g.constant(target.radiance().cast());
    let terms = compute_loss(&mut g, p, t, &PerceptualExtractor::new(), lambda)?;
    Ok(LossBreakdown {
        total: g.value(terms.total).data()[0],
        l1: g.value(terms.l1).data()[0],
        perceptual: terms.perceptual.map_or(0.0, |v| g.value(v).data()[0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn img(v: f32) -> HdrImage {
        HdrImage::new(Tensor::full(&[8, 8, 3], v)).unwrap()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = HdrImage::new(Tensor::from_fn(&[8, 8, 3], |i| (i % 17) as f32 / 17.0)).unwrap();
        let l = loss_value(&a, &a, DEFAULT_LAMBDA).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.perceptual, 0.0);
    }

    #[test]
    fn constant_pair_closed_form() {
        let l = loss_value(&img(0.6), &img(0.5), 0.0).unwrap();
        // ln(3001)/ln(5001) - ln(2501)/ln(5001)
        let expected = 3001f64.ln() / 5001f64.ln() - 2501f64.ln() / 5001f64.ln();
        assert!((l.total - expected).abs() < 1e-6);
        // 0.94005 - 0.91864 from four-decimal endpoints; exact value is 0.021398.
        assert!((l.total - 0.02141).abs() < 2e-5);
        assert_eq!(l.perceptual, 0.0);
    }

    #[test]
    fn zero_lambda_is_pure_l1() {
        let a = HdrImage::new(Tensor::from_fn(&[8, 8, 3], |i| (i % 5) as f32 / 5.0)).unwrap();
        let b = img(0.3);
        let with = loss_value(&a, &b, 1.0).unwrap();
        let without = loss_value(&a, &b, 0.0).unwrap();
        assert_eq!(with.l1, without.l1);
        assert_eq!(without.total, without.l1);
        assert!(with.total > without.total);
    }

    #[test]
    fn shape_mismatch() {
        let a = img(0.1);
        let b = HdrImage::new(Tensor::full(&[4, 8, 3], 0.1)).unwrap();
        assert!(matches!(loss_value(&a, &b, 0.0), Err(Error::Shape(_))));
    }
}
