//! Training objectives, as plain values and as graph nodes.

use crate::autodiff::{bce_term, Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Allowed deviation of a row norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-3;

fn check_pair<T: Real>(op: &'static str, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.cols() != 3 {
        return Err(Error::dim(op, format!("{:?} vs {:?}, expected matching n×3", pred.shape(), gt.shape())));
    }
    Ok(())
}

fn check_unit<T: Real>(op: &str, t: &Tensor<T>) -> Result<()> {
    for i in 0..t.rows() {
        let norm = t.row(i).iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::Precondition(format!("{op}: row {i} has norm {norm:.6}, expected 1")));
        }
    }
    Ok(())
}

/// Mean of `1 − ⟨p_i, g_i⟩²` over points; each term is clamped to `[0, 1]`.
pub fn angular_loss<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    check_pair("angular_loss", pred, gt)?;
    check_unit("angular_loss", pred)?;
    check_unit("angular_loss", gt)?;
    let n = pred.rows();
    let total = (0..n).fold(T::zero(), |acc, i| {
        let d = pred.row(i).iter().zip(gt.row(i)).fold(T::zero(), |s, (&a, &b)| s + a * b);
        acc + (T::one() - d * d).max(T::zero()).min(T::one())
    });
    Ok(total / T::from_usize(n).unwrap())
}

/// Mean of squared differences over all `n×3` entries.
pub fn mse<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    check_pair("mse", pred, gt)?;
    let total = pred.data().iter().zip(gt.data()).fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b));
    Ok(total / T::from_usize(pred.len()).unwrap())
}

/// `angular_loss + λ·mse`.
pub fn normals_objective<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, lambda: T) -> Result<T> {
    let a = angular_loss(pred, gt)?;
    if lambda == T::zero() {
        return Ok(a);
    }
    Ok(a + lambda * mse(pred, gt)?)
}

/// Mean binary cross-entropy of sigmoid(logit) against 0/1 labels.
pub fn bce_loss<T: Real>(logits: &[T], labels: &[u8]) -> Result<T> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::dim("bce_loss", format!("{} logits vs {} labels", logits.len(), labels.len())));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Precondition("bce_loss: non-finite logit".into()));
    }
    let total = logits
        .iter()
        .zip(labels)
        .fold(T::zero(), |s, (&z, &y)| s + bce_term(z, if y == 1 { T::one() } else { T::zero() }));
    Ok(total / T::from_usize(logits.len()).unwrap())
}

/// Graph form of [`normals_objective`] for a prediction node of unit rows.
pub fn normals_objective_graph<T: Real>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>, lambda: T) -> Result<Var> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::dim("normals_objective", format!("{:?} vs {:?}", g.shape(pred), gt.shape())));
    }
    check_unit("normals_objective", gt)?;
    let target = g.constant(gt.clone());
    let prod = g.mul(pred, target)?;
    let dots = g.row_sum(prod)?;
    let sq = g.square(dots)?;
    let mean_sq = g.mean(sq)?;
    let neg = g.scale(mean_sq, -T::one())?;
    let angular = g.add_scalar(neg, T::one())?;
    if lambda == T::zero() {
        return Ok(angular);
    }
    let diff = g.sub(pred, target)?;
    let diff_sq = g.square(diff)?;
    let m = g.mean(diff_sq)?;
    let reg = g.scale(m, lambda)?;
    g.add(angular, reg)
}

/// Graph form of [`bce_loss`] for logits shaped `[n, 1]` or `[n]`.
pub fn bce_graph<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let y: Vec<T> = labels.iter().map(|&l| if l == 1 { T::one() } else { T::zero() }).collect();
    g.bce_with_logits(logits, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_points(r).unwrap()
    }

    #[test]
    fn angular_examples() {
        let z = rows(&[[0.0, 0.0, 1.0]]);
        let x = rows(&[[1.0, 0.0, 0.0]]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = rows(&[[h, 0.0, h]]);
        assert_eq!(angular_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(angular_loss(&x, &z).unwrap(), 1.0);
        assert!((angular_loss(&d, &z).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(angular_loss(&rows(&[[2.0, 0.0, 0.0]]), &z), Err(Error::Precondition(_))));
    }

    #[test]
    fn objective_examples() {
        let gt = rows(&[[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]]);
        let neg = gt.map(|v| -v);
        assert_eq!(normals_objective(&gt, &gt, 0.01).unwrap(), 0.0);
        assert_eq!(normals_objective(&neg, &gt, 0.0).unwrap(), angular_loss(&neg, &gt).unwrap());
        // Opposite unit rows differ by 4 in squared norm, spread over 3 entries.
        assert!((normals_objective(&neg, &gt, 0.01).unwrap() - 0.01 * 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn graph_objective_matches_value() {
        let pred = rows(&[[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]]);
        let gt = rows(&[[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]]);
        let mut g = Graph::new();
        let p = g.constant(pred.clone());
        let l = normals_objective_graph(&mut g, p, &gt, 0.01).unwrap();
        assert!((g.value(l).item() - normals_objective(&pred, &gt, 0.01).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(&[0.0, 0.0], &[0, 1]).unwrap() - ln2).abs() < 1e-12);
        assert!(bce_loss(&[20.0], &[1]).unwrap() < 1e-8);
        let z = [-3.0, 0.5, 2.0, -0.1];
        let y = [0u8, 1, 0, 1];
        let direct: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + f64::exp(-z));
                let y = y as f64;
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 4.0;
        assert!((bce_loss(&z, &y).unwrap() - direct).abs() < 1e-12);
    }
}
