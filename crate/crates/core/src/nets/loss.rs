//! Per-pixel losses, averaged over every value in the batch.

use super::tensor::{Scalar, Tensor};
use super::NetError;

/// Clamp applied to predicted probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

fn check_shapes<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(), NetError> {
    if pred.shape() != target.shape() {
        return Err(NetError::Shape {
            what: "loss target",
            expected: pred.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    if pred.data.is_empty() {
        return Err(NetError::Empty);
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64, NetError> {
    check_shapes(pred, target)?;
    Ok(bce_slice(&pred.data, &target.data))
}

pub(crate) fn bce_slice<T: Scalar>(pred: &[T], target: &[T]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let p = p.f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t.f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    sum / pred.len() as f64
}

/// Loss and its gradient with respect to the predicted probabilities.
pub fn bce_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NetError> {
    let loss = bce(pred, target)?;
    let n = pred.data.len() as f64;
    let mut grad = pred.clone();
    for (g, t) in grad.data.iter_mut().zip(&target.data) {
        let p = g.f64();
        let t = t.f64();
        *g = if p < BCE_EPS || p > 1.0 - BCE_EPS {
            T::zero()
        } else {
            T::of((-(t / p) + (1.0 - t) / (1.0 - p)) / n)
        };
    }
    Ok((loss, grad))
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64, NetError> {
    check_shapes(pred, target)?;
    Ok(mse_slice(&pred.data, &target.data))
}

pub(crate) fn mse_slice<T: Scalar>(pred: &[T], target: &[T]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p.f64() - t.f64();
            d * d
        })
        .sum();
    sum / pred.len() as f64
}

pub fn mse_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NetError> {
    let loss = mse(pred, target)?;
    let n = pred.data.len() as f64;
    let mut grad = pred.clone();
    for (g, t) in grad.data.iter_mut().zip(&target.data) {
        *g = T::of(2.0 * (g.f64() - t.f64()) / n);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: Vec<f64>) -> Tensor<f64> {
        let n = data.len();
        Tensor::from_vec(1, 1, 1, n, data)
    }

    #[test]
    fn perfect_prediction_has_near_zero_bce() {
        let target = t(vec![0.0, 1.0, 1.0, 0.0]);
        let loss = bce(&target, &target).unwrap();
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn half_everywhere_gives_ln2() {
        let pred = t(vec![0.5; 6]);
        let target = t(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!((bce(&pred, &target).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pred = t((0..10).map(|_| rng.gen::<f64>()).collect());
            let target = t((0..10).map(|_| if rng.gen() { 1.0 } else { 0.0 }).collect());
            assert!(bce(&pred, &target).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mse_cases() {
        let a = t(vec![0.1, 0.4, 0.9]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = t(a.data.iter().map(|v| v + 1.0).collect());
        assert!((mse(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..37).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..37).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut oracle = 0.0;
        for i in 0..37 {
            oracle += (p[i] - q[i]) * (p[i] - q[i]);
        }
        oracle /= 37.0;
        assert!((mse(&t(p), &t(q)).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = t(vec![0.5; 3]);
        let b = t(vec![0.5; 4]);
        assert!(matches!(bce(&a, &b), Err(NetError::Shape { .. })));
        assert!(matches!(mse(&a, &b), Err(NetError::Shape { .. })));
    }
}
