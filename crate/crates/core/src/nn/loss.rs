//! Scalar losses. Each returns the batch-mean value and the gradient with
//! respect to its first argument.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossOutput<T: Scalar> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// Mean squared error over every element.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<LossOutput<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mse {:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.numel() as f64;
    let mut grad = Tensor::zeros(a.shape());
    let mut sum = 0.0;
    let scale = T::from_f64(2.0 / n);
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok(LossOutput { value: sum / n, grad })
}

/// Softmax cross-entropy of `[N, K]` logits against integer labels.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!("cross_entropy expects [N, K], got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.is_empty() {
        return Err(Error::Empty("cross_entropy batch"));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logits rows, {} labels", labels.len())));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range {k}")));
        }
        let row: Vec<f64> = logits.row(i).iter().map(|v| v.as_f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        total += log_z - row[y];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            let t = if j == y { 1.0 } else { 0.0 };
            *g = T::from_f64((p - t) * inv_n);
        }
    }
    Ok(LossOutput { value: total * inv_n, grad })
}

/// Binary cross-entropy on raw scores (logits) with targets in [0, 1].
pub fn bce_logit<T: Scalar>(scores: &Tensor<T>, targets: &[f64]) -> Result<LossOutput<T>> {
    if targets.is_empty() {
        return Err(Error::Empty("bce batch"));
    }
    if scores.numel() != targets.len() {
        return Err(Error::Shape(format!("{} scores, {} targets", scores.numel(), targets.len())));
    }
    let n = targets.len() as f64;
    let mut grad = Tensor::zeros(scores.shape());
    let mut total = 0.0;
    for ((g, &s), &t) in grad.data_mut().iter_mut().zip(scores.data()).zip(targets) {
        let s = s.as_f64();
        total += s.max(0.0) - s * t + (-s.abs()).exp().ln_1p();
        *g = T::from_f64((sigmoid(s) - t) / n);
    }
    Ok(LossOutput { value: total / n, grad })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = logits.row(*i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let x = Tensor::<f64>::from_f64(&[2], &[0.3, -0.2]).unwrap();
        assert_eq!(mse(&x, &x).unwrap().value, 0.0);
        let a = Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2], &[1.0, 1.0]).unwrap();
        assert_eq!(mse(&a, &b).unwrap().value, 1.0);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros(&[3, 4]);
        let out = cross_entropy(&logits, &[0, 2, 3]).unwrap();
        assert!((out.value - 4f64.ln()).abs() < 1e-12);
        assert!((out.value - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_errors() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        assert!(cross_entropy(&logits, &[0, 3]).is_err());
        assert!(cross_entropy(&logits, &[]).is_err());
    }

    #[test]
    fn cross_entropy_grad_rows_sum_to_zero() {
        let logits = Tensor::<f64>::from_f64(&[2, 3], &[0.1, 2.0, -1.0, 0.5, 0.5, 3.0]).unwrap();
        let out = cross_entropy(&logits, &[1, 0]).unwrap();
        for i in 0..2 {
            assert!(out.grad.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn bce_at_zero_logit() {
        let s = Tensor::<f64>::zeros(&[2]);
        let out = bce_logit(&s, &[1.0, 0.0]).unwrap();
        assert!((out.value - 2f64.ln()).abs() < 1e-12);
        assert_eq!(out.grad.data(), &[-0.25, 0.25]);
    }
}
