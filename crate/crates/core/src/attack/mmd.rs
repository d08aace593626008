//! Multi-kernel maximum mean discrepancy between two feature batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const DEFAULT_KERNELS: usize = 5;
/// Used when every point coincides and the median distance is zero.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

/// Convex combination of Gaussian kernels `k_j(x, y) = exp(-|x-y|^2 / (2 sigma_j^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    sigmas: Vec<f64>,
    weights: Vec<f64>,
}

impl KernelSet {
    /// Rejects weights off the simplex and non-positive or repeated bandwidths.
    pub fn new(sigmas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() || sigmas.len() != weights.len() {
            return Err(Error::InvalidArgument(format!("{} bandwidths, {} weights", sigmas.len(), weights.len())));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("kernel bandwidths must be finite and > 0".into()));
        }
        for (i, a) in sigmas.iter().enumerate() {
            if sigmas[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate bandwidth {a}")));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("kernel weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("kernel weights sum to {total}, expected 1")));
        }
        Ok(Self { sigmas, weights })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    /// `m` kernels around a median pairwise distance: the base variance is
    /// `median^2 / 2` and kernel `j` (1-based) uses `base * 2^(j - ceil(m/2))`,
    /// all equally weighted.
    pub fn median_ladder(median_distance: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("kernel count must be positive".into()));
        }
        let base_var = median_distance * median_distance / 2.0;
        let centre = m.div_ceil(2) as i32;
        let sigmas = (1..=m as i32).map(|j| (base_var * 2f64.powi(j - centre)).sqrt()).collect();
        Self::new(sigmas, vec![1.0 / m as f64; m])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn eval(&self, sq_dist: f64) -> f64 {
        self.sigmas
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (-sq_dist / (2.0 * s * s)).exp())
            .sum()
    }

    /// `sum_j beta_j k_j / sigma_j^2`, the pair weight in the gradient.
    fn eval_grad_weight(&self, sq_dist: f64) -> f64 {
        self.sigmas
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (-sq_dist / (2.0 * s * s)).exp() / (s * s))
            .sum()
    }
}

fn rows_f64<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.batch()).map(|i| t.row(i).iter().map(|v| v.as_f64()).collect()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance of the given points, or
/// [`FALLBACK_BANDWIDTH`] when all points coincide.
pub fn median_distance(points: &[&[f64]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("median bandwidth needs at least two points".into()));
    }
    let mut d = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(points[i], points[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 { d[mid] } else { (d[mid - 1] + d[mid]) / 2.0 };
    Ok(if median > 0.0 { median } else { FALLBACK_BANDWIDTH })
}

/// Median distance over the union of two per-sample-flattened batches.
pub fn median_bandwidth<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (ra, rb) = (rows_f64(a), rows_f64(b));
    let pts: Vec<&[f64]> = ra.iter().chain(&rb).map(Vec::as_slice).collect();
    median_distance(&pts)
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.batch() < 2 || b.batch() < 2 {
        return Err(Error::InvalidArgument("mmd needs at least two samples per set".into()));
    }
    if a.row_len() != b.row_len() {
        return Err(Error::Shape(format!("feature dims {} vs {}", a.row_len(), b.row_len())));
    }
    Ok(())
}

fn mean_kernel(k: &KernelSet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in xs {
        for y in ys {
            total += k.eval(sq_dist(x, y));
        }
    }
    total / (xs.len() * ys.len()) as f64
}

/// Biased squared MK-MMD estimate between per-sample-flattened batches.
pub fn mmd2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, k: &KernelSet) -> Result<f64> {
    check_pair(a, b)?;
    let (ra, rb) = (rows_f64(a), rows_f64(b));
    let kaa = mean_kernel(k, &ra, &ra);
    let kbb = mean_kernel(k, &rb, &rb);
    let kab = mean_kernel(k, &ra, &rb);
    Ok(kaa + kbb - 2.0 * kab)
}

/// [`mmd2`] and its gradient with respect to `a` (bandwidths held fixed).
pub fn mmd2_with_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, k: &KernelSet) -> Result<(f64, Tensor<T>)> {
    let value = mmd2(a, b, k)?;
    let (ra, rb) = (rows_f64(a), rows_f64(b));
    let (n, m, d) = (ra.len() as f64, rb.len() as f64, a.row_len());
    let mut grad = vec![0.0; ra.len() * d];
    for (i, ai) in ra.iter().enumerate() {
        let gi = &mut grad[i * d..(i + 1) * d];
        for al in &ra {
            let w = -2.0 / (n * n) * k.eval_grad_weight(sq_dist(ai, al));
            gi.iter_mut().zip(ai.iter().zip(al)).for_each(|(g, (x, y))| *g += w * (x - y));
        }
        for bl in &rb {
            let w = 2.0 / (n * m) * k.eval_grad_weight(sq_dist(ai, bl));
            gi.iter_mut().zip(ai.iter().zip(bl)).for_each(|(g, (x, y))| *g += w * (x - y));
        }
    }
    Ok((value, Tensor::from_f64(a.shape(), &grad)?))
}
