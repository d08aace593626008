//! Sample distance correlation and its gradient.
//!
//! The statistic is the ratio of double-centred distance-matrix products,
//! `mean(A∘B) / sqrt(mean(A∘A) · mean(B∘B))` (Székely's squared V-statistic
//! form), which lies in [0, 1].

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const MIN_DCOR_SAMPLES: usize = 4;

fn centred_distances<T: Scalar>(t: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let n = t.batch();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| t.row(i).iter().map(|v| v.as_f64()).collect()).collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = d[i * n + j] - row_mean[i] - row_mean[j] + grand;
        }
    }
    (d, c)
}

fn check<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>) -> Result<()> {
    if x.batch() != z.batch() {
        return Err(Error::Shape(format!("{} vs {} samples", x.batch(), z.batch())));
    }
    if x.batch() < MIN_DCOR_SAMPLES {
        return Err(Error::InvalidArgument(format!("distance correlation needs n >= {MIN_DCOR_SAMPLES}")));
    }
    Ok(())
}

struct Moments {
    cov: f64,
    var_x: f64,
    var_z: f64,
}

fn moments(a: &[f64], b: &[f64], n: usize) -> Moments {
    let nn = (n * n) as f64;
    Moments {
        cov: a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / nn,
        var_x: a.iter().map(|p| p * p).sum::<f64>() / nn,
        var_z: b.iter().map(|q| q * q).sum::<f64>() / nn,
    }
}

fn dcor_from(m: &Moments) -> f64 {
    let denom = (m.var_x * m.var_z).sqrt();
    if denom <= 0.0 {
        return 0.0;
    }
    (m.cov / denom).clamp(0.0, 1.0)
}

/// Distance correlation of per-sample-flattened `x` and `z`, in [0, 1];
/// zero when either distance variance vanishes.
pub fn distance_correlation<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>) -> Result<f64> {
    check(x, z)?;
    let (_, a) = centred_distances(x);
    let (_, b) = centred_distances(z);
    Ok(dcor_from(&moments(&a, &b, x.batch())))
}

/// Distance correlation and its gradient with respect to `z`.
pub fn distance_correlation_with_grad<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(x, z)?;
    let n = x.batch();
    let (_, a) = centred_distances(x);
    let (dz, b) = centred_distances(z);
    let m = moments(&a, &b, n);
    let r = dcor_from(&m);
    let mut grad = vec![0.0; z.numel()];
    let denom = (m.var_x * m.var_z).sqrt();
    if r > 0.0 && r < 1.0 && denom > 0.0 {
        // d(dcor)/dB_ij; double centring is a self-adjoint projection and
        // this combination of centred matrices is already centred.
        let scale = 1.0 / ((n * n) as f64 * denom);
        let d = z.row_len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().map(|v| v.as_f64()).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                let dist = dz[i * n + j];
                if i == j || dist == 0.0 {
                    continue;
                }
                let g = scale * (a[i * n + j] - m.cov * b[i * n + j] / m.var_z);
                // b_ij and b_ji both move with z_i
                let w = 2.0 * g / dist;
                for k in 0..d {
                    grad[i * d + k] += w * (rows[i][k] - rows[j][k]);
                }
            }
        }
    }
    Ok((r, Tensor::from_f64(z.shape(), &grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: usize, d: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_f64(&[n, d], &(0..n * d).map(f).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let x = t(6, 3, |i| ((i * 37) % 11) as f64 - 5.0);
        assert!((distance_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_is_zero() {
        let x = t(6, 3, |i| i as f64);
        let z = t(6, 2, |_| 4.2);
        assert_eq!(distance_correlation(&x, &z).unwrap(), 0.0);
    }

    #[test]
    fn too_few_samples() {
        let x = t(3, 2, |i| i as f64);
        assert!(distance_correlation(&x, &x).is_err());
    }

    #[test]
    fn symmetric() {
        let x = t(7, 3, |i| (i as f64 * 0.7).sin());
        let z = t(7, 2, |i| (i as f64 * 1.3).cos());
        let a = distance_correlation(&x, &z).unwrap();
        let b = distance_correlation(&z, &x).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = t(6, 4, |i| (i as f64 * 0.37).sin());
        let z = t(6, 3, |i| (i as f64 * 0.91).cos() + 0.1 * i as f64);
        let (_, g) = distance_correlation_with_grad(&x, &z).unwrap();
        let h = 1e-6;
        for i in 0..z.numel() {
            let mut p = z.clone();
            p.data_mut()[i] += h;
            let mut m = z.clone();
            m.data_mut()[i] -= h;
            let fd = (distance_correlation(&x, &p).unwrap() - distance_correlation(&x, &m).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-7, "{i}: {fd} vs {}", g.data()[i]);
        }
    }
}
