use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn to_unit(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error after remapping [-1, 1] values to [0, 1].
pub fn unit_mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    // Neumaier-compensated so constant offsets give the closed-form value
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = to_unit(x.as_f64()) - to_unit(y.as_f64());
        let term = d * d;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    Ok((sum + comp) / a.numel() as f64)
}

/// PSNR in dB with MAX = 1 over the [0, 1] remap; identical inputs give the cap.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(unit_mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Mean local SSIM of one `[C, H, W]` image pair (7x7 uniform window, valid
/// positions only, sample covariance), averaged over channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = match a.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("ssim expects [C, H, W], got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    let positions = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    for ch in 0..c {
        let off = ch * h * w;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let p = to_unit(ad[off + y * w + x].as_f64());
                        let q = to_unit(bd[off + y * w + x].as_f64());
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa - n * ma * ma) / (n - 1.0);
                let vb = (sbb - n * mb * mb) / (n - 1.0);
                let cov = (sab - n * ma * mb) / (n - 1.0);
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
    }
    Ok(total / (c * positions) as f64)
}

/// Mean per-sample cosine similarity and element-wise MSE between two
/// feature batches. Samples where either side has zero norm are excluded
/// from the cosine mean.
pub fn feature_similarity<T: Scalar>(z_sub: &Tensor<T>, z_tgt: &Tensor<T>) -> Result<(f64, f64)> {
    same_shape(z_sub, z_tgt)?;
    let mut cos_sum = 0.0;
    let mut counted = 0usize;
    for i in 0..z_sub.batch() {
        let (a, b) = (z_sub.row(i), z_tgt.row(i));
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (x, y) = (x.as_f64(), y.as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na > 0.0 && nb > 0.0 {
            cos_sum += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Empty("feature similarity: every sample has zero norm"));
    }
    let mse = z_sub
        .data()
        .iter()
        .zip(z_tgt.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / z_sub.numel() as f64;
    Ok((cos_sum / counted as f64, mse))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(vals: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_f64(&[3, 16, 16], &(0..768).map(vals).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn psnr_cap_and_closed_forms() {
        let a = img(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let x = img(|_| -0.5);
        let y = img(|_| -0.3);
        assert_eq!(psnr(&x, &y).unwrap(), 20.0);
        assert!((psnr_from_mse(0.25) - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let mut prev = f64::INFINITY;
        for k in 1..50 {
            let v = psnr_from_mse(k as f64 * 0.01);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = img(|i| ((i * 13) % 17) as f64 / 17.0 * 2.0 - 1.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = img(|_| 0.3);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_binary_is_negative() {
        let a = img(|i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { -1.0 });
        let b = a.map(|v| -v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(&[1, 6, 6]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn feature_similarity_examples() {
        let z = Tensor::<f64>::from_f64(&[2, 3], &[1.0, -2.0, 0.5, 0.3, 0.3, -1.0]).unwrap();
        let mean_sq = z.sum_sq() / 6.0;
        let (c, m) = feature_similarity(&z, &z).unwrap();
        assert!((c - 1.0).abs() < 1e-12 && m == 0.0);
        let (c, m) = feature_similarity(&z.map(|v| -v), &z).unwrap();
        assert!((c + 1.0).abs() < 1e-12 && (m - 4.0 * mean_sq).abs() < 1e-12);
        let (c, m) = feature_similarity(&z.map(|v| 2.0 * v), &z).unwrap();
        assert!((c - 1.0).abs() < 1e-12 && (m - mean_sq).abs() < 1e-12);
        let zero = Tensor::<f64>::zeros(&[2, 3]);
        assert!(feature_similarity(&zero, &z).is_err());
    }
}
