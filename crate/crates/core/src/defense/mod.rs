//! Client-side protections: distance-correlation minimization, per-sample
//! gradient clipping with Laplace noise, and Laplace noise on smashed data.

mod dcor;

pub use dcor::{distance_correlation, distance_correlation_with_grad, MIN_DCOR_SAMPLES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    /// Client loss `alpha * dcor(x, z) + (1 - alpha) * task`.
    Dcor { alpha: f64 },
    /// Clip each per-sample row of the returned gradient to norm `clip`,
    /// then add Laplace(0, `scale`) noise.
    Dp { clip: f64, scale: f64 },
    /// Add Laplace(0, `sigma`) noise to smashed data before sending.
    Noise { sigma: f64 },
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match *self {
            Self::None => Ok(()),
            Self::Dcor { alpha } if !(0.0..=1.0).contains(&alpha) => bad("dcor alpha must be in [0, 1]"),
            Self::Dp { clip, scale } if !(clip > 0.0 && clip.is_finite()) || !(scale >= 0.0 && scale.is_finite()) => {
                bad("dp needs clip > 0 and scale >= 0")
            }
            Self::Noise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad("noise sigma must be >= 0"),
            _ => Ok(()),
        }
    }

    /// Reporting label `clip / scale` for dp; not a privacy guarantee.
    pub fn nominal_epsilon(&self) -> Option<f64> {
        match *self {
            Self::Dp { clip, scale } if scale > 0.0 => Some(clip / scale),
            Self::Dp { .. } => Some(f64::INFINITY),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Dcor { .. } => "dcor",
            Self::Dp { .. } => "dp",
            Self::Noise { .. } => "noise",
        }
    }
}

/// Clip every leading-dimension row to L2 norm `clip`, then add
/// elementwise Laplace(0, `scale`) noise.
pub fn dp_sanitize<T: Scalar>(grad: &Tensor<T>, clip: f64, scale: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(clip > 0.0) {
        return Err(Error::InvalidArgument(format!("clip must be > 0, got {clip}")));
    }
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {scale}")));
    }
    grad.ensure_finite("gradient to sanitize")?;
    let mut out = grad.detach();
    for i in 0..out.batch() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if norm > clip {
            let f = clip / norm;
            row.iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() * f));
        }
    }
    if scale > 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() + rng.laplace(scale)));
    }
    Ok(out)
}

/// `z + Laplace(0, sigma)` elementwise.
pub fn noise_obfuscate<T: Scalar>(z: &Tensor<T>, sigma: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(z.detach());
    }
    let mut out = z.detach();
    out.data_mut().iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() + rng.laplace(sigma)));
    Ok(out)
}

/// Client gradient for the dcor defense: `alpha * d dcor(x, z)/dz + (1 - alpha) * g_task`.
/// Returns the blended gradient and the dcor value.
pub fn dcor_client_grad<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>, task_grad: &Tensor<T>, alpha: f64) -> Result<(Tensor<T>, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if task_grad.shape() != z.shape() {
        return Err(Error::Shape(format!("task gradient {:?} vs smashed {:?}", task_grad.shape(), z.shape())));
    }
    let xf = x.clone().reshape(&[x.batch(), x.row_len()])?;
    let zf = z.clone().reshape(&[z.batch(), z.row_len()])?;
    if alpha == 0.0 {
        return Ok((task_grad.detach(), distance_correlation(&xf, &zf)?));
    }
    let (value, g) = distance_correlation_with_grad(&xf, &zf)?;
    if alpha == 1.0 {
        return Ok((g.reshape(z.shape())?, value));
    }
    let (a, b) = (T::from_f64(alpha), T::from_f64(1.0 - alpha));
    let mut out = task_grad.detach();
    out.data_mut().iter_mut().zip(g.data()).for_each(|(t, d)| *t = a * *d + b * *t);
    Ok((out, value))
}

/// Scalar client objective `alpha * dcor + (1 - alpha) * task`.
pub fn dcor_client_loss(dcor: f64, task_loss: f64, alpha: f64) -> f64 {
    alpha * dcor + (1.0 - alpha) * task_loss
}
