use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

pub const SYNTHETIC_CLASSES: [&str; 4] = ["disk", "square", "cross", "stripes"];
/// Classes standing in for the "living" half of a living/non-living split.
pub const SYNTHETIC_LIVING: &[usize] = &[0, 1];

const BACKGROUND: [f64; 3] = [-0.45, -0.35, -0.25];
const FOREGROUND: [f64; 3] = [0.45, 0.30, 0.15];
/// Full periods across the image so the texture has zero mean per row.
const TEXTURE_CYCLES: f64 = 4.0;

/// Offsets separating a shifted ("auxiliary") generator from the base one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    /// Added to every pixel of the corresponding channel.
    #[serde(default)]
    pub palette_offset: [f64; 3],
    /// Amplitude of a zero-mean horizontal sinusoidal texture.
    #[serde(default)]
    pub texture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub num_classes: usize,
    pub color_jitter: f64,
    pub position_jitter: f64,
    pub background_noise: f64,
    pub domain_shift: DomainShift,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 16,
            num_classes: 4,
            color_jitter: 0.15,
            position_jitter: 2.0,
            background_noise: 0.05,
            domain_shift: DomainShift::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size != 16 && self.image_size != 32 {
            return Err(Error::InvalidArgument(format!("image_size must be 16 or 32, got {}", self.image_size)));
        }
        if !(2..=SYNTHETIC_CLASSES.len()).contains(&self.num_classes) {
            return Err(Error::InvalidArgument(format!("num_classes must be in 2..=4, got {}", self.num_classes)));
        }
        let nonneg = [self.color_jitter, self.position_jitter, self.background_noise, self.domain_shift.texture];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("jitter, noise and texture must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn inside(class: usize, dx: f64, dy: f64, r: f64, stripe_phase: f64) -> bool {
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        2 => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        _ => ((dy + stripe_phase).rem_euclid(4.0)) < 2.0,
    }
}

/// Balanced procedural shapes dataset; labels are `i mod K` in shuffled order.
pub fn gen_synthetic(spec: &SyntheticSpec, n: usize, rng: &mut Rng) -> Result<ImageDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if n < spec.num_classes {
        return Err(Error::InvalidArgument(format!("need at least {} samples, got {n}", spec.num_classes)));
    }
    let s = spec.image_size;
    let plane = s * s;
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    rng.shuffle(&mut labels);
    let mut data = vec![0.0; n * 3 * plane];
    let centre = (s as f64 - 1.0) / 2.0;
    for (i, &label) in labels.iter().enumerate() {
        let mut bg = [0.0; 3];
        let mut fg = [0.0; 3];
        for c in 0..3 {
            bg[c] = BACKGROUND[c] + spec.color_jitter * rng.uniform_range(-1.0, 1.0);
            fg[c] = FOREGROUND[c] + spec.color_jitter * rng.uniform_range(-1.0, 1.0);
        }
        let cx = centre + spec.position_jitter * rng.uniform_range(-1.0, 1.0);
        let cy = centre + spec.position_jitter * rng.uniform_range(-1.0, 1.0);
        let r = s as f64 * rng.uniform_range(0.24, 0.32);
        let stripe_phase = rng.uniform_range(0.0, 4.0);
        let img = &mut data[i * 3 * plane..(i + 1) * 3 * plane];
        for y in 0..s {
            for x in 0..s {
                let hit = inside(label, x as f64 - cx, y as f64 - cy, r, stripe_phase);
                let texture = spec.domain_shift.texture * (2.0 * PI * TEXTURE_CYCLES * x as f64 / s as f64).sin();
                for c in 0..3 {
                    let base = if hit { fg[c] } else { bg[c] };
                    let v = base + spec.background_noise * rng.normal() + texture + spec.domain_shift.palette_offset[c];
                    img[c * plane + y * s + x] = v.clamp(-1.0, 1.0);
                }
            }
        }
    }
    let images = Tensor::new(&[n, 3, s, s], data)?;
    let names = SYNTHETIC_CLASSES[..spec.num_classes].iter().map(|s| s.to_string()).collect();
    ImageDataset::new(images, labels, names, Provenance::Synthetic)
}
