//! Reconstruction quality and feature similarity metrics, plus report and
//! image-grid persistence.

mod ppm;
mod quality;

pub use ppm::{encode_grid_ppm, encode_grid_ppm_with_comment, from_byte, read_ppm, to_byte, write_grid_ppm};
pub use quality::{feature_similarity, psnr, psnr_from_mse, ssim, unit_mse, PSNR_CAP_DB, SSIM_WINDOW};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Column header of the per-image CSV.
pub const CSV_HEADER: &str = "index,psnr,ssim,mse";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub images: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub cosine: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_similarity: Option<FeatureSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub extra: BTreeMap<String, f64>,
    #[serde(skip)]
    pub per_image: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            status: "completed".into(),
            iterations: 0,
            task_accuracy: None,
            reconstruction: None,
            feature_similarity: None,
            error: None,
            extra: BTreeMap::new(),
            per_image: Vec::new(),
        }
    }

    /// Score reconstructions against ground truth, one `[C, H, W]` pair per image.
    pub fn set_reconstruction<T: Scalar>(&mut self, truth: &[Tensor<T>], recon: &[Tensor<T>]) -> Result<()> {
        if truth.len() != recon.len() {
            return Err(Error::Shape(format!("{} truths, {} reconstructions", truth.len(), recon.len())));
        }
        if truth.is_empty() {
            return Err(Error::Empty("reconstruction set"));
        }
        self.per_image = truth
            .iter()
            .zip(recon)
            .enumerate()
            .map(|(index, (t, r))| {
                let mse = unit_mse(r, t)?;
                Ok(ImageMetrics { index, psnr: psnr_from_mse(mse), ssim: ssim(r, t)?, mse })
            })
            .collect::<Result<_>>()?;
        let n = self.per_image.len() as f64;
        self.reconstruction = Some(ReconstructionSummary {
            images: self.per_image.len(),
            mean_psnr: self.per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: self.per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            mean_mse: self.per_image.iter().map(|m| m.mse).sum::<f64>() / n,
        });
        Ok(())
    }

    pub fn per_image_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for m in &self.per_image {
            let _ = writeln!(s, "{},{},{},{}", m.index, m.psnr, m.ssim, m.mse);
        }
        s
    }
}

/// Persist `report.json` and, when reconstructions were scored, `per_image.csv`.
pub fn write_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    if !report.per_image.is_empty() {
        fs::write(dir.join("per_image.csv"), report.per_image_csv())?;
    }
    Ok(())
}
