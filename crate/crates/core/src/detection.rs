//! Simplified gradients scrutinizer.
//!
//! Honest servers return gradients that are more alike within a label than
//! across labels. The monitor tracks the per-batch gap between mean
//! same-label and cross-label cosine similarity of the gradients the client
//! receives and scores a sliding window of gaps as
//! `mean_gap - overlap_weight * overlap_ratio - fit_error`, where the overlap
//! ratio is the fraction of non-positive gaps and the fit error is the RMS
//! residual of a least-squares line through the gap series.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsConfig {
    /// Gradient returns ignored before monitoring starts.
    pub warmup: usize,
    pub window: usize,
    pub threshold: f64,
    pub overlap_weight: f64,
}

impl Default for GsConfig {
    fn default() -> Self {
        Self { warmup: 450, window: 32, threshold: 0.05, overlap_weight: 0.5 }
    }
}

impl GsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidArgument("GS window must be >= 2".into()));
        }
        if !(self.overlap_weight >= 0.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("GS overlap weight must be >= 0 and threshold finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub mean_gap: f64,
    pub overlap: f64,
    pub fit_error: f64,
    pub attack: bool,
}

/// Mean pairwise cosine of same-label and cross-label gradient rows.
/// Zero-norm rows are excluded; a side with no pairs is `None`.
pub fn batch_similarities<T: Scalar>(grads: &Tensor<T>, labels: &[usize]) -> Result<(Option<f64>, Option<f64>)> {
    let n = grads.batch();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two gradient rows".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} gradient rows, {} labels", labels.len())));
    }
    let rows: Vec<(usize, Vec<f64>)> = (0..n)
        .filter_map(|i| {
            let r: Vec<f64> = grads.row(i).iter().map(|v| v.as_f64()).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| (labels[i], r.into_iter().map(|v| v / norm).collect()))
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("every gradient row has zero norm"));
    }
    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = rows[i].1.iter().zip(&rows[j].1).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            if rows[i].0 == rows[j].0 {
                same += c;
                n_same += 1;
            } else {
                diff += c;
                n_diff += 1;
            }
        }
    }
    let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
    Ok((mean(same, n_same), mean(diff, n_diff)))
}

fn linear_fit_rms(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let fit = my + slope * (i as f64 - mx);
            (y - fit).powi(2)
        })
        .sum();
    (sse / n).sqrt()
}

/// Score a window of gap values.
pub fn window_score(gaps: &[f64], overlap_weight: f64, threshold: f64) -> Verdict {
    let n = gaps.len() as f64;
    let mean_gap = gaps.iter().sum::<f64>() / n;
    let overlap = gaps.iter().filter(|&&g| g <= 0.0).count() as f64 / n;
    let fit_error = linear_fit_rms(gaps);
    let score = mean_gap - overlap_weight * overlap - fit_error;
    Verdict { score, mean_gap, overlap, fit_error, attack: score < threshold }
}

#[derive(Debug, Clone)]
pub struct GradientsScrutinizer {
    config: GsConfig,
    gaps: VecDeque<f64>,
    seen: usize,
    verdict: Option<Verdict>,
}

impl GradientsScrutinizer {
    pub fn new(config: GsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, gaps: VecDeque::with_capacity(config.window), seen: 0, verdict: None })
    }

    pub fn config(&self) -> &GsConfig {
        &self.config
    }

    pub fn iterations(&self) -> usize {
        self.seen
    }

    pub fn current_verdict(&self) -> Option<&Verdict> {
        self.verdict.as_ref()
    }

    /// Feed one received gradient batch. Returns a verdict once warmup is
    /// over and the window is full.
    pub fn update<T: Scalar>(&mut self, grads: &Tensor<T>, labels: &[usize]) -> Result<Option<Verdict>> {
        self.seen += 1;
        if self.seen <= self.config.warmup {
            return Ok(None);
        }
        let (same, diff) = match batch_similarities(grads, labels) {
            Ok(v) => v,
            Err(Error::Empty(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if let (Some(s), Some(d)) = (same, diff) {
            if self.gaps.len() == self.config.window {
                self.gaps.pop_front();
            }
            self.gaps.push_back(s - d);
        }
        if self.gaps.len() < self.config.window {
            return Ok(None);
        }
        let window: Vec<f64> = self.gaps.iter().copied().collect();
        let v = window_score(&window, self.config.overlap_weight, self.config.threshold);
        self.verdict = Some(v);
        Ok(Some(v))
    }
}
