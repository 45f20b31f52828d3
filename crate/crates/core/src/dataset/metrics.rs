use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(peak² / MSE)` with `peak = max(truth)`, capped for near-exact matches.
pub fn psnr(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidConfig("empty image".into()));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    let peak = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Cells with `img > threshold`.
pub fn support_above(img: &[f64], threshold: f64) -> Vec<bool> {
    img.iter().map(|v| *v > threshold).collect()
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `(row, col)` centroid of a mask, in cells.
pub fn centroid(mask: &[bool], nx: usize) -> Option<(f64, f64)> {
    let ones = vec![1.0; mask.len()];
    weighted_centroid(&ones, mask, nx)
}

/// `(row, col)` centroid of `weights` restricted to `mask`.
pub fn weighted_centroid(weights: &[f64], mask: &[bool], nx: usize) -> Option<(f64, f64)> {
    let (mut w, mut r, mut c) = (0.0, 0.0, 0.0);
    for (i, (v, m)) in weights.iter().zip(mask).enumerate() {
        if *m {
            w += v;
            r += v * (i / nx) as f64;
            c += v * (i % nx) as f64;
        }
    }
    (w > 0.0).then(|| (r / w, c / w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    /// Distance between predicted and true support centroids, in cells.
    pub centroid_error: Option<f64>,
    pub iou: f64,
}

/// Compares a predicted ε_R image with the label.
///
/// True support is `truth > 1`. Predicted support uses half the weakest true
/// contrast as threshold, `pred > 1 + (min ε_R − 1)/2`, so every labelled
/// shape can register.
pub fn evaluate(pred: &[f64], truth: &[f64], nx: usize) -> Result<MetricsReport> {
    let psnr = psnr(pred, truth)?;
    let true_mask = support_above(truth, 1.0);
    let weakest = truth.iter().copied().filter(|v| *v > 1.0).fold(f64::INFINITY, f64::min);
    let threshold = if weakest.is_finite() { 1.0 + 0.5 * (weakest - 1.0) } else { 1.5 };
    let pred_mask = support_above(pred, threshold);
    let centroid_error = match (centroid(&pred_mask, nx), centroid(&true_mask, nx)) {
        (Some(a), Some(b)) => Some((a.0 - b.0).hypot(a.1 - b.1)),
        _ => None,
    };
    Ok(MetricsReport {
        psnr,
        centroid_error,
        iou: iou(&pred_mask, &true_mask),
    })
}
