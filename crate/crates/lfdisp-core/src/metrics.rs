//! Evaluation metrics: benchmark-style MSE x100 and BadPix ratios.

use crate::error::{Error, Result};
use crate::lightfield::DisparityMap;
use std::fmt;

pub const BADPIX_THRESHOLDS: [f64; 3] = [0.01, 0.03, 0.07];

fn masked_pairs<'a>(
    d: &'a DisparityMap,
    g: &'a DisparityMap,
    mask: Option<&'a [bool]>,
    context: &str,
) -> Result<impl Iterator<Item = (f32, f32)> + 'a> {
    if (d.height, d.width) != (g.height, g.width) {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: format!("{}x{}", d.height, d.width),
            actual: format!("{}x{}", g.height, g.width),
        });
    }
    if let Some(m) = mask {
        if m.len() != d.values.len() {
            return Err(Error::ShapeMismatch {
                context: context.into(),
                expected: format!("{} mask flags", d.values.len()),
                actual: format!("{}", m.len()),
            });
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidConfig(format!("{context}: empty evaluation mask")));
        }
    }
    let mask_fn = move |i: usize| mask.is_none_or(|m| m[i]);
    Ok(d.values
        .iter()
        .zip(g.values.iter())
        .enumerate()
        .filter(move |(i, _)| mask_fn(*i))
        .map(|(_, (a, b))| (*a, *b)))
}

/// 100 * mean squared error over masked pixels.
pub fn mse_x100(d: &DisparityMap, g: &DisparityMap, mask: Option<&[bool]>) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (a, b) in masked_pairs(d, g, mask, "mse_x100")? {
        let diff = a as f64 - b as f64;
        sum += diff * diff;
        count += 1;
    }
    Ok(100.0 * sum / count as f64)
}

/// Fraction of masked pixels with |d - g| > tau.
pub fn badpix(d: &DisparityMap, g: &DisparityMap, tau: f64, mask: Option<&[bool]>) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "badpix threshold must be positive, got {tau}"
        )));
    }
    let mut bad = 0usize;
    let mut count = 0usize;
    for (a, b) in masked_pairs(d, g, mask, "badpix")? {
        if (a as f64 - b as f64).abs() > tau {
            bad += 1;
        }
        count += 1;
    }
    Ok(bad as f64 / count as f64)
}

/// Mean absolute error over masked pixels.
pub fn masked_mae(d: &DisparityMap, g: &DisparityMap, mask: Option<&[bool]>) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (a, b) in masked_pairs(d, g, mask, "masked_mae")? {
        sum += (a as f64 - b as f64).abs();
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Per-scene evaluation summary.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub scene: String,
    pub mse_x100: f64,
    pub badpix: [f64; 3],
    pub seconds: f64,
}

impl MetricsReport {
    pub fn compute(
        scene: &str,
        d: &DisparityMap,
        g: &DisparityMap,
        mask: Option<&[bool]>,
        seconds: f64,
    ) -> Result<Self> {
        Ok(MetricsReport {
            scene: scene.to_string(),
            mse_x100: mse_x100(d, g, mask)?,
            badpix: [
                badpix(d, g, BADPIX_THRESHOLDS[0], mask)?,
                badpix(d, g, BADPIX_THRESHOLDS[1], mask)?,
                badpix(d, g, BADPIX_THRESHOLDS[2], mask)?,
            ],
            seconds,
        })
    }

    pub const CSV_HEADER: &'static str = "scene,mse_x100,badpix_001,badpix_003,badpix_007,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.scene, self.mse_x100, self.badpix[0], self.badpix[1], self.badpix[2], self.seconds
        )
    }

    /// Unweighted mean of several reports, labelled `mean`.
    pub fn mean_of(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricsReport {
            scene: "mean".into(),
            mse_x100: reports.iter().map(|r| r.mse_x100).sum::<f64>() / n,
            badpix: [
                reports.iter().map(|r| r.badpix[0]).sum::<f64>() / n,
                reports.iter().map(|r| r.badpix[1]).sum::<f64>() / n,
                reports.iter().map(|r| r.badpix[2]).sum::<f64>() / n,
            ],
            seconds: reports.iter().map(|r| r.seconds).sum::<f64>(),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scene       : {}", self.scene)?;
        writeln!(f, "mse_x100    : {:.6}", self.mse_x100)?;
        writeln!(f, "badpix 0.01 : {:.6}", self.badpix[0])?;
        writeln!(f, "badpix 0.03 : {:.6}", self.badpix[1])?;
        writeln!(f, "badpix 0.07 : {:.6}", self.badpix[2])?;
        write!(f, "seconds     : {:.3}", self.seconds)
    }
}
