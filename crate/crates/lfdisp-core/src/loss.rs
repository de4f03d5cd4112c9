//! Training losses over disparity maps: mean absolute error, gradient
//! magnitude error, and surface-normal similarity, plus their weighted sum.
//!
//! Spatial gradients are forward differences with zero on the trailing
//! column/row, and N is always the full pixel count. Surface normals are
//! (-grad_y f, -grad_x f, 1), so their norms are >= 1 and the cosine term is
//! always well defined.

use crate::error::{Error, Result};
use crate::lightfield::DisparityMap;
use crate::tensor::Element;

/// Coefficients of the combined loss; all three default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative, got ({}, {}, {})",
                self.lambda1, self.lambda2, self.lambda3
            )));
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0 {
            return Err(Error::InvalidConfig(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Forward difference along x; zero on the last column.
#[inline]
pub(crate) fn grad_x<E: Element>(f: &[E], w: usize, y: usize, x: usize) -> E {
    if x + 1 < w {
        f[y * w + x + 1] - f[y * w + x]
    } else {
        E::ZERO
    }
}

/// Forward difference along y; zero on the last row.
#[inline]
pub(crate) fn grad_y<E: Element>(f: &[E], w: usize, h: usize, y: usize, x: usize) -> E {
    if y + 1 < h {
        f[(y + 1) * w + x] - f[y * w + x]
    } else {
        E::ZERO
    }
}

pub(crate) fn mae_plane<E: Element>(d: &[E], g: &[E]) -> E {
    let mut acc = E::ZERO;
    for (a, b) in d.iter().zip(g) {
        acc += (*a - *b).abs();
    }
    acc / E::from_f64(d.len() as f64)
}

pub(crate) fn grad_plane<E: Element>(d: &[E], g: &[E], h: usize, w: usize) -> E {
    let diff: Vec<E> = d.iter().zip(g).map(|(a, b)| *a - *b).collect();
    let mut acc = E::ZERO;
    for y in 0..h {
        for x in 0..w {
            acc += grad_x(&diff, w, y, x).abs() + grad_y(&diff, w, h, y, x).abs();
        }
    }
    acc / E::from_f64((h * w) as f64)
}

pub(crate) fn normal_plane<E: Element>(d: &[E], g: &[E], h: usize, w: usize) -> E {
    let one = E::ONE;
    let mut acc = E::ZERO;
    for y in 0..h {
        for x in 0..w {
            let a = grad_y(d, w, h, y, x);
            let b = grad_x(d, w, y, x);
            let p = grad_y(g, w, h, y, x);
            let q = grad_x(g, w, y, x);
            // n_d = (-a, -b, 1), n_g = (-p, -q, 1)
            let dot = a * p + b * q + one;
            let nd = (a * a + b * b + one).sqrt();
            let ng = (p * p + q * q + one).sqrt();
            acc += dot / (nd * ng);
        }
    }
    one - acc / E::from_f64((h * w) as f64)
}

fn check_pair(d: &DisparityMap, g: &DisparityMap, context: &str) -> Result<()> {
    if (d.height, d.width) != (g.height, g.width) {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: format!("{}x{}", d.height, d.width),
            actual: format!("{}x{}", g.height, g.width),
        });
    }
    Ok(())
}

fn check_extent(d: &DisparityMap, context: &str) -> Result<()> {
    if d.height < 2 || d.width < 2 {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: "height and width >= 2".into(),
            actual: format!("{}x{}", d.height, d.width),
        });
    }
    Ok(())
}

fn to_f64(map: &DisparityMap) -> Vec<f64> {
    map.values.iter().map(|&v| v as f64).collect()
}

/// Mean absolute difference.
pub fn loss_mae(d: &DisparityMap, g: &DisparityMap) -> Result<f64> {
    check_pair(d, g, "loss_mae")?;
    Ok(mae_plane(&to_f64(d), &to_f64(g)))
}

/// Mean |grad_x D| + |grad_y D| of the difference field D = d - g.
pub fn loss_grad(d: &DisparityMap, g: &DisparityMap) -> Result<f64> {
    check_pair(d, g, "loss_grad")?;
    check_extent(d, "loss_grad")?;
    Ok(grad_plane(&to_f64(d), &to_f64(g), d.height, d.width))
}

/// One minus the mean cosine between per-pixel surface normals. Range [0, 2].
pub fn loss_normal(d: &DisparityMap, g: &DisparityMap) -> Result<f64> {
    check_pair(d, g, "loss_normal")?;
    check_extent(d, "loss_normal")?;
    Ok(normal_plane(&to_f64(d), &to_f64(g), d.height, d.width))
}

/// lambda1 * MAE + lambda2 * gradient loss + lambda3 * normal loss.
pub fn combined_loss(d: &DisparityMap, g: &DisparityMap, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.lambda1 * loss_mae(d, g)? + w.lambda2 * loss_grad(d, g)? + w.lambda3 * loss_normal(d, g)?)
}
