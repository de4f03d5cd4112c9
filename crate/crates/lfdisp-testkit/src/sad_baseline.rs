//! Classic local window-matching disparity baseline: per pixel, pick the
//! candidate disparity with the lowest sum of absolute differences over a
//! square window across all views. Fails by construction wherever the window
//! sees constant color, which is exactly what it is here to demonstrate.

use lfdisp_core::{DisparityMap, LightField};

fn grayscale(lf: &LightField, u: usize, v: usize) -> Vec<f64> {
    let (h, w) = (lf.height(), lf.width());
    let view = lf.view(u, v);
    (0..h * w)
        .map(|p| (0..3).map(|ch| view[ch * h * w + p] as f64).sum::<f64>() / 3.0)
        .collect()
}

fn sample(img: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
    let bot = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// SAD matching over the centered `side x side` view sub-grid with a
/// `window x window` patch, searching disparities lo..=hi in `step`
/// increments (first minimum wins ties).
pub fn sad_disparity(
    lf: &LightField,
    side: usize,
    window: usize,
    lo: f64,
    hi: f64,
    step: f64,
) -> DisparityMap {
    let (h, w) = (lf.height(), lf.width());
    let (cu, cv) = lf.central();
    let half = (window / 2) as isize;
    let offset = (side / 2) as isize;

    let central = grayscale(lf, cu, cv);
    let mut others = Vec::new();
    for dv in -offset..=offset {
        for du in -offset..=offset {
            if du == 0 && dv == 0 {
                continue;
            }
            let u = (cu as isize + du) as usize;
            let v = (cv as isize + dv) as usize;
            others.push((du as f64, dv as f64, grayscale(lf, u, v)));
        }
    }

    let steps = ((hi - lo) / step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * step).collect();

    let mut values = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best_cost = f64::INFINITY;
            let mut best_d = grid[0];
            for &d in &grid {
                let mut cost = 0.0;
                for (du, dv, img) in &others {
                    for wy in -half..=half {
                        for wx in -half..=half {
                            let px = (x as isize + wx).clamp(0, w as isize - 1) as f64;
                            let py = (y as isize + wy).clamp(0, h as isize - 1) as f64;
                            let reference = central[py as usize * w + px as usize];
                            let shifted = sample(img, h, w, px - du * d, py - dv * d);
                            cost += (reference - shifted).abs();
                        }
                    }
                }
                if cost < best_cost {
                    best_cost = cost;
                    best_d = d;
                }
            }
            values[y * w + x] = best_d as f32;
        }
    }
    DisparityMap::new(h, w, values).expect("finite values by construction")
}
