//! EPI slope measurement by cross-correlation: estimate the disparity of a
//! region from how far content shifts between views, independently of any
//! rendering or network code.

use lfdisp_core::LightField;

/// Candidate disparities are i/50 for i in -130..=130 (step 0.02 covering
/// [-2.6, 2.6]); integer disparities are represented exactly.
fn candidates() -> impl Iterator<Item = f64> {
    (-130..=130).map(|i| i as f64 / 50.0)
}

fn gray_row(lf: &LightField, u: usize, v: usize, y: usize) -> Vec<f64> {
    let (h, w) = (lf.height(), lf.width());
    let view = lf.view(u, v);
    (0..w)
        .map(|x| {
            let mut acc = 0.0;
            for ch in 0..3 {
                acc += view[ch * h * w + y * w + x] as f64;
            }
            acc / 3.0
        })
        .collect()
}

fn sample_row(row: &[f64], x: f64) -> f64 {
    let max = (row.len() - 1) as f64;
    let x = x.clamp(0.0, max);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(row.len() - 1);
    let f = x - x0 as f64;
    row[x0] * (1.0 - f) + row[x1] * f
}

/// Squared-difference cost of hypothesis `d` accumulated over the given rows
/// and view offsets; 0 exactly when the views are exact translations by d.
/// A view at offset `du` samples the scene at (x + du*d), so a central-view
/// feature at x reappears there at (x - du*d).
fn shift_cost(
    lf: &LightField,
    rows: &[usize],
    x0: usize,
    x1: usize,
    max_view_offset: usize,
    d: f64,
) -> f64 {
    let (cu, cv) = lf.central();
    let mut cost = 0.0;
    for &y in rows {
        let reference = gray_row(lf, cu, cv, y);
        for du in 1..=max_view_offset as isize {
            for direction in [-1isize, 1] {
                let offset = du * direction;
                let u = (cu as isize + offset) as usize;
                let row = gray_row(lf, u, cv, y);
                for x in x0..x1 {
                    let shifted = sample_row(&row, x as f64 - offset as f64 * d);
                    let diff = reference[x] - shifted;
                    cost += diff * diff;
                }
            }
        }
    }
    cost
}

/// Estimate the disparity of the segment [x0, x1) on `rows`, comparing the
/// central view against views up to `max_view_offset` steps away along the
/// central view row. Grid search plus parabolic refinement; a zero-cost grid
/// hit (exact translation) is returned exactly.
pub fn measure_rows_slope(
    lf: &LightField,
    rows: &[usize],
    x0: usize,
    x1: usize,
    max_view_offset: usize,
) -> f64 {
    let grid: Vec<f64> = candidates().collect();
    let costs: Vec<f64> = grid
        .iter()
        .map(|&d| shift_cost(lf, rows, x0, x1, max_view_offset, d))
        .collect();
    let mut best = 0usize;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    if costs[best] == 0.0 || best == 0 || best == grid.len() - 1 {
        return grid[best];
    }
    // parabola through the three points around the minimum
    let (c_prev, c_min, c_next) = (costs[best - 1], costs[best], costs[best + 1]);
    let denom = c_prev - 2.0 * c_min + c_next;
    if denom <= 0.0 {
        return grid[best];
    }
    let delta = 0.5 * (c_prev - c_next) / denom;
    grid[best] + delta.clamp(-1.0, 1.0) * (grid[1] - grid[0])
}

/// Slope of one row segment.
pub fn measure_row_slope(lf: &LightField, y: usize, x0: usize, x1: usize, max_view_offset: usize) -> f64 {
    measure_rows_slope(lf, &[y], x0, x1, max_view_offset)
}

/// Slope of a rectangular region, pooling rows y0..y1 over columns [x0, x1).
pub fn measure_region_slope(
    lf: &LightField,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    max_view_offset: usize,
) -> f64 {
    let rows: Vec<usize> = (y0..y1).collect();
    measure_rows_slope(lf, &rows, x0, x1, max_view_offset)
}
