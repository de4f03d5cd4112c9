//! Scalar-loop loss references, written against the formulas directly.

/// Mean absolute difference over all pixels.
pub fn loss_mae_reference(d: &[f64], g: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mut total = 0.0;
    for i in 0..d.len() {
        total += (d[i] - g[i]).abs();
    }
    total / n
}

fn fwd_x(f: &[f64], w: usize, y: usize, x: usize) -> f64 {
    if x + 1 < w {
        f[y * w + x + 1] - f[y * w + x]
    } else {
        0.0
    }
}

fn fwd_y(f: &[f64], w: usize, h: usize, y: usize, x: usize) -> f64 {
    if y + 1 < h {
        f[(y + 1) * w + x] - f[y * w + x]
    } else {
        0.0
    }
}

/// Mean |grad_x D| + |grad_y D| with forward differences, D = d - g.
pub fn loss_grad_reference(d: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let diff: Vec<f64> = d.iter().zip(g).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            total += fwd_x(&diff, w, y, x).abs() + fwd_y(&diff, w, h, y, x).abs();
        }
    }
    total / (h * w) as f64
}

/// 1 - mean cosine between normals (-grad_y f, -grad_x f, 1).
pub fn loss_normal_reference(d: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let nd = [-fwd_y(d, w, h, y, x), -fwd_x(d, w, y, x), 1.0];
            let ng = [-fwd_y(g, w, h, y, x), -fwd_x(g, w, y, x), 1.0];
            let dot = nd[0] * ng[0] + nd[1] * ng[1] + nd[2] * ng[2];
            let len_d = (nd[0] * nd[0] + nd[1] * nd[1] + 1.0).sqrt();
            let len_g = (ng[0] * ng[0] + ng[1] * ng[1] + 1.0).sqrt();
            total += dot / (len_d * len_g);
        }
    }
    1.0 - total / (h * w) as f64
}
