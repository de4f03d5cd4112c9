//! 4D light fields, disparity maps, SAI stacking, EPI slicing and
//! geometric augmentation.
//!
//! A light field is a (U, V) grid of RGB views. Views are indexed row-major
//! from the top-left view, so view (u, v) sits at `v * U + u`; u is the
//! horizontal angular coordinate. Pixel values live in [0, 1], each view is
//! stored as three H*W channel planes.

use crate::error::{Error, Result};
use crate::imageio;
use crate::pfm;
use crate::tensor::{Shape, Tensor};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct LightField {
    grid_cols: usize,
    grid_rows: usize,
    height: usize,
    width: usize,
    views: Vec<Vec<f32>>,
}

impl LightField {
    pub fn new(
        grid: (usize, usize),
        height: usize,
        width: usize,
        views: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let (u, v) = grid;
        if u.is_multiple_of(2) || v.is_multiple_of(2) || u == 0 || v == 0 {
            return Err(Error::InvalidConfig(format!(
                "view grid must be odd in both axes, got {u}x{v}"
            )));
        }
        if views.len() != u * v {
            return Err(Error::InvalidConfig(format!(
                "expected {} views for a {}x{} grid, got {}",
                u * v,
                u,
                v,
                views.len()
            )));
        }
        for (i, view) in views.iter().enumerate() {
            if view.len() != 3 * height * width {
                return Err(Error::ViewSizeMismatch {
                    index: i,
                    expected: format!("{} values (3x{}x{})", 3 * height * width, height, width),
                    actual: format!("{} values", view.len()),
                });
            }
        }
        Ok(LightField {
            grid_cols: u,
            grid_rows: v,
            height,
            width,
            views,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_cols, self.grid_rows)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn central(&self) -> (usize, usize) {
        (self.grid_cols / 2, self.grid_rows / 2)
    }

    /// Planar RGB data of view (u, v).
    pub fn view(&self, u: usize, v: usize) -> &[f32] {
        &self.views[v * self.grid_cols + u]
    }

    pub fn view_by_index(&self, index: usize) -> &[f32] {
        &self.views[index]
    }

    /// Pixel (x, y) of channel ch in view (u, v).
    pub fn pixel(&self, u: usize, v: usize, ch: usize, y: usize, x: usize) -> f32 {
        self.view(u, v)[ch * self.height * self.width + y * self.width + x]
    }
}

/// Centered side x side sub-grid of views used as network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewPattern {
    side: usize,
}

impl ViewPattern {
    pub fn new(side: usize) -> Result<Self> {
        if !matches!(side, 3 | 5 | 9) {
            return Err(Error::InvalidConfig(format!(
                "view pattern side must be 3, 5 or 9, got {side}"
            )));
        }
        Ok(ViewPattern { side })
    }

    pub fn side(self) -> usize {
        self.side
    }

    pub fn view_count(self) -> usize {
        self.side * self.side
    }

    /// Selected (u, v) indices in row-major order, centered on the grid.
    pub fn indices(self, grid: (usize, usize)) -> Result<Vec<(usize, usize)>> {
        let (gu, gv) = grid;
        if self.side > gu || self.side > gv {
            return Err(Error::InvalidConfig(format!(
                "pattern {0}x{0} does not fit grid {gu}x{gv}",
                self.side
            )));
        }
        let u0 = gu / 2 - self.side / 2;
        let v0 = gv / 2 - self.side / 2;
        let mut out = Vec::with_capacity(self.side * self.side);
        for v in v0..v0 + self.side {
            for u in u0..u0 + self.side {
                out.push((u, v));
            }
        }
        Ok(out)
    }
}

/// H x W disparity in pixels of shift per adjacent-view step.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "disparity map".into(),
                expected: format!("{} values", height * width),
                actual: format!("{} values", values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "disparity map contains non-finite value {bad}"
            )));
        }
        Ok(DisparityMap {
            height,
            width,
            values,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::ShapeMismatch {
                context: "disparity mask".into(),
                expected: format!("{} flags", self.height * self.width),
                actual: format!("{} flags", mask.len()),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        DisparityMap {
            height,
            width,
            values: vec![value; height * width],
            mask: None,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// One epipolar plane image: one spatial axis crossed with one angular axis,
/// three color planes of angular x spatial each.
#[derive(Debug, Clone)]
pub struct Epi {
    pub angular: usize,
    pub spatial: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiOrientation {
    Horizontal,
    Vertical,
}

impl Epi {
    pub fn channel(&self, ch: usize) -> &[f32] {
        let plane = self.angular * self.spatial;
        &self.data[ch * plane..(ch + 1) * plane]
    }

    pub fn get(&self, ch: usize, a: usize, s: usize) -> f32 {
        self.data[ch * self.angular * self.spatial + a * self.spatial + s]
    }

    /// Largest per-column variance along the angular axis, over all channels.
    /// Zero exactly when every angular column is constant.
    pub fn max_angular_variance(&self) -> f64 {
        let mut worst = 0.0f64;
        for ch in 0..3 {
            for s in 0..self.spatial {
                let mut mean = 0.0f64;
                for a in 0..self.angular {
                    mean += self.get(ch, a, s) as f64;
                }
                mean /= self.angular as f64;
                let mut var = 0.0f64;
                for a in 0..self.angular {
                    let d = self.get(ch, a, s) as f64 - mean;
                    var += d * d;
                }
                worst = worst.max(var / self.angular as f64);
            }
        }
        worst
    }

    /// 8-bit interleaved RGB rows for writing as an image, angular axis as rows.
    pub fn to_rgb8(&self) -> (usize, usize, Vec<u8>) {
        let (h, w) = (self.angular, self.spatial);
        let mut out = vec![0u8; h * w * 3];
        for a in 0..h {
            for s in 0..w {
                for ch in 0..3 {
                    out[(a * w + s) * 3 + ch] = (self.get(ch, a, s).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        (h, w, out)
    }
}

/// Horizontal: EPI[u, x] = view(u, v_fixed)[y_fixed, x].
/// Vertical:   EPI[v, y] = view(u_fixed, v)[y, x_fixed].
pub fn extract_epi(
    lf: &LightField,
    orientation: EpiOrientation,
    spatial_index: usize,
    view_index: usize,
) -> Result<Epi> {
    let (gu, gv) = lf.grid();
    match orientation {
        EpiOrientation::Horizontal => {
            if spatial_index >= lf.height() {
                return Err(Error::IndexOutOfRange(format!(
                    "row {} out of 0..{}",
                    spatial_index,
                    lf.height()
                )));
            }
            if view_index >= gv {
                return Err(Error::IndexOutOfRange(format!(
                    "view row {view_index} out of 0..{gv}"
                )));
            }
            let (angular, spatial) = (gu, lf.width());
            let mut data = vec![0.0f32; 3 * angular * spatial];
            for ch in 0..3 {
                for u in 0..gu {
                    for x in 0..spatial {
                        data[ch * angular * spatial + u * spatial + x] =
                            lf.pixel(u, view_index, ch, spatial_index, x);
                    }
                }
            }
            Ok(Epi {
                angular,
                spatial,
                data,
            })
        }
        EpiOrientation::Vertical => {
            if spatial_index >= lf.width() {
                return Err(Error::IndexOutOfRange(format!(
                    "column {} out of 0..{}",
                    spatial_index,
                    lf.width()
                )));
            }
            if view_index >= gu {
                return Err(Error::IndexOutOfRange(format!(
                    "view column {view_index} out of 0..{gu}"
                )));
            }
            let (angular, spatial) = (gv, lf.height());
            let mut data = vec![0.0f32; 3 * angular * spatial];
            for ch in 0..3 {
                for v in 0..gv {
                    for y in 0..spatial {
                        data[ch * angular * spatial + v * spatial + y] =
                            lf.pixel(view_index, v, ch, y, spatial_index);
                    }
                }
            }
            Ok(Epi {
                angular,
                spatial,
                data,
            })
        }
    }
}

/// Network input paired with its central-view ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    /// (1, 3 * side^2, H, W) channel-stacked SAI tensor.
    pub input: Tensor<f32>,
    pub target: DisparityMap,
    pub side: usize,
}

/// Stack the pattern's views along the channel axis: row-major view order,
/// RGB within each view, shape (1, 3 * side^2, H, W).
pub fn stack_sais(lf: &LightField, pattern: ViewPattern) -> Result<Tensor<f32>> {
    let indices = pattern.indices(lf.grid())?;
    let (h, w) = (lf.height(), lf.width());
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * indices.len() * plane);
    for &(u, v) in &indices {
        data.extend_from_slice(lf.view(u, v));
    }
    Tensor::from_vec(Shape::new(1, 3 * indices.len(), h, w), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentOp {
    FlipLr,
    FlipUd,
    FlipBoth,
    InvertColor,
    Crop { x: usize, y: usize, size: usize },
}

/// Apply one augmentation to a stacked sample. Flips transpose pixel content
/// and the view grid along the same axis; color inversion leaves the target
/// untouched; crops take the same window from input and target.
pub fn augment(sample: &Sample, op: AugmentOp) -> Result<Sample> {
    let shape = sample.input.shape();
    let side = sample.side;
    match op {
        AugmentOp::FlipLr => {
            let input = flip_stack(&sample.input, side, true, false);
            let target = flip_map(&sample.target, true, false);
            Ok(Sample {
                input,
                target,
                side,
            })
        }
        AugmentOp::FlipUd => {
            let input = flip_stack(&sample.input, side, false, true);
            let target = flip_map(&sample.target, false, true);
            Ok(Sample {
                input,
                target,
                side,
            })
        }
        AugmentOp::FlipBoth => {
            let input = flip_stack(&sample.input, side, true, true);
            let target = flip_map(&sample.target, true, true);
            Ok(Sample {
                input,
                target,
                side,
            })
        }
        AugmentOp::InvertColor => Ok(Sample {
            input: sample.input.map(|p| 1.0 - p),
            target: sample.target.clone(),
            side,
        }),
        AugmentOp::Crop { x, y, size } => {
            if x + size > shape.w || y + size > shape.h || size == 0 {
                return Err(Error::CropOutOfBounds {
                    x,
                    y,
                    size,
                    w: shape.w,
                    h: shape.h,
                });
            }
            let mut data = Vec::with_capacity(shape.c * size * size);
            for c in 0..shape.c {
                let plane = sample.input.plane(0, c);
                for yy in y..y + size {
                    data.extend_from_slice(&plane[yy * shape.w + x..yy * shape.w + x + size]);
                }
            }
            let input = Tensor::from_vec(Shape::new(1, shape.c, size, size), data)?;
            let t = &sample.target;
            let mut values = Vec::with_capacity(size * size);
            for yy in y..y + size {
                values.extend_from_slice(&t.values[yy * t.width + x..yy * t.width + x + size]);
            }
            let mut target = DisparityMap::new(size, size, values)?;
            if let Some(mask) = &t.mask {
                let mut m = Vec::with_capacity(size * size);
                for yy in y..y + size {
                    m.extend_from_slice(&mask[yy * t.width + x..yy * t.width + x + size]);
                }
                target = target.with_mask(m)?;
            }
            Ok(Sample {
                input,
                target,
                side,
            })
        }
    }
}

fn flip_stack(input: &Tensor<f32>, side: usize, lr: bool, ud: bool) -> Tensor<f32> {
    let shape = input.shape();
    let (h, w) = (shape.h, shape.w);
    let mut out = Tensor::zeros(shape);
    for c in 0..shape.c {
        let view = c / 3;
        let rgb = c % 3;
        let (u, v) = (view % side, view / side);
        let su = if lr { side - 1 - u } else { u };
        let sv = if ud { side - 1 - v } else { v };
        let src_c = (sv * side + su) * 3 + rgb;
        let src = input.plane(0, src_c).to_vec();
        let dst = out.plane_mut(0, c);
        for y in 0..h {
            let sy = if ud { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if lr { w - 1 - x } else { x };
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    out
}

fn flip_map(map: &DisparityMap, lr: bool, ud: bool) -> DisparityMap {
    let (h, w) = (map.height, map.width);
    let flip_idx = |y: usize, x: usize| {
        let sy = if ud { h - 1 - y } else { y };
        let sx = if lr { w - 1 - x } else { x };
        sy * w + sx
    };
    let mut values = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = map.values[flip_idx(y, x)];
        }
    }
    let mask = map.mask.as_ref().map(|m| {
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = m[flip_idx(y, x)];
            }
        }
        out
    });
    DisparityMap {
        height: h,
        width: w,
        values,
        mask,
    }
}

/// Mirror of [`augment`] acting on a whole light field; used when EPIs of the
/// augmented data are needed.
pub fn augment_lightfield(lf: &LightField, op: AugmentOp) -> Result<LightField> {
    let (gu, gv) = lf.grid();
    let (h, w) = (lf.height(), lf.width());
    match op {
        AugmentOp::FlipLr | AugmentOp::FlipUd | AugmentOp::FlipBoth => {
            let lr = matches!(op, AugmentOp::FlipLr | AugmentOp::FlipBoth);
            let ud = matches!(op, AugmentOp::FlipUd | AugmentOp::FlipBoth);
            let mut views = Vec::with_capacity(gu * gv);
            for v in 0..gv {
                for u in 0..gu {
                    let su = if lr { gu - 1 - u } else { u };
                    let sv = if ud { gv - 1 - v } else { v };
                    let src = lf.view(su, sv);
                    let mut out = vec![0.0f32; 3 * h * w];
                    for ch in 0..3 {
                        for y in 0..h {
                            let sy = if ud { h - 1 - y } else { y };
                            for x in 0..w {
                                let sx = if lr { w - 1 - x } else { x };
                                out[ch * h * w + y * w + x] = src[ch * h * w + sy * w + sx];
                            }
                        }
                    }
                    views.push(out);
                }
            }
            LightField::new((gu, gv), h, w, views)
        }
        AugmentOp::InvertColor => {
            let views = lf
                .views
                .iter()
                .map(|v| v.iter().map(|&p| 1.0 - p).collect())
                .collect();
            LightField::new((gu, gv), h, w, views)
        }
        AugmentOp::Crop { x, y, size } => {
            if x + size > w || y + size > h || size == 0 {
                return Err(Error::CropOutOfBounds { x, y, size, w, h });
            }
            let mut views = Vec::with_capacity(gu * gv);
            for src in &lf.views {
                let mut out = Vec::with_capacity(3 * size * size);
                for ch in 0..3 {
                    for yy in y..y + size {
                        out.extend_from_slice(&src[ch * h * w + yy * w + x..ch * h * w + yy * w + x + size]);
                    }
                }
                views.push(out);
            }
            LightField::new((gu, gv), size, size, views)
        }
    }
}

pub fn view_file_name(index: usize) -> String {
    format!("input_Cam{index:03}.png")
}

/// Load a light field from a directory of input_Cam###.png views in row-major
/// view order. 8-bit pixel p maps to p/255.
pub fn load_lightfield(dir: &Path, grid: (usize, usize)) -> Result<LightField> {
    let (gu, gv) = grid;
    let mut views = Vec::with_capacity(gu * gv);
    let mut size: Option<(usize, usize)> = None;
    for i in 0..gu * gv {
        let path = dir.join(view_file_name(i));
        if !path.is_file() {
            return Err(Error::MissingView {
                index: i,
                dir: dir.to_path_buf(),
            });
        }
        let (w, h, rgb) = imageio::read_png_rgb8(&path)?;
        match size {
            None => size = Some((h, w)),
            Some((eh, ew)) => {
                if (h, w) != (eh, ew) {
                    return Err(Error::ViewSizeMismatch {
                        index: i,
                        expected: format!("{ew}x{eh}"),
                        actual: format!("{w}x{h}"),
                    });
                }
            }
        }
        // interleaved u8 -> planar f32
        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for p in 0..plane {
            for ch in 0..3 {
                data[ch * plane + p] = rgb[p * 3 + ch] as f32 / 255.0;
            }
        }
        views.push(data);
    }
    let (h, w) = size.unwrap();
    LightField::new(grid, h, w, views)
}

/// One on-disk scene: views plus whatever ground truth sits next to them.
#[derive(Debug)]
pub struct Scene {
    pub name: String,
    pub dir: PathBuf,
    pub lightfield: LightField,
    pub gt: Option<DisparityMap>,
    pub mask_textureless: Option<Vec<bool>>,
    pub mask_specular: Option<Vec<bool>>,
    pub disparity_range_hint: Option<(f32, f32)>,
}

pub const GT_FILE: &str = "gt_disp_lowres.pfm";
pub const MASK_TEXTURELESS_FILE: &str = "mask_textureless.png";
pub const MASK_SPECULAR_FILE: &str = "mask_specular.png";

pub fn load_scene(dir: &Path, grid: (usize, usize)) -> Result<Scene> {
    let lightfield = load_lightfield(dir, grid)?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.is_file() {
        Some(pfm::read_pfm(&gt_path)?)
    } else {
        None
    };
    let mask_textureless = read_mask(&dir.join(MASK_TEXTURELESS_FILE))?;
    let mask_specular = read_mask(&dir.join(MASK_SPECULAR_FILE))?;
    let disparity_range_hint = read_range_hint(&dir.join("parameters.cfg"));
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(Scene {
        name,
        dir: dir.to_path_buf(),
        lightfield,
        gt,
        mask_textureless,
        mask_specular,
        disparity_range_hint,
    })
}

fn read_mask(path: &Path) -> Result<Option<Vec<bool>>> {
    if !path.is_file() {
        return Ok(None);
    }
    let (_w, _h, gray) = imageio::read_png_gray8(path)?;
    Ok(Some(gray.iter().map(|&v| v >= 128).collect()))
}

fn read_range_hint(path: &Path) -> Option<(f32, f32)> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut min = None;
    let mut max = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("disp_min") {
            min = rest.trim_start_matches(['=', ' ']).trim().parse::<f32>().ok();
        } else if let Some(rest) = line.strip_prefix("disp_max") {
            max = rest.trim_start_matches(['=', ' ']).trim().parse::<f32>().ok();
        }
    }
    Some((min?, max?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lightfield(grid: (usize, usize), h: usize, w: usize) -> LightField {
        let (gu, gv) = grid;
        let views = (0..gu * gv)
            .map(|i| {
                (0..3 * h * w)
                    .map(|j| ((i * 31 + j * 7) % 256) as f32 / 255.0)
                    .collect()
            })
            .collect();
        LightField::new(grid, h, w, views).unwrap()
    }

    #[test]
    fn stack_shapes_for_all_pattern_sides() {
        let lf = tiny_lightfield((9, 9), 6, 5);
        for side in [3usize, 5, 9] {
            let t = stack_sais(&lf, ViewPattern::new(side).unwrap()).unwrap();
            assert_eq!(t.shape(), Shape::new(1, 3 * side * side, 6, 5));
        }
    }

    #[test]
    fn side3_selects_centered_subgrid() {
        let lf = tiny_lightfield((9, 9), 4, 4);
        let idx = ViewPattern::new(3).unwrap().indices(lf.grid()).unwrap();
        assert_eq!(idx.first(), Some(&(3, 3)));
        assert_eq!(idx.last(), Some(&(5, 5)));
        assert_eq!(idx.len(), 9);
        let t = stack_sais(&lf, ViewPattern::new(3).unwrap()).unwrap();
        // block 4 of 9 is the central view (4, 4)
        assert_eq!(t.plane(0, 4 * 3), lf.view(4, 4)[..16].to_vec());
    }

    #[test]
    fn side9_central_channels_are_central_view() {
        let lf = tiny_lightfield((9, 9), 3, 3);
        let t = stack_sais(&lf, ViewPattern::new(9).unwrap()).unwrap();
        let plane = 9;
        let central = lf.view(4, 4);
        for ch in 0..3 {
            assert_eq!(
                t.plane(0, 120 + ch),
                &central[ch * plane..(ch + 1) * plane],
                "channel {}",
                120 + ch
            );
        }
    }

    #[test]
    fn pattern_larger_than_grid_rejected() {
        let lf = tiny_lightfield((3, 3), 2, 2);
        assert!(stack_sais(&lf, ViewPattern::new(9).unwrap()).is_err());
    }

    #[test]
    fn flip_lr_twice_is_identity() {
        let lf = tiny_lightfield((3, 3), 5, 4);
        let target = DisparityMap::new(5, 4, (0..20).map(|i| i as f32 / 7.0).collect()).unwrap();
        let sample = Sample {
            input: stack_sais(&lf, ViewPattern::new(3).unwrap()).unwrap(),
            target,
            side: 3,
        };
        let once = augment(&sample, AugmentOp::FlipLr).unwrap();
        let twice = augment(&once, AugmentOp::FlipLr).unwrap();
        assert_eq!(twice.input.data(), sample.input.data());
        assert_eq!(twice.target.values, sample.target.values);
    }

    #[test]
    fn invert_color_keeps_target_bits() {
        let lf = tiny_lightfield((3, 3), 4, 4);
        let target = DisparityMap::new(4, 4, (0..16).map(|i| i as f32 * 0.125).collect()).unwrap();
        let sample = Sample {
            input: stack_sais(&lf, ViewPattern::new(3).unwrap()).unwrap(),
            target: target.clone(),
            side: 3,
        };
        let inv = augment(&sample, AugmentOp::InvertColor).unwrap();
        let orig_bits: Vec<u32> = target.values.iter().map(|v| v.to_bits()).collect();
        let new_bits: Vec<u32> = inv.target.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(orig_bits, new_bits);
        assert!(inv
            .input
            .data()
            .iter()
            .zip(sample.input.data())
            .all(|(a, b)| (a + b - 1.0).abs() < 1e-6));
    }

    #[test]
    fn crop_out_of_bounds_rejected() {
        let lf = tiny_lightfield((3, 3), 8, 8);
        let sample = Sample {
            input: stack_sais(&lf, ViewPattern::new(3).unwrap()).unwrap(),
            target: DisparityMap::constant(8, 8, 0.0),
            side: 3,
        };
        let err = augment(&sample, AugmentOp::Crop { x: 4, y: 4, size: 6 }).unwrap_err();
        assert!(matches!(err, Error::CropOutOfBounds { .. }));
    }

    #[test]
    fn flip_matches_lightfield_level_flip() {
        let lf = tiny_lightfield((3, 3), 6, 6);
        let pattern = ViewPattern::new(3).unwrap();
        let sample = Sample {
            input: stack_sais(&lf, pattern).unwrap(),
            target: DisparityMap::constant(6, 6, 0.3),
            side: 3,
        };
        for op in [AugmentOp::FlipLr, AugmentOp::FlipUd, AugmentOp::FlipBoth] {
            let via_sample = augment(&sample, op).unwrap();
            let via_lf = stack_sais(&augment_lightfield(&lf, op).unwrap(), pattern).unwrap();
            assert_eq!(via_sample.input.data(), via_lf.data(), "{op:?}");
        }
    }

    #[test]
    fn epi_of_identical_views_is_angularly_constant() {
        let view: Vec<f32> = (0..3 * 4 * 5).map(|i| (i % 9) as f32 / 9.0).collect();
        let lf = LightField::new((5, 5), 4, 5, vec![view; 25]).unwrap();
        let epi = extract_epi(&lf, EpiOrientation::Horizontal, 2, 2).unwrap();
        assert_eq!(epi.angular, 5);
        assert_eq!(epi.spatial, 5);
        assert_eq!(epi.max_angular_variance(), 0.0);
    }

    #[test]
    fn epi_indexing_matches_definition() {
        let lf = tiny_lightfield((5, 3), 4, 6);
        let epi = extract_epi(&lf, EpiOrientation::Horizontal, 1, 2).unwrap();
        for u in 0..5 {
            for x in 0..6 {
                assert_eq!(epi.get(1, u, x), lf.pixel(u, 2, 1, 1, x));
            }
        }
        let vepi = extract_epi(&lf, EpiOrientation::Vertical, 3, 4).unwrap();
        for v in 0..3 {
            for y in 0..4 {
                assert_eq!(vepi.get(0, v, y), lf.pixel(4, v, 0, y, 3));
            }
        }
    }

    #[test]
    fn epi_rejects_out_of_range_indices() {
        let lf = tiny_lightfield((3, 3), 4, 4);
        assert!(extract_epi(&lf, EpiOrientation::Horizontal, 4, 0).is_err());
        assert!(extract_epi(&lf, EpiOrientation::Horizontal, 0, 3).is_err());
    }
}
