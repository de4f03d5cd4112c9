//! Synthetic light field renderer with exact ground-truth disparity.
//!
//! Scenes are stacks of textured layers at known disparity, composited
//! back-to-front. A view at angular offset (du, dv) samples each layer's
//! texture at (x + du*d, y + dv*d) with bilinear interpolation, so a scene
//! point traces an EPI line of slope exactly d. Specular highlights are
//! additive blobs whose centers drift with the view at a rate deliberately
//! decoupled from the geometry, violating photoconsistency the way real
//! reflections do; they never alter the ground truth.

use crate::error::{Error, Result};
use crate::imageio;
use crate::lightfield::{DisparityMap, LightField, GT_FILE, MASK_SPECULAR_FILE, MASK_TEXTURELESS_FILE};
use crate::parallel::map_indexed;
use crate::pfm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const DEFAULT_DISPARITY_RANGE: (f32, f32) = (-2.0, 2.0);

/// Blob influence below this is not counted as specular in the masks.
const SPECULAR_MASK_THRESHOLD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisparityField {
    Constant(f32),
    /// a*x + b*y + c, in pixels per view step.
    Planar { a: f32, b: f32, c: f32 },
}

impl DisparityField {
    pub fn eval(&self, x: f32, y: f32) -> f32 {
        match *self {
            DisparityField::Constant(v) => v,
            DisparityField::Planar { a, b, c } => a * x + b * y + c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextureSpec {
    /// Smooth random texture; `scale` is the feature size in pixels.
    Noise { scale: usize },
    ConstantColor([f32; 3]),
    Checker {
        period: usize,
        colors: ([f32; 3], [f32; 3]),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Full,
    Rect { x: usize, y: usize, w: usize, h: usize },
}

impl Region {
    /// Whether the (float) sample point falls inside the region.
    fn contains(&self, sx: f32, sy: f32) -> bool {
        match *self {
            Region::Full => true,
            Region::Rect { x, y, w, h } => {
                sx >= x as f32
                    && sx <= (x + w - 1) as f32
                    && sy >= y as f32
                    && sy <= (y + h - 1) as f32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub disparity: DisparityField,
    pub texture: TextureSpec,
    pub region: Region,
}

/// View-dependent additive highlight. `drift` shifts the center by
/// drift * (du, dv) per view step, which no geometric disparity explains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
    pub intensity: f32,
    pub drift: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub grid: (usize, usize),
    /// (height, width) in pixels.
    pub size: (usize, usize),
    /// Back-to-front; the first layer must cover the full frame.
    pub layers: Vec<Layer>,
    pub blobs: Vec<Blob>,
    pub seed: u64,
    pub disparity_range: (f32, f32),
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        let (gu, gv) = self.grid;
        if gu.is_multiple_of(2) || gv.is_multiple_of(2) || gu == 0 || gv == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be odd in both axes, got {gu}x{gv}"
            )));
        }
        let (h, w) = self.size;
        if h < 2 || w < 2 {
            return Err(Error::InvalidConfig(format!("scene size too small: {h}x{w}")));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one layer".into()));
        }
        if self.layers[0].region != Region::Full {
            return Err(Error::InvalidConfig(
                "the first (background) layer must cover the full frame".into(),
            ));
        }
        let (lo, hi) = self.disparity_range;
        for (i, layer) in self.layers.iter().enumerate() {
            let extremes = match layer.disparity {
                DisparityField::Constant(v) => [v, v],
                DisparityField::Planar { a, b, c } => {
                    let xm = (w - 1) as f32;
                    let ym = (h - 1) as f32;
                    let corners = [c, a * xm + c, b * ym + c, a * xm + b * ym + c];
                    [
                        corners.iter().cloned().fold(f32::INFINITY, f32::min),
                        corners.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
                    ]
                }
            };
            if extremes[0] < lo || extremes[1] > hi {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} disparity [{:.3}, {:.3}] outside allowed [{lo}, {hi}]",
                    extremes[0], extremes[1]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub lightfield: LightField,
    pub gt: DisparityMap,
    pub mask_textureless: Vec<bool>,
    pub mask_specular: Vec<bool>,
}

struct TextureImage {
    data: Vec<f32>, // 3 planes of h*w
    h: usize,
    w: usize,
}

impl TextureImage {
    fn sample(&self, ch: usize, x: f32, y: f32) -> f32 {
        // bilinear with edge clamp
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let at = |yy: usize, xx: usize| self.data[ch * self.h * self.w + yy * self.w + xx];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn make_texture(spec: &TextureSpec, h: usize, w: usize, rng: &mut ChaCha8Rng) -> TextureImage {
    let mut data = vec![0.0f32; 3 * h * w];
    match spec {
        TextureSpec::ConstantColor(color) => {
            for ch in 0..3 {
                data[ch * h * w..(ch + 1) * h * w].fill(color[ch]);
            }
        }
        TextureSpec::Checker { period, colors } => {
            let p = (*period).max(1);
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let which = ((x / p) + (y / p)) % 2;
                        let c = if which == 0 { colors.0 } else { colors.1 };
                        data[ch * h * w + y * w + x] = c[ch];
                    }
                }
            }
        }
        TextureSpec::Noise { scale } => {
            // coarse random grid upsampled bilinearly: smooth enough for
            // subpixel matching, textured enough for a sharp correlation peak
            let s = (*scale).max(1);
            let gh = h.div_ceil(s) + 1;
            let gw = w.div_ceil(s) + 1;
            let grid: Vec<f32> = (0..3 * gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
            for ch in 0..3 {
                for y in 0..h {
                    let gy = y as f32 / s as f32;
                    let y0 = gy.floor() as usize;
                    let fy = gy - y0 as f32;
                    for x in 0..w {
                        let gx = x as f32 / s as f32;
                        let x0 = gx.floor() as usize;
                        let fx = gx - x0 as f32;
                        let at = |yy: usize, xx: usize| grid[ch * gh * gw + yy.min(gh - 1) * gw + xx.min(gw - 1)];
                        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                        let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                        data[ch * h * w + y * w + x] = top * (1.0 - fy) + bot * fy;
                    }
                }
            }
        }
    }
    TextureImage { data, h, w }
}

fn blob_contribution(blob: &Blob, cx: f32, cy: f32, x: f32, y: f32) -> f32 {
    let sigma = blob.radius / 2.0;
    let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    blob.intensity * (-d2 / (2.0 * sigma * sigma)).exp()
}

/// 8-bit quantization applied at render time so that writing views as PNG
/// and re-loading them reproduces the in-memory light field exactly.
fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub fn render(spec: &SceneSpec) -> Result<GeneratedSample> {
    spec.validate()?;
    let (gu, gv) = spec.grid;
    let (h, w) = spec.size;
    let (cu, cv) = (gu / 2, gv / 2);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let textures: Vec<TextureImage> = spec
        .layers
        .iter()
        .map(|l| make_texture(&l.texture, h, w, &mut rng))
        .collect();

    let views: Vec<Vec<f32>> = map_indexed(gu * gv, |idx| {
        let (u, v) = (idx % gu, idx / gu);
        let du = u as f32 - cu as f32;
        let dv = v as f32 - cv as f32;
        let mut view = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                // top-most layer whose shifted sample point lands inside it
                let mut chosen = 0usize;
                let mut sx = x as f32;
                let mut sy = y as f32;
                for li in (0..spec.layers.len()).rev() {
                    let layer = &spec.layers[li];
                    let d = layer.disparity.eval(x as f32, y as f32);
                    let lx = x as f32 + du * d;
                    let ly = y as f32 + dv * d;
                    if layer.region.contains(lx, ly) {
                        chosen = li;
                        sx = lx;
                        sy = ly;
                        break;
                    }
                }
                for ch in 0..3 {
                    let mut val = textures[chosen].sample(ch, sx, sy);
                    for blob in &spec.blobs {
                        let bcx = blob.cx + blob.drift * du;
                        let bcy = blob.cy + blob.drift * dv;
                        val += blob_contribution(blob, bcx, bcy, x as f32, y as f32);
                    }
                    view[ch * h * w + y * w + x] = quantize(val);
                }
            }
        }
        view
    });

    // ground truth and masks are defined at the central view
    let mut gt = vec![0.0f32; h * w];
    let mut mask_textureless = vec![false; h * w];
    let mut mask_specular = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut chosen = 0usize;
            for li in (0..spec.layers.len()).rev() {
                if spec.layers[li].region.contains(x as f32, y as f32) {
                    chosen = li;
                    break;
                }
            }
            gt[y * w + x] = spec.layers[chosen].disparity.eval(x as f32, y as f32);
            let specular = spec.blobs.iter().any(|b| {
                blob_contribution(b, b.cx, b.cy, x as f32, y as f32) > SPECULAR_MASK_THRESHOLD
            });
            let textureless = matches!(spec.layers[chosen].texture, TextureSpec::ConstantColor(_));
            mask_specular[y * w + x] = specular;
            mask_textureless[y * w + x] = textureless && !specular;
        }
    }

    Ok(GeneratedSample {
        lightfield: LightField::new(spec.grid, h, w, views)?,
        gt: DisparityMap::new(h, w, gt)?,
        mask_textureless,
        mask_specular,
    })
}

/// Knobs for [`gen_corpus`].
#[derive(Debug, Clone, Copy)]
pub struct CorpusOptions {
    pub views: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            views: 9,
            size: 48,
            seed: 0,
        }
    }
}

/// Randomized scene recipe for corpus index `i`; deterministic in
/// (seed, index). At least 40% of scenes get a texture-less rectangle of at
/// least 16x16 and at least 40% get a specular blob.
pub fn scene_spec_for_index(opts: &CorpusOptions, index: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let size = opts.size;
    let (lo, hi) = DEFAULT_DISPARITY_RANGE;

    let with_textureless = index % 10 < 4;
    let with_blob = (3..7).contains(&(index % 10));

    let bg_disp = if rng.gen_bool(0.6) {
        DisparityField::Constant(rng.gen_range(lo * 0.6..hi * 0.6))
    } else {
        DisparityField::Planar {
            a: rng.gen_range(-0.004..0.004),
            b: rng.gen_range(-0.004..0.004),
            c: rng.gen_range(lo * 0.5..hi * 0.5),
        }
    };
    let mut layers = vec![Layer {
        disparity: bg_disp,
        texture: TextureSpec::Noise {
            scale: rng.gen_range(3..8),
        },
        region: Region::Full,
    }];

    let fg_count = if with_textureless { 1 } else { rng.gen_range(1..3) };
    for k in 0..fg_count {
        let min_side = if with_textureless && k == 0 { 16 } else { 10 };
        let max_side = (size / 2).max(min_side + 1);
        let rw = rng.gen_range(min_side..=max_side.min(24));
        let rh = rng.gen_range(min_side..=max_side.min(24));
        let rx = rng.gen_range(2..size - rw - 2);
        let ry = rng.gen_range(2..size - rh - 2);
        let base = bg_disp.eval(size as f32 / 2.0, size as f32 / 2.0);
        let fg_disp = (base + rng.gen_range(0.3..1.5)).clamp(lo, hi);
        let texture = if with_textureless && k == 0 {
            TextureSpec::ConstantColor([
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
            ])
        } else if rng.gen_bool(0.5) {
            TextureSpec::Checker {
                period: rng.gen_range(8..12),
                colors: (
                    [rng.gen_range(0.0..0.45), rng.gen_range(0.0..0.45), rng.gen_range(0.0..0.45)],
                    [rng.gen_range(0.55..1.0), rng.gen_range(0.55..1.0), rng.gen_range(0.55..1.0)],
                ),
            }
        } else {
            TextureSpec::Noise {
                scale: rng.gen_range(2..6),
            }
        };
        layers.push(Layer {
            disparity: DisparityField::Constant(fg_disp),
            texture,
            region: Region::Rect {
                x: rx,
                y: ry,
                w: rw,
                h: rh,
            },
        });
    }

    let mut blobs = Vec::new();
    if with_blob {
        let margin = 8.0;
        let drift_mag = rng.gen_range(0.5..1.5);
        blobs.push(Blob {
            cx: rng.gen_range(margin..size as f32 - margin),
            cy: rng.gen_range(margin..size as f32 - margin),
            radius: rng.gen_range(4.0..8.0),
            intensity: rng.gen_range(0.3..0.6),
            drift: if rng.gen_bool(0.5) { drift_mag } else { -drift_mag },
        });
    }

    SceneSpec {
        grid: (opts.views, opts.views),
        size: (size, size),
        layers,
        blobs,
        seed: opts.seed.wrapping_add(index as u64 * 7919),
        disparity_range: DEFAULT_DISPARITY_RANGE,
    }
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Render `count` scenes into `out/scene_####/` in the data-layer layout:
/// PNG views, PFM ground truth, mask PNGs and a plain-text scene summary.
/// Scenes render in parallel; output is deterministic in the seed.
pub fn gen_corpus(out: &Path, count: usize, opts: &CorpusOptions) -> Result<()> {
    if count < 2 {
        return Err(Error::InvalidConfig(format!(
            "corpus needs at least 2 scenes, got {count}"
        )));
    }
    if opts.views.is_multiple_of(2) || opts.views == 0 {
        return Err(Error::InvalidConfig(format!(
            "view grid must be odd, got {}",
            opts.views
        )));
    }
    if opts.size < 32 {
        return Err(Error::InvalidConfig(format!(
            "scene size must be at least 32, got {}",
            opts.size
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<Result<()>> = map_indexed(count, |i| {
        let spec = scene_spec_for_index(opts, i);
        let sample = render(&spec)?;
        let dir = out.join(scene_dir_name(i));
        write_scene(&dir, &spec, &sample)
    });
    results.into_iter().collect()
}

pub fn write_scene(dir: &Path, spec: &SceneSpec, sample: &GeneratedSample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lf = &sample.lightfield;
    let (h, w) = (lf.height(), lf.width());
    let (gu, gv) = lf.grid();
    for idx in 0..gu * gv {
        let view = lf.view_by_index(idx);
        let mut rgb = vec![0u8; h * w * 3];
        for p in 0..h * w {
            for ch in 0..3 {
                rgb[p * 3 + ch] = (view[ch * h * w + p] * 255.0).round() as u8;
            }
        }
        imageio::write_png_rgb8(&dir.join(crate::lightfield::view_file_name(idx)), w, h, &rgb)?;
    }
    pfm::write_pfm(&dir.join(GT_FILE), &sample.gt)?;
    let to_gray = |mask: &[bool]| -> Vec<u8> { mask.iter().map(|&b| if b { 255 } else { 0 }).collect() };
    imageio::write_png_gray8(&dir.join(MASK_TEXTURELESS_FILE), w, h, &to_gray(&sample.mask_textureless))?;
    imageio::write_png_gray8(&dir.join(MASK_SPECULAR_FILE), w, h, &to_gray(&sample.mask_specular))?;

    let mut summary = String::new();
    summary.push_str(&format!("seed={}\n", spec.seed));
    summary.push_str(&format!("grid={}x{}\n", gu, gv));
    summary.push_str(&format!("size={}x{}\n", h, w));
    summary.push_str(&format!("layers={}\n", spec.layers.len()));
    for (i, layer) in spec.layers.iter().enumerate() {
        summary.push_str(&format!(
            "layer.{i}.disparity={:?}\nlayer.{i}.texture={:?}\nlayer.{i}.region={:?}\n",
            layer.disparity, layer.texture, layer.region
        ));
    }
    summary.push_str(&format!("blobs={}\n", spec.blobs.len()));
    for (i, blob) in spec.blobs.iter().enumerate() {
        summary.push_str(&format!("blob.{i}={blob:?}\n"));
    }
    let path = dir.join("scene_spec.txt");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))
}
