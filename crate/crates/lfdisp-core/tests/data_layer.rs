//! Round trips and geometric consistency of the light field data layer,
//! verified against rendered scenes with known disparity.

use lfdisp_core::lightfield::{
    augment, augment_lightfield, extract_epi, load_lightfield, load_scene, stack_sais, AugmentOp,
    DisparityMap, EpiOrientation, Sample, ViewPattern,
};
use lfdisp_core::pfm;
use lfdisp_core::synth::{
    render, write_scene, DisparityField, Layer, Region, SceneSpec, TextureSpec,
    DEFAULT_DISPARITY_RANGE,
};
use lfdisp_core::Error;
use lfdisp_testkit::measure_region_slope;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_scene(disparity: f32, grid: usize, size: usize, seed: u64) -> SceneSpec {
    SceneSpec {
        grid: (grid, grid),
        size: (size, size),
        layers: vec![Layer {
            disparity: DisparityField::Constant(disparity),
            texture: TextureSpec::Noise { scale: 4 },
            region: Region::Full,
        }],
        blobs: Vec::new(),
        seed,
        disparity_range: DEFAULT_DISPARITY_RANGE,
    }
}

#[test]
fn generated_scene_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = noise_scene(0.75, 5, 32, 7);
    let sample = render(&spec).unwrap();
    write_scene(dir.path(), &spec, &sample).unwrap();

    let loaded = load_lightfield(dir.path(), (5, 5)).unwrap();
    assert_eq!(loaded.grid(), (5, 5));
    assert_eq!((loaded.height(), loaded.width()), (32, 32));
    for v in 0..5 {
        for u in 0..5 {
            let a: Vec<u32> = sample.lightfield.view(u, v).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = loaded.view(u, v).iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b, "view ({u},{v})");
        }
    }

    let scene = load_scene(dir.path(), (5, 5)).unwrap();
    let gt = scene.gt.unwrap();
    let gt_bits: Vec<u32> = gt.values.iter().map(|v| v.to_bits()).collect();
    let orig_bits: Vec<u32> = sample.gt.values.iter().map(|v| v.to_bits()).collect();
    assert_eq!(gt_bits, orig_bits);
    assert_eq!(scene.mask_textureless.unwrap(), sample.mask_textureless);
    assert_eq!(scene.mask_specular.unwrap(), sample.mask_specular);
}

#[test]
fn missing_view_error_names_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let spec = noise_scene(0.0, 3, 32, 1);
    let sample = render(&spec).unwrap();
    write_scene(dir.path(), &spec, &sample).unwrap();
    std::fs::remove_file(dir.path().join("input_Cam008.png")).unwrap();
    let err = load_lightfield(dir.path(), (3, 3)).unwrap_err();
    assert!(matches!(err, Error::MissingView { index: 8, .. }));
    assert!(err.to_string().contains("missing view 008"), "{err}");
}

#[test]
fn inconsistent_view_sizes_name_both() {
    let dir = tempfile::tempdir().unwrap();
    let spec = noise_scene(0.0, 3, 32, 2);
    let sample = render(&spec).unwrap();
    write_scene(dir.path(), &spec, &sample).unwrap();
    // overwrite one view with a different size
    let small = vec![128u8; 16 * 16 * 3];
    lfdisp_core::imageio::write_png_rgb8(&dir.path().join("input_Cam003.png"), 16, 16, &small)
        .unwrap();
    let err = load_lightfield(dir.path(), (3, 3)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("003"), "{msg}");
    assert!(msg.contains("32x32") && msg.contains("16x16"), "{msg}");
}

#[test]
fn pfm_round_trip_random_map_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.pfm");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut values: Vec<f32> = (0..64 * 64)
        .map(|_| f32::from_bits(rng.gen::<u32>() & 0x7FFF_FFFF | ((rng.gen::<u32>() & 1) << 31)))
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    values[0] = 0.0;
    values[1] = -0.0;
    values[2] = f32::MIN_POSITIVE / 16.0;
    let map = DisparityMap::new(64, 64, values.clone()).unwrap();
    pfm::write_pfm(&path, &map).unwrap();
    let back = pfm::read_pfm(&path).unwrap();
    let a: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = back.values.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn integer_disparity_slope_is_exact() {
    let sample = render(&noise_scene(1.0, 9, 48, 13)).unwrap();
    let slope = measure_region_slope(&sample.lightfield, 14, 14, 34, 20, 2);
    assert_eq!(slope, 1.0, "measured {slope}");

    let zero = render(&noise_scene(0.0, 9, 48, 14)).unwrap();
    let slope = measure_region_slope(&zero.lightfield, 14, 14, 34, 20, 2);
    assert_eq!(slope, 0.0, "measured {slope}");
}

#[test]
fn fractional_disparity_slope_is_recovered() {
    for (seed, d) in [(21u64, -1.4f32), (22, 0.35), (23, 1.75)] {
        let sample = render(&noise_scene(d, 9, 48, seed)).unwrap();
        let slope = measure_region_slope(&sample.lightfield, 14, 14, 34, 20, 2);
        assert!(
            (slope - d as f64).abs() < 0.05,
            "disparity {d}: measured {slope}"
        );
    }
}

#[test]
fn all_augmentations_preserve_epi_slope_consistency() {
    // flips must co-flip the view grid; color inversion must not move content
    let d = 0.8f32;
    let rendered = render(&noise_scene(d, 9, 48, 31)).unwrap();
    let sample = Sample {
        input: stack_sais(&rendered.lightfield, ViewPattern::new(9).unwrap()).unwrap(),
        target: rendered.gt.clone(),
        side: 9,
    };
    let flips = [
        None,
        Some(AugmentOp::FlipLr),
        Some(AugmentOp::FlipUd),
        Some(AugmentOp::FlipBoth),
    ];
    for flip in flips {
        for invert in [false, true] {
            let mut lf = rendered.lightfield.clone();
            let mut expected = sample.target.clone();
            if let Some(op) = flip {
                lf = augment_lightfield(&lf, op).unwrap();
                let s = augment(&sample, op).unwrap();
                expected = s.target;
            }
            if invert {
                lf = augment_lightfield(&lf, AugmentOp::InvertColor).unwrap();
            }
            let slope = measure_region_slope(&lf, 14, 14, 34, 20, 2);
            let gt_mean = expected.values.iter().map(|&v| v as f64).sum::<f64>()
                / expected.values.len() as f64;
            assert!(
                (slope - gt_mean).abs() < 0.05,
                "flip {flip:?} invert {invert}: slope {slope} vs gt {gt_mean}"
            );
        }
    }
}

#[test]
fn occluding_layer_dominates_local_slope() {
    let spec = SceneSpec {
        grid: (9, 9),
        size: (48, 48),
        layers: vec![
            Layer {
                disparity: DisparityField::Constant(-0.5),
                texture: TextureSpec::Noise { scale: 5 },
                region: Region::Full,
            },
            Layer {
                disparity: DisparityField::Constant(1.0),
                texture: TextureSpec::Noise { scale: 3 },
                region: Region::Rect { x: 12, y: 12, w: 24, h: 24 },
            },
        ],
        blobs: Vec::new(),
        seed: 41,
        disparity_range: DEFAULT_DISPARITY_RANGE,
    };
    let sample = render(&spec).unwrap();
    // interior of the near rectangle
    let inner = measure_region_slope(&sample.lightfield, 18, 20, 30, 26, 2);
    assert!((inner - 1.0).abs() < 0.05, "near-layer slope {inner}");
}

#[test]
fn every_corpus_scene_passes_slope_verification_in_textured_regions() {
    use lfdisp_core::synth::gen_corpus;
    let dir = tempfile::tempdir().unwrap();
    let opts = lfdisp_core::synth::CorpusOptions {
        views: 9,
        size: 48,
        seed: 97,
    };
    gen_corpus(dir.path(), 10, &opts).unwrap();

    let mut verified = 0usize;
    for i in 0..10 {
        let scene_dir = dir.path().join(lfdisp_core::synth::scene_dir_name(i));
        let scene = load_scene(&scene_dir, (9, 9)).unwrap();
        let gt = scene.gt.as_ref().unwrap();
        let textureless = scene.mask_textureless.as_ref().unwrap();
        let specular = scene.mask_specular.as_ref().unwrap();

        // first fully textured window away from borders with near-uniform GT
        let (wh, ww) = (8usize, 20usize);
        let mut window = None;
        'scan: for y0 in (8..48 - 8 - wh).step_by(2) {
            for x0 in (8..48 - 8 - ww).step_by(2) {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                let mut clean = true;
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let idx = y * 48 + x;
                        if textureless[idx] || specular[idx] {
                            clean = false;
                            break;
                        }
                        lo = lo.min(gt.get(y, x));
                        hi = hi.max(gt.get(y, x));
                    }
                    if !clean {
                        break;
                    }
                }
                if clean && hi - lo < 0.1 {
                    window = Some((x0, y0));
                    break 'scan;
                }
            }
        }
        let Some((x0, y0)) = window else { continue };
        let slope = measure_region_slope(&scene.lightfield, x0, y0, x0 + ww, y0 + wh, 2);
        let mut mean_gt = 0.0f64;
        for y in y0..y0 + wh {
            for x in x0..x0 + ww {
                mean_gt += gt.get(y, x) as f64;
            }
        }
        mean_gt /= (wh * ww) as f64;
        assert!(
            (slope - mean_gt).abs() < 0.1,
            "scene {i}: slope {slope} vs gt {mean_gt}"
        );
        verified += 1;
    }
    assert!(verified >= 7, "only {verified}/10 scenes had a measurable window");
}

#[test]
fn textureless_region_has_degenerate_epi_everywhere() {
    let spec = SceneSpec {
        grid: (9, 9),
        size: (48, 48),
        layers: vec![
            Layer {
                disparity: DisparityField::Constant(0.4),
                texture: TextureSpec::ConstantColor([0.5, 0.5, 0.5]),
                region: Region::Full,
            },
        ],
        blobs: Vec::new(),
        seed: 43,
        disparity_range: DEFAULT_DISPARITY_RANGE,
    };
    let sample = render(&spec).unwrap();
    for row in [5, 24, 44] {
        let epi = extract_epi(&sample.lightfield, EpiOrientation::Horizontal, row, 4).unwrap();
        assert_eq!(epi.max_angular_variance(), 0.0, "row {row}");
    }
}
