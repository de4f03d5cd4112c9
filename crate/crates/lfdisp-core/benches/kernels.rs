//! Throughput benches for the data-parallel kernels.
//!
//! With the default `parallel` feature the hot loops fan out over rayon; the
//! groups below then compare the default pool against a single-thread pool,
//! which measures scaling without rebuilding. Compiling with
//! `--no-default-features` benches the true sequential fallback instead
//! (bench ids carry the mode so both runs can sit side by side in the
//! criterion report).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lfdisp_core::kernels::{conv2d_backward, conv2d_forward, ConvSpec, Mode};
use lfdisp_core::model::{build_model, ModelConfig, Variant};
use lfdisp_core::synth::{render, scene_spec_for_index, CorpusOptions};
use lfdisp_core::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
const MODE: &str = "par";
#[cfg(not(feature = "parallel"))]
const MODE: &str = "seq";

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f32> {
    let data = (0..shape.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Run `f` on the default pool and on a 1-thread pool when parallel;
/// plain call otherwise.
fn bench_both<F: Fn() + Sync>(c: &mut Criterion, group: &str, flops: u64, f: F) {
    let mut g = c.benchmark_group(group);
    g.throughput(Throughput::Elements(flops));
    g.bench_function(BenchmarkId::from_parameter(MODE), |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        g.bench_function(BenchmarkId::from_parameter("par-1thread"), |b| {
            b.iter(|| pool.install(&f))
        });
    }
    g.finish();
}

fn conv_benches(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // dilated pyramid-style conv on an SAI stack
    let input = rand_tensor(&mut rng, Shape::new(4, 27, 48, 48));
    let weights = rand_tensor(&mut rng, Shape::new(16, 27, 3, 3));
    let spec = ConvSpec::same(3, 8, 27, 16).unwrap();
    let flops = (4 * 16 * 48 * 48 * 27 * 9 * 2) as u64;
    bench_both(c, "conv2d_dilated_forward", flops, || {
        let _ = conv2d_forward(&input, &weights, None, &spec, 1).unwrap();
    });

    let gout = rand_tensor(&mut rng, Shape::new(4, 16, 48, 48));
    bench_both(c, "conv2d_dilated_backward", 3 * flops, || {
        let _ = conv2d_backward(&input, &weights, &spec, 1, &gout, true).unwrap();
    });

    // pointwise trunk conv
    let pw_in = rand_tensor(&mut rng, Shape::new(4, 32, 48, 48));
    let pw_w = rand_tensor(&mut rng, Shape::new(32, 32, 1, 1));
    let pw_spec = ConvSpec::same(1, 1, 32, 32).unwrap();
    let pw_flops = (4 * 32 * 48 * 48 * 32 * 2) as u64;
    bench_both(c, "conv2d_pointwise_forward", pw_flops, || {
        let _ = conv2d_forward(&pw_in, &pw_w, None, &pw_spec, 1).unwrap();
    });

    // depthwise conv
    let dw_w = rand_tensor(&mut rng, Shape::new(32, 1, 3, 3));
    let dw_spec = ConvSpec::same(3, 1, 32, 32).unwrap();
    bench_both(c, "conv2d_depthwise_forward", (4 * 32 * 48 * 48 * 9 * 2) as u64, || {
        let _ = conv2d_forward(&pw_in, &dw_w, None, &dw_spec, 32).unwrap();
    });
}

fn model_benches(c: &mut Criterion) {
    let mut model = build_model::<f32>(ModelConfig::compact(Variant::Sai9, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = rand_tensor(&mut rng, Shape::new(1, 27, 48, 48));
    let mut g = c.benchmark_group("model_inference_48x48");
    g.sample_size(20);
    g.bench_function(BenchmarkId::from_parameter(MODE), |b| {
        b.iter(|| model.forward(&input, Mode::Inference).unwrap())
    });
    g.finish();
}

fn render_benches(c: &mut Criterion) {
    let spec = scene_spec_for_index(&CorpusOptions { views: 9, size: 48, seed: 5 }, 3);
    bench_both(c, "render_scene_9x9x48", (81 * 48 * 48) as u64, || {
        let _ = render(&spec).unwrap();
    });
}

criterion_group!(benches, conv_benches, model_benches, render_benches);
criterion_main!(benches);
