//! Criterion comparison of the parallel kernels against their sequential
//! fallbacks. With the default `parallel` feature the two paths differ;
//! built with `--no-default-features` both names run the same code.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rawisp::exec::{Executor, Par, Seq};
use rawisp::isp::{demosaic_mosaic, demosaic_mosaic_seq};
use rawisp::metrics::{ssim, ssim_seq};
use rawisp::nn::kernels::{conv2d_backward_weight, conv2d_forward, ConvSpec};
use rawisp::raw::{bicubic_upsample, bicubic_upsample_seq, CfaPattern, Colorspace, LinearImage, Mosaic, PackedRaw};
use rawisp::sim::{expose, expose_seq, synthesize_scene, SensorNoiseParams};

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = ConvSpec { n: 8, ic: 32, ih: 16, iw: 16, oc: 32, kh: 3, kw: 3, stride: 1, pad: 1 };
    let x: Vec<f32> = (0..spec.n * spec.ic * spec.ih * spec.iw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f32> = (0..spec.oc * spec.ic * spec.kh * spec.kw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dy: Vec<f32> = (0..spec.n * spec.oc * spec.ih * spec.iw).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = c.benchmark_group("conv2d_forward");
    g.bench_function("par", |b| {
        b.iter(|| conv2d_forward::<f32, Par>(black_box(&x), black_box(&w), &spec).unwrap())
    });
    g.bench_function("seq", |b| {
        b.iter(|| conv2d_forward::<f32, Seq>(black_box(&x), black_box(&w), &spec).unwrap())
    });
    g.finish();

    let mut g = c.benchmark_group("conv2d_backward_weight");
    g.bench_function("par", |b| {
        b.iter(|| conv2d_backward_weight::<f32, Par>(black_box(&dy), black_box(&x), &spec).unwrap())
    });
    g.bench_function("seq", |b| {
        b.iter(|| conv2d_backward_weight::<f32, Seq>(black_box(&dy), black_box(&x), &spec).unwrap())
    });
    g.finish();
}

fn bench_bicubic(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f32> = (0..128 * 128 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
    let p = PackedRaw { width: 128, height: 128, data, amplification: 1.0 };
    let mut g = c.benchmark_group("bicubic_x2");
    g.bench_function("par", |b| b.iter(|| bicubic_upsample(black_box(&p), 2).unwrap()));
    g.bench_function("seq", |b| b.iter(|| bicubic_upsample_seq(black_box(&p), 2).unwrap()));
    g.finish();
}

fn bench_demosaic(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..256 * 256).map(|_| rng.gen_range(0.0..1.0)).collect();
    let m = Mosaic { width: 256, height: 256, pattern: CfaPattern::Rggb, data };
    let mut g = c.benchmark_group("demosaic_bilinear");
    g.bench_function("par", |b| b.iter(|| demosaic_mosaic(black_box(&m))));
    g.bench_function("seq", |b| b.iter(|| demosaic_mosaic_seq(black_box(&m))));
    g.finish();
}

fn bench_expose(c: &mut Criterion) {
    let scene = synthesize_scene(256, 256, 5);
    let rates = rawisp::sim::mosaic_scene(&scene, CfaPattern::Rggb).unwrap();
    let params = SensorNoiseParams::default();
    let mut g = c.benchmark_group("expose_x300");
    g.bench_function("par", |b| b.iter(|| expose(black_box(&rates), 1.0 / 300.0, &params, 9).unwrap()));
    g.bench_function("seq", |b| {
        b.iter(|| expose_seq(black_box(&rates), 1.0 / 300.0, &params, 9).unwrap())
    });
    g.finish();
}

fn bench_ssim(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut a = LinearImage::new(128, 128, 3, Colorspace::Srgb);
    for v in a.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let mut bimg = a.clone();
    for v in bimg.data.iter_mut() {
        *v = (*v + rng.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0);
    }
    let mut g = c.benchmark_group("ssim_128");
    g.bench_function("par", |b| b.iter(|| ssim(black_box(&a), black_box(&bimg)).unwrap()));
    g.bench_function("seq", |b| b.iter(|| ssim_seq(black_box(&a), black_box(&bimg)).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_conv2d, bench_bicubic, bench_demosaic, bench_expose, bench_ssim);
criterion_main!(benches);
