use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use revenant_bench::{noise_image, random_pairs};
use revenant_core::engine::{Task, Trainer};
use revenant_core::metrics::psnr;
use revenant_core::nn::{Graph, ParamStore, Tensor};
use revenant_core::superres::{infer_tiled, plan_tiles, EndpointMode};
use revenant_core::surrogate::{classical_edges, degrade, DegradeConfig};
use revenant_core::RunConfig;

fn bench_psnr(c: &mut Criterion) {
    let a = noise_image(1024, 512, 1);
    let b = noise_image(1024, 512, 2);
    c.bench_function("psnr_1024x512", |bench| bench.iter(|| psnr(black_box(&a), black_box(&b)).unwrap()));
}

fn bench_edges(c: &mut Criterion) {
    let img = noise_image(256, 256, 3);
    let cfg = DegradeConfig::default();
    c.bench_function("classical_edges_degrade_256", |bench| {
        bench.iter(|| degrade(&classical_edges(black_box(&img)), &cfg).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut store = ParamStore::new(1, 0);
    let w = store.add_normal("w".into(), [16, 16, 3, 3], 0.1);
    let x = Tensor::full([4, 16, 64, 64], 0.5);
    c.bench_function("conv3x3_16ch_64px_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(true);
            g.train(&store);
            let xn = g.input(x.clone(), false);
            let wn = g.param(&store, w);
            let y = g.conv2d(xn, wn, None, 1, 1).unwrap();
            let seed = Tensor::full(g.value(y).shape(), 1.0);
            g.backward(vec![(y, seed)]).unwrap()
        })
    });
}

fn bench_gan_step(c: &mut Criterion) {
    let cfg = RunConfig::desk(64, 1);
    let setup = cfg.train_setup(Task::Translation);
    let data = random_pairs(8, 64, 1, 4);
    c.bench_function("gan_step_desk_64px_batch4", |bench| {
        bench.iter_batched(
            || Trainer::new(setup.clone(), data.clone()).unwrap(),
            |mut t| t.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_tiled(c: &mut Criterion) {
    let input = noise_image(256, 256, 5);
    let plan = plan_tiles(256, 256, 64, 32, EndpointMode::InclusiveCover).unwrap();
    let model = |t: &revenant_core::Image| t.resize(t.width() * 2, t.height() * 2);
    c.bench_function("infer_tiled_256_t64_s32_x2", |bench| {
        bench.iter(|| infer_tiled(&model, black_box(&input), &plan, 2, 1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_psnr, bench_edges, bench_conv, bench_gan_step, bench_tiled
}
criterion_main!(benches);
