use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use simflow_bench::{scene_pair, smooth_flow};
use simflow_core::flow::{decode_flo, encode_flo};
use simflow_core::metrics::{f_measure, mae, s_measure, FMode, S_ALPHA};
use simflow_core::segnet::NetworkConfig;
use simflow_core::{colorize, estimate_flow, FlowEstimatorConfig, SaliencyMap, SegNet};

fn flow_estimation(c: &mut Criterion) {
    let (a, b, _) = scene_pair(128, 3);
    let config = FlowEstimatorConfig::default();
    let mut g = c.benchmark_group("flow_estimation");
    g.sample_size(10);
    g.bench_function("horn_schunck_128", |bench| bench.iter(|| estimate_flow(black_box(&a), black_box(&b), &config).unwrap()));
    g.finish();
}

fn flo_io(c: &mut Criterion) {
    let flow = smooth_flow(256, 256);
    let bytes = encode_flo(&flow);
    let origin = std::path::Path::new("bench.flo");
    c.bench_function("flo_encode_256", |b| b.iter(|| encode_flo(black_box(&flow))));
    c.bench_function("flo_decode_256", |b| b.iter(|| decode_flo(black_box(&bytes), origin).unwrap()));
    c.bench_function("colorize_256", |b| b.iter(|| colorize(black_box(&flow), None)));
}

fn metrics(c: &mut Criterion) {
    let (_, _, gt) = scene_pair(256, 5);
    let pred = SaliencyMap::from_fn(256, 256, |(y, x)| ((x * 31 + y * 17) % 97) as f32 / 96.0).unwrap();
    let mut g = c.benchmark_group("metrics_256");
    g.bench_function("mae", |b| b.iter(|| mae(black_box(&pred), &gt).unwrap()));
    g.bench_function("max_f", |b| b.iter(|| f_measure(black_box(&pred), &gt, FMode::Max).unwrap()));
    g.bench_function("s_measure", |b| b.iter(|| s_measure(black_box(&pred), &gt, S_ALPHA).unwrap()));
    g.finish();
}

fn segnet_forward(c: &mut Criterion) {
    let net = SegNet::new(NetworkConfig::default().with_input_size(128, 128), 0).unwrap();
    let (image, _, _) = scene_pair(128, 7);
    let flow = smooth_flow(128, 128);
    let mut g = c.benchmark_group("segnet");
    g.sample_size(10);
    g.bench_function("forward_128", |b| b.iter(|| net.forward(black_box(&image), black_box(&flow)).unwrap()));
    g.finish();
}

criterion_group!(benches, flow_estimation, flo_io, metrics, segnet_forward);
criterion_main!(benches);
