use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rnnaccel_core::codec::{self, IndexBits};
use rnnaccel_core::fxp::MacMode;
use rnnaccel_core::loadable::{compile, load, CompileOptions};
use rnnaccel_core::profiles;

fn kws_weights() -> Vec<f64> {
    profiles::kws_gru(0).layers[0].gates[0].weights.clone()
}

fn compress(c: &mut Criterion) {
    let w = kws_weights();
    let mut group = c.benchmark_group("compress_154x164");
    group.sample_size(20);
    group.throughput(Throughput::Elements(w.len() as u64));
    for bits in IndexBits::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(bits.get()), &bits, |b, &bits| {
            b.iter(|| codec::compress(black_box(&w), 154, 164, bits, MacMode::W8).unwrap())
        });
    }
    group.finish();
}

fn decompress(c: &mut Criterion) {
    let w = kws_weights();
    let mut group = c.benchmark_group("decompress_154x164");
    group.throughput(Throughput::Elements(w.len() as u64));
    for bits in IndexBits::ALL {
        let blob = codec::compress(&w, 154, 164, bits, MacMode::W8).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(bits.get()), &blob, |b, blob| {
            b.iter(|| codec::decompress(black_box(blob)).unwrap())
        });
    }
    group.finish();
}

fn loadable_roundtrip(c: &mut Criterion) {
    let bytes = compile(&profiles::kws_gru(0), CompileOptions::default()).unwrap().bytes;
    c.bench_function("load_kws_gru", |b| b.iter(|| load(black_box(&bytes)).unwrap()));
}

criterion_group!(benches, compress, decompress, loadable_roundtrip);
criterion_main!(benches);
