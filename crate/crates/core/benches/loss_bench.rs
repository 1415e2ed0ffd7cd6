//! Forward+backward throughput of the loss variants, parallel vs
//! single-threaded.
//!
//! The `parallel` feature is compile-time; the single-thread lane here runs
//! the same parallel code inside a one-worker rayon pool, which is the
//! runtime equivalent of the sequential fallback (results are bit-identical
//! either way).

use criterion::{criterion_group, criterion_main, Criterion};
use funlab_core::margin::{
    margin_loss, ClassPrototypes, EmbeddingBatch, MarginConfig, MarginVariant,
};
use funlab_core::matrix::Matrix;
use funlab_core::rng;
use funlab_core::stats::NormalizerState;
use rand::Rng;
use std::hint::black_box;

fn desk_batch() -> (EmbeddingBatch, ClassPrototypes, NormalizerState) {
    let (b, c, d) = (256, 32, 64);
    let mut r = rng::stream(1234, rng::Domain::PairProtocol, &[0]);
    let mut feats = Matrix::zeros(b, d);
    for v in feats.data_mut() {
        *v = r.random_range(-1.0..1.0) * 3.0;
    }
    let labels: Vec<usize> = (0..b).map(|i| i % c).collect();
    let protos = ClassPrototypes::random(c, d, &mut r).unwrap();
    let batch = EmbeddingBatch::new(feats, labels).unwrap();
    let stats = NormalizerState::frozen(9.0, 3.0, 1.2, 0.6);
    (batch, protos, stats)
}

fn bench_variants(c: &mut Criterion) {
    let (batch, protos, stats) = desk_batch();
    let mut group = c.benchmark_group("loss_forward_backward");
    for variant in [MarginVariant::Arc, MarginVariant::AdaFace, MarginVariant::FunFace] {
        let cfg = MarginConfig::with_variant(variant);
        group.bench_function(variant.name(), |bch| {
            bch.iter(|| {
                let out = margin_loss(&batch, &protos, &cfg, &stats).unwrap();
                black_box(out.loss)
            })
        });
    }
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench_thread_scaling(c: &mut Criterion) {
    let (batch, protos, stats) = desk_batch();
    let cfg = MarginConfig::with_variant(MarginVariant::FunFace);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();

    let mut group = c.benchmark_group("funface_threads");
    group.bench_function("default_pool", |bch| {
        bch.iter(|| {
            let out = margin_loss(&batch, &protos, &cfg, &stats).unwrap();
            black_box(out.loss)
        })
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| {
            single.install(|| {
                let out = margin_loss(&batch, &protos, &cfg, &stats).unwrap();
                black_box(out.loss)
            })
        })
    });
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench_thread_scaling(_c: &mut Criterion) {}

criterion_group!(benches, bench_variants, bench_thread_scaling);
criterion_main!(benches);
