use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use crossview::autonn::{Conv2d, Param, Tensor};
use crossview::evaluation::{recall_at_k, top_k_batch, EmbeddingIndex};
use crossview::exec::Execution;
use crossview::objective::{batch_loss_with_grad, LossParams, TripletBatch};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[12, 16, 32, 64], &mut rng);
    let mut layer = Conv2d::new(
        Param::new("w", random(&[32, 16, 4, 4], &mut rng)),
        Param::new("b", random(&[32], &mut rng)),
    )
    .unwrap();
    let mut group = c.benchmark_group("conv2d_12x16x32x64");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| black_box(layer.forward(&x, exec).unwrap().0))
        });
        let (y, cache) = layer.forward(&x, exec).unwrap();
        group.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| black_box(layer.backward(&cache, &y, exec).unwrap()))
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random(&[12, 1536], &mut rng);
    let s = random(&[12, 1536], &mut rng);
    let batch = TripletBatch::new(&g, &s).unwrap();
    let mut group = c.benchmark_group("batch_loss_b12_d1536");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(batch_loss_with_grad(&batch, LossParams::default(), exec).unwrap().loss))
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d) = (2000, 128);
    let rows = unit_rows(n, d, &mut rng);
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let index = EmbeddingIndex::build(ids.clone(), &rows, None).unwrap();
    let queries = unit_rows(200, d, &mut rng);
    let gt: Vec<&str> = ids[..200].iter().map(String::as_str).collect();
    let mut group = c.benchmark_group("retrieval_200x2000_d128");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("top_k", name), |b| {
            b.iter(|| black_box(top_k_batch(&index, &queries, 10, exec).unwrap()))
        });
        group.bench_function(BenchmarkId::new("recall", name), |b| {
            b.iter(|| black_box(recall_at_k(&index, &queries, &gt, &[1, 5, 10], exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, loss, retrieval
}
criterion_main!(benches);
