use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use envbal_core::dataset::Dataset;
use envbal_core::fcm::{self, FcmConfig};
use envbal_core::mmd::{self, Kernel};
use envbal_core::rng;
use envbal_core::sampler::{self, BalanceConfig, Method};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use std::hint::black_box;

fn normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::from_seed(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
}

fn imbalanced(min: usize, maj: usize, d: usize) -> Dataset {
    let mut x = normal(min + maj, d, 1);
    x.slice_mut(ndarray::s![..min, ..]).mapv_inplace(|v| v + 1.0);
    let labels: Vec<&str> = (0..min + maj).map(|i| if i < min { "min" } else { "maj" }).collect();
    Dataset::from_named_labels(x, &labels, (0..d).map(|i| format!("f{i}")).collect(), "class").unwrap()
}

fn bench_fcm(c: &mut Criterion) {
    let mut g = c.benchmark_group("fcm_fit");
    for n in [100, 400] {
        let x = normal(n, 8, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| fcm::fit(black_box(x), n / 2, &FcmConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_mmd(c: &mut Criterion) {
    let x = normal(200, 8, 3);
    let v = normal(100, 8, 4);
    c.bench_function("mmd_linear_200x100", |b| b.iter(|| mmd::mmd_sq(black_box(&x), &v, &Kernel::Linear).unwrap()));
    let rbf = Kernel::Rbf { bandwidth: 1.0 };
    c.bench_function("mmd_rbf_200x100", |b| b.iter(|| mmd::mmd_sq(black_box(&x), &v, &rbf).unwrap()));
}

fn bench_balance(c: &mut Criterion) {
    let ds = imbalanced(50, 450, 8);
    let mut g = c.benchmark_group("balance_50_vs_450");
    g.sample_size(10);
    for method in Method::ALL {
        let cfg = BalanceConfig::with_method(method);
        g.bench_function(method.as_str(), |b| b.iter(|| sampler::balance(black_box(&ds), &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_fcm, bench_mmd, bench_balance);
criterion_main!(benches);
