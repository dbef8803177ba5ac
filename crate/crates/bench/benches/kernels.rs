use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use shda_bench::{noise_task, random_symmetric};
use shda_core::linalg::{psd_project, sym_eig};
use shda_core::model::init_model;
use shda_core::objective::Problem;
use shda_core::RngStream;

fn eig(c: &mut Criterion) {
    let mut g = c.benchmark_group("sym_eig");
    g.sample_size(20);
    for n in [50, 150, 300] {
        let a = random_symmetric(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| sym_eig(black_box(a)).unwrap())
        });
    }
    g.finish();
    c.bench_function("psd_project/300", |b| {
        let a = random_symmetric(300, 2);
        b.iter(|| psd_project(black_box(&a)).unwrap())
    });
}

fn ktf_gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("ktf_gradient");
    g.sample_size(20);
    for per_class in [200, 1000] {
        let (noise, split) = noise_task(256, per_class, 3);
        let problem = Problem::ktf(&noise, &split, 0.1, 0.1, 0.05).unwrap();
        let model = init_model(50, 256, 4, &mut RngStream::new(4)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(per_class), &problem, |b, p| {
            b.iter(|| p.gradient(black_box(&model)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, eig, ktf_gradient);
criterion_main!(benches);
