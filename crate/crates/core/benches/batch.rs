use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tnwp_core::autodiff::{jacobian_by_rows, forward};
use tnwp_core::bridge::{model_delete, model_forward_batch, model_new};
use tnwp_core::model::build_reference_gwd_model;
use tnwp_core::{save_model, Execution, SeededRng};

fn strategies() -> Vec<(&'static str, Execution)> {
    vec![
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ]
}

fn bench_forward_batch(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    save_model(&build_reference_gwd_model(0), &path).unwrap();
    let h = model_new(&path, "cpu").unwrap();

    let columns = 1024;
    let mut rng = SeededRng::new(1);
    let xs: Vec<f64> = (0..979 * columns).map(|_| rng.normal()).collect();
    let mut ys = vec![0.0; 445 * columns];

    let mut group = c.benchmark_group("forward_batch_1024");
    group.sample_size(10);
    group.throughput(Throughput::Elements(columns as u64));
    for (name, exec) in strategies() {
        for chunk in [1usize, 64, 256] {
            group.bench_with_input(BenchmarkId::new(name, chunk), &chunk, |b, &chunk| {
                b.iter(|| {
                    model_forward_batch(
                        h,
                        &xs,
                        &[11, 89, columns],
                        &mut ys,
                        &[5, 89, columns],
                        columns,
                        chunk,
                        exec,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
    model_delete(h).unwrap();
}

fn bench_jacobian(c: &mut Criterion) {
    let g = build_reference_gwd_model(0);
    let x = SeededRng::new(2).normal_tensor(&[11, 89]);
    let (_, trace) = forward(&g, &x).unwrap();
    let mut group = c.benchmark_group("reference_jacobian_rows");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(name, |b| b.iter(|| jacobian_by_rows(&trace, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_forward_batch, bench_jacobian);
criterion_main!(benches);
