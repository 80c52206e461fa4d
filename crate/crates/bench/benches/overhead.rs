use criterion::{black_box, criterion_group, criterion_main, Criterion};

use insitu_bench::{call, loaded};

fn training_loop(c: &mut Criterion) {
    let mut interp = loaded();
    let mut g = c.benchmark_group("train");
    for name in ["train", "v_train"] {
        g.bench_function(name, |b| b.iter(|| black_box(call(&mut interp, name, 200))));
    }
    g.finish();
}

fn operations(c: &mut Criterion) {
    let mut interp = loaded();
    let mut g = c.benchmark_group("ops");
    for name in ["empty", "printing", "v_empty", "v_binding", "v_resolving"] {
        g.bench_function(name, |b| b.iter(|| black_box(call(&mut interp, name, 1000))));
    }
    g.finish();
}

criterion_group!(benches, training_loop, operations);
criterion_main!(benches);
