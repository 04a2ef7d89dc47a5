use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use sum2act::batch::{run_bench, run_bench_sequential, BenchCase, BenchPlan};
use sum2act::engine::Method;
use sum2act::sandbox::load_scenario_dir;

fn corpus() -> Vec<BenchCase> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    load_scenario_dir(&dir)
        .expect("scenario corpus loads")
        .into_iter()
        .map(|s| BenchCase::scripted(s).expect("policy loads"))
        .collect()
}

fn bench_corpus(c: &mut Criterion) {
    let cases = corpus();
    let plan = BenchPlan::with_defaults(Method::ALL.to_vec());
    let mut group = c.benchmark_group("scenario_corpus_all_methods");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| run_bench_sequential(&plan, &cases).unwrap())
    });
    group.bench_function("parallel", |b| b.iter(|| run_bench(&plan, &cases).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_corpus);
criterion_main!(benches);
