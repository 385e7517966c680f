use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ergodic_mfg::equilibrium::scan_consistency;
use ergodic_mfg::model::{build_extraction_model, CaseStudyParams};
use ergodic_mfg::montecarlo::{simulate_reflected, McConfig};
use ergodic_mfg::parallel::Execution;
use ergodic_mfg::shooting::compute_beta;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn consistency_scan(c: &mut Criterion) {
    let spec = build_extraction_model(CaseStudyParams::default()).unwrap();
    let mut g = c.benchmark_group("consistency_scan");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| scan_consistency(black_box(&spec), 0.3, 3.0, 8, exec).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo_paths(c: &mut Criterion) {
    let spec = build_extraction_model(CaseStudyParams::default()).unwrap();
    let fbs = compute_beta(&spec, 1.0).unwrap();
    let mut g = c.benchmark_group("monte_carlo_paths");
    g.sample_size(10);
    for (name, execution) in MODES {
        let cfg = McConfig {
            horizon: 200.0,
            burn_in: 10.0,
            n_paths: 8,
            execution,
            ..McConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| simulate_reflected(black_box(&spec), &fbs, cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, consistency_scan, monte_carlo_paths);
criterion_main!(benches);
