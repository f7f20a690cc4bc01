use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pairscale::eval::{run_experiment_on, ExperimentConfig};
use pairscale::scaling::{AnchorScorer, MatrixKind};
use pairscale::synth::SyntheticSpec;
use pairscale::{select_anchors, Execution, ImageRecord, OracleComparator, SolverConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn score_all(c: &mut Criterion) {
    let records = SyntheticSpec { n: 2000, seed: 1, ..Default::default() }.generate();
    let set = select_anchors(&records, 5, 2).unwrap();
    let anchors = set.resolve(&records).unwrap();
    let ids: Vec<&str> = set.ids().collect();
    let tests: Vec<&ImageRecord> = records.iter().filter(|r| !ids.contains(&r.image_id.as_str())).collect();
    let oracle = OracleComparator::deterministic();

    let mut group = c.benchmark_group("score_all");
    for kind in [MatrixKind::Probability, MatrixKind::Count] {
        let scorer = AnchorScorer::new(anchors.clone(), &oracle, kind, SolverConfig::default(), false).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(format!("{kind:?}"), name), &exec, |b, &exec| {
                b.iter(|| scorer.score_all(&tests, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let records = SyntheticSpec { n: 400, seed: 2, ..Default::default() }.generate();
    let cfg = ExperimentConfig { accuracy_pairs: 500, ..ExperimentConfig::default() };
    let mut group = c.benchmark_group("experiment_10_splits");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| run_experiment_on(&records, &cfg, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, score_all, experiment);
criterion_main!(benches);
