use std::fs;
use std::io::BufWriter;

use approx::assert_abs_diff_eq;
use pairscale::comparator::{write_cache_line, CacheEntry, ComparatorError};
use pairscale::corpus::{allocate_pairs, build_corpus, emit_corpus};
use pairscale::scaling::{solve_map_report, AnchorScorer, MatrixKind, ScalingError};
use pairscale::synth::SyntheticSpec;
use pairscale::{
    select_anchors, CacheComparator, Comparator, Execution, ImageRecord, OracleComparator, PreferenceMatrix,
    SolverConfig,
};

fn anchors_and_tests(n: usize, seed: u64) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    let records = SyntheticSpec { n, seed, ..Default::default() }.generate();
    let set = select_anchors(&records, 5, 1).unwrap();
    let ids: Vec<&str> = set.ids().collect();
    records.into_iter().partition(|r| ids.contains(&r.image_id.as_str()))
}

#[test]
fn cache_replays_oracle_scores() {
    let (anchors, tests) = anchors_and_tests(40, 4);
    let oracle = OracleComparator::deterministic();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logits.jsonl");
    {
        let mut w = BufWriter::new(fs::File::create(&path).unwrap());
        for a in &anchors {
            for b in anchors.iter().chain(&tests) {
                if a.image_id != b.image_id {
                    let logits = oracle.compare(a, b).unwrap();
                    write_cache_line(
                        &mut w,
                        &CacheEntry { first: a.image_id.clone(), second: b.image_id.clone(), logits },
                    )
                    .unwrap();
                }
            }
        }
    }
    let cache = CacheComparator::load(&path).unwrap();
    let arefs: Vec<&ImageRecord> = anchors.iter().collect();
    let trefs: Vec<&ImageRecord> = tests.iter().collect();
    let score = |cmp: &dyn Comparator| {
        AnchorScorer::new(arefs.clone(), cmp, MatrixKind::Probability, SolverConfig::default(), false)
            .unwrap()
            .score_all(&trefs, Execution::Parallel)
            .unwrap()
    };
    assert_eq!(score(&cache), score(&oracle));

    // Symmetrizing needs (test, anchor) entries, which were never stored.
    let sym = AnchorScorer::new(arefs.clone(), &cache, MatrixKind::Probability, SolverConfig::default(), true).unwrap();
    let err = sym.score(trefs[0]).unwrap_err();
    assert!(matches!(err, ScalingError::Compare { source: ComparatorError::CacheMiss { .. }, .. }), "{err}");
}

#[test]
fn recovery_is_monotone_in_mos() {
    let (anchors, _) = anchors_and_tests(100, 8);
    let arefs: Vec<&ImageRecord> = anchors.iter().collect();
    let oracle = OracleComparator::deterministic();
    for kind in [MatrixKind::Probability, MatrixKind::Count] {
        let scorer = AnchorScorer::new(arefs.clone(), &oracle, kind, SolverConfig::default(), false).unwrap();
        let sweep: Vec<ImageRecord> =
            (0..=100).map(|k| ImageRecord::new(format!("t{k}"), k as f64 * 0.05, 0.25, "synthetic")).collect();
        let refs: Vec<&ImageRecord> = sweep.iter().collect();
        let scores = scorer.score_all(&refs, Execution::Parallel).unwrap();
        assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{kind:?}: {scores:?}");
        assert!(scores[100] > scores[0]);
    }
}

#[test]
fn parallel_and_sequential_agree() {
    let (anchors, tests) = anchors_and_tests(150, 2);
    let arefs: Vec<&ImageRecord> = anchors.iter().collect();
    let trefs: Vec<&ImageRecord> = tests.iter().collect();
    let oracle = OracleComparator::new(pairscale::OracleMode::Stochastic, 0.5, 3);
    let scorer = AnchorScorer::new(arefs, &oracle, MatrixKind::Probability, SolverConfig::default(), true).unwrap();
    assert_eq!(
        scorer.score_all(&trefs, Execution::Parallel).unwrap(),
        scorer.score_all(&trefs, Execution::Sequential).unwrap()
    );
}

#[test]
fn objective_trace_never_decreases() {
    let rows = vec![
        vec![0.5, 0.9, 0.99, 0.7],
        vec![0.1, 0.5, 0.8, 0.3],
        vec![0.01, 0.2, 0.5, 0.05],
        vec![0.3, 0.7, 0.95, 0.5],
    ];
    let m = PreferenceMatrix::from_rows(rows).unwrap();
    for cfg in [SolverConfig::default(), SolverConfig::mle()] {
        let report = solve_map_report(&m, &cfg).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-14 * (1.0 + w[0].abs()), "{:?}", report.objective_trace);
        }
        assert!(report.grad_norm <= cfg.tol);
        assert_abs_diff_eq!(report.scores.values().iter().sum::<f64>(), 0.0, epsilon = 1e-12);
    }
}

#[test]
fn stronger_prior_shrinks_scores() {
    let m = PreferenceMatrix::from_rows(vec![vec![0.5, 0.9], vec![0.1, 0.5]]).unwrap();
    let spread = |w: f64| {
        let q = pairscale::solve_map(&m, &SolverConfig { prior_weight: w, ..SolverConfig::default() }).unwrap();
        q.values()[0] - q.values()[1]
    };
    let (a, b, c) = (spread(0.0), spread(1.0), spread(10.0));
    assert!(a > b && b > c && c > 0.0, "{a} {b} {c}");
}

#[test]
fn corpus_of_180k_pairs_over_six_datasets() {
    let sets: Vec<Vec<ImageRecord>> = (0..6)
        .map(|k| {
            SyntheticSpec { n: 150 + 40 * k, seed: k as u64, tag: format!("set{k}"), ..Default::default() }.generate()
        })
        .collect();
    let quotas = allocate_pairs(180_000, &sets.iter().map(Vec::len).collect::<Vec<_>>());
    assert_eq!(quotas.iter().sum::<usize>(), 180_000);
    let mut pairs = Vec::new();
    for (k, (records, q)) in sets.iter().zip(&quotas).enumerate() {
        let part = build_corpus(records, *q, k as u64, false).unwrap();
        assert!(part.iter().all(|p| p.dataset == format!("set{k}")));
        pairs.extend(part);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    assert_eq!(emit_corpus(&pairs, &path).unwrap(), 180_000);
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 180_000);
    assert_eq!(emit_corpus(&[], dir.path().join("empty.jsonl")).unwrap(), 0);
    assert!(fs::read(dir.path().join("empty.jsonl")).unwrap().is_empty());
}
