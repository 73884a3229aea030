use mlgc::condense::{condense, gcond_with_generator, led_distance, sgdd_condense, CondenseConfig, Method};
use mlgc::eval::{train_eval_pipeline, EvalConfig, TrainedOn, TrainingData};
use mlgc::init::{InitKind, InitStrategy};
use mlgc::io::{format_trace_csv, load_dataset, load_synthetic, parse_trace_csv, save_dataset, save_synthetic};
use mlgc::models::Architecture;
use mlgc::planted::{make_planted_dataset, PlantedConfig};
use mlgc::{LabeledGraph, StructureMode, SyntheticGraph};
use ndarray::Array2;
use proptest::prelude::*;

fn planted(n: usize, k: usize, seed: u64) -> LabeledGraph {
    make_planted_dataset(&PlantedConfig::new(n, k, 0.3, seed)).unwrap().graph
}

fn quick(method: Method, seed: u64) -> CondenseConfig {
    CondenseConfig {
        method,
        outer_restarts: 1,
        inner_steps: 4,
        feature_steps: 2,
        structure_steps: 1,
        model_steps: 1,
        seed,
        surrogate: Architecture::Gcn2 { hidden: 8 },
        generator_hidden: 8,
        ..CondenseConfig::default()
    }
}

fn assert_structure(synthetic: &SyntheticGraph, delta: f64) {
    let Some(a) = synthetic.adjacency() else { return };
    for ((i, j), &v) in a.indexed_iter() {
        assert_eq!(v, a[[j, i]]);
        assert!((0.0..=1.0).contains(&v));
        if i == j {
            assert_eq!(v, 1.0);
        } else {
            assert!(v == 0.0 || v > delta, "entry ({i},{j}) = {v}");
        }
    }
}

#[test]
fn every_method_yields_a_valid_synthetic_graph() {
    let graph = planted(80, 3, 1);
    for method in [Method::Gcond, Method::Gcdm, Method::Sgdd] {
        for init in [InitKind::Random, InitKind::Herding, InitKind::KCenter, InitKind::Probability] {
            let cfg = CondenseConfig {
                init: InitStrategy { kind: init, use_subgraph_structure: false, seed: 2 },
                ..quick(method, 2)
            };
            let (synthetic, trace) = condense(&graph, &cfg).unwrap();
            assert_eq!(synthetic.n_prime(), cfg.n_prime(graph.n()));
            assert_eq!(synthetic.structure_mode(), StructureMode::Learned);
            assert!(synthetic.features().iter().all(|v| v.is_finite()));
            assert!(trace.records.iter().all(|r| r.loss.is_finite()));
            assert_structure(&synthetic, cfg.delta);
        }
    }
}

#[test]
fn graphless_condensation_has_no_adjacency() {
    let graph = planted(80, 3, 4);
    let cfg = CondenseConfig { structure_mode: StructureMode::Graphless, structure_steps: 0, ..quick(Method::Gcond, 0) };
    let (synthetic, _) = condense(&graph, &cfg).unwrap();
    assert!(synthetic.adjacency().is_none());
}

#[test]
fn sgdd_without_regularizers_is_gcond_with_a_generator() {
    let graph = planted(60, 3, 5);
    let cfg = CondenseConfig { sgdd_alpha: 0.0, sgdd_beta: 0.0, ..quick(Method::Sgdd, 9) };
    let (a, ta) = sgdd_condense(&graph, &cfg).unwrap();
    let (b, tb) = gcond_with_generator(&graph, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(format_trace_csv(&ta), format_trace_csv(&tb));
}

#[test]
fn condensation_is_reproducible_and_survives_disk() {
    let graph = planted(60, 3, 6);
    let cfg = quick(Method::Gcond, 11);
    let (a, ta) = condense(&graph, &cfg).unwrap();
    let (b, tb) = condense(&graph, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(format_trace_csv(&ta), format_trace_csv(&tb));

    let dir = tempfile::tempdir().unwrap();
    save_synthetic(dir.path(), &a).unwrap();
    assert_eq!(load_synthetic(dir.path()).unwrap(), a);
    let records = parse_trace_csv(&format_trace_csv(&ta)).unwrap();
    assert_eq!(records.len(), ta.records.len());
}

#[test]
fn synthetic_graph_trains_an_evaluator() {
    let graph = planted(90, 3, 7);
    let (synthetic, _) = condense(&graph, &quick(Method::Gcond, 0)).unwrap();
    let cfg = EvalConfig { epochs: 10, seeds: vec![0, 1], jobs: 2, ..EvalConfig::default() };
    let report = train_eval_pipeline(&graph, TrainingData::Synthetic(&synthetic), &cfg).unwrap();
    assert_eq!(report.trained_on, TrainedOn::Synthetic);
    assert_eq!(report.seeds_used, vec![0, 1]);
    assert!((0.0..=1.0).contains(&report.f1_micro));
    assert!(report.label_correlation_synthetic.is_some());
    let serial = train_eval_pipeline(&graph, TrainingData::Synthetic(&synthetic), &EvalConfig { jobs: 1, ..cfg }).unwrap();
    assert_eq!(report, serial);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn datasets_round_trip(n in 20usize..60, k in 2usize..5, seed in 0u64..1000) {
        let graph = planted(n, k, seed);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &graph).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.features(), graph.features());
        prop_assert_eq!(back.labels(), graph.labels());
        prop_assert_eq!(back.split(), graph.split());
        prop_assert_eq!(back.edges(), graph.edges());
    }

    #[test]
    fn led_is_zero_on_itself_and_nonnegative(n in 3usize..12, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut random_graph = || {
            let mut a = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in i + 1..n {
                    let v = if rng.random_bool(0.4) { rng.random_range(0.1..1.0) } else { 0.0 };
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            a
        };
        let a = random_graph();
        let b = random_graph();
        prop_assert!(led_distance(&a, &a).unwrap().abs() < 1e-20);
        prop_assert!(led_distance(&a, &b).unwrap() >= 0.0);
        let mut looped = a.clone();
        looped.diag_mut().fill(1.0);
        prop_assert!(led_distance(&a, &looped).unwrap().abs() < 1e-20);
    }

    #[test]
    fn condensed_structure_honours_any_threshold(delta in 0.05f64..0.95, seed in 0u64..50) {
        let graph = planted(40, 2, seed);
        let cfg = CondenseConfig { delta, ..quick(Method::Gcond, seed) };
        let (synthetic, _) = condense(&graph, &cfg).unwrap();
        assert_structure(&synthetic, delta);
    }
}
