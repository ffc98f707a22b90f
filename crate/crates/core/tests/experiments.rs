use flipflow::experiment::{
    quantile, run_experiment, write_outputs, ExperimentKind, ExperimentSpec, MnistSettings,
    SurjectivitySettings, SyntheticSettings, TailSettings,
};
use flipflow::table::Row;

fn small_scaling() -> ExperimentSpec {
    ExperimentSpec {
        trials: 5,
        input_dims: vec![],
        width_exponents: vec![],
        architectures: vec![vec![512, 64, 8, 1]],
        seed: 11,
        ..ExperimentSpec::default_for(ExperimentKind::Scaling)
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn scaling_rows_and_rerun() {
    let spec = small_scaling();
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.results.rows.len(), 5);
    assert_eq!(out.aggregates.rows.len(), 1);
    let again = in_pool(3, || run_experiment(&spec).unwrap());
    assert_eq!(out.results.to_csv().unwrap(), again.results.to_csv().unwrap());
    assert_eq!(out.aggregates.to_csv().unwrap(), again.aggregates.to_csv().unwrap());
}

#[test]
fn aggregates_recompute_from_rows() {
    let out = run_experiment(&ExperimentSpec { trials: 12, ..small_scaling() }).unwrap();
    let ok: Vec<&Row> = out.results.rows.iter().filter(|r| r.f64("success") == Some(1.0)).collect();
    let mut arcs: Vec<f64> = ok.iter().map(|r| r.f64("arc_len").unwrap()).collect();
    let mut disp: Vec<f64> = ok.iter().map(|r| r.f64("l2_disp").unwrap()).collect();
    arcs.sort_by(f64::total_cmp);
    disp.sort_by(f64::total_cmp);
    let agg = &out.aggregates.rows[0];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    assert!(close(agg.f64("success_rate").unwrap(), ok.len() as f64 / 12.0));
    assert!(close(agg.f64("median_arc_len").unwrap(), quantile(&arcs, 0.5).unwrap()));
    assert!(close(agg.f64("p90_arc_len").unwrap(), quantile(&arcs, 0.9).unwrap()));
    assert!(close(agg.f64("median_l2_disp").unwrap(), quantile(&disp, 0.5).unwrap()));
    assert!(agg.f64("median_arc_len").unwrap() <= agg.f64("p90_arc_len").unwrap());
}

#[test]
fn rows_regenerate_from_seed_and_trial() {
    let spec = small_scaling();
    let out = run_experiment(&spec).unwrap();
    let row = &out.results.rows[3];
    let trial = row.f64("trial").unwrap() as u64;
    let (net, x0) = flipflow::experiment::random_instance(&[512, 64, 8, 1], spec.seed, trial).unwrap();
    let r = flipflow::gradient_flow_attack(&net, &x0, &spec.attack).unwrap();
    assert_eq!(row.f64("arc_len"), r.arc_length_to_flip);
    assert_eq!(row.f64("h0"), Some(r.initial_output));
}

#[test]
fn surjectivity_suite_is_deterministic() {
    let spec = ExperimentSpec {
        trials: 3,
        budget: 20,
        surjectivity: SurjectivitySettings {
            dims: vec![40, 80],
            row_fraction: 0.05,
            interval: None,
            tail: Some(TailSettings {
                d: 100,
                c1: 0.5,
                trials: 20,
                dump_samples: true,
            }),
        },
        ..ExperimentSpec::default_for(ExperimentKind::Surjectivity)
    };
    let a = run_experiment(&spec).unwrap();
    let b = in_pool(2, || run_experiment(&spec).unwrap());
    assert_eq!(a.results.to_csv().unwrap(), b.results.to_csv().unwrap());
    assert_eq!(a.aggregates.rows.len(), 3);
    assert_eq!(a.extra_files.len(), 1);
}

#[test]
fn synthetic_mnist_histogram_accounts_for_successes() {
    let spec = ExperimentSpec {
        seed: 3,
        mnist: MnistSettings {
            synthetic_fallback: true,
            synthetic: SyntheticSettings {
                d: 784,
                train_examples: 1000,
                test_examples: 200,
                margin: 0.5,
            },
            depths: vec![2],
            attacked_examples: 100,
            epochs: 5,
            ..MnistSettings::default()
        },
        ..ExperimentSpec::default_for(ExperimentKind::Mnist)
    };
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.results.rows.len(), 100);
    let successes = out.aggregates.rows[0].f64("successes").unwrap();
    let (depth, hist) = &out.histograms[0];
    assert_eq!(*depth, 2);
    assert_eq!(hist.columns(), vec!["bin_left", "bin_right", "count"]);
    let counted: f64 = hist.rows.iter().map(|r| r.f64("count").unwrap()).sum();
    assert_eq!(counted, successes);
}

#[test]
fn outputs_are_write_once() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_scaling();
    let out = run_experiment(&spec).unwrap();
    write_outputs(dir.path(), &spec, &out, 0.5).unwrap();
    for f in ["results.csv", "aggregates.csv", "run.json"] {
        assert!(dir.path().join(f).exists());
    }
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["spec"]["seed"], 11);
    assert!(run["toolkit_version"].is_string());
    assert!(write_outputs(dir.path(), &spec, &out, 0.5).is_err());
}
