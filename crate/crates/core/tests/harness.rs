use led_cmaes::cmaes::StepSizeMode;
use led_cmaes::harness::{emit, read_trace, run_experiment, ExperimentConfig};
use led_cmaes::optimizer::Algorithm;
use led_cmaes::restart::RestartMode;

fn small(algorithm: Algorithm, mode: StepSizeMode) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        mode,
        function: 2,
        dim: 12,
        eff_dim: 4,
        trials: 4,
        seed: 11,
        ..ExperimentConfig::default()
    }
}

#[test]
fn serial_and_parallel_agree() {
    for alg in [Algorithm::Cmaes, Algorithm::Led] {
        for mode in [StepSizeMode::Csa, StepSizeMode::Tpa] {
            let mut a = small(alg, mode);
            a.jobs = 1;
            let mut b = a.clone();
            b.jobs = 3;
            let ra = run_experiment(&a).unwrap();
            let rb = run_experiment(&b).unwrap();
            assert_eq!(ra.records, rb.records, "{alg} {}", mode.name());
            assert_eq!(ra.summary, rb.summary);
        }
    }
}

#[test]
fn seed_changes_the_runs() {
    let a = small(Algorithm::Led, StepSizeMode::Csa);
    let mut b = a.clone();
    b.seed = 12;
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_ne!(ra.records[0].rows, rb.records[0].rows);
}

#[test]
fn trace_round_trips_through_csv() {
    let mut cfg = small(Algorithm::Led, StepSizeMode::Tpa);
    cfg.trace_led = true;
    cfg.restart = RestartMode::Ipop;
    let result = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&result, dir.path()).unwrap();
    for f in ["trace.csv", "summary.csv", "trials.csv", "config.txt", "led_trace.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let back = read_trace(&dir.path().join("trace.csv")).unwrap();
    let original: Vec<_> = result
        .records
        .iter()
        .flat_map(|r| r.rows.iter().map(move |row| (r.trial, r.seed, row.clone())))
        .collect();
    assert_eq!(back, original);

    let cfg_back =
        ExperimentConfig::from_config_file(&dir.path().join("config.txt")).unwrap();
    assert_eq!(cfg_back.algorithm, cfg.algorithm);
    assert_eq!(cfg_back.dim, cfg.dim);
    assert_eq!(cfg_back.restart, cfg.restart);
    assert!(cfg_back.trace_led);
}

#[test]
fn summary_has_one_row() {
    let result = run_experiment(&small(Algorithm::Cmaes, StepSizeMode::Csa)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&result, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn config_text_parses() {
    let cfg = ExperimentConfig::from_config_text(
        "# comment\nalgo = led\nstepsize=tpa\nrestart = ipop\nfn=9\ndim=20\neff-dim=5\ntrials=3\nseed=7\nno-rotation=true\n",
    )
    .unwrap();
    assert_eq!(cfg.algorithm, Algorithm::Led);
    assert_eq!(cfg.mode, StepSizeMode::Tpa);
    assert_eq!(cfg.restart, RestartMode::Ipop);
    assert_eq!((cfg.function, cfg.dim, cfg.eff_dim, cfg.trials, cfg.seed), (9, 20, 5, 3, 7));
    assert!(!cfg.rotate);
}

#[test]
fn bad_config_is_rejected() {
    assert!(ExperimentConfig::from_config_text("algo=foo\n").is_err());
    assert!(ExperimentConfig::from_config_text("colour=blue\n").is_err());
    let fn10 = ExperimentConfig::from_config_text("fn=10\n");
    assert!(fn10.is_err() || fn10.unwrap().validate().is_err());
    // Parsing alone accepts it; validation runs after CLI overrides merge.
    let cfg = ExperimentConfig::from_config_text("dim=4\neff-dim=8\n").unwrap();
    assert!(cfg.validate().is_err());
}
