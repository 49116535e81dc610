use opsa::harness::*;
use opsa::solver::{Method, StepPolicy};
use opsa::Error;
use proptest::prelude::*;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "problem": {{"m": 12, "n": 10, "r": 2, "d": [2, 4], "kappa": 3, "outlier_fraction": [0.0, 0.1], "p": 240}},
            "solver": {{"methods": ["OPSA", "ScaledSM"], "lambda": 0.5}},
            "run": {{"seeds": [1, 2], "max_iters": 25}},
            "output": {{"directory": {:?}, "tag": "t"}}
        }}"#,
        dir
    ))
    .unwrap()
}

#[test]
fn cells_expand_the_product() {
    let cfg = small(std::path::Path::new("/tmp/unused"));
    let cells = cfg.cells().unwrap();
    assert_eq!(cells.len(), 2 * 2 * 2 * 2);
    assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    assert_eq!((cells[0].seed, cells[1].seed), (1, 2));
    assert_eq!(cells[15].d, 4);
    assert_eq!(cells[15].method, Method::ScaledSm);
}

#[test]
fn p_rule_and_defaults() {
    let cfg = ExperimentConfig::from_json(
        r#"{"problem": {"m": 100, "n": 100, "r": 5, "d": 10, "kappa": 20}, "output": {"directory": "o"}}"#,
    )
    .unwrap();
    assert_eq!(cfg.p(), 4000);
    assert!(cfg.problem.normalize);
    assert_eq!(
        cfg.solver.step_policy,
        StepPolicy::Polyak { opt_value: None }
    );
    assert_eq!(cfg.run.seeds, vec![1]);
    assert_eq!(cfg.cells().unwrap().len(), 1);
}

#[test]
fn rejects_bad_configs() {
    let base = |problem: &str, extra: &str| {
        format!(r#"{{"problem": {{{problem}}}, {extra} "output": {{"directory": "o"}}}}"#)
    };
    let ok = r#""m": 10, "n": 10, "r": 2, "d": 3, "kappa": 2"#;
    assert!(ExperimentConfig::from_json(&base(ok, "")).is_ok());
    let cases = [
        base(&format!("{ok}, \"typo\": 1"), ""),
        base(r#""m": 10, "n": 10, "r": 2, "d": 1, "kappa": 2"#, ""),
        base(r#""m": 10, "n": 10, "r": 2, "d": 3, "kappa": 0.5"#, ""),
        base(&format!("{ok}, \"outlier_fraction\": 0.6"), ""),
        base(&format!("{ok}, \"p\": \"9nr\""), ""),
        base(ok, r#""solver": {"lambda": -1},"#),
        base(ok, r#""solver": {"lambda": 0},"#),
        base(ok, r#""solver": {"truncation_quantile": 0},"#),
        base(
            ok,
            r#""solver": {"step_policy": {"kind": "geometric", "eta0": 0.1, "q": 1.5}},"#,
        ),
        base(ok, r#""solver": {"methods": ["Newton"]},"#),
    ];
    for case in &cases {
        assert!(
            ExperimentConfig::from_json(case).is_err(),
            "accepted {case}"
        );
    }
}

#[test]
fn empty_sweeps_have_no_cells() {
    let text = r#"{"problem": {"m": 10, "n": 10, "r": 2, "d": [], "kappa": 2}, "output": {"directory": "o"}}"#;
    assert!(matches!(
        ExperimentConfig::from_json(text),
        Err(Error::NoCells)
    ));
    let text = r#"{"problem": {"m": 10, "n": 10, "r": 2, "d": 3, "kappa": 2}, "run": {"seeds": []}, "output": {"directory": "o"}}"#;
    assert!(matches!(
        ExperimentConfig::from_json(text),
        Err(Error::NoCells)
    ));
}

#[test]
fn run_writes_traces_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.manifest.cells.len(), 16);
    assert_eq!(out.manifest.failed().count(), 0);
    assert_eq!(Manifest::load(&out.manifest_path).unwrap(), out.manifest);

    for (i, cell) in out.manifest.cells.iter().enumerate() {
        let path = dir.path().join(cell.file.as_ref().unwrap());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some(TRACE_HEADER));
        let records = out.trace(i).unwrap();
        assert_eq!(text.lines().count(), records.len() + 1);
        assert_eq!(records.len(), cell.iters_to_stop.unwrap() + 1);
        assert_eq!(
            records.last().unwrap().rel_error,
            cell.final_rel_error.unwrap()
        );
        for hit in &cell.iterations_to_threshold {
            let first = records
                .iter()
                .find(|r| r.rel_error <= hit.threshold)
                .map(|r| r.t);
            assert_eq!(first, hit.iteration);
        }
    }

    let before: Vec<Vec<u8>> = out
        .manifest
        .cells
        .iter()
        .map(|c| std::fs::read(dir.path().join(c.file.as_ref().unwrap())).unwrap())
        .collect();
    let again = run_experiment(&cfg).unwrap();
    for (c, old) in again.manifest.cells.iter().zip(before) {
        assert_eq!(
            std::fs::read(dir.path().join(c.file.as_ref().unwrap())).unwrap(),
            old
        );
    }
}

#[test]
fn failed_cells_are_marked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"problem": {{"m": 100000, "n": 100000, "r": 1, "d": 1, "kappa": 1}},
            "run": {{"max_iters": 1}}, "output": {{"directory": {:?}}}}}"#,
        dir.path()
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    let cell = &out.manifest.cells[0];
    assert_eq!(cell.status, CellStatus::Failed);
    assert!(cell.file.is_none());
    assert!(cell.error.as_ref().unwrap().contains("allocate"));
    assert!(out.manifest_path.exists());
}

fn arb_sweep<T: std::fmt::Debug + Clone + 'static>(
    s: impl Strategy<Value = T> + Clone + 'static,
) -> impl Strategy<Value = OneOrMany<T>> {
    prop_oneof![
        s.clone().prop_map(OneOrMany::One),
        prop::collection::vec(s, 1..4).prop_map(OneOrMany::Many)
    ]
}

prop_compose! {
    fn arb_config()(
        d in arb_sweep(2usize..6),
        kappa in arb_sweep(1.0f64..100.0),
        fraction in arb_sweep(0.0f64..0.45),
        lambda in arb_sweep(1e-4f64..10.0),
        p in prop_oneof![Just(PRule::Named(NamedRule::EightNr)), (1usize..5000).prop_map(PRule::Explicit)],
        normalize in any::<bool>(),
        geometric in any::<bool>(),
        quantile in prop::option::of(0.01f64..=1.0),
        seeds in prop::collection::vec(any::<u64>(), 1..4),
        max_iters in 1usize..5000,
        tag in "[a-z0-9_]{1,8}",
    ) -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemConfig {
                m: 8, n: 9, r: 2, d, kappa, outlier_fraction: fraction, amplitude: 10.0, p, normalize,
                storage: opsa::StorageMode::Dense,
            },
            solver: SolverBlock {
                methods: vec![Method::Opsa, Method::VanillaSubGd],
                lambda,
                step_policy: if geometric { StepPolicy::Geometric { eta0: 0.1, q: 0.97 } } else { StepPolicy::Polyak { opt_value: None } },
                truncation_quantile: quantile,
                pinv_cutoff: 1e-12,
            },
            run: RunBlock { seeds, max_iters, ..RunBlock::default() },
            output: OutputBlock { directory: "out/x".into(), tag, thresholds: vec![1e-4] },
        }
    }
}

proptest! {
    #[test]
    fn config_round_trips(cfg in arb_config()) {
        let text = cfg.to_json();
        prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
