use std::fs;

use homcrit::cell::Preset;
use homcrit::harness::*;
use proptest::prelude::*;

fn cfg(name: &str) -> ExperimentConfig {
    ExperimentConfig::for_experiment(name)
}

#[test]
fn resolution_guard_reports_required_nodes() {
    let c = ExperimentConfig {
        epsilons: Some(vec![1.0 / 64.0]),
        nodes_per_unit: Some(128),
        ..cfg("approx")
    };
    let errs = validate_config(&c).unwrap_err();
    let guard = errs
        .iter()
        .find_map(|e| match e {
            ConfigError::ResolutionGuard { required, spacing, .. } => Some((*required, *spacing)),
            _ => None,
        })
        .expect("guard error");
    assert_eq!(guard, (1024, 1.0 / 128.0));
    assert!(errs[0].to_string().contains("1024"));

    let ok = ExperimentConfig {
        nodes_per_unit: Some(1024),
        ..c.clone()
    };
    assert!(validate_config(&ok).is_ok());
    // Constant media have no oscillation to resolve.
    let identity = ExperimentConfig {
        coefficients: Some(CoefficientSpec::Name("identity".into())),
        ..c
    };
    assert!(validate_config(&identity).is_ok());
}

#[test]
fn out_of_range_windows_are_rejected() {
    let c = ExperimentConfig {
        delta0: Some(0.6),
        gamma: Some(1.0),
        ..cfg("turning")
    };
    let errs = validate_config(&c).unwrap_err();
    assert!(errs.contains(&ConfigError::OutOfRange {
        name: "delta0",
        value: 0.6,
        range: "(0, 1/2]"
    }));
    assert!(errs
        .iter()
        .any(|e| matches!(e, ConfigError::OutOfRange { name: "gamma", .. })));
}

#[test]
fn defaults_are_filled_in() {
    let r = validate_config(&cfg("twopoint")).unwrap();
    assert_eq!(r.eta, 0.1);
    assert_eq!(r.epsilons, vec![1.0 / 16.0, 1.0 / 32.0]);
    assert_eq!(r.boundary, "x1x2");
    assert_eq!(r.coefficients, Coefficients::Preset(Preset::layered()));
    let w = validate_config(&cfg("weiss")).unwrap();
    assert_eq!(w.coefficients, Coefficients::SpectralCorpus);
    assert_eq!(w.window, 1.0 / 32.0);
    assert_eq!(validate_config(&cfg("cell")).unwrap().n_cell, 256);
    assert_eq!(
        validate_config(&cfg("cell-convergence")).unwrap().experiment,
        Experiment::Cell
    );
}

#[test]
fn unknown_names_are_errors() {
    assert_eq!(
        validate_config(&cfg("nonsense")).unwrap_err(),
        vec![ConfigError::UnknownExperiment("nonsense".into())]
    );
    assert_eq!(
        validate_config(&ExperimentConfig::default()).unwrap_err(),
        vec![ConfigError::MissingExperiment]
    );
    let c = ExperimentConfig {
        coefficients: Some(CoefficientSpec::Name("marble".into())),
        boundary: Some("x9".into()),
        ..cfg("solve")
    };
    let errs = validate_config(&c).unwrap_err();
    assert!(errs.contains(&ConfigError::UnknownPreset("marble".into())));
    assert!(errs.contains(&ConfigError::UnknownBoundary("x9".into())));
    let c = ExperimentConfig {
        coefficients: Some(CoefficientSpec::Name("layered".into())),
        ..cfg("weiss")
    };
    assert!(matches!(
        validate_config(&c).unwrap_err()[0],
        ConfigError::PresetNotSupported { .. }
    ));
}

#[test]
fn config_json_round_trip() {
    let json = r#"{"experiment": "cover", "coefficients": {"preset": "layered", "mean": 3.0},
                   "epsilons": [0.0625], "gamma": 0.2}"#;
    let c = ExperimentConfig::from_json(json).unwrap();
    let r = validate_config(&c).unwrap();
    assert_eq!(
        r.coefficients,
        Coefficients::Preset(Preset::Layered {
            mean: 3.0,
            amplitude: 1.0
        })
    );
    assert_eq!(r.gamma, 0.2);
    assert!(ExperimentConfig::from_json(r#"{"experiment": "cell", "typo": 1}"#).is_err());

    let dir = tempfile::tempdir().unwrap();
    let run = RunConfig {
        out: dir.path().to_path_buf(),
        ..r
    };
    let p = echo_config(&run).unwrap();
    assert!(p.ends_with("cover_config.json"));
    let text = fs::read_to_string(p).unwrap();
    assert!(text.contains("\"gamma\": 0.2"));
}

#[test]
fn number_format_is_c_style() {
    assert_eq!(fmt_num(1.0), "1.000000000000e+00");
    assert_eq!(fmt_num(-0.00125), "-1.250000000000e-03");
    assert_eq!(fmt_num(6.02e123), "6.020000000000e+123");
    assert_eq!(fmt_num(f64::INFINITY), "inf");
    assert_eq!(frac(1.0 / 16.0), "1/16");
    assert_eq!(frac(0.3), "3.000000000000e-01");
    assert_eq!(frac_tag(1.0 / 64.0), "1_64");
}

#[test]
fn rows_sort_and_serialize() {
    let mut rep = SuiteReport::new(Experiment::Tube);
    rep.at_most(&Case::eps(1.0 / 16.0), "b", 1.0, 2.0, "oracle");
    rep.at_most(&Case::eps(1.0 / 32.0), "z", 3.0, 2.0, "oracle, bound");
    rep.at_least(&Case::eps(1.0 / 16.0), "a", 0.0, 0.0, "oracle");
    rep.sort();
    let order: Vec<(&str, &str)> = rep
        .rows
        .iter()
        .map(|r| (r.case.as_str(), r.quantity.as_str()))
        .collect();
    assert_eq!(order, [("eps=1/32", "z"), ("eps=1/16", "a"), ("eps=1/16", "b")]);
    assert!(!rep.passed());
    assert_eq!(rep.exit_code(), 1);
    assert_eq!(rep.failures().count(), 1);
    assert_eq!(rep.row("eps=1/16", "a").unwrap().ratio, 0.0);
    assert_eq!(rep.row("eps=1/32", "z").unwrap().ratio, 1.5);

    let mut buf = Vec::new();
    rep.write_rows(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], ROW_HEADER.join(","));
    assert_eq!(
        lines[1],
        "tube,eps=1/32,z,3.000000000000e+00,<=,2.000000000000e+00,1.500000000000e+00,false,\"oracle, bound\""
    );
}

#[test]
fn case_labels_compose() {
    let c = Case::all().and("r=1", 1.0);
    assert_eq!(c.label, "r=1");
    let d = Case::eps(0.5).and("r=1", 1.0);
    assert_eq!(d.label, "eps=1/2;r=1");
    assert_eq!(d.key, vec![0.5, 1.0]);
}

#[test]
fn baseline_drift_rows() {
    let mut base = Baseline::default();
    base.constants.insert("k".into(), 2.0);
    base.constants.insert("zero".into(), 0.0);
    let mut rep = SuiteReport::new(Experiment::Turning);
    rep.fit(&base, "k@eps=1/16", 2.4, &Case::eps(1.0 / 16.0));
    rep.fit(&base, "k@eps=1/32", 2.6, &Case::eps(1.0 / 32.0));
    rep.fit(&base, "zero", 1.0, &Case::all());
    rep.fit(&base, "untracked", 1.0, &Case::all());
    assert_eq!(rep.rows.len(), 2);
    assert!(rep.row("eps=1/16", "drift:k@eps=1/16").unwrap().pass);
    assert!(!rep.row("eps=1/32", "drift:k@eps=1/32").unwrap().pass);
    assert_eq!(rep.constant("zero").unwrap().baseline, None);

    let dir = tempfile::tempdir().unwrap();
    emit_report(&rep, dir.path()).unwrap();
    let bpath = dir.path().join("baseline.json");
    base.save(&bpath).unwrap();
    let updated = update_baseline(dir.path(), &bpath).unwrap();
    assert!((updated.constants["k"] - 2.5).abs() < 1e-12);
    assert!(!updated.constants.contains_key("untracked"));
}

#[test]
fn embedded_baseline_tracks_fitted_constants() {
    let b = Baseline::embedded();
    for k in ["turning.c_fit", "approx.c_sup", "approx.c_grad", "twopoint.c_spectral"] {
        assert!(b.get(k).is_some(), "{k}");
    }
}

#[test]
fn empty_directory_summary() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_summary(dir.path()).unwrap();
    assert_eq!((s.rows, s.failures, s.exit_code()), (0, 0, 0));
    let text = fs::read_to_string(&s.path).unwrap();
    assert!(text.starts_with("suite summary\nrows: 0\nfailures: 0\n"));
}

#[test]
fn emitted_report_files() {
    let mut rep = SuiteReport::new(Experiment::Cell);
    rep.at_most(&Case::all(), "q", 1.0, 2.0, "oracle");
    let mut t = Table::new("extra", &["x", "y"]);
    t.push(vec![1usize.into(), 0.5.into()]);
    rep.tables.push(t);
    rep.attachments.push(("raw.txt".into(), b"hello\n".to_vec()));
    rep.plots.push(
        Plot::new("fit", "title", "x", "y", true, true)
            .with(Series::new("s", vec![(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]).with_fit()),
    );
    let dir = tempfile::tempdir().unwrap();
    emit_report(&rep, dir.path()).unwrap();
    for f in [
        "cell.csv",
        "cell_constants.csv",
        "cell_extra.csv",
        "cell_raw.txt",
        "cell_fit.svg",
        "summary.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let extra = fs::read_to_string(dir.path().join("cell_extra.csv")).unwrap();
    assert_eq!(extra, "x,y\n1,5.000000000000e-01\n");
    let svg = fs::read_to_string(dir.path().join("cell_fit.svg")).unwrap();
    assert!(svg.contains("(slope 2.000)"));
    let s = write_summary(dir.path()).unwrap();
    assert_eq!((s.rows, s.failures), (1, 0));
}

#[test]
fn coarse_cell_fails_the_margin_check() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        out: Some(dir.path().to_path_buf()),
        n_cell: Some(64),
        ..cfg("cell")
    };
    let rep = run_experiment(&validate_config(&c).unwrap()).unwrap();
    assert_eq!(rep.exit_code(), 1);
    assert!(rep.failures().all(|r| r.case == "layered;n=64"));
    assert_eq!(write_summary(dir.path()).unwrap().exit_code(), 1);
}

#[test]
fn quick_suites_pass_and_are_deterministic() {
    let run = |dir: &std::path::Path| {
        for name in ["weiss", "cell"] {
            let c = ExperimentConfig {
                out: Some(dir.to_path_buf()),
                corpus_size: Some(50),
                ..cfg(name)
            };
            let rep = run_experiment(&validate_config(&c).unwrap()).unwrap();
            assert!(rep.passed(), "{name}: {:?}", rep.failures().collect::<Vec<_>>());
        }
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for f in ["weiss.csv", "cell.csv", "cell_constants.csv", "weiss_sweep.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

proptest! {
    #[test]
    fn fmt_num_round_trips(x in prop::num::f64::NORMAL) {
        let s = fmt_num(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!(((back - x) / x).abs() < 1e-12);
        let exp = s.split_once('e').unwrap().1;
        prop_assert!(exp.starts_with('+') || exp.starts_with('-'));
        prop_assert!(exp.len() >= 3);
    }

    #[test]
    fn loglog_fit_recovers_power_laws(slope in -3.0f64..3.0, c in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = (0..6).map(|k| {
            let x = 2f64.powi(-k);
            (x, c * x.powf(slope))
        }).collect();
        let (s, i) = fit_loglog(&pts).unwrap();
        prop_assert!((s - slope).abs() < 1e-10);
        prop_assert!((i - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn sort_is_by_numeric_key(keys in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let mut rep = SuiteReport::new(Experiment::Cover);
        for k in &keys {
            rep.at_most(&Case::new(format!("k={k}"), vec![*k]), "q", 0.0, 1.0, "t");
        }
        rep.sort();
        prop_assert!(rep.rows.windows(2).all(|w| w[0].key[0] <= w[1].key[0]));
    }

    #[test]
    fn windows_outside_half_are_rejected(v in 0.5001f64..10.0) {
        let c = ExperimentConfig { eta: Some(v), ..cfg("twopoint") };
        prop_assert!(validate_config(&c).is_err());
    }
}
