//! Runs the full experiment battery twice and prints one verdict per
//! acceptance criterion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use homcrit::cell::{solve_cell_problem, CoefficientField, Preset};
use homcrit::harness::{
    fmt_num, run_experiment, validate_config, CoefficientSpec, ExperimentConfig, ResultRow, SuiteReport,
};

struct Run {
    report: SuiteReport,
    elapsed: Duration,
}

/// Suite label, experiment, and config overrides.
fn battery() -> Vec<(&'static str, ExperimentConfig)> {
    let cfg = ExperimentConfig::for_experiment;
    vec![
        ("cell", cfg("cell")),
        ("weiss", cfg("weiss")),
        ("doubling", cfg("doubling")),
        ("approx", cfg("approx")),
        ("turning", cfg("turning")),
        ("twopoint", cfg("twopoint")),
        ("solve", cfg("solve")),
        ("tube", cfg("tube")),
        ("cover", cfg("cover")),
        (
            "cover-layered",
            ExperimentConfig {
                coefficients: Some(CoefficientSpec::Name("layered".into())),
                epsilons: Some(vec![1.0 / 16.0, 1.0 / 32.0]),
                ..cfg("cover")
            },
        ),
    ]
}

fn run_battery(root: &Path) -> BTreeMap<&'static str, Run> {
    let mut out = BTreeMap::new();
    for (label, mut c) in battery() {
        c.out = Some(root.join(label));
        let run = validate_config(&c).unwrap_or_else(|e| panic!("{label}: {e:?}"));
        let t = Instant::now();
        let report = run_experiment(&run).unwrap_or_else(|e| panic!("{label}: {e}"));
        let elapsed = t.elapsed();
        eprintln!("  {label}: {} rows, {:.1} s", report.rows.len(), elapsed.as_secs_f64());
        out.insert(label, Run { report, elapsed });
    }
    out
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(csv_files(&p));
        } else if p.extension().is_some_and(|x| x == "csv") {
            v.push(p);
        }
    }
    v.sort();
    v
}

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn check(&mut self, id: u32, title: &str, ok: bool, detail: String) {
        println!("{} {id:>2} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn rows<'a>(r: &'a Run, quantity: &'a str) -> Vec<&'a ResultRow> {
    r.report.rows_named(quantity).collect()
}

/// All rows pass and there is at least one.
fn all_pass(rows: &[&ResultRow]) -> bool {
    !rows.is_empty() && rows.iter().all(|r| r.pass)
}

fn worst(rows: &[&ResultRow]) -> f64 {
    rows.iter().map(|r| r.measured).fold(f64::NEG_INFINITY, f64::max)
}

fn lowest(rows: &[&ResultRow]) -> f64 {
    rows.iter().map(|r| r.measured).fold(f64::INFINITY, f64::min)
}

fn total(rows: &[&ResultRow]) -> f64 {
    rows.iter().map(|r| r.measured).sum()
}

fn main() -> ExitCode {
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    eprintln!("acceptance battery, first pass");
    let first = run_battery(dirs.0.path());
    eprintln!("acceptance battery, second pass");
    let _second = run_battery(dirs.1.path());
    let mut v = Verdicts { failed: 0 };

    let cell = &first["cell"];
    let a = rows(cell, "a_hat_error");
    v.check(
        1,
        "homogenized matrix of the layered medium",
        all_pass(&a) && worst(&a) <= 1e-4 && cell.elapsed.as_secs_f64() < 60.0,
        format!(
            "max error {} at n=256, {:.2} s",
            fmt_num(worst(&a)),
            cell.elapsed.as_secs_f64()
        ),
    );

    let mu = rows(cell, "mu_error");
    let id = CoefficientField::from_preset(&Preset::Identity, 8).unwrap();
    let id_mu = solve_cell_problem(&id, 1e-12).unwrap().mu;
    v.check(
        2,
        "invertibility margin",
        all_pass(&mu) && worst(&mu) <= 1e-4 && id_mu == 1.0,
        format!(
            "layered |mu - 1/sqrt 3| = {}, identity mu = {id_mu}",
            fmt_num(worst(&mu))
        ),
    );

    let weiss = &first["weiss"];
    let gap = rows(weiss, "identity_gap");
    v.check(
        3,
        "Weiss identity on the seeded corpus",
        all_pass(&gap) && worst(&gap) <= 1e-10 && weiss.elapsed.as_secs_f64() < 5.0,
        format!(
            "max gap {} over 200 expansions, {:.2} s",
            fmt_num(worst(&gap)),
            weiss.elapsed.as_secs_f64()
        ),
    );

    let mono = rows(weiss, "monotonicity_violation");
    v.check(
        4,
        "Weiss monotonicity on 32 radii",
        all_pass(&mono),
        format!("largest decrease {} (slack 1e-10)", fmt_num(worst(&mono))),
    );

    let conc = rows(weiss, "concentration_violations");
    let turn = rows(weiss, "turning_violations");
    let members = rows(weiss, "concentration_members");
    v.check(
        5,
        "concentration and one-step turning",
        all_pass(&conc) && all_pass(&turn) && total(&conc) == 0.0 && total(&turn) == 0.0 && total(&members) > 0.0,
        format!(
            "{} + {} violations over {} qualifying members",
            total(&conc),
            total(&turn),
            total(&members)
        ),
    );

    let dbl = &first["doubling"];
    let ns = rows(dbl, "nstar_error");
    let sandwich = rows(dbl, "sandwich_violations");
    let degrees: Vec<f64> = ns
        .iter()
        .map(|r| r.case.clone())
        .filter_map(|c| c.strip_prefix("l=")?.split(';').next()?.parse().ok())
        .collect();
    let covers_degrees = [1.0, 2.0, 3.0].iter().all(|l| degrees.contains(l));
    v.check(
        6,
        "doubling indices of homogeneous harmonics",
        all_pass(&ns) && covers_degrees && all_pass(&sandwich) && total(&sandwich) == 0.0,
        format!(
            "max |N* - l| = {} over {} grid cases, {} sandwich violations",
            fmt_num(worst(&ns)),
            ns.len(),
            total(&sandwich)
        ),
    );

    let ap = &first["approx"];
    let s_sup = rows(ap, "slope_e_sup");
    let s_grad = rows(ap, "slope_e_grad");
    v.check(
        7,
        "harmonic approximation rate",
        all_pass(&s_sup)
            && all_pass(&s_grad)
            && lowest(&s_sup) >= 0.5
            && lowest(&s_grad) >= 0.5
            && ap.elapsed.as_secs_f64() < 600.0,
        format!(
            "slopes sup {:.3}, grad {:.3}, {:.1} s",
            lowest(&s_sup),
            lowest(&s_grad),
            ap.elapsed.as_secs_f64()
        ),
    );

    let tu = &first["turning"];
    let bound: Vec<&ResultRow> = rows(tu, "turning")
        .into_iter()
        .filter(|r| r.case.starts_with("eps="))
        .collect();
    let spread = rows(tu, "c_fit_spread");
    let drift: Vec<&ResultRow> = tu
        .report
        .rows
        .iter()
        .filter(|r| r.quantity.starts_with("drift:"))
        .collect();
    v.check(
        8,
        "turning across scales",
        bound.len() == 2 && all_pass(&bound) && all_pass(&spread) && drift.len() == 2 && all_pass(&drift),
        format!(
            "bound ratio max {:.3}, C_fit spread {:.3}, max drift {:.3}",
            bound.iter().map(|r| r.ratio).fold(0.0, f64::max),
            worst(&spread),
            worst(&drift)
        ),
    );

    let tube = &first["tube"];
    let se: Vec<&ResultRow> = rows(tube, "standard_errors")
        .into_iter()
        .filter(|r| r.key.last().is_some_and(|x| *x >= 0.05 - 1e-12))
        .collect();
    let vs_id = rows(tube, "ratio_bound_vs_identity");
    v.check(
        9,
        "tube volumes",
        se.len() >= 3 && all_pass(&se) && vs_id.len() == 2 && all_pass(&vs_id),
        format!(
            "max {:.2} standard errors; layered/identity bound ratio max {:.3}",
            worst(&se),
            worst(&vs_id)
        ),
    );

    let covers = [&first["cover"], &first["cover-layered"]];
    let structural: Vec<&ResultRow> = covers
        .iter()
        .flat_map(|c| c.report.rows.iter())
        .filter(|r| r.quantity == "disjoint" || r.quantity == "contained")
        .collect();
    let sum_spread = rows(&first["cover"], "sum_radii_spread");
    v.check(
        10,
        "covering construction",
        all_pass(&structural) && all_pass(&sum_spread) && worst(&sum_spread) < 2.0,
        format!(
            "{} disjointness/containment checks, sum-of-radii spread {:.3}",
            structural.len(),
            worst(&sum_spread)
        ),
    );

    let zone: Vec<&ResultRow> = covers
        .iter()
        .flat_map(|c| c.report.rows_named("zone_violations"))
        .collect();
    v.check(
        11,
        "no critical points in cone-complement zones",
        all_pass(&zone) && total(&zone) == 0.0,
        format!("{} violations over {} fields", total(&zone), zone.len()),
    );

    let (fa, fb) = (csv_files(dirs.0.path()), csv_files(dirs.1.path()));
    let rel = |p: &PathBuf, root: &Path| p.strip_prefix(root).unwrap().to_path_buf();
    let same_names = fa
        .iter()
        .map(|p| rel(p, dirs.0.path()))
        .eq(fb.iter().map(|p| rel(p, dirs.1.path())));
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(a, b)| fs::read(a).unwrap() != fs::read(b).unwrap())
        .map(|(a, _)| rel(a, dirs.0.path()).display().to_string())
        .collect();
    v.check(
        12,
        "determinism",
        same_names && differing.is_empty() && !fa.is_empty(),
        if differing.is_empty() {
            format!("{} CSV files byte-identical across two runs", fa.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    );

    let failing: Vec<String> = first
        .iter()
        .flat_map(|(l, r)| {
            r.report
                .failures()
                .map(move |f| format!("{l}: {} {}", f.case, f.quantity))
        })
        .collect();
    if !failing.is_empty() {
        println!("failing rows: {}", failing.join("; "));
    }
    println!("acceptance: {} of 12 criteria pass", 12 - v.failed);
    if v.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
