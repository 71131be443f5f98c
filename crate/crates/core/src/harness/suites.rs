//! The experiment suites. Each returns an unsorted report; `run_suite`
//! applies the canonical order.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    fit_loglog, frac, frac_tag, Baseline, Case, Coefficients, Experiment, Plot, RunConfig, Series, SuiteReport, Table,
    Value,
};
use crate::cell::{min_det_check, solve_cell_problem, Preset};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{
    almost_invariant_subspace, build_cover, find_critical_points, gram_of, lipschitz_graph_check,
    low_frequency_critical_points, minimal_radius, no_critical_zone_check, tube_volume, two_point_turning,
    write_tube_csv, DetectOptions, TubeEstimate, TubeSet,
};
use crate::poly::Poly3;
use crate::solver::{
    aligned_spacing, harmonic_approximant, solve_dirichlet, BallProblem, BoundaryData, BoundaryMode, Medium, Solution,
    SolveOptions,
};
use crate::spectra::{
    centered_projection, concentration_check, doubling_index, frequency_drop, spectral_doubling, spectral_frequency,
    spectral_sweep, spectral_turning, turning_distance, weiss_functional, weiss_identity_check, write_sweep_csv,
    HarmonicExpansion,
};
use crate::tolerances;
use crate::Vector3;

/// Cell tolerance for media built by the suites.
const MEDIUM_TOL: f64 = 1e-11;
/// Seeding lattice for critical point detection.
const DETECT_SPACING: f64 = 1.0 / 64.0;
/// Identity-medium spacing when none is configured.
const CONSTANT_SPACING: f64 = 1.0 / 64.0;
/// Doubling suite: lattice nodes per unit and ball radius.
const DOUBLING_NODES: usize = 128;
const DOUBLING_RADIUS: f64 = 0.625;

fn origin() -> Vector3<f64> {
    Vector3::zeros()
}

fn seed_for(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn medium(cfg: &RunConfig) -> Result<Medium> {
    match &cfg.coefficients {
        Coefficients::Preset(Preset::Identity) | Coefficients::SpectralCorpus => Ok(Medium::identity()),
        c => Medium::normalized(c.field(cfg.n_cell)?, MEDIUM_TOL),
    }
}

fn spacing(cfg: &RunConfig, medium: &Medium, eps: f64) -> f64 {
    match cfg.nodes_per_unit {
        Some(n) => 1.0 / n as f64,
        None if medium.is_constant() => CONSTANT_SPACING,
        None => aligned_spacing(medium, eps, 16),
    }
}

fn boundary_poly(name: &str) -> Result<Poly3> {
    match BoundaryData::preset(name, &origin())? {
        BoundaryData::Poly(p) => Ok(p),
        BoundaryData::Field(_) => Err(Error::InvalidInput(format!("boundary '{name}' is not polynomial"))),
    }
}

fn solve_ball(cfg: &RunConfig, medium: &Medium, eps: f64, radius: f64, h: f64) -> Result<Solution> {
    let problem = BallProblem {
        center: origin(),
        radius,
        epsilon: eps,
        spacing: h,
        boundary: BoundaryData::preset(&cfg.boundary, &origin())?,
    };
    solve_dirichlet(
        &problem,
        medium,
        SolveOptions {
            tol: cfg.tol,
            ..Default::default()
        },
    )
}

fn nstar(u: &dyn ScalarField, x: &Vector3<f64>, r: f64, q: usize) -> Result<f64> {
    doubling_index(u, x, r, q)?
        .n_star
        .ok_or_else(|| Error::Degenerate("doubling index undefined".into()))
}

fn detect(u: &dyn ScalarField, radius: f64, fd_step: f64, exact: bool) -> Result<Vec<Vector3<f64>>> {
    let opts = DetectOptions {
        h: DETECT_SPACING,
        fd_step,
        grad_tol: if exact { 1e-10 } else { tolerances::GRAD_TOL },
        max_newton: 50,
    };
    Ok(find_critical_points(u, &origin(), radius, opts)?
        .into_iter()
        .map(|c| c.x)
        .collect())
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------------------
// cell

/// Closed forms (Â, mu, exact) for presets that have them.
fn closed_form(p: &Preset) -> Option<(Matrix3<f64>, f64, bool)> {
    match p {
        Preset::Identity => Some((Matrix3::identity(), 1.0, true)),
        Preset::Constant { matrix } => Some((Matrix3::from_fn(|i, j| matrix[i][j]), 1.0, true)),
        Preset::Layered { mean, amplitude } => {
            let h = (mean * mean - amplitude * amplitude).sqrt();
            Some((
                Matrix3::from_diagonal(&Vector3::new(h, *mean, *mean)),
                h / (mean + amplitude.abs()),
                false,
            ))
        }
        _ => None,
    }
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub(super) fn cell(cfg: &RunConfig, _base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Cell);
    let mut ns: Vec<usize> = [16, 32, 64, 128].into_iter().filter(|&n| n < cfg.n_cell).collect();
    ns.push(cfg.n_cell);
    let oracle = match &cfg.coefficients {
        Coefficients::Preset(p) => closed_form(p),
        _ => None,
    };
    let mut table = Table::new(
        "sweep",
        &[
            "n",
            "a11",
            "a12",
            "a13",
            "a22",
            "a23",
            "a33",
            "flux_gap",
            "mu",
            "a_hat_error",
            "mu_error",
            "residual",
            "iterations",
        ],
    );
    let mut a_err = Vec::new();
    let mut mu_err = Vec::new();
    for &n in &ns {
        let field = cfg.coefficients.field(n)?;
        let c = solve_cell_problem(&field, cfg.tol)?;
        let a = c.a_hat;
        let md = min_det_check(&c);
        let scale = max_abs(&a);
        let flux_gap = max_abs(&(a - c.a_hat_flux));
        let (ea, em) = match &oracle {
            Some((a0, mu0, _)) => (max_abs(&(a - a0)), (md.mu - mu0).abs()),
            None => (f64::NAN, f64::NAN),
        };
        a_err.push((n as f64, ea));
        mu_err.push((n as f64, em));
        table.push(vec![
            n.into(),
            a[(0, 0)].into(),
            a[(0, 1)].into(),
            a[(0, 2)].into(),
            a[(1, 1)].into(),
            a[(1, 2)].into(),
            a[(2, 2)].into(),
            flux_gap.into(),
            md.mu.into(),
            ea.into(),
            em.into(),
            c.residual.into(),
            c.iterations.iter().sum::<usize>().into(),
        ]);
        if n != cfg.n_cell {
            continue;
        }
        let case = Case::new(format!("{};n={n}", cfg.coefficients.label()), vec![n as f64]);
        if let Some((_, _, exact)) = &oracle {
            rep.at_most(&case, "a_hat_error", ea, 1e-4, "closed-form homogenized matrix");
            let mu_bound = if *exact { 0.0 } else { 1e-4 };
            rep.at_most(&case, "mu_error", em, mu_bound, "closed-form invertibility margin");
        }
        let asym = max_abs(&(a - a.transpose()));
        rep.at_most(
            &case,
            "a_hat_asymmetry",
            asym,
            tolerances::MATRIX_IDENTITY * scale,
            "symmetric coefficients",
        );
        rep.at_most(
            &case,
            "energy_flux_gap",
            flux_gap,
            tolerances::MATRIX_IDENTITY * scale,
            "energy and flux averages agree",
        );
        let lam = a.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        rep.at_least(
            &case,
            "a_hat_min_eigenvalue",
            lam,
            field.lambda(),
            "ellipticity of the cell average",
        );
        rep.at_least(&case, "mu", md.mu, f64::MIN_POSITIVE, "invertibility of I + grad chi");
        rep.at_most(&case, "residual", c.residual, cfg.tol, "cell solver tolerance");
    }
    rep.tables.push(table);
    if let Some((_, _, false)) = oracle {
        if ns.len() >= 2 {
            let s = Series::new("|mu - mu0|", mu_err.clone()).with_fit();
            if let Some(slope) = s.slope {
                rep.constants.push(super::FittedConstant {
                    name: "cell.mu_rate".into(),
                    value: -slope,
                    baseline: None,
                });
            }
            let mut plot = Plot::new("convergence", "Cell problem convergence", "n", "error", true, true).with(s);
            if a_err.iter().any(|(_, e)| *e > 1e-13) {
                plot = plot.with(Series::new("max |A_hat - A0|", a_err).with_fit());
            }
            rep.plots.push(plot);
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// solve

pub(super) fn solve(cfg: &RunConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Solve);
    let med = medium(cfg)?;
    let eps = cfg.epsilons[0];
    let h = spacing(cfg, &med, eps);
    let u = solve_ball(cfg, &med, eps, 1.0, h)?;
    let case = Case::eps(eps).and(&cfg.boundary, 0.0);
    rep.at_most(&case, "residual", u.residual(), cfg.tol, "solver tolerance");
    let g = boundary_poly(&cfg.boundary)?;
    let sq = crate::quadrature::SphereQuadrature::new(32);
    let gmax = sq.points.iter().fold(0.0f64, |m, p| m.max(g.eval(p).abs()));
    let umax = u.samples_within(0.9).iter().fold(0.0f64, |m, (_, v, _)| m.max(v.abs()));
    rep.at_most(&case, "interior_max", umax, gmax * (1.0 + 1e-6), "maximum principle");
    let mut t = Table::new(
        "info",
        &["eps", "h", "residual", "iterations", "interior_max", "boundary_max"],
    );
    t.push(vec![
        eps.into(),
        h.into(),
        u.residual().into(),
        u.iterations().into(),
        umax.into(),
        gmax.into(),
    ]);
    rep.tables.push(t);
    let bytes = csv_bytes(|b| match &u {
        Solution::Axial(a) => a.write_csv(b),
        Solution::Cartesian(c) => c.write_csv(b),
    })?;
    rep.attachments.push(("solution.csv".into(), bytes));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// approx

pub(super) fn approx(cfg: &RunConfig, base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Approx);
    let med = medium(cfg)?;
    let gm = if cfg.nodes_per_unit.is_none() && !med.is_constant() {
        med.with_lattice_correctors(16, MEDIUM_TOL)?
    } else {
        med.clone()
    };
    let mut table = Table::new(
        "rates",
        &[
            "eps",
            "h",
            "e_sup",
            "e_grad",
            "normalizer",
            "e_sup_normalized",
            "e_grad_normalized",
            "iterations",
        ],
    );
    let mut sup = Vec::new();
    let mut grad = Vec::new();
    for &eps in &cfg.epsilons {
        let h = spacing(cfg, &gm, eps);
        let u = solve_ball(cfg, &gm, eps, 1.0, h)?;
        let ap = harmonic_approximant(&u, &gm, eps, 1.0, cfg.tol)?;
        let (es, eg) = (ap.e_sup_normalized(), ap.e_grad_normalized());
        table.push(vec![
            eps.into(),
            h.into(),
            ap.e_sup.into(),
            ap.e_grad.into(),
            ap.normalizer.into(),
            es.into(),
            eg.into(),
            u.iterations().into(),
        ]);
        sup.push((eps, es));
        grad.push((eps, eg));
    }
    rep.tables.push(table);
    let all = Case::new(format!("{};{}", cfg.coefficients.label(), cfg.boundary), Vec::new());
    if cfg.epsilons.len() >= 2 {
        let ss = fit_loglog(&sup).map_or(f64::NAN, |f| f.0);
        let sg = fit_loglog(&grad).map_or(f64::NAN, |f| f.0);
        rep.at_least(&all, "slope_e_sup", ss, 0.5, "(eps/r)^(1/2) approximation rate");
        rep.at_least(&all, "slope_e_grad", sg, 0.5, "(eps/r)^(1/2) approximation rate");
    }
    let c_sup = sup.iter().map(|(e, v)| v / e.sqrt()).fold(0.0f64, f64::max);
    let c_grad = grad.iter().map(|(e, v)| v / e.sqrt()).fold(0.0f64, f64::max);
    if cfg.coefficients == Coefficients::Preset(Preset::layered()) && cfg.boundary == "linear" {
        rep.fit(base, "approx.c_sup", c_sup, &all);
        rep.fit(base, "approx.c_grad", c_grad, &all);
    } else {
        rep.fit(&Baseline::default(), "approx.c_sup", c_sup, &all);
        rep.fit(&Baseline::default(), "approx.c_grad", c_grad, &all);
    }
    rep.plots.push(
        Plot::new(
            "rates",
            "Harmonic approximation errors",
            "eps",
            "normalized error",
            true,
            true,
        )
        .with(Series::new("e_sup", sup).with_fit())
        .with(Series::new("e_grad", grad).with_fit()),
    );
    Ok(rep)
}

// ---------------------------------------------------------------------------
// spectral corpus

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    /// Every degree present with geometric decay.
    Generic,
    /// One dominant degree, small contributions elsewhere.
    NearHomogeneous,
    /// Two degrees of comparable size.
    TwoDegree,
    /// One dominant degree perturbed only by lower degrees.
    LowPerturbed,
}

impl CorpusKind {
    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Generic => "generic",
            CorpusKind::NearHomogeneous => "near-homogeneous",
            CorpusKind::TwoDegree => "two-degree",
            CorpusKind::LowPerturbed => "low-perturbed",
        }
    }
}

/// Seeded harmonic expansions without a degree-0 part, cycling through the
/// four kinds.
pub fn spectral_corpus(seed: u64, size: usize, l_max: usize) -> Vec<(CorpusKind, HarmonicExpansion)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        CorpusKind::Generic,
        CorpusKind::NearHomogeneous,
        CorpusKind::TwoDegree,
        CorpusKind::LowPerturbed,
    ];
    let fill = |e: &mut HarmonicExpansion, l: usize, scale: f64, rng: &mut ChaCha8Rng| {
        for m in -(l as i64)..=(l as i64) {
            e.set(l, m, scale * rng.gen_range(-1.0..=1.0));
        }
    };
    (0..size)
        .map(|i| {
            let mut kind = kinds[i % kinds.len()];
            if l_max < 2 {
                kind = CorpusKind::Generic;
            }
            let mut e = HarmonicExpansion::zeros(l_max);
            match kind {
                CorpusKind::Generic => {
                    let decay: f64 = rng.gen_range(0.3..1.0);
                    for l in 1..=l_max {
                        fill(&mut e, l, decay.powi(l as i32), &mut rng);
                    }
                }
                CorpusKind::NearHomogeneous => {
                    let l0 = rng.gen_range(1..=l_max);
                    fill(&mut e, l0, 1.0, &mut rng);
                    let tau = 10f64.powf(-rng.gen_range(1.5..3.5));
                    for l in (1..=l_max).filter(|&l| l != l0) {
                        fill(&mut e, l, tau, &mut rng);
                    }
                }
                CorpusKind::TwoDegree => {
                    let j = rng.gen_range(1..l_max);
                    let k = rng.gen_range(j + 1..=l_max);
                    fill(&mut e, j, 1.0, &mut rng);
                    let w = rng.gen_range(0.2..2.0);
                    fill(&mut e, k, w, &mut rng);
                }
                CorpusKind::LowPerturbed => {
                    let l0 = rng.gen_range(2..=l_max);
                    fill(&mut e, l0, 1.0, &mut rng);
                    let tau = 10f64.powf(-rng.gen_range(1.0..3.0));
                    for l in 1..l0 {
                        fill(&mut e, l, tau, &mut rng);
                    }
                }
            }
            (kind, e)
        })
        .collect()
}

fn normalized_energies(e: &HarmonicExpansion) -> Vec<f64> {
    let en = e.energies();
    let total: f64 = en.iter().sum();
    en.iter().map(|v| v / total).collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

// ---------------------------------------------------------------------------
// doubling

pub(super) fn doubling(cfg: &RunConfig, _base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Doubling);
    let n = cfg.nodes_per_unit.unwrap_or(DOUBLING_NODES);
    let h = 1.0 / n as f64;
    let opts = SolveOptions {
        tol: cfg.tol,
        boundary: BoundaryMode::Extension,
        ..Default::default()
    };
    let solve = |name: &str| -> Result<Solution> {
        let problem = BallProblem {
            center: origin(),
            radius: DOUBLING_RADIUS,
            epsilon: 1.0,
            spacing: h,
            boundary: BoundaryData::preset(name, &origin())?,
        };
        solve_dirichlet(&problem, &Medium::identity(), opts)
    };

    let cases: Vec<(usize, i64)> = (1..=3usize)
        .flat_map(|l| {
            let li = l as i64;
            [-li, 0, li].into_iter().map(move |m| (l, m))
        })
        .collect();
    let results: Vec<Result<[f64; 2]>> = cases
        .par_iter()
        .map(|&(l, m)| {
            let u = solve(&format!("hp:{l},{m}"))?;
            Ok([nstar(&u, &origin(), 0.5, cfg.q)?, nstar(&u, &origin(), 0.25, cfg.q)?])
        })
        .collect();
    let mut grid = Table::new("grid", &["l", "m", "r", "Nstar", "error"]);
    for (&(l, m), res) in cases.iter().zip(results) {
        let vals = res?;
        for (r, v) in [0.5, 0.25].into_iter().zip(vals) {
            let err = (v - l as f64).abs();
            let case = Case::new(format!("l={l};m={m};r={}", frac(r)), vec![l as f64, m as f64, r]);
            rep.at_most(&case, "nstar_error", err, 1e-6, "homogeneous harmonic has N* = l");
            grid.push(vec![l.into(), Value::Int(m), r.into(), v.into(), err.into()]);
        }
    }
    rep.tables.push(grid);

    let u = solve(&cfg.boundary)?;
    let radii = geomspace(1.0 / 16.0, 0.5, 13);
    let mut sweep = Table::new("sweep", &["r", "Nstar"]);
    let mut pts = Vec::new();
    for &r in &radii {
        let v = nstar(&u, &origin(), r, cfg.q)?;
        sweep.push(vec![r.into(), v.into()]);
        pts.push((r, v));
    }
    rep.tables.push(sweep);
    rep.plots.push(
        Plot::new(
            "sweep",
            &format!("Doubling index of {} about 0", cfg.boundary),
            "r",
            "N*",
            true,
            false,
        )
        .with(Series::new(&cfg.boundary, pts)),
    );

    let corpus = spectral_corpus(cfg.seed, cfg.corpus_size, cfg.l_max);
    let radii = linspace(0.25, 1.0, 32);
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, 1));
    let mut stability = 0.0f64;
    for (_, exp) in &corpus {
        let e = normalized_energies(exp);
        for &r in &radii {
            let ns = spectral_doubling(&e, r);
            let lo = spectral_frequency(&e, 0.5 * r);
            let hi = spectral_frequency(&e, r);
            let slack = 1e-12 * hi.max(1.0);
            let gap = (lo - ns).max(ns - hi);
            worst = worst.max(gap);
            if gap > slack {
                violations += 1;
            }
        }
        let norm = exp.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let xi: Vec<f64> = exp.coeffs.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let xn = xi.iter().map(|c| c * c).sum::<f64>().sqrt();
        let delta = 1e-4;
        let mut p = exp.clone();
        for (c, x) in p.coeffs.iter_mut().zip(&xi) {
            *c += delta * norm * x / xn;
        }
        let d = (spectral_doubling(&normalized_energies(&p), 1.0) - spectral_doubling(&e, 1.0)).abs() / delta;
        stability = stability.max(d);
    }
    let case = Case::new(format!("spectral-corpus;seed={}", cfg.seed), Vec::new());
    rep.at_most(
        &case,
        "sandwich_violations",
        violations as f64,
        0.0,
        "N(r/2) <= N*(r) <= N(r) for harmonic functions",
    );
    rep.constants.push(super::FittedConstant {
        name: "doubling.stability".into(),
        value: stability,
        baseline: None,
    });
    rep.constants.push(super::FittedConstant {
        name: "doubling.sandwich_worst_gap".into(),
        value: worst,
        baseline: None,
    });
    Ok(rep)
}

// ---------------------------------------------------------------------------
// weiss

pub(super) fn weiss(cfg: &RunConfig, _base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Weiss);
    let corpus = spectral_corpus(cfg.seed, cfg.corpus_size, cfg.l_max);
    let kappas = [0.5, 1.0, 1.7, 2.0, 2.5];
    let radii = linspace(0.25, 1.0, 32);
    let mut table = Table::new(
        "corpus",
        &[
            "index",
            "kind",
            "N_half",
            "N_one",
            "identity_gap",
            "monotonicity_violation",
            "l",
            "concentration",
            "turning",
            "turning_bound",
            "drop_worst",
            "drop_bound",
        ],
    );
    let (mut max_gap, mut max_mono) = (0.0f64, f64::NEG_INFINITY);
    let (mut conc_members, mut conc_fail, mut turn_fail) = (0usize, 0usize, 0usize);
    let (mut drop_members, mut drop_fail) = (0usize, 0usize);
    for (i, (kind, exp)) in corpus.iter().enumerate() {
        let e = normalized_energies(exp);
        let id = weiss_identity_check(&e);
        max_gap = max_gap.max(id.gap);
        let mut mono = f64::NEG_INFINITY;
        for kappa in kappas.iter().copied().chain([id.kappa]) {
            let w: Vec<f64> = radii.iter().map(|&r| weiss_functional(&e, kappa, r)).collect();
            for p in w.windows(2) {
                mono = mono.max(p[0] - p[1]);
            }
        }
        max_mono = max_mono.max(mono);
        let n_one = spectral_frequency(&e, 1.0);
        let l = n_one.round().max(1.0) as usize;
        let conc = concentration_check(&e, l, cfg.window);
        let (mut cflag, mut tv, mut tb) = (String::new(), f64::NAN, f64::NAN);
        if let Some(c) = &conc {
            conc_members += 1;
            let s = tolerances::SPECTRAL_SLACK;
            let main_ok =
                c.main >= c.main_bound - s && c.low_tail <= c.low_bound + s && c.high_tail <= c.high_bound + s;
            let turn_ok = c.turning <= c.turning_bound + s;
            conc_fail += usize::from(!main_ok);
            turn_fail += usize::from(!turn_ok);
            cflag = if main_ok { "holds".into() } else { "fails".into() };
            tv = c.turning;
            tb = c.turning_bound;
        }
        let dl = (n_one + cfg.delta0).ceil().max(1.0) as usize;
        let (mut dw, mut db) = (f64::NAN, f64::NAN);
        if let Some((w, b)) = frequency_drop(&e, dl, cfg.delta0, 64) {
            drop_members += 1;
            drop_fail += usize::from(w > b + tolerances::SPECTRAL_SLACK);
            dw = w;
            db = b;
        }
        table.push(vec![
            i.into(),
            kind.name().into(),
            id.kappa.into(),
            n_one.into(),
            id.gap.into(),
            mono.into(),
            l.into(),
            cflag.into(),
            tv.into(),
            tb.into(),
            dw.into(),
            db.into(),
        ]);
    }
    rep.tables.push(table);
    let case = Case::new(
        format!("spectral-corpus;seed={};size={}", cfg.seed, corpus.len()),
        Vec::new(),
    );
    rep.at_most(
        &case,
        "identity_gap",
        max_gap,
        tolerances::SPECTRAL_SLACK,
        "Weiss spectral identity",
    );
    rep.at_most(
        &case,
        "monotonicity_violation",
        max_mono.max(0.0),
        tolerances::SPECTRAL_SLACK,
        "W_kappa nondecreasing in r",
    );
    rep.at_least(
        &case,
        "concentration_members",
        conc_members as f64,
        1.0,
        "corpus exercises the window hypothesis",
    );
    rep.at_most(
        &case,
        "concentration_violations",
        conc_fail as f64,
        0.0,
        "coefficient concentration",
    );
    rep.at_most(&case, "turning_violations", turn_fail as f64, 0.0, "turning <= 8 eta");
    rep.at_least(
        &case,
        "drop_members",
        drop_members as f64,
        1.0,
        "corpus exercises the drop hypothesis",
    );
    rep.at_most(
        &case,
        "drop_violations",
        drop_fail as f64,
        0.0,
        "frequency drop below l - 1 + delta",
    );

    if let Some((_, exp)) = corpus
        .iter()
        .find(|(k, _)| *k == CorpusKind::NearHomogeneous)
        .or(corpus.first())
    {
        let e = normalized_energies(exp);
        let kappa = spectral_frequency(&e, 0.5);
        let rows = spectral_sweep(&e, kappa, &radii);
        rep.attachments
            .push(("sweep.csv".into(), csv_bytes(|b| write_sweep_csv(&rows, b))?));
        rep.attachments
            .push(("expansion.csv".into(), csv_bytes(|b| exp.write_csv(b))?));
        rep.plots.push(
            Plot::new("sweep", "Weiss functional of a corpus member", "r", "W", false, false)
                .with(Series::new("W_kappa", rows.iter().map(|s| (s.r, s.w_kappa)).collect()))
                .with(Series::new(
                    "N - kappa",
                    rows.iter().map(|s| (s.r, s.n - kappa)).collect(),
                )),
        );
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// turning

/// Largest J >= 0 with 2^(-J-3) >= r*.
fn scales_above(r_star: f64) -> Option<usize> {
    if r_star > 0.125 {
        return None;
    }
    let mut j = 0;
    while 0.5f64.powi(j as i32 + 4) >= r_star {
        j += 1;
    }
    Some(j)
}

pub(super) fn turning(cfg: &RunConfig, base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Turning);
    let med = medium(cfg)?;
    let l = cfg.l;
    let tracked = cfg.coefficients == Coefficients::Preset(Preset::layered()) && cfg.boundary == "x1x2" && l == 2;
    let no_base = Baseline::default();
    let b = if tracked { base } else { &no_base };
    let c_base = b.get("turning.c_fit");

    let mut scales = Table::new("scales", &["eps", "r", "Nstar"]);
    let mut tele = Table::new(
        "telescope",
        &["eps", "J", "r_star", "r_min", "turning", "telescope", "c_fit", "bound"],
    );
    let mut plot = Plot::new("nstar", "Doubling index across scales", "r", "N*", true, false);
    let mut fits = Vec::new();
    for &eps in &cfg.epsilons {
        let case = Case::eps(eps);
        let r_star = eps / cfg.eps0;
        let Some(j_max) = scales_above(r_star) else {
            rep.at_most(&case, "r_star", r_star, 0.125, "at least one dyadic scale below 1/8");
            continue;
        };
        let h = spacing(cfg, &med, eps);
        let u = solve_ball(cfg, &med, eps, 1.0, h)?;
        let x0 = origin();
        let mut ns = Vec::new();
        for j in 1..=j_max + 3 {
            let r = 0.5f64.powi(j as i32);
            let v = nstar(&u, &x0, r, cfg.q)?;
            scales.push(vec![eps.into(), r.into(), v.into()]);
            rep.at_most(
                &case.and(&format!("r={}", frac(r)), r),
                "window",
                (v - l as f64).abs(),
                cfg.window,
                "doubling window hypothesis",
            );
            ns.push((r, v));
        }
        plot.series.push(Series::new(&format!("eps={}", frac(eps)), ns.clone()));
        let r_min = 0.5f64.powi(j_max as i32 + 3);
        let t = turning_distance(&u, &x0, l, 0.25, r_min, cfg.q)?;
        // sum_{j=0}^{J} N*(2^(-j-1)) - N*(2^(-j-3)); ns[k] holds 2^(-k-1).
        let d: f64 = (0..=j_max).map(|j| ns[j].1 - ns[j + 2].1).sum();
        let root = (eps / r_min).sqrt();
        let c_fit = t / root;
        let bound_c = c_base.unwrap_or(c_fit) * (1.0 + tolerances::BASELINE_DRIFT);
        let bound = 8.0 * d + bound_c * root;
        rep.at_most(&case, "turning", t, bound, "8 x doubling telescope + C (eps/r)^(1/2)");
        rep.fit(b, &format!("turning.c_fit@eps={}", frac(eps)), c_fit, &case);
        fits.push(c_fit);
        tele.push(vec![
            eps.into(),
            j_max.into(),
            r_star.into(),
            r_min.into(),
            t.into(),
            d.into(),
            c_fit.into(),
            bound.into(),
        ]);
    }
    if fits.len() >= 2 {
        let (lo, hi) = fits
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        rep.at_most(
            &Case::all(),
            "c_fit_spread",
            hi / lo - 1.0,
            tolerances::BASELINE_DRIFT,
            "C_fit stable across eps",
        );
    }

    // Spectral oracle: a_2^2 = 0.99, a_3^2 = 0.01.
    let e = [0.0, 0.0, 0.99, 0.01];
    let eta = spectral_frequency(&e, 1.0) - spectral_frequency(&e, 0.5);
    let case = Case::new("spectral-mixture", vec![-1.0]);
    rep.at_most(
        &case,
        "turning",
        spectral_turning(&e, 2, 0.5, 1.0),
        8.0 * eta,
        "turning <= 8 eta",
    );

    rep.tables.push(scales);
    rep.tables.push(tele);
    rep.plots.push(plot);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// twopoint

pub(super) fn twopoint(cfg: &RunConfig, base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Twopoint);
    let l = cfg.l;
    let q = cfg.q;
    let x0 = origin();
    let r = 0.25;

    // Closed forms for x1 x2.
    let p = Poly3::product(&[0, 1]);
    let along = two_point_turning(&p, &x0, &Vector3::new(0.0, 0.0, 0.1), 2, r, q)?;
    rep.at_most(
        &Case::new("x1x2;n=e3", vec![-2.0]),
        "ratio",
        along.ratio,
        1e-10,
        "translation along the critical axis",
    );
    let across = two_point_turning(&p, &x0, &Vector3::new(0.1, 0.0, 0.0), 2, r, q)?;
    rep.at_most(
        &Case::new("x1x2;n=e1", vec![-1.0]),
        "ratio_error",
        (across.ratio - 5f64.sqrt()).abs(),
        1e-8,
        "closed-form gradient of x1 x2",
    );

    // Points near the critical axis of x1 x2: both carry doubling windows
    // and the ratio should scale like the square root of the doubling drop.
    let mut fam = Table::new("family", &["c", "ratio", "eta", "c_fit"]);
    let mut cs = Vec::new();
    for k in 4..=8 {
        let c = 0.5f64.powi(k);
        let n = Vector3::new(c, 0.0, (1.0 - c * c).sqrt());
        let x1 = n * 0.25;
        let windows = (1..=3).all(|j| {
            let rr = 0.5f64.powi(j);
            [x0, x1]
                .iter()
                .all(|x| nstar(&p, x, rr, q).is_ok_and(|v| (v - 2.0).abs() <= 1.0 / 64.0))
        });
        if !windows {
            continue;
        }
        let eta = [x0, x1]
            .iter()
            .map(|x| Ok((nstar(&p, x, 0.5, q)? - nstar(&p, x, 0.125, q)?).abs()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        let ratio = two_point_turning(&p, &x0, &x1, 2, r, q)?.ratio;
        let cf = ratio / eta.sqrt();
        fam.push(vec![c.into(), ratio.into(), eta.into(), cf.into()]);
        cs.push(cf);
    }
    let fam_case = Case::new("x1x2-family", vec![0.0]);
    rep.at_least(
        &fam_case,
        "members",
        cs.len() as f64,
        2.0,
        "points satisfying the window hypotheses",
    );
    if !cs.is_empty() {
        let (lo, hi) = cs
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        rep.at_most(
            &fam_case,
            "c_spread",
            hi / lo,
            2.0,
            "one constant in ratio <= C eta^(1/2)",
        );
        rep.fit(base, "twopoint.c_spectral", hi, &fam_case);
    }
    rep.tables.push(fam);

    // Detected critical points of the oscillating solution.
    let med = medium(cfg)?;
    let mut pairs = Table::new("pairs", &["eps", "target", "distance", "ratio", "eta", "c_fit"]);
    if !med.is_constant() {
        let tracked = cfg.coefficients == Coefficients::Preset(Preset::layered()) && cfg.boundary == "x1x2" && l == 2;
        let no_base = Baseline::default();
        let b = if tracked { base } else { &no_base };
        for &eps in &cfg.epsilons {
            let case = Case::eps(eps);
            let h = spacing(cfg, &med, eps);
            let u = solve_ball(cfg, &med, eps, 1.0, h)?;
            let pts = detect(&u, 0.5, h, false)?;
            let Some(c0) = pts.iter().min_by(|a, b| a.norm().total_cmp(&b.norm())).copied() else {
                rep.at_least(&case, "critical_points", 0.0, 1.0, "detected critical points");
                continue;
            };
            for j in 1..=3 {
                let rr = 0.5f64.powi(j);
                rep.at_most(
                    &case.and(&format!("r={}", frac(rr)), rr),
                    "window",
                    (nstar(&u, &c0, rr, q)? - l as f64).abs(),
                    1.0 / 64.0,
                    "doubling window hypothesis",
                );
            }
            let eta0 = (nstar(&u, &c0, 0.5, q)? - nstar(&u, &c0, 0.125, q)?).abs();
            let mut worst = 0.0f64;
            for target in [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0] {
                let Some(x1) = pts
                    .iter()
                    .filter(|x| (*x - c0).norm() > 0.0 && x.norm() + 0.5 < 1.0)
                    .min_by(|a, b| {
                        ((*a - c0).norm() - target)
                            .abs()
                            .total_cmp(&((*b - c0).norm() - target).abs())
                    })
                    .copied()
                else {
                    continue;
                };
                let eta1 = (nstar(&u, &x1, 0.5, q)? - nstar(&u, &x1, 0.125, q)?).abs();
                let eta = eta0.max(eta1);
                let ratio = two_point_turning(&u, &c0, &x1, l, r, q)?.ratio;
                let cf = ratio / (eta.sqrt() + eps.sqrt());
                worst = worst.max(cf);
                pairs.push(vec![
                    eps.into(),
                    target.into(),
                    (x1 - c0).norm().into(),
                    ratio.into(),
                    eta.into(),
                    cf.into(),
                ]);
            }
            rep.fit(b, &format!("twopoint.c_layered@eps={}", frac(eps)), worst, &case);
        }
    }
    rep.tables.push(pairs);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// cover

struct Field<'a> {
    name: String,
    u: &'a dyn ScalarField,
    l: usize,
    exact: bool,
    fd_step: f64,
    s_min: f64,
}

struct CoverOutcome {
    sum: f64,
}

#[allow(clippy::too_many_arguments)]
fn cover_case(
    rep: &mut SuiteReport,
    cfg: &RunConfig,
    f: &Field,
    pts: &[Vector3<f64>],
    r0: &[f64],
    eps: f64,
    summary: &mut Table,
) -> Result<CoverOutcome> {
    let case = Case::new(format!("{};eps={}", f.name, frac(eps)), vec![eps]);
    let floor = eps / cfg.eps0;
    let r_star: Vec<f64> = r0.iter().map(|r| r.max(floor)).collect();
    let cover = build_cover(pts, &r_star)?;
    rep.at_least(
        &case,
        "disjoint",
        flag(cover.disjoint),
        1.0,
        "Vitali selection is disjoint",
    );
    rep.at_least(
        &case,
        "contained",
        flag(cover.contained),
        1.0,
        "cover contains every critical point",
    );
    let min_floor = r_star.iter().fold(f64::INFINITY, |m, r| m.min(r / floor));
    if !pts.is_empty() {
        rep.at_least(&case, "r_star_floor", min_floor, 1.0, "r* >= eps/eps0");
    }
    summary.push(vec![
        f.name.clone().into(),
        eps.into(),
        pts.len().into(),
        cover.good.iter().filter(|g| **g).count().into(),
        cover.primary.len().into(),
        cover.secondary.len().into(),
        cover.sum_radii().into(),
    ]);
    rep.attachments.push((
        format!("balls_{}_{}.csv", f.name, frac_tag(eps)),
        csv_bytes(|b| cover.write_csv(b))?,
    ));

    // No-critical zone around the point nearest the origin.
    if let Some(k) = (0..pts.len()).min_by(|&a, &b| pts[a].norm().total_cmp(&pts[b].norm())) {
        let x0 = pts[k];
        let (proj, _) = centered_projection(f.u, &x0, f.l, 0.25, cfg.q)?;
        let sub = almost_invariant_subspace(&gram_of(&proj)?, cfg.eta)?;
        let zone = no_critical_zone_check(f.u, pts, &x0, &sub.basis, cfg.gamma, r_star[k] / 64.0, 0.25, 8);
        rep.at_most(
            &case,
            "zone_violations",
            zone.violations.len() as f64,
            0.0,
            "no critical points off the invariant cone",
        );
        rep.at_least(
            &case,
            "zone_min_grad",
            zone.min_grad,
            f64::MIN_POSITIVE,
            "gradient bounded below in the zone",
        );
        let centers: Vec<Vector3<f64>> = cover.primary.iter().map(|b| b.center).collect();
        let graph = lipschitz_graph_check(&centers, &sub.basis, cfg.gamma);
        rep.at_most(
            &case,
            "graph_cone_ratio",
            graph.worst_ratio,
            cfg.gamma,
            "centers lie on a Lipschitz graph",
        );
    }
    Ok(CoverOutcome { sum: cover.sum_radii() })
}

fn radii_for(f: &Field, pts: &[Vector3<f64>], cfg: &RunConfig) -> Result<Vec<f64>> {
    pts.par_iter()
        .map(|x| {
            let s_max = 1.0;
            minimal_radius(f.u, x, f.l, cfg.delta0, 1.0, 1.0, f.s_min, s_max, cfg.q).map(|m| m.r0)
        })
        .collect()
}

fn low_frequency_row(rep: &mut SuiteReport, f: &Field, pts: &[Vector3<f64>], eps: f64, q: usize) -> Result<()> {
    let case = Case::new(format!("{};eps={}", f.name, frac(eps)), vec![eps]);
    let low = low_frequency_critical_points(f.u, pts, 0.5, q)?;
    rep.at_most(
        &case,
        "low_frequency_points",
        low.len() as f64,
        0.0,
        "no critical point with N*(x, 1/2) <= 3/2",
    );
    Ok(())
}

pub(super) fn cover(cfg: &RunConfig, _base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Cover);
    let mut summary = Table::new(
        "summary",
        &["field", "eps", "points", "good", "primary", "secondary", "sum_radii"],
    );
    let mut plot = Plot::new("sum_radii", "Sum of cover radii", "eps", "sum r", true, true);

    // Harmonic reference fields (A = I).
    let g = boundary_poly(&cfg.boundary)?;
    let cubic = Poly3::monomial([3, 0, 0], 1.0).add(&Poly3::monomial([1, 2, 0], -3.0));
    let refs = [
        Field {
            name: format!("identity-{}", cfg.boundary.replace([':', ','], "-")),
            u: &g,
            l: cfg.l,
            exact: true,
            fd_step: DETECT_SPACING,
            s_min: 1.0 / 256.0,
        },
        Field {
            name: "identity-cubic".into(),
            u: &cubic,
            l: 3,
            exact: true,
            fd_step: DETECT_SPACING,
            s_min: 1.0 / 256.0,
        },
    ];
    let mut ident_sums = Vec::new();
    for (k, f) in refs.iter().enumerate() {
        let pts = detect(f.u, 0.5, f.fd_step, f.exact)?;
        let r0 = radii_for(f, &pts, cfg)?;
        let mut series = Vec::new();
        for &eps in &cfg.epsilons {
            let out = cover_case(&mut rep, cfg, f, &pts, &r0, eps, &mut summary)?;
            if k == 0 {
                ident_sums.push((eps, out.sum));
            }
            series.push((eps, out.sum));
            low_frequency_row(&mut rep, f, &pts, eps, cfg.q)?;
        }
        plot.series.push(Series::new(&f.name, series));
    }
    if ident_sums.len() >= 2 {
        let (lo, hi) = ident_sums
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), (_, v)| (a.min(*v), b.max(*v)));
        rep.at_most(
            &Case::new(refs[0].name.clone(), Vec::new()),
            "sum_radii_spread",
            hi / lo,
            2.0,
            "sum of r^(d-2) stable in eps",
        );
    }

    // The oscillating medium at each eps.
    let med = medium(cfg)?;
    if !med.is_constant() {
        let mut series = Vec::new();
        for (i, &eps) in cfg.epsilons.iter().enumerate() {
            let h = spacing(cfg, &med, eps);
            let u = solve_ball(cfg, &med, eps, 1.5, h)?;
            let f = Field {
                name: cfg.coefficients.label(),
                u: &u,
                l: cfg.l,
                exact: false,
                fd_step: h,
                s_min: 8.0 * h,
            };
            let pts = detect(f.u, 0.5, f.fd_step, false)?;
            let r0 = radii_for(&f, &pts, cfg)?;
            let out = cover_case(&mut rep, cfg, &f, &pts, &r0, eps, &mut summary)?;
            low_frequency_row(&mut rep, &f, &pts, eps, cfg.q)?;
            series.push((eps, out.sum));
            if let Some((_, s_ref)) = ident_sums.get(i) {
                let ratio = out.sum / s_ref;
                rep.at_most(
                    &Case::new(format!("{};eps={}", f.name, frac(eps)), vec![eps]),
                    "sum_radii_vs_identity",
                    ratio.max(1.0 / ratio),
                    2.0,
                    "cover size comparable to the harmonic case",
                );
            }
        }
        plot.series.push(Series::new(&cfg.coefficients.label(), series));
    }
    rep.tables.push(summary);
    rep.plots.push(plot);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// tube

fn tube_sweep(set: &TubeSet, radii: &[f64], samples: usize, seed: u64) -> Result<Vec<TubeEstimate>> {
    radii
        .iter()
        .enumerate()
        .map(|(k, &r)| tube_volume(set, r, samples, seed_for(seed, k as u64 + 1)))
        .collect()
}

fn tube_set(u: &dyn ScalarField, fd_step: f64, exact: bool) -> Result<TubeSet> {
    let pts = detect(u, 0.5 + 2.0 * DETECT_SPACING, fd_step, exact)?;
    Ok(TubeSet::polyline(&pts, 2.0 * DETECT_SPACING, &origin(), 0.5))
}

pub(super) fn tube(cfg: &RunConfig, _base: &Baseline) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Experiment::Tube);
    let g = boundary_poly(&cfg.boundary)?;
    let reference = tube_set(&g, DETECT_SPACING, true)?;
    let med = medium(cfg)?;
    let oscillating = !med.is_constant();

    let mut radii = vec![0.2, 0.1, 0.05, 0.025];
    if oscillating {
        for &eps in &cfg.epsilons {
            let mut r = eps;
            while r <= 0.25 + 1e-12 {
                radii.push(r);
                r *= 2.0;
            }
        }
    }
    radii.sort_by(|a, b| b.total_cmp(a));
    radii.dedup();
    let ident = tube_sweep(&reference, &radii, cfg.samples, seed_for(cfg.seed, 100))?;
    rep.attachments
        .push(("identity.csv".into(), csv_bytes(|b| write_tube_csv(&ident, b))?));
    let closed_form = matches!(cfg.boundary.as_str(), "x1x2" | "hp:2-product");
    let mut plot = Plot::new("ratios", "Tube volume over r^2", "r", "volume / r^2", true, false);
    plot.series.push(Series::new(
        "identity",
        ident.iter().map(|t| (t.r, t.ratio_r2)).collect(),
    ));
    for t in &ident {
        let case = Case::new(format!("identity;r={}", super::fmt_num(t.r)), vec![0.0, t.r]);
        if closed_form && [0.2, 0.1, 0.05, 0.025].contains(&t.r) {
            let exact = std::f64::consts::PI * t.r * t.r + 4.0 / 3.0 * std::f64::consts::PI * t.r.powi(3);
            rep.at_most(
                &case,
                "standard_errors",
                (t.volume - exact).abs() / t.stderr,
                3.0,
                "unit segment tube pi r^2 + 4/3 pi r^3",
            );
        }
    }
    let ident_ratios: Vec<(f64, f64)> = ident.iter().map(|t| (t.r, t.ratio_r2)).collect();
    let max_ident = ident_ratios.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    rep.at_most(
        &Case::new("identity", vec![0.0]),
        "ratio_spread",
        max_ident / ident_ratios.iter().fold(f64::INFINITY, |m, (_, v)| m.min(*v)),
        2.0,
        "volume / r^2 bounded across the sweep",
    );

    if oscillating {
        for &eps in &cfg.epsilons {
            let h = spacing(cfg, &med, eps);
            let u = solve_ball(cfg, &med, eps, 1.0, h)?;
            let set = tube_set(&u, h, false)?;
            let rs: Vec<f64> = radii
                .iter()
                .copied()
                .filter(|r| *r >= eps - 1e-12 && *r <= 0.25 + 1e-12)
                .collect();
            let est = tube_sweep(&set, &rs, cfg.samples, seed_for(cfg.seed, 200))?;
            let bound_m = est.iter().fold(0.0f64, |m, t| m.max(t.ratio_r2));
            let bound_i = ident_ratios
                .iter()
                .filter(|(r, _)| rs.contains(r))
                .fold(0.0f64, |m, (_, v)| m.max(*v));
            let q = bound_m / bound_i;
            rep.at_most(
                &Case::eps(eps),
                "ratio_bound_vs_identity",
                q.max(1.0 / q),
                2.0,
                "common r^2 bound within 2x of the harmonic case",
            );
            plot.series.push(Series::new(
                &format!("{} eps={}", cfg.coefficients.label(), frac(eps)),
                est.iter().map(|t| (t.r, t.ratio_r2)).collect(),
            ));
            rep.attachments.push((
                format!("{}_{}.csv", cfg.coefficients.label(), frac_tag(eps)),
                csv_bytes(|b| write_tube_csv(&est, b))?,
            ));
        }
    }
    rep.plots.push(plot);
    Ok(rep)
}
