//! Experiment configuration, suites and report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::{CoefficientField, Preset};
use crate::error::Result;
use crate::solver::BoundaryData;
use crate::spectra::csv_writer;
use crate::tolerances;
use crate::Vector3;

mod suites;
pub mod svg;

pub use suites::{spectral_corpus, CorpusKind};
pub use svg::{fit_loglog, Plot, Series};

/// C-style `%.12e`: mantissa with 12 decimals, signed exponent of at least
/// two digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let e: i32 = exp.parse().expect("exponent digits");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_DELTA0: f64 = 1.0 / 64.0;
pub const DEFAULT_EPS0: f64 = 1.0 / 32.0;
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_L_MAX: usize = 8;
pub const DEFAULT_Q: usize = 16;

/// Embedded copy of the checked-in baseline.
pub const BASELINE_JSON: &str = include_str!("../../baseline.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Cell,
    Solve,
    Approx,
    Doubling,
    Weiss,
    Turning,
    Twopoint,
    Cover,
    Tube,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Cell,
        Experiment::Solve,
        Experiment::Approx,
        Experiment::Doubling,
        Experiment::Weiss,
        Experiment::Turning,
        Experiment::Twopoint,
        Experiment::Cover,
        Experiment::Tube,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Cell => "cell",
            Experiment::Solve => "solve",
            Experiment::Approx => "approx",
            Experiment::Doubling => "doubling",
            Experiment::Weiss => "weiss",
            Experiment::Turning => "turning",
            Experiment::Twopoint => "twopoint",
            Experiment::Cover => "cover",
            Experiment::Tube => "tube",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cell" | "cell-convergence" => Experiment::Cell,
            "solve" => Experiment::Solve,
            "approx" | "approx-rate" => Experiment::Approx,
            "doubling" => Experiment::Doubling,
            "weiss" => Experiment::Weiss,
            "turning" => Experiment::Turning,
            "twopoint" | "two-point" => Experiment::Twopoint,
            "cover" => Experiment::Cover,
            "tube" => Experiment::Tube,
            _ => return None,
        })
    }

    /// Suites that work on a coefficient medium (as opposed to the
    /// spectral corpus or constant-coefficient grids only).
    fn uses_medium(self) -> bool {
        !matches!(self, Experiment::Weiss | Experiment::Doubling)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coefficients as written in a config: a bare preset name, a preset with
/// parameters, or `csv:PATH` for node samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Preset(Preset),
    Name(String),
}

/// Raw configuration. Every field is optional; `validate_config` fills in
/// defaults per experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub coefficients: Option<CoefficientSpec>,
    pub epsilons: Option<Vec<f64>>,
    pub boundary: Option<String>,
    /// Lattice nodes per unit length for ball solves; when absent the
    /// spacing is aligned with the coefficient period (16 nodes per period).
    pub nodes_per_unit: Option<usize>,
    pub n_cell: Option<usize>,
    pub l: Option<usize>,
    pub delta0: Option<f64>,
    pub eps0: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub l_max: Option<usize>,
    pub q: Option<usize>,
    pub window: Option<f64>,
    pub corpus_size: Option<usize>,
    pub samples: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn for_experiment(name: &str) -> Self {
        Self {
            experiment: Some(name.into()),
            ..Self::default()
        }
    }
}

/// Where the coefficients of a normalized config come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coefficients {
    Preset(Preset),
    /// Randomized harmonic expansions; no medium.
    SpectralCorpus,
    Csv(PathBuf),
}

impl Coefficients {
    pub fn is_identity(&self) -> bool {
        matches!(
            self,
            Coefficients::Preset(Preset::Identity) | Coefficients::SpectralCorpus
        )
    }

    fn is_constant(&self) -> bool {
        match self {
            Coefficients::Preset(p) => p.is_constant(),
            Coefficients::SpectralCorpus => true,
            Coefficients::Csv(_) => false,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Coefficients::Preset(p) => p.name().into(),
            Coefficients::SpectralCorpus => "spectral-corpus".into(),
            Coefficients::Csv(p) => format!("csv:{}", p.display()),
        }
    }

    pub fn field(&self, n: usize) -> Result<CoefficientField> {
        match self {
            Coefficients::Preset(p) => CoefficientField::from_preset(p, n),
            Coefficients::SpectralCorpus => CoefficientField::from_preset(&Preset::Identity, n),
            Coefficients::Csv(path) => CoefficientField::from_csv(fs::File::open(path)?),
        }
    }
}

/// Fully specified configuration, echoed to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub coefficients: Coefficients,
    pub epsilons: Vec<f64>,
    pub boundary: String,
    pub nodes_per_unit: Option<usize>,
    pub n_cell: usize,
    pub l: usize,
    pub delta0: f64,
    pub eps0: f64,
    pub eta: f64,
    pub gamma: f64,
    pub l_max: usize,
    pub q: usize,
    pub window: f64,
    pub corpus_size: usize,
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub baseline: Option<PathBuf>,
}

/// One violated guard.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("missing experiment name")]
    MissingExperiment,
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("unknown coefficient preset '{0}'")]
    UnknownPreset(String),
    #[error("preset '{preset}' cannot be used by the {experiment} suite")]
    PresetNotSupported { preset: String, experiment: String },
    #[error("unknown boundary data '{0}'")]
    UnknownBoundary(String),
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error(
        "resolution guard: eps = {epsilon} needs h <= eps/16 = {limit:.6e}, \
         but {nodes_per_unit} nodes per unit give h = {spacing:.6e}; \
         at least {required} nodes per unit are required"
    )]
    ResolutionGuard {
        epsilon: f64,
        nodes_per_unit: usize,
        spacing: f64,
        limit: f64,
        required: usize,
    },
    #[error("quadrature q = {q} cannot resolve degree l_max = {l_max}")]
    QuadratureTooCoarse { q: usize, l_max: usize },
    #[error("degree l = {l} must lie in 1..=l_max = {l_max}")]
    Degree { l: usize, l_max: usize },
}

fn defaults_epsilons(e: Experiment) -> Vec<f64> {
    let inv = |ks: &[u32]| ks.iter().map(|k| 1.0 / f64::from(*k)).collect();
    match e {
        Experiment::Approx => inv(&[8, 16, 32, 64]),
        Experiment::Turning | Experiment::Twopoint | Experiment::Tube => inv(&[16, 32]),
        Experiment::Cover => inv(&[16, 32, 64]),
        Experiment::Solve => inv(&[16]),
        _ => Vec::new(),
    }
}

fn default_coefficients(e: Experiment) -> Coefficients {
    match e {
        Experiment::Weiss => Coefficients::SpectralCorpus,
        Experiment::Doubling | Experiment::Cover => Coefficients::Preset(Preset::Identity),
        _ => Coefficients::Preset(Preset::layered()),
    }
}

fn default_boundary(e: Experiment) -> &'static str {
    match e {
        Experiment::Approx => "linear",
        _ => "x1x2",
    }
}

fn parse_coefficients(spec: &CoefficientSpec) -> std::result::Result<Coefficients, ConfigError> {
    match spec {
        CoefficientSpec::Preset(p) => Ok(Coefficients::Preset(p.clone())),
        CoefficientSpec::Name(name) => {
            if name == "spectral-corpus" {
                return Ok(Coefficients::SpectralCorpus);
            }
            if let Some(path) = name.strip_prefix("csv:") {
                return Ok(Coefficients::Csv(PathBuf::from(path)));
            }
            serde_json::from_value::<Preset>(serde_json::json!({ "preset": name }))
                .map(Coefficients::Preset)
                .map_err(|_| ConfigError::UnknownPreset(name.clone()))
        }
    }
}

/// Fill defaults and check every guard; all violations are reported.
pub fn validate_config(cfg: &ExperimentConfig) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let mut errs = Vec::new();
    let experiment = match cfg.experiment.as_deref() {
        None => {
            errs.push(ConfigError::MissingExperiment);
            None
        }
        Some(name) => {
            let e = Experiment::parse(name);
            if e.is_none() {
                errs.push(ConfigError::UnknownExperiment(name.into()));
            }
            e
        }
    };
    let Some(experiment) = experiment else {
        return Err(errs);
    };

    let coefficients = match &cfg.coefficients {
        None => default_coefficients(experiment),
        Some(spec) => match parse_coefficients(spec) {
            Ok(c) => c,
            Err(e) => {
                errs.push(e);
                default_coefficients(experiment)
            }
        },
    };
    let corpus_ok = match experiment {
        Experiment::Weiss => coefficients == Coefficients::SpectralCorpus,
        Experiment::Doubling => coefficients.is_identity(),
        _ => coefficients != Coefficients::SpectralCorpus,
    };
    if !corpus_ok {
        errs.push(ConfigError::PresetNotSupported {
            preset: coefficients.label(),
            experiment: experiment.name().into(),
        });
    }

    let epsilons = cfg.epsilons.clone().unwrap_or_else(|| defaults_epsilons(experiment));
    let needs_eps = matches!(
        experiment,
        Experiment::Approx
            | Experiment::Turning
            | Experiment::Twopoint
            | Experiment::Cover
            | Experiment::Tube
            | Experiment::Solve
    );
    if needs_eps && epsilons.is_empty() {
        errs.push(ConfigError::Empty("epsilons"));
    }
    for &e in &epsilons {
        if !(e > 0.0 && e <= 1.0) {
            errs.push(ConfigError::OutOfRange {
                name: "epsilon",
                value: e,
                range: "(0, 1]",
            });
        }
    }

    let boundary = cfg
        .boundary
        .clone()
        .unwrap_or_else(|| default_boundary(experiment).into());
    if BoundaryData::preset(&boundary, &Vector3::zeros()).is_err() {
        errs.push(ConfigError::UnknownBoundary(boundary.clone()));
    }

    if let Some(n) = cfg.nodes_per_unit {
        if n == 0 {
            errs.push(ConfigError::OutOfRange {
                name: "nodes_per_unit",
                value: 0.0,
                range: "[1, inf)",
            });
        } else if experiment.uses_medium() && !coefficients.is_constant() {
            let h = 1.0 / n as f64;
            if let Some(&e) = epsilons.iter().filter(|e| **e > 0.0).min_by(|a, b| a.total_cmp(b)) {
                let limit = e / tolerances::GUARD_NODES;
                if h > limit * (1.0 + 1e-12) {
                    errs.push(ConfigError::ResolutionGuard {
                        epsilon: e,
                        nodes_per_unit: n,
                        spacing: h,
                        limit,
                        required: (tolerances::GUARD_NODES / e).ceil() as usize,
                    });
                }
            }
        }
    }

    let n_cell = cfg.n_cell.unwrap_or(match experiment {
        Experiment::Cell => 256,
        _ => 128,
    });
    if n_cell < 4 {
        errs.push(ConfigError::OutOfRange {
            name: "n_cell",
            value: n_cell as f64,
            range: "[4, inf)",
        });
    }

    let window_check = |errs: &mut Vec<ConfigError>, name: &'static str, v: f64| {
        if !(v > 0.0 && v <= 0.5) {
            errs.push(ConfigError::OutOfRange {
                name,
                value: v,
                range: "(0, 1/2]",
            });
        }
    };
    let delta0 = cfg.delta0.unwrap_or(DEFAULT_DELTA0);
    window_check(&mut errs, "delta0", delta0);
    let window = cfg.window.unwrap_or(match experiment {
        Experiment::Weiss => 1.0 / 32.0,
        _ => 1.0 / 64.0,
    });
    window_check(&mut errs, "window", window);
    let eta = cfg.eta.unwrap_or(DEFAULT_ETA);
    window_check(&mut errs, "eta", eta);
    let gamma = cfg.gamma.unwrap_or(DEFAULT_GAMMA);
    if !(gamma > 0.0 && gamma < 1.0) {
        errs.push(ConfigError::OutOfRange {
            name: "gamma",
            value: gamma,
            range: "(0, 1)",
        });
    }
    let eps0 = cfg.eps0.unwrap_or(match experiment {
        Experiment::Turning => 0.5,
        _ => DEFAULT_EPS0,
    });
    if !(eps0 > 0.0 && eps0 <= 1.0) {
        errs.push(ConfigError::OutOfRange {
            name: "eps0",
            value: eps0,
            range: "(0, 1]",
        });
    }

    let l_max = cfg.l_max.unwrap_or(DEFAULT_L_MAX);
    let q = cfg.q.unwrap_or(DEFAULT_Q);
    if l_max == 0 {
        errs.push(ConfigError::OutOfRange {
            name: "l_max",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    if q == 0 || q < l_max {
        errs.push(ConfigError::QuadratureTooCoarse { q, l_max });
    }
    let l = cfg.l.unwrap_or(2);
    if l == 0 || l > l_max {
        errs.push(ConfigError::Degree { l, l_max });
    }

    let corpus_size = cfg.corpus_size.unwrap_or(200);
    if corpus_size == 0 {
        errs.push(ConfigError::OutOfRange {
            name: "corpus_size",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let samples = cfg.samples.unwrap_or(200_000);
    if samples < 2 {
        errs.push(ConfigError::OutOfRange {
            name: "samples",
            value: samples as f64,
            range: "[2, inf)",
        });
    }
    let tol = cfg.tol.unwrap_or(tolerances::BALL_RESIDUAL);
    if !(tol > 0.0 && tol < 1.0) {
        errs.push(ConfigError::OutOfRange {
            name: "tol",
            value: tol,
            range: "(0, 1)",
        });
    }

    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(RunConfig {
        experiment,
        coefficients,
        epsilons,
        boundary,
        nodes_per_unit: cfg.nodes_per_unit,
        n_cell,
        l,
        delta0,
        eps0,
        eta,
        gamma,
        l_max,
        q,
        window,
        corpus_size,
        samples,
        tol,
        seed: cfg.seed.unwrap_or(1),
        out: cfg.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        baseline: cfg.baseline.clone(),
    })
}

/// Write the normalized config as `<suite>_config.json`.
pub fn echo_config(run: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&run.out)?;
    let path = run.out.join(format!("{}_config.json", run.experiment));
    let mut s = serde_json::to_string_pretty(run)?;
    s.push('\n');
    fs::write(&path, s)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        }
    }
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: Experiment,
    /// Human-readable parameters, e.g. `eps=1/16;r=2.5e-1`.
    pub case: String,
    /// Numeric parameters used for the canonical sort.
    #[serde(skip)]
    pub key: Vec<f64>,
    pub quantity: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
    /// Oracle or bound the row is checked against.
    pub provenance: String,
}

impl ResultRow {
    pub fn new(
        experiment: Experiment,
        case: &Case,
        quantity: &str,
        measured: f64,
        relation: Relation,
        bound: f64,
        provenance: &str,
    ) -> Self {
        let ratio = if bound != 0.0 {
            measured / bound
        } else if measured == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(measured)
        };
        let pass = match relation {
            Relation::AtMost => measured <= bound,
            Relation::AtLeast => measured >= bound,
        };
        Self {
            experiment,
            case: case.label.clone(),
            key: case.key.clone(),
            quantity: quantity.into(),
            measured,
            relation,
            bound,
            ratio,
            pass,
            provenance: provenance.into(),
        }
    }
}

/// Row parameters: a label and the numbers it is sorted by.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Case {
    pub label: String,
    pub key: Vec<f64>,
}

impl Case {
    pub fn new(label: impl Into<String>, key: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            key,
        }
    }

    pub fn all() -> Self {
        Self::new("all", Vec::new())
    }

    pub fn eps(eps: f64) -> Self {
        Self::new(format!("eps={}", frac(eps)), vec![eps])
    }

    pub fn and(&self, label: &str, key: f64) -> Self {
        let mut k = self.key.clone();
        k.push(key);
        let l = if self.label.is_empty() || self.label == "all" {
            label.to_string()
        } else {
            format!("{};{label}", self.label)
        };
        Self::new(l, k)
    }
}

/// `1/16` for reciprocals of integers, `%.12e` otherwise.
pub fn frac(x: f64) -> String {
    if x > 0.0 {
        let inv = 1.0 / x;
        if (inv - inv.round()).abs() < 1e-9 && inv.round() >= 1.0 {
            return format!("1/{}", inv.round() as u64);
        }
    }
    fmt_num(x)
}

/// File-name friendly tag, `1_16` for 1/16.
pub fn frac_tag(x: f64) -> String {
    frac(x).replace('/', "_").replace(['+', '.'], "")
}

/// A fitted constant, optionally tracked against the baseline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FittedConstant {
    pub name: String,
    pub value: f64,
    pub baseline: Option<f64>,
}

impl FittedConstant {
    pub fn drift(&self) -> Option<f64> {
        self.baseline.map(|b| ((self.value - b) / b).abs())
    }
}

/// A cell of an auxiliary table.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Num(x) => fmt_num(*x),
            Value::Int(i) => i.to_string(),
            Value::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.into())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Value::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything one suite produced.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
    pub constants: Vec<FittedConstant>,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
    /// Files in their own formats, written as `<suite>_<name>`.
    pub attachments: Vec<(String, Vec<u8>)>,
}

impl SuiteReport {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            rows: Vec::new(),
            constants: Vec::new(),
            tables: Vec::new(),
            plots: Vec::new(),
            attachments: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.passed())
    }

    pub fn push(&mut self, case: &Case, quantity: &str, measured: f64, rel: Relation, bound: f64, provenance: &str) {
        self.rows.push(ResultRow::new(
            self.experiment,
            case,
            quantity,
            measured,
            rel,
            bound,
            provenance,
        ));
    }

    pub fn at_most(&mut self, case: &Case, quantity: &str, measured: f64, bound: f64, provenance: &str) {
        self.push(case, quantity, measured, Relation::AtMost, bound, provenance);
    }

    pub fn at_least(&mut self, case: &Case, quantity: &str, measured: f64, bound: f64, provenance: &str) {
        self.push(case, quantity, measured, Relation::AtLeast, bound, provenance);
    }

    pub fn row(&self, case: &str, quantity: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.case == case && r.quantity == quantity)
    }

    pub fn rows_named<'a>(&'a self, quantity: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.quantity == quantity)
    }

    pub fn constant(&self, name: &str) -> Option<&FittedConstant> {
        self.constants.iter().find(|c| c.name == name)
    }

    /// Record a constant; when the baseline tracks it, add a drift row.
    /// Names of the form `key@case` are compared with the baseline `key`.
    pub fn fit(&mut self, baseline: &Baseline, name: &str, value: f64, case: &Case) {
        let key = name.split_once('@').map_or(name, |(k, _)| k);
        let b = baseline.get(key);
        let c = FittedConstant {
            name: name.into(),
            value,
            baseline: b,
        };
        if let Some(d) = c.drift() {
            self.at_most(
                case,
                &format!("drift:{name}"),
                d,
                tolerances::BASELINE_DRIFT,
                "checked-in baseline",
            );
        }
        self.constants.push(c);
    }

    /// Canonical order: numeric parameters, then labels.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            cmp_keys(&a.key, &b.key)
                .then_with(|| a.case.cmp(&b.case))
                .then_with(|| a.quantity.cmp(&b.quantity))
        });
        self.constants.sort_by(|a, b| a.name.cmp(&b.name));
    }

    pub fn write_rows<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

fn cmp_keys(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

pub const ROW_HEADER: [&str; 9] = [
    "experiment",
    "case",
    "quantity",
    "measured",
    "relation",
    "bound",
    "ratio",
    "pass",
    "provenance",
];

pub fn write_rows<W: std::io::Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut w = csv_writer(w);
    w.write_record(ROW_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.name().to_string(),
            r.case.clone(),
            r.quantity.clone(),
            fmt_num(r.measured),
            r.relation.symbol().into(),
            fmt_num(r.bound),
            fmt_num(r.ratio),
            r.pass.to_string(),
            r.provenance.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reference values of fitted constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub constants: BTreeMap<String, f64>,
}

impl Baseline {
    pub fn embedded() -> Self {
        serde_json::from_str(BASELINE_JSON).expect("embedded baseline is valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The file named in the config, or the embedded copy.
    pub fn for_config(cfg: &RunConfig) -> Result<Self> {
        match &cfg.baseline {
            Some(p) => Self::load(p),
            None => Ok(Self::embedded()),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied().filter(|v| *v != 0.0 && v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

/// Run one suite without touching the file system.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let baseline = Baseline::for_config(cfg)?;
    let mut rep = match cfg.experiment {
        Experiment::Cell => suites::cell(cfg, &baseline)?,
        Experiment::Solve => suites::solve(cfg)?,
        Experiment::Approx => suites::approx(cfg, &baseline)?,
        Experiment::Doubling => suites::doubling(cfg, &baseline)?,
        Experiment::Weiss => suites::weiss(cfg, &baseline)?,
        Experiment::Turning => suites::turning(cfg, &baseline)?,
        Experiment::Twopoint => suites::twopoint(cfg, &baseline)?,
        Experiment::Cover => suites::cover(cfg, &baseline)?,
        Experiment::Tube => suites::tube(cfg, &baseline)?,
    };
    rep.sort();
    Ok(rep)
}

/// Run a suite and write its report; the exit status is
/// `report.exit_code()`.
pub fn run_experiment(cfg: &RunConfig) -> Result<SuiteReport> {
    echo_config(cfg)?;
    let rep = run_suite(cfg)?;
    emit_report(&rep, &cfg.out)?;
    Ok(rep)
}

/// Write `<suite>.csv`, `<suite>_constants.csv`, tables and plots, then
/// refresh `summary.txt`. Returns the written paths.
pub fn emit_report(rep: &SuiteReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = rep.experiment.name();
    let mut written = Vec::new();

    let p = dir.join(format!("{name}.csv"));
    rep.write_rows(fs::File::create(&p)?)?;
    written.push(p);

    let p = dir.join(format!("{name}_constants.csv"));
    let mut t = Table::new("constants", &["name", "value", "baseline", "drift"]);
    for c in &rep.constants {
        t.push(vec![
            c.name.clone().into(),
            c.value.into(),
            c.baseline.map_or(Value::Text(String::new()), Value::Num),
            c.drift().map_or(Value::Text(String::new()), Value::Num),
        ]);
    }
    t.write(fs::File::create(&p)?)?;
    written.push(p);

    for t in &rep.tables {
        let p = dir.join(format!("{name}_{}.csv", t.name));
        t.write(fs::File::create(&p)?)?;
        written.push(p);
    }
    for (file, bytes) in &rep.attachments {
        let p = dir.join(format!("{name}_{file}"));
        fs::write(&p, bytes)?;
        written.push(p);
    }
    for plot in &rep.plots {
        let p = dir.join(format!("{name}_{}.svg", plot.name));
        fs::write(&p, plot.render())?;
        written.push(p);
    }
    written.push(write_summary(dir)?.path);
    Ok(written)
}

/// Aggregate of every suite report found in a directory.
#[derive(Clone, Debug)]
pub struct Summary {
    pub path: PathBuf,
    pub rows: usize,
    pub failures: usize,
    pub constants: Vec<(String, f64, Option<f64>)>,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failures > 0)
    }
}

/// Rebuild `summary.txt` from the suite CSVs in `dir`.
pub fn write_summary(dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let mut text = String::from("suite summary\n");
    let mut total = 0;
    let mut failures = 0;
    let mut constants = Vec::new();
    let mut lines = Vec::new();
    for e in Experiment::ALL {
        let rows_path = dir.join(format!("{e}.csv"));
        if !rows_path.exists() {
            continue;
        }
        let mut rdr = csv::Reader::from_path(&rows_path)?;
        let (mut n, mut fail) = (0usize, 0usize);
        let mut failed = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            n += 1;
            if rec.get(7) != Some("true") {
                fail += 1;
                failed.push(format!(
                    "  FAIL {} {}: {} {} {}",
                    rec.get(1).unwrap_or(""),
                    rec.get(2).unwrap_or(""),
                    rec.get(3).unwrap_or(""),
                    rec.get(4).unwrap_or(""),
                    rec.get(5).unwrap_or("")
                ));
            }
        }
        total += n;
        failures += fail;
        lines.push(format!("{e}: {n} rows, {} pass, {fail} fail", n - fail));
        lines.extend(failed);

        let cpath = dir.join(format!("{e}_constants.csv"));
        if cpath.exists() {
            let mut rdr = csv::Reader::from_path(&cpath)?;
            for rec in rdr.records() {
                let rec = rec?;
                let name = rec.get(0).unwrap_or("").to_string();
                let value: f64 = rec.get(1).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
                let base: Option<f64> = rec.get(2).and_then(|s| s.parse().ok());
                let mut line = format!("  constant {name} = {}", fmt_num(value));
                if let Some(b) = base {
                    line.push_str(&format!(
                        " (baseline {}, drift {:.1}%)",
                        fmt_num(b),
                        100.0 * ((value - b) / b).abs()
                    ));
                }
                lines.push(line);
                constants.push((name, value, base));
            }
        }
    }
    text.push_str(&format!("rows: {total}\nfailures: {failures}\n"));
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    let path = dir.join("summary.txt");
    fs::write(&path, text)?;
    Ok(Summary {
        path,
        rows: total,
        failures,
        constants,
    })
}

/// Copy the fitted constants found in `dir` into a baseline file, keeping
/// entries that were not re-measured. Per-case constants `key@case` are
/// averaged into `key`.
pub fn update_baseline(dir: &Path, path: &Path) -> Result<Baseline> {
    let mut base = if path.exists() {
        Baseline::load(path)?
    } else {
        Baseline::default()
    };
    let summary = write_summary(dir)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (name, value, _) in summary.constants {
        let key = name.split_once('@').map_or(name.as_str(), |(k, _)| k);
        if base.constants.contains_key(key) && value.is_finite() {
            let s = sums.entry(key.to_string()).or_insert((0.0, 0));
            s.0 += value;
            s.1 += 1;
        }
    }
    for (key, (sum, n)) in sums {
        base.constants.insert(key, sum / n as f64);
    }
    base.save(path)?;
    Ok(base)
}
