use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use homcrit::harness::{
    run_experiment, update_baseline, validate_config, write_summary, CoefficientSpec, ConfigError, ExperimentConfig,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "homcrit",
    version,
    about = "Critical sets of oscillating elliptic equations: experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cell problem convergence and the homogenized matrix.
    Cell(Common),
    /// One Dirichlet solve, exported as nodal CSV.
    Solve(Common),
    /// Harmonic approximation rates.
    Approx(Common),
    /// Doubling indices on grid solutions and the spectral corpus.
    Doubling(Common),
    /// Weiss identity, monotonicity and concentration on the spectral corpus.
    Weiss(Common),
    /// Turning of the dominant projection across scales.
    Turning(Common),
    /// Two-point directional estimates.
    Twopoint(Common),
    /// Critical-point covers and no-critical zones.
    Cover(Common),
    /// Tube volumes around detected critical sets.
    Tube(Common),
    /// Rebuild summary.txt from the suite CSVs in --out.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Copy re-measured constants into this baseline file.
        #[arg(long)]
        update_baseline: Option<PathBuf>,
    },
    /// Check a config and print it with defaults filled in.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Experiment name when the config does not give one.
        #[arg(long)]
        experiment: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Coefficient preset name, or csv:PATH.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated list, fractions allowed: 1/16,1/32.
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    nodes_per_unit: Option<usize>,
    #[arg(long)]
    n_cell: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, value_parser = parse_number)]
    delta0: Option<f64>,
    #[arg(long, value_parser = parse_number)]
    eps0: Option<f64>,
    #[arg(long, value_parser = parse_number)]
    eta: Option<f64>,
    #[arg(long, value_parser = parse_number)]
    gamma: Option<f64>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_parser = parse_number)]
    window: Option<f64>,
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_parser = parse_number)]
    tol: Option<f64>,
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            Ok(a / b)
        }
        None => s.parse().map_err(|e| format!("{e}")),
    }
}

impl Common {
    fn config(&self, experiment: Option<&str>) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(e) = experiment {
            c.experiment = Some(e.into());
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f.clone(); } )* };
        }
        over!(
            seed,
            out,
            epsilons,
            boundary,
            nodes_per_unit,
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
            baseline
        );
        if let Some(p) = &self.preset {
            c.coefficients = Some(CoefficientSpec::Name(p.clone()));
        }
        Ok(c)
    }
}

fn print_errors(errs: &[ConfigError]) {
    for e in errs {
        eprintln!("config error: {e}");
    }
}

fn validated(common: &Common, experiment: Option<&str>) -> anyhow::Result<Result<RunConfig, Vec<ConfigError>>> {
    Ok(validate_config(&common.config(experiment)?))
}

fn run(common: &Common, name: &str) -> anyhow::Result<u8> {
    let cfg = match validated(common, Some(name))? {
        Ok(c) => c,
        Err(errs) => {
            print_errors(&errs);
            return Ok(2);
        }
    };
    let go = || run_experiment(&cfg);
    let rep = match common.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| anyhow!(e))?
            .install(go),
        None => go(),
    }?;
    let fails = rep.failures().count();
    println!(
        "{}: {} rows, {} failed; results in {}",
        rep.experiment,
        rep.rows.len(),
        fails,
        cfg.out.display()
    );
    for r in rep.failures() {
        println!(
            "  FAIL {} {}: measured {:.6e} {} {:.6e}",
            r.case,
            r.quantity,
            r.measured,
            r.relation.symbol(),
            r.bound
        );
    }
    Ok(rep.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Cell(c) => run(c, "cell"),
        Command::Solve(c) => run(c, "solve"),
        Command::Approx(c) => run(c, "approx"),
        Command::Doubling(c) => run(c, "doubling"),
        Command::Weiss(c) => run(c, "weiss"),
        Command::Turning(c) => run(c, "turning"),
        Command::Twopoint(c) => run(c, "twopoint"),
        Command::Cover(c) => run(c, "cover"),
        Command::Tube(c) => run(c, "tube"),
        Command::Report {
            out,
            update_baseline: base,
        } => (|| {
            let s = write_summary(out)?;
            if let Some(p) = base {
                update_baseline(out, p)?;
                println!("baseline updated: {}", p.display());
            }
            println!(
                "{} rows, {} failed; summary in {}",
                s.rows,
                s.failures,
                s.path.display()
            );
            Ok(s.exit_code() as u8)
        })(),
        Command::Validate { common, experiment } => (|| match validated(common, experiment.as_deref())? {
            Ok(cfg) => {
                homcrit::harness::echo_config(&cfg)?;
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                Ok(0)
            }
            Err(errs) => {
                print_errors(&errs);
                Ok(2)
            }
        })(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
