mod config;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dtrcv::data_model::emit_path;
use dtrcv::estimators::{observed_cuminc, proportion_treated};
use dtrcv::pipeline::{estimate_curves, prepare};
use dtrcv::selection::{bootstrap_bands, cross_validate};
use dtrcv::simulator::{generate_observational, DgpSpec};
use dtrcv::weights::weight_diagnostics;
use dtrcv::{ingest, Cohort, ColumnMap, Error};

use config::RunConfig;
use output::{file_names, tag, write_csv, write_curves, write_json, Manifest, ProportionRow};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Evaluate and select dynamic treatment regimes from daily longitudinal
/// data with competing terminal events.
#[derive(Parser)]
#[command(name = "dtrcv", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Simulate(SimulateArgs),
    /// Weighted cumulative incidence per regime, weight diagnostics and
    /// proportion treated.
    Estimate(RunArgs),
    /// Cross-validated value of the selected regime.
    Crossval(RunArgs),
    /// Percentile bootstrap bands for the curves.
    Bootstrap(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in spec: confounded-feedback or baseline-only.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Spec file (TOML).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data() || matches!(e, Error::RegimeEval { .. }) {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

/// Attaches a stage label and the matching exit code to a library error.
fn stage<T>(name: &str, r: dtrcv::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure {
        code: exit_code(&e),
        error: anyhow::Error::new(e).context(name.to_string()),
    })
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, cli.threads),
        Command::Estimate(a) => estimate(a, cli.threads),
        Command::Crossval(a) => crossval(a, cli.threads),
        Command::Bootstrap(a) => bootstrap(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(args: &SimulateArgs, threads: Option<usize>) -> Outcome {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<DgpSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => {
            DgpSpec::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?
        }
        (None, None) => DgpSpec::confounded_feedback(),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let cohort = stage("simulate", generate_observational(&spec))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    stage(
        "write cohort",
        emit_path(&cohort, &args.out, &ColumnMap::default()),
    )?;
    let manifest = args.out.with_extension("manifest.json");
    write_json(
        &manifest,
        &Manifest {
            command: "simulate",
            version: VERSION,
            threads,
            config: &spec,
            outputs: file_names(std::slice::from_ref(&args.out)),
        },
    )?;
    println!(
        "{} patients, {} patient-days -> {}",
        cohort.n_patients(),
        cohort.n_rows(),
        args.out.display()
    );
    Ok(())
}

fn load(args: &RunArgs) -> Result<(RunConfig, Cohort, Vec<dtrcv::Regime>), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(i) = &args.input {
        cfg.input = Some(i.clone());
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    let regimes = cfg.regimes.build()?;
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| anyhow!("no input file: set `input` in the config or pass --input"))?;
    if !input.exists() {
        return Err(anyhow!("input file {} not found", input.display()).into());
    }
    let cohort = stage("ingest", ingest(&input, &cfg.schema, &cfg.ingest))?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    log::info!(
        "{} patients, {} rows, horizon {}",
        cohort.n_patients(),
        cohort.n_rows(),
        cohort.horizon()
    );
    Ok((cfg, cohort, regimes))
}

fn finish(command: &str, cfg: &RunConfig, threads: Option<usize>, outputs: &[PathBuf]) -> Outcome {
    write_json(
        &cfg.output_dir.join(format!("manifest_{command}.json")),
        &Manifest {
            command,
            version: VERSION,
            threads,
            config: cfg,
            outputs: file_names(outputs),
        },
    )?;
    for p in outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn estimate(args: &RunArgs, threads: Option<usize>) -> Outcome {
    let (cfg, cohort, regimes) = load(args)?;
    let settings = cfg.pipeline();
    let fitted = stage("weights", prepare(&cohort, &regimes, &settings, None))?;
    let kind = fitted.weight_kind;
    let obs = stage("observed curve", observed_cuminc(&cohort, None))?;
    let dir = &cfg.output_dir;
    let mut outputs = Vec::new();
    println!("{:<20} {:<16} {:>10}", "regime", "estimator", "value");
    for est in cfg.estimator.estimators() {
        let mut curves = stage(
            "estimate",
            estimate_curves(&fitted, est, kind, &settings.msm, None),
        )?;
        for c in &curves {
            println!("{:<20} {:<16} {:>10.4}", c.regime_id, est.name(), c.value());
        }
        curves.push(obs.clone());
        let path = dir.join(format!("curves_{}.csv", tag(est)));
        write_curves(&path, &curves)?;
        outputs.push(path);
    }
    println!("{:<20} {:<16} {:>10.4}", "obs", "observed", obs.value());

    let path = dir.join("weight_diagnostics.csv");
    write_csv(&path, weight_diagnostics(&fitted.ext, kind))?;
    outputs.push(path);

    let mut rows = Vec::new();
    for (r, id) in fitted.ext.regime_ids().iter().enumerate() {
        let p = stage(
            "proportion treated",
            proportion_treated(&fitted.ext, r, kind, None),
        )?;
        rows.extend(
            p.into_iter()
                .enumerate()
                .map(|(day, proportion)| ProportionRow {
                    regime_id: id.clone(),
                    day,
                    proportion,
                }),
        );
    }
    rows.extend(
        output::observed_proportion(&cohort)
            .into_iter()
            .enumerate()
            .map(|(day, proportion)| ProportionRow {
                regime_id: "obs".into(),
                day,
                proportion,
            }),
    );
    let path = dir.join("proportion_treated.csv");
    write_csv(&path, rows)?;
    outputs.push(path);

    let path = dir.join("ps_fit.json");
    write_json(&path, &fitted.propensity)?;
    outputs.push(path);
    finish("estimate", &cfg, threads, &outputs)
}

fn crossval(args: &RunArgs, threads: Option<usize>) -> Outcome {
    let (cfg, cohort, regimes) = load(args)?;
    if cfg.crossval.folds < 2 {
        return Err(anyhow!("crossval.folds must be at least 2").into());
    }
    let settings = cfg.pipeline();
    let mut outputs = Vec::new();
    for est in cfg.estimator.estimators() {
        let report = stage(
            "cross-validation",
            cross_validate(&cohort, &regimes, &settings, est, &cfg.crossval),
        )?;
        println!("{}", est.name());
        println!(
            "{:>5}  {:<20} {:>10} {:>10}",
            "fold", "selected", "train", "test"
        );
        for f in &report.fold_results {
            let test = f
                .test_value
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
            println!(
                "{:>5}  {:<20} {:>10.4} {:>10}",
                f.fold, f.selected, f.train_value, test
            );
        }
        println!(
            "cv_value {:.4} over {} folds; in-sample {} {:.4}; optimism {:+.4}",
            report.cv_value,
            report.n_defined,
            report.in_sample_regime,
            report.in_sample_value,
            report.optimism
        );
        let path = cfg.output_dir.join(format!("cv_report_{}.json", tag(est)));
        write_json(&path, &report)?;
        outputs.push(path);
    }
    finish("crossval", &cfg, threads, &outputs)
}

#[derive(Serialize)]
struct BootstrapSummary {
    estimator: &'static str,
    replicates: usize,
    failed: usize,
    level: f64,
    seed: u64,
}

fn bootstrap(args: &RunArgs, threads: Option<usize>) -> Outcome {
    let (cfg, cohort, regimes) = load(args)?;
    let settings = cfg.pipeline();
    let mut outputs = Vec::new();
    for est in cfg.estimator.estimators() {
        let res = stage(
            "bootstrap",
            bootstrap_bands(&cohort, &regimes, &settings, est, &cfg.bootstrap),
        )?;
        for c in &res.curves {
            let k = c.cif.len() - 1;
            println!(
                "{:<20} {:<16} {:.4} [{:.4}, {:.4}]",
                c.regime_id,
                est.name(),
                c.value(),
                c.lower.as_ref().map_or(f64::NAN, |l| l[k]),
                c.upper.as_ref().map_or(f64::NAN, |u| u[k])
            );
        }
        let path = cfg.output_dir.join(format!("bands_{}.csv", tag(est)));
        write_curves(&path, &res.curves)?;
        outputs.push(path);
        let path = cfg.output_dir.join(format!("bootstrap_{}.json", tag(est)));
        write_json(
            &path,
            &BootstrapSummary {
                estimator: est.name(),
                replicates: res.replicates,
                failed: res.failed,
                level: cfg.bootstrap.level,
                seed: cfg.bootstrap.seed,
            },
        )?;
        outputs.push(path);
    }
    finish("bootstrap", &cfg, threads, &outputs)
}
