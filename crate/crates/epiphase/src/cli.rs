//! Command-line surface: `simulate`, `fit`, `select`, `report` and
//! `replay`. Every command that writes an output directory leaves a
//! `manifest.json` there.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use epiphase_core::simulate::simulate;
use serde::{Deserialize, Serialize};

use crate::compare;
use crate::config::{ModelChoice, ScenarioFile, StudyConfig, PAPER_SCALE};
use crate::error::{AppError, Result, EXIT_OK, EXIT_RUNTIME, EXIT_USER};
use crate::manifest::{
    changed_inputs, differing_artifacts, read_manifest, ManifestBuilder, RunManifest,
};
use crate::report::write_report;
use crate::results::{
    read_summary, write_atomic, write_json, PHASES_FILE, POINTWISE_FILE, SCALARS_FILE, SUMMARY_FILE,
};
use crate::series::{parse_series, write_simulation_csv, ParseOptions};
use crate::workflow::{fit, resolve, study_window, write_fit};

pub const SIMULATION_FILE: &str = "simulation.csv";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const STUDY_FILE: &str = "study.toml";
pub const FAILURE_FILE: &str = "failure.json";

#[derive(Debug, Parser)]
#[command(
    name = "epiphase",
    version,
    about = "Piecewise-constant reproduction numbers from epidemic count series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Simulate an epidemic from a scenario file.
    Simulate(SimulateArgs),
    /// Fit one model to a daily series.
    Fit(FitArgs),
    /// Rank fitted runs by WAIC and PSIS-LOO.
    Select(SelectArgs),
    /// Write plot-ready tables from a fitted run.
    Report(ReportArgs),
    /// Re-run a command from its manifest and check the outputs match.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's random seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Daily series (CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Study configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// `fixedk:K`, `pp` or `dp`; defaults to the configuration's `model.choice`.
    #[arg(long)]
    pub model: Option<ModelChoice>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run 8 chains of 100000 iterations.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Overrides the configuration's random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chains run in parallel (default: available cores).
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    /// Result directories written by `fit`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for `ranking.csv` and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Result directory written by `fit`.
    pub run: PathBuf,
    /// Output directory (default: `<run>/report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A manifest file or the directory holding one.
    pub manifest: PathBuf,
    /// Directory for the re-run outputs.
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Select(a) => cmd_select(&a),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|source| AppError::Read {
        path: p.into(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| AppError::Write {
        path: dir.into(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| AppError::Read {
        path: path.into(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())
            .map_err(|source| AppError::Write {
                path: path.into(),
                source,
            })
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let args = SimulateArgs {
        config: absolute(&args.config)?,
        out: absolute(&args.out)?,
        ..args.clone()
    };
    let text = read_text(&args.config)?;
    let mut scenario =
        ScenarioFile::from_toml(&text).map_err(|e| AppError::parse(&args.config, e.to_string()))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let config = scenario.to_config()?;
    let mut manifest = ManifestBuilder::start("simulate", &Command::Simulate(args.clone()));
    manifest
        .config(&text)
        .seeds(config.rng_seed, 0)
        .input(&args.config)?;
    let state = simulate(&config)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join(SIMULATION_FILE);
    write_atomic(&csv_path, |w| write_simulation_csv(&state, w))?;
    let scenario_path = args.out.join(SCENARIO_FILE);
    write_text(&scenario_path, &scenario.to_toml())?;
    println!(
        "simulated {} days into {}",
        state.days(),
        csv_path.display()
    );
    manifest.finish(&args.out, &[csv_path, scenario_path])
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let args = FitArgs {
        data: absolute(&args.data)?,
        config: absolute(&args.config)?,
        out: absolute(&args.out)?,
        ..args.clone()
    };
    let text = read_text(&args.config)?;
    let mut study =
        StudyConfig::from_toml(&text).map_err(|e| AppError::parse(&args.config, e.to_string()))?;
    if let Some(seed) = args.seed {
        study.sampler.seed = seed;
    }
    let regime = study.regime()?;
    let model = args.model.or(study.model.choice).ok_or_else(|| {
        AppError::Usage("no model: pass --model or set model.choice in the configuration".into())
    })?;
    let options = ParseOptions {
        region: study.region.clone(),
        cumulative: study.data.cumulative,
        population: Some(study.population),
        count_regime: regime,
    };
    let file = fs::File::open(&args.data).map_err(|source| AppError::Read {
        path: args.data.clone(),
        source,
    })?;
    let series = parse_series(file, &args.data.display().to_string(), &options)?;
    for w in &series.warnings {
        eprintln!("warning: {w}");
    }
    let window = study_window(&series, &study)?;
    let (mut chains, mut iterations) = if args.paper_scale {
        PAPER_SCALE
    } else {
        (study.sampler.chains, study.sampler.iterations)
    };
    chains = args.chains.unwrap_or(chains);
    iterations = args.iterations.unwrap_or(iterations);
    let config = resolve(&window, &study, model, Some((chains, iterations)))?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let mut manifest = ManifestBuilder::start("fit", &Command::Fit(args.clone()));
    manifest
        .config(&text)
        .seeds(config.rng_seed, config.n_chains)
        .input(&args.data)?
        .input(&args.config)?;
    create_dir(&args.out)?;
    let outcome = match fit(&window, &study, &config, jobs) {
        Ok(o) => o,
        Err(e) if e.exit_code() == EXIT_RUNTIME => {
            let path = args.out.join(FAILURE_FILE);
            let report = serde_json::json!({
                "error": e.to_string(),
                "model": model.to_string(),
                "regime": regime.as_str(),
                "chains": config.n_chains,
                "iterations": config.n_iterations,
                "rng_seed": config.rng_seed,
            });
            write_json(&path, &report)?;
            return Err(AppError::Runtime(format!(
                "{e}; report written to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e),
    };
    let mut written = write_fit(&args.out, &outcome, study.sampler.stored_draws_per_chain)?;
    let study_path = args.out.join(STUDY_FILE);
    write_text(&study_path, &text)?;
    written.push(study_path);
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let s = &outcome.summary.summary;
    println!(
        "{model}: {} draws from {} chains, timeline {} days starting at {}",
        s.n_draws,
        config.n_chains,
        s.horizon,
        outcome.summary.label(0)
    );
    let total = s.n_draws.max(1) as f64;
    for (k, n) in &s.phase_counts {
        println!("  occupied phases {k}: {:.3}", *n as f64 / total);
    }
    manifest.finish(&args.out, &written)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

pub fn cmd_select(args: &SelectArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|r| absolute(r))
        .collect::<Result<Vec<_>>>()?;
    let loaded = compare::load_runs(&runs)?;
    let report = compare::rank(&loaded)?;
    print!("{}", compare::format_table(&report));
    if let Some(out) = &args.out {
        let out = absolute(out)?;
        let args = SelectArgs {
            runs: runs.clone(),
            out: Some(out.clone()),
        };
        let mut manifest = ManifestBuilder::start("select", &Command::Select(args));
        for r in &runs {
            manifest.input(&r.join(POINTWISE_FILE))?;
        }
        create_dir(&out)?;
        let path = out.join(compare::RANKING_FILE);
        compare::write_ranking(&path, &report)?;
        manifest.finish(&out, &[path])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(args: &ReportArgs) -> Result<RunManifest> {
    let run = absolute(&args.run)?;
    let out = absolute(&args.out.clone().unwrap_or_else(|| args.run.join("report")))?;
    let stored = read_summary(&run)?;
    let mut manifest = ManifestBuilder::start(
        "report",
        &Command::Report(ReportArgs {
            run: run.clone(),
            out: Some(out.clone()),
        }),
    );
    for f in [SUMMARY_FILE, SCALARS_FILE, PHASES_FILE] {
        manifest.input(&run.join(f))?;
    }
    create_dir(&out)?;
    let written = write_report(&out, &stored)?;
    if let Some(last) = stored.summary.attack_rate().and_then(|a| a.last().copied()) {
        println!(
            "attack rate at {}: {:.2}% (95% CrI {:.2}-{:.2}%)",
            stored.label(stored.summary.horizon - 1),
            100.0 * last.median,
            100.0 * last.lower_95,
            100.0 * last.upper_95
        );
    }
    manifest.finish(&out, &written)
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

pub fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let original = read_manifest(&args.manifest)?;
    let changed = changed_inputs(&original);
    let config_inputs: Vec<&Path> = original
        .inputs
        .iter()
        .map(|d| d.path.as_path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    let blocking: Vec<&PathBuf> = changed
        .iter()
        .filter(|p| original.config.is_none() || !config_inputs.contains(&p.as_path()))
        .collect();
    if !blocking.is_empty() {
        return Err(AppError::Usage(format!(
            "inputs changed since the run: {}",
            blocking
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let command: Command = serde_json::from_value(original.invocation.clone())
        .map_err(|e| AppError::parse(&args.manifest, format!("invocation: {e}")))?;
    let out = absolute(&args.out)?;
    let scratch = tempfile::tempdir().map_err(|source| AppError::Write {
        path: std::env::temp_dir(),
        source,
    })?;
    let embedded = |name: &str| -> Result<PathBuf> {
        let text = original
            .config
            .as_deref()
            .ok_or_else(|| AppError::parse(&args.manifest, "manifest holds no configuration"))?;
        let path = scratch.path().join(name);
        fs::write(&path, text).map_err(|source| AppError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    match command {
        Command::Simulate(a) => {
            cmd_simulate(&SimulateArgs {
                config: embedded(SCENARIO_FILE)?,
                out: out.clone(),
                ..a
            })?;
        }
        Command::Fit(a) => {
            cmd_fit(&FitArgs {
                config: embedded(STUDY_FILE)?,
                out: out.clone(),
                ..a
            })?;
        }
        Command::Report(a) => {
            cmd_report(&ReportArgs {
                out: Some(out.clone()),
                ..a
            })?;
        }
        Command::Select(a) => {
            cmd_select(&SelectArgs {
                out: Some(out.clone()),
                ..a
            })?;
        }
        Command::Replay(_) => return Err(AppError::Usage("cannot replay a replay".into())),
    }
    let differing = differing_artifacts(&original, &out);
    if !differing.is_empty() {
        return Err(AppError::Runtime(format!(
            "replay differs in {}",
            differing
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    println!(
        "replay reproduced {} artifacts bit-exactly in {}",
        original.artifacts.len(),
        out.display()
    );
    Ok(())
}
