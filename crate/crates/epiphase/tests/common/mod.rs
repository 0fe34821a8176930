//! Helpers shared by the integration tests: temporary studies, short
//! synthetic series and a runner for the built binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epiphase::series::{simulated_series, RegionSeries};
use epiphase_core::epi::PhaseTrajectory;
use epiphase_core::simulate::{simulate, ScenarioConfig};

pub const POPULATION: u64 = 10_000_000;

/// Runs the `epiphase` binary with `args`.
pub fn epiphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epiphase"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Simulated epidemic of `days` days with a constant reproduction number.
pub fn constant_series(r: f64, days: usize, seed: u64) -> RegionSeries {
    let mut cfg = ScenarioConfig::five_phase_reference(1.0e4, seed).unwrap();
    cfg.population_n = POPULATION;
    cfg.horizon = days;
    cfg.rt_schedule = PhaseTrajectory::constant(r, days).unwrap();
    cfg.seed_infections = vec![200; 6];
    simulated_series(&simulate(&cfg).unwrap(), "test")
}

/// Writes `series` as CSV into `dir` and returns its path.
pub fn write_series(dir: &Path, name: &str, series: &RegionSeries) -> PathBuf {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).unwrap();
    series.write_csv(file).unwrap();
    path
}

/// Short study on a synthetic series; `extra` is appended to the `[model]`
/// section.
pub fn study_toml(regime: &str, chains: usize, iterations: usize, extra: &str) -> String {
    format!(
        r#"region = "test"
population = {POPULATION}

[data]
regime = "{regime}"
start_threshold = 0

[model]
dispersion_prior_mean = 1000.0
seed_prior_mean = 200.0
{extra}

[sampler]
chains = {chains}
iterations = {iterations}
seed = 7
"#
    )
}

pub fn write_study(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}
