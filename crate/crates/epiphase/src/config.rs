//! Study and scenario configuration files (TOML) and their resolution into
//! the model and sampler settings of the core crate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use epiphase_core::epi::{discretize_gamma, PhaseTrajectory};
use epiphase_core::inference::{
    Dispersion, FitConfig, IfrSchedule, ModelSpec, ObservationRegime, PhaseModel,
};
use epiphase_core::phases::{DpPrior, FixedKPrior, PhaseValuePrior, PpPrior};
use epiphase_core::simulate::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::series::{DayLabel, RegionSeries};

// ---------------------------------------------------------------------------
// Model choice
// ---------------------------------------------------------------------------

/// Which phase prior to fit: `fixedk:K`, `pp` or `dp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelChoice {
    FixedK(usize),
    PoissonProcess,
    DirichletProcess,
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "pp" => Ok(ModelChoice::PoissonProcess),
            "dp" => Ok(ModelChoice::DirichletProcess),
            other => {
                let k = other
                    .strip_prefix("fixedk:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|k| *k >= 1)
                    .ok_or_else(|| {
                        format!("model must be fixedk:K (K >= 1), pp or dp, got `{other}`")
                    })?;
                Ok(ModelChoice::FixedK(k))
            }
        }
    }
}

impl TryFrom<String> for ModelChoice {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<ModelChoice> for String {
    fn from(m: ModelChoice) -> String {
        m.to_string()
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::FixedK(k) => write!(f, "fixedk:{k}"),
            ModelChoice::PoissonProcess => write!(f, "pp"),
            ModelChoice::DirichletProcess => write!(f, "dp"),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaInterval {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Intervals {
    pub generation: GammaInterval,
    pub infection_to_death: GammaInterval,
}

impl Default for Intervals {
    fn default() -> Self {
        Self {
            generation: GammaInterval { mean: 6.5, sd: 4.4 },
            infection_to_death: GammaInterval {
                mean: 19.0,
                sd: 8.5,
            },
        }
    }
}

impl Intervals {
    fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("generation", self.generation),
            ("infection_to_death", self.infection_to_death),
        ] {
            if !(g.mean > 0.0 && g.sd > 0.0) || !g.mean.is_finite() || !g.sd.is_finite() {
                return Err(AppError::Config(format!(
                    "{name} interval needs positive mean and sd"
                )));
            }
        }
        Ok(())
    }
}

fn parse_regime(s: &str) -> Result<ObservationRegime> {
    match s {
        "deaths" => Ok(ObservationRegime::Deaths),
        "infections" | "cases" => Ok(ObservationRegime::Infections),
        other => Err(AppError::Config(format!(
            "regime must be `deaths` or `infections`, got `{other}`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Study configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `deaths` or `infections`.
    pub regime: String,
    pub cumulative: bool,
    pub start_threshold: u64,
    /// Last day used (inclusive), as `YYYY-MM-DD` or an integer index.
    pub horizon_end: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            regime: "deaths".into(),
            cumulative: false,
            start_threshold: 10,
            horizon_end: None,
        }
    }
}

/// One piece of a piecewise-constant IFR, in force from `from` (inclusive)
/// until the next period starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfrPeriod {
    pub from: String,
    pub value: f64,
}

/// IFR used when the configuration gives neither a value nor periods.
pub const DEFAULT_IFR: f64 = 0.02;

/// A constant `value` or piecewise `periods`; with neither, [`DEFAULT_IFR`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IfrSection {
    pub value: Option<f64>,
    pub periods: Vec<IfrPeriod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedKSection {
    pub t1_lower: f64,
    pub gap_upper: f64,
}

impl Default for FixedKSection {
    fn default() -> Self {
        let p = FixedKPrior::new(1).expect("one phase");
        Self {
            t1_lower: p.t1_lower,
            gap_upper: p.gap_upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpSection {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub k_max: usize,
    pub fixed_lambda: Option<f64>,
}

impl Default for PpSection {
    fn default() -> Self {
        let p = PpPrior::default();
        Self {
            lambda_shape: p.lambda_shape,
            lambda_rate: p.lambda_rate,
            k_max: p.k_max,
            fixed_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub theta_shape: f64,
    pub theta_rate: f64,
    pub truncation: usize,
    pub fixed_theta: Option<f64>,
}

impl Default for DpSection {
    fn default() -> Self {
        let p = DpPrior::default();
        Self {
            theta_shape: p.theta_shape,
            theta_rate: p.theta_rate,
            truncation: p.truncation,
            fixed_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Model fitted when the command line does not name one.
    pub choice: Option<ModelChoice>,
    /// Mean of the exponential prior on the dispersion `k`.
    pub dispersion_prior_mean: f64,
    /// Holds `k` fixed instead of sampling it.
    pub dispersion_fixed: Option<f64>,
    pub seed_days: usize,
    pub seed_prior_mean: f64,
    pub r_log_median: f64,
    pub r_log_sd: f64,
    pub fixedk: FixedKSection,
    pub pp: PpSection,
    pub dp: DpSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        let r = PhaseValuePrior::default();
        Self {
            choice: None,
            dispersion_prior_mean: 5.0,
            dispersion_fixed: None,
            seed_days: epiphase_core::simulate::DEFAULT_SEED_DAYS,
            seed_prior_mean: 20.0,
            r_log_median: r.log_median,
            r_log_sd: r.log_sd,
            fixedk: FixedKSection::default(),
            pp: PpSection::default(),
            dp: DpSection::default(),
        }
    }
}

/// Sampler settings; the defaults are the desk-scale run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: usize,
    pub iterations: usize,
    pub warmup_fraction: f64,
    /// Post-warmup draws kept per chain for summaries and model comparison.
    pub draws_per_chain: usize,
    /// Full trajectories written to the draws file per chain.
    pub stored_draws_per_chain: usize,
    pub seed: u64,
    pub seeding_lead_days: Option<usize>,
    /// Unset uses the phase model's default.
    pub anneal_fraction: Option<f64>,
    pub anneal_start: f64,
    pub target_acceptance: f64,
    pub scalar_target_acceptance: f64,
    pub init_candidates: usize,
}

/// Chains and iterations of the desk-scale run.
pub const DESK_SCALE: (usize, usize) = (4, 20_000);
/// Chains and iterations of the full-length run.
pub const PAPER_SCALE: (usize, usize) = (8, 100_000);

impl Default for SamplerSection {
    fn default() -> Self {
        let base = FitConfig::new(
            ModelSpec::new(
                ObservationRegime::Deaths,
                PhaseModel::DirichletProcess(DpPrior::default()),
                1.0,
            )
            .expect("default model"),
        );
        Self {
            chains: DESK_SCALE.0,
            iterations: DESK_SCALE.1,
            warmup_fraction: base.warmup_fraction,
            draws_per_chain: base.max_draws_per_chain,
            stored_draws_per_chain: 100,
            seed: base.rng_seed,
            seeding_lead_days: base.seeding_lead_days,
            anneal_fraction: None,
            anneal_start: base.anneal_start,
            target_acceptance: base.target_acceptance,
            scalar_target_acceptance: base.scalar_target_acceptance,
            init_candidates: base.init_candidates,
        }
    }
}

/// Everything needed to fit one region besides the data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub region: String,
    pub population: f64,
    pub data: DataSection,
    pub ifr: IfrSection,
    pub intervals: Intervals,
    pub model: ModelSection,
    pub sampler: SamplerSection,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            region: String::new(),
            population: 0.0,
            data: DataSection::default(),
            ifr: IfrSection::default(),
            intervals: Intervals::default(),
            model: ModelSection::default(),
            sampler: SamplerSection::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| AppError::parse(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("study config serialises")
    }

    pub fn regime(&self) -> Result<ObservationRegime> {
        parse_regime(&self.data.regime)
    }

    pub fn horizon_end(&self) -> Result<Option<DayLabel>> {
        self.data
            .horizon_end
            .as_deref()
            .map(|s| {
                DayLabel::parse(s).ok_or_else(|| {
                    AppError::Config(format!(
                        "horizon_end `{s}` is neither a date nor an integer"
                    ))
                })
            })
            .transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.population > 0.0) || !self.population.is_finite() {
            return Err(AppError::Config(
                "population must be a positive number".into(),
            ));
        }
        self.regime()?;
        self.horizon_end()?;
        self.intervals.validate()?;
        let ifr_ok = |f: f64| f > 0.0 && f < 1.0;
        match (self.ifr.value, self.ifr.periods.is_empty()) {
            (Some(_), false) => {
                return Err(AppError::Config(
                    "give either ifr.value or ifr.periods, not both".into(),
                ))
            }
            (Some(f), true) if !ifr_ok(f) => {
                return Err(AppError::Config(format!("IFR must lie in (0, 1), got {f}")))
            }
            _ => {}
        }
        for p in &self.ifr.periods {
            if !ifr_ok(p.value) {
                return Err(AppError::Config(format!(
                    "IFR must lie in (0, 1), got {} from {}",
                    p.value, p.from
                )));
            }
            if DayLabel::parse(&p.from).is_none() {
                return Err(AppError::Config(format!(
                    "IFR period start `{}` is neither a date nor an integer",
                    p.from
                )));
            }
        }
        Ok(())
    }

    /// Daily IFR over `series`; periods must start on or before its first day.
    pub fn ifr_schedule(&self, series: &RegionSeries) -> Result<IfrSchedule> {
        if self.ifr.periods.is_empty() {
            return Ok(IfrSchedule::Constant(self.ifr.value.unwrap_or(DEFAULT_IFR)));
        }
        let mut starts: Vec<(i64, f64)> = Vec::with_capacity(self.ifr.periods.len());
        for p in &self.ifr.periods {
            let label = DayLabel::parse(&p.from).expect("validated");
            let offset = series.axis.offset_of(&label).ok_or_else(|| {
                AppError::Config(format!(
                    "IFR period start {label} does not match the series' day labels"
                ))
            })?;
            starts.push((offset, p.value));
        }
        starts.sort_by_key(|s| s.0);
        if starts[0].0 > 0 {
            return Err(AppError::Config(format!(
                "IFR periods start at {}, after the first day {} of the series",
                series.label(starts[0].0 as usize),
                series.label(0)
            )));
        }
        let daily = (0..series.len() as i64)
            .map(|t| {
                starts
                    .iter()
                    .rev()
                    .find(|s| s.0 <= t)
                    .map(|s| s.1)
                    .expect("first period covers day 0")
            })
            .collect();
        Ok(IfrSchedule::Daily(daily))
    }

    /// Model specification for `choice` fitted to `series`.
    pub fn model_spec(&self, choice: ModelChoice, series: &RegionSeries) -> Result<ModelSpec> {
        let m = &self.model;
        let r_prior = PhaseValuePrior {
            log_median: m.r_log_median,
            log_sd: m.r_log_sd,
        };
        let phases = match choice {
            ModelChoice::FixedK(k) => {
                let mut p = FixedKPrior::new(k)?;
                p.t1_lower = m.fixedk.t1_lower;
                p.gap_upper = m.fixedk.gap_upper;
                p.r_prior = r_prior;
                PhaseModel::FixedK(p)
            }
            ModelChoice::PoissonProcess => PhaseModel::PoissonProcess(PpPrior {
                lambda_shape: m.pp.lambda_shape,
                lambda_rate: m.pp.lambda_rate,
                k_max: m.pp.k_max,
                r_prior,
                fixed_lambda: m.pp.fixed_lambda,
            }),
            ModelChoice::DirichletProcess => PhaseModel::DirichletProcess(DpPrior {
                theta_shape: m.dp.theta_shape,
                theta_rate: m.dp.theta_rate,
                truncation: m.dp.truncation,
                r_prior,
                fixed_theta: m.dp.fixed_theta,
            }),
        };
        let mut spec = ModelSpec::new(self.regime()?, phases, self.population)?;
        spec.gi = discretize_gamma(self.intervals.generation.mean, self.intervals.generation.sd)?;
        spec.pi = discretize_gamma(
            self.intervals.infection_to_death.mean,
            self.intervals.infection_to_death.sd,
        )?;
        spec.ifr = self.ifr_schedule(series)?;
        spec.dispersion = match m.dispersion_fixed {
            Some(k) => Dispersion::Fixed(k),
            None => Dispersion::Sampled {
                prior_mean: m.dispersion_prior_mean,
            },
        };
        spec.seed_days = m.seed_days;
        spec.seed_prior_mean = m.seed_prior_mean;
        spec.validate()?;
        Ok(spec)
    }

    /// Sampler configuration for `spec`; `scale` overrides chains and iterations.
    pub fn fit_config(&self, spec: ModelSpec, scale: Option<(usize, usize)>) -> Result<FitConfig> {
        let s = &self.sampler;
        let (chains, iterations) = scale.unwrap_or((s.chains, s.iterations));
        let mut fc = FitConfig::new(spec);
        fc.n_chains = chains;
        fc.n_iterations = iterations;
        fc.warmup_fraction = s.warmup_fraction;
        fc.max_draws_per_chain = s.draws_per_chain;
        fc.start_threshold = self.data.start_threshold;
        fc.seeding_lead_days = s.seeding_lead_days;
        fc.rng_seed = s.seed;
        fc.target_acceptance = s.target_acceptance;
        fc.scalar_target_acceptance = s.scalar_target_acceptance;
        fc.init_candidates = s.init_candidates;
        if let Some(f) = s.anneal_fraction {
            fc.anneal_fraction = f;
        }
        fc.anneal_start = s.anneal_start;
        fc.validate()?;
        Ok(fc)
    }
}

// ---------------------------------------------------------------------------
// Simulation scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtSchedule {
    pub values: Vec<f64>,
    /// Last day of each phase but the final one.
    #[serde(default)]
    pub changepoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub population: u64,
    pub horizon: usize,
    pub ifr: f64,
    /// Negative-binomial dispersion; `inf` gives Poisson noise.
    pub dispersion_k: f64,
    pub seed: u64,
    /// Infections on each seeded day.
    pub seed_infections: Vec<u64>,
    pub rt: RtSchedule,
    #[serde(default)]
    pub intervals: Intervals,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| AppError::parse(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn to_config(&self) -> Result<ScenarioConfig> {
        self.intervals.validate()?;
        let rt_schedule = PhaseTrajectory::from_changepoints(
            self.rt.values.clone(),
            self.rt.changepoints.clone(),
            self.horizon,
        )?;
        let cfg = ScenarioConfig {
            population_n: self.population,
            horizon: self.horizon,
            rt_schedule,
            ifr: self.ifr,
            dispersion_k: self.dispersion_k,
            gi: discretize_gamma(self.intervals.generation.mean, self.intervals.generation.sd)?,
            pi: discretize_gamma(
                self.intervals.infection_to_death.mean,
                self.intervals.infection_to_death.sd,
            )?,
            seed_infections: self.seed_infections.clone(),
            rng_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Bundled configurations
// ---------------------------------------------------------------------------

/// Configuration files shipped with the crate.
pub mod bundled {
    /// Five-phase synthetic scenario for `epiphase simulate`.
    pub const FIVE_PHASE_SCENARIO: &str = include_str!("../configs/five_phase_scenario.toml");
    /// Study fitting the five-phase scenario from deaths.
    pub const FIVE_PHASE_DEATHS: &str = include_str!("../configs/five_phase_deaths.toml");
    /// Study fitting the five-phase scenario from infections.
    pub const FIVE_PHASE_INFECTIONS: &str = include_str!("../configs/five_phase_infections.toml");
    /// National deaths study with a time-varying IFR.
    pub const NATIONAL_DEATHS_TEMPLATE: &str =
        include_str!("../configs/national_deaths_template.toml");
}
