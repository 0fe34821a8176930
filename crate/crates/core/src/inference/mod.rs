//! Posterior sampling of `R_t` trajectories under the three phase priors.
//!
//! A fit is prepared once from the observed series and the [`FitConfig`]
//! ([`FitProblem::prepare`]), chains run independently
//! ([`FitProblem::run_chain`]) and are merged into [`PosteriorDraws`].
//! [`run_mcmc`] does all three sequentially.

mod diagnostics;
mod labels;
mod likelihood;
mod sampler;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub use diagnostics::{
    bulk_ess, diagnostics, split_rhat, DiagnosticsReport, ScalarDiagnostic, RHAT_FLAG,
};
pub use labels::gibbs_update_labels;
pub use likelihood::{
    log_likelihood_deaths, log_likelihood_infections, Likelihood, ObservationRegime, ParamState,
};

use crate::epi::{discretize_gamma, DiscretizedInterval};
use crate::error::{Error, Result};
use crate::phases::{DpPrior, FixedKPrior, PpPrior};
use crate::simulate::DEFAULT_SEED_DAYS;

// ---------------------------------------------------------------------------
// Model and fit configuration
// ---------------------------------------------------------------------------

/// Phase prior of a model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhaseModel {
    FixedK(FixedKPrior),
    PoissonProcess(PpPrior),
    DirichletProcess(DpPrior),
}

impl PhaseModel {
    /// Short label: `fixedk:K`, `pp` or `dp`.
    pub fn label(&self) -> String {
        match self {
            PhaseModel::FixedK(p) => format!("fixedk:{}", p.k_phases),
            PhaseModel::PoissonProcess(_) => "pp".to_string(),
            PhaseModel::DirichletProcess(_) => "dp".to_string(),
        }
    }
}

/// Negative-binomial dispersion: sampled under an exponential prior or held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Dispersion {
    Sampled { prior_mean: f64 },
    Fixed(f64),
}

/// Infection fatality ratio on each day of the input series.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum IfrSchedule {
    Constant(f64),
    Daily(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub regime: ObservationRegime,
    pub phases: PhaseModel,
    pub population_n: f64,
    pub gi: DiscretizedInterval,
    /// Infection-to-death delay (deaths regime).
    pub pi: DiscretizedInterval,
    pub ifr: IfrSchedule,
    pub dispersion: Dispersion,
    /// Seeded days at the start of the latent epidemic (deaths regime), or
    /// conditioning days at the start of the series (infections regime).
    pub seed_days: usize,
    /// Mean of the exponential prior on the daily seed level.
    pub seed_prior_mean: f64,
}

impl ModelSpec {
    /// Defaults: gamma generation interval (6.5, 4.4), gamma
    /// infection-to-death delay (19, 8.5), IFR 2%, `k ~ Exponential(mean 5)`,
    /// six seeded days with seed level `~ Exponential(mean 20)`.
    pub fn new(regime: ObservationRegime, phases: PhaseModel, population_n: f64) -> Result<Self> {
        Ok(Self {
            regime,
            phases,
            population_n,
            gi: discretize_gamma(6.5, 4.4)?,
            pi: discretize_gamma(19.0, 8.5)?,
            ifr: IfrSchedule::Constant(0.02),
            dispersion: Dispersion::Sampled { prior_mean: 5.0 },
            seed_days: DEFAULT_SEED_DAYS,
            seed_prior_mean: 20.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.population_n > 0.0) || self.population_n.is_infinite() {
            return Err(Error::Config(format!(
                "population must be positive, got {}",
                self.population_n
            )));
        }
        match &self.phases {
            PhaseModel::FixedK(p) => {
                if p.k_phases == 0 {
                    return Err(Error::Config("fixed-K model needs K >= 1".into()));
                }
                if !(p.gap_upper > 0.0) || !(p.t1_lower >= 0.0) {
                    return Err(Error::Config(
                        "changepoint prior bounds must be positive".into(),
                    ));
                }
                check_r_prior(p.r_prior.log_sd)?;
            }
            PhaseModel::PoissonProcess(p) => {
                if !(p.lambda_shape > 0.0 && p.lambda_rate > 0.0) || p.k_max == 0 {
                    return Err(Error::Config(
                        "PP prior needs positive Gamma parameters and K_max >= 1".into(),
                    ));
                }
                if let Some(l) = p.fixed_lambda {
                    if !(l > 0.0) || l.is_infinite() {
                        return Err(Error::Config(format!(
                            "fixed lambda must be positive, got {l}"
                        )));
                    }
                }
                check_r_prior(p.r_prior.log_sd)?;
            }
            PhaseModel::DirichletProcess(p) => {
                if !(p.theta_shape > 0.0 && p.theta_rate > 0.0) || p.truncation < 2 {
                    return Err(Error::Config(
                        "DP prior needs positive Gamma parameters and L >= 2".into(),
                    ));
                }
                if let Some(t) = p.fixed_theta {
                    if !(t > 0.0) || t.is_infinite() {
                        return Err(Error::Config(format!(
                            "fixed theta must be positive, got {t}"
                        )));
                    }
                }
                check_r_prior(p.r_prior.log_sd)?;
            }
        }
        match self.dispersion {
            Dispersion::Sampled { prior_mean } if !(prior_mean > 0.0) => {
                return Err(Error::Config(format!(
                    "dispersion prior mean must be positive, got {prior_mean}"
                )));
            }
            Dispersion::Fixed(k) if !(k > 0.0) => {
                return Err(Error::Config(format!(
                    "fixed dispersion must be positive, got {k}"
                )));
            }
            _ => {}
        }
        if self.seed_days == 0 {
            return Err(Error::Config("need at least one seeded day".into()));
        }
        if !(self.seed_prior_mean > 0.0) {
            return Err(Error::Config("seed prior mean must be positive".into()));
        }
        match &self.ifr {
            IfrSchedule::Constant(f) if !(*f > 0.0 && *f <= 1.0) => {
                return Err(Error::Config(format!("IFR must lie in (0, 1], got {f}")));
            }
            IfrSchedule::Daily(v) if v.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) => {
                return Err(Error::Config("daily IFR values must lie in (0, 1]".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_r_prior(log_sd: f64) -> Result<()> {
    if !(log_sd > 0.0) {
        return Err(Error::Config(format!(
            "phase-value prior needs a positive log-sd, got {log_sd}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitConfig {
    pub model: ModelSpec,
    pub n_chains: usize,
    pub n_iterations: usize,
    pub warmup_fraction: f64,
    /// Post-warmup draws kept per chain (evenly thinned).
    pub max_draws_per_chain: usize,
    /// Observations are scored from the first day on which the cumulative
    /// count reaches this threshold.
    pub start_threshold: u64,
    /// Deaths regime: start the latent epidemic this many days before the
    /// first scored day. `None` starts it on day 1 of the series.
    pub seeding_lead_days: Option<usize>,
    pub rng_seed: u64,
    /// Acceptance rate targeted by block (multivariate) updates.
    pub target_acceptance: f64,
    /// Acceptance rate targeted by single-parameter updates.
    pub scalar_target_acceptance: f64,
    /// Prior draws screened when choosing each chain's starting point.
    pub init_candidates: usize,
    /// Ignore the data entirely and sample the prior.
    pub prior_only: bool,
    /// Share of the warmup over which the likelihood is annealed in from
    /// `anneal_start` to full weight; 0 disables annealing. Defaults to
    /// [`default_anneal_fraction`] for the phase model.
    pub anneal_fraction: f64,
    /// Inverse temperature on the log-likelihood at the first iteration.
    pub anneal_start: f64,
}

/// Annealing helps a fixed number of phases find its changepoints. With a
/// random number of phases the tempered start favours a single phase, and
/// the dispersion then settles where no split pays for itself, so those
/// models start at full weight.
pub fn default_anneal_fraction(phases: &PhaseModel) -> f64 {
    match phases {
        PhaseModel::FixedK(_) => 0.5,
        PhaseModel::DirichletProcess(_) | PhaseModel::PoissonProcess(_) => 0.0,
    }
}

impl FitConfig {
    pub fn new(model: ModelSpec) -> Self {
        let anneal_fraction = default_anneal_fraction(&model.phases);
        Self {
            model,
            n_chains: 8,
            n_iterations: 100_000,
            warmup_fraction: 0.5,
            max_draws_per_chain: 1000,
            start_threshold: 10,
            seeding_lead_days: None,
            rng_seed: 1,
            target_acceptance: 0.234,
            scalar_target_acceptance: 0.44,
            init_candidates: 400,
            prior_only: false,
            anneal_fraction,
            anneal_start: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_chains < 2 {
            return Err(Error::Config(format!(
                "need at least 2 chains, got {}",
                self.n_chains
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "warmup fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.n_iterations < 2 || self.post_warmup() == 0 {
            return Err(Error::Config(
                "too few iterations for warmup plus sampling".into(),
            ));
        }
        if self.max_draws_per_chain == 0 {
            return Err(Error::Config(
                "must keep at least one draw per chain".into(),
            ));
        }
        for (name, a) in [
            ("target", self.target_acceptance),
            ("scalar target", self.scalar_target_acceptance),
        ] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!(
                    "{name} acceptance must lie in (0, 1), got {a}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(Error::Config(format!(
                "anneal fraction must lie in [0, 1], got {}",
                self.anneal_fraction
            )));
        }
        if !(self.anneal_start > 0.0 && self.anneal_start <= 1.0) {
            return Err(Error::Config(format!(
                "anneal start must lie in (0, 1], got {}",
                self.anneal_start
            )));
        }
        Ok(())
    }

    /// First iteration at which the likelihood carries full weight.
    pub fn anneal_end(&self) -> usize {
        libm::floor(self.warmup() as f64 * self.anneal_fraction) as usize
    }

    /// Geometric schedule from `anneal_start` up to 1 over the annealing
    /// window; 1 afterwards.
    pub fn inverse_temperature(&self, iteration: usize) -> f64 {
        let end = self.anneal_end();
        if iteration >= end {
            return 1.0;
        }
        libm::pow(self.anneal_start, 1.0 - iteration as f64 / end as f64)
    }

    pub fn warmup(&self) -> usize {
        libm::floor(self.n_iterations as f64 * self.warmup_fraction) as usize
    }

    pub fn post_warmup(&self) -> usize {
        self.n_iterations - self.warmup()
    }

    pub fn thin(&self) -> usize {
        self.post_warmup().div_ceil(self.max_draws_per_chain).max(1)
    }
}

/// A daily count series. Day 1 is the first element.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeSeries {
    pub counts: Vec<u64>,
    pub regime: ObservationRegime,
}

/// First day (1-based) on which the cumulative count reaches `threshold`.
pub fn start_day(counts: &[u64], threshold: u64) -> Result<usize> {
    let mut cum = 0u64;
    for (i, c) in counts.iter().enumerate() {
        cum = cum.saturating_add(*c);
        if cum >= threshold.max(1) {
            return Ok(i + 1);
        }
    }
    Err(Error::Uninformative(format!(
        "cumulative count never reaches {threshold} (total {cum}); nothing to fit"
    )))
}

// ---------------------------------------------------------------------------
// Draws
// ---------------------------------------------------------------------------

/// Post-warmup draws of one chain; per-draw vectors are indexed by draw.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainDraws {
    pub chain: usize,
    /// Values of the monitored scalars, in `PosteriorDraws::scalar_names` order.
    pub scalars: Vec<Vec<f64>>,
    /// Daily `R_t` over the model timeline.
    pub rt: Vec<Vec<f64>>,
    /// Daily `Re(t) = (S_t / n) R_t`.
    pub re: Vec<Vec<f64>>,
    /// Latent (deaths regime) or expected (infections regime) daily infections.
    pub infections: Vec<Vec<f64>>,
    /// Expected daily deaths (deaths regime; empty otherwise).
    pub deaths_fit: Vec<Vec<f64>>,
    /// Log-likelihood of each scored observation.
    pub pointwise: Vec<Vec<f64>>,
    pub total_ll: Vec<f64>,
    /// Number of distinct phases in use.
    pub occupied: Vec<usize>,
    /// Changepoint locations (fixed-K models; empty otherwise).
    pub changepoints: Vec<Vec<f64>>,
    /// Post-warmup acceptance rate of each Metropolis block.
    pub acceptance: Vec<(String, f64)>,
    /// Mean acceptance over the Metropolis blocks.
    pub overall_acceptance: f64,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.total_ll.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_ll.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorDraws {
    pub model: String,
    pub regime: ObservationRegime,
    pub population_n: f64,
    /// Day of the input series (1-based) that is day 1 of the model timeline.
    pub timeline_start: usize,
    pub horizon: usize,
    /// Input-series days (1-based) of the scored observations.
    pub scored_days: Vec<usize>,
    /// Observed counts over the model timeline.
    pub observed: Vec<u64>,
    pub scalar_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.len()).sum()
    }

    pub fn n_observations(&self) -> usize {
        self.scored_days.len()
    }

    /// Pointwise log-likelihood matrix, draws (chain-major) by observations.
    pub fn pointwise_matrix(&self) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .flat_map(|c| c.pointwise.iter().cloned())
            .collect()
    }

    /// Per-chain columns of one monitored scalar.
    pub fn scalar_chains(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let j = self.scalar_names.iter().position(|n| n == name)?;
        Some(
            self.chains
                .iter()
                .map(|c| c.scalars.iter().map(|row| row[j]).collect())
                .collect(),
        )
    }

    /// Pooled draws of one daily quantity selected by `pick` on `day` (timeline, 0-based).
    pub fn pooled_daily<F>(&self, day: usize, pick: F) -> Vec<f64>
    where
        F: Fn(&ChainDraws) -> &Vec<Vec<f64>>,
    {
        self.chains
            .iter()
            .flat_map(|c| pick(c).iter().map(move |row| row[day]))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Running a fit
// ---------------------------------------------------------------------------

/// Data bound to a validated configuration, shared read-only by all chains.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub(crate) lik: Likelihood,
    pub(crate) config: FitConfig,
    pub(crate) timeline_start: usize,
    pub(crate) scored_days: Vec<usize>,
}

impl FitProblem {
    /// Validates the configuration, applies the start rule and binds the
    /// series to the model timeline.
    pub fn prepare(data: &TimeSeries, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        if data.regime != config.model.regime {
            return Err(Error::Config(format!(
                "series holds {} but the model is fitted to {}",
                data.regime.as_str(),
                config.model.regime.as_str()
            )));
        }
        let first = start_day(&data.counts, config.start_threshold)?;
        if data.counts[first - 1..].iter().all(|c| *c == 0) {
            return Err(Error::Uninformative(
                "all observations after the start rule are zero".into(),
            ));
        }
        let model = &config.model;
        let (lik, timeline_start) = match model.regime {
            ObservationRegime::Infections => {
                let observed = data.counts[first - 1..].to_vec();
                let lik = Likelihood::infections(
                    observed,
                    model.population_n,
                    model.gi.clone(),
                    model.seed_days,
                )?;
                (lik, first)
            }
            ObservationRegime::Deaths => {
                let start = match config.seeding_lead_days {
                    Some(lead) => first.saturating_sub(lead).max(1),
                    None => 1,
                };
                let observed = data.counts[start - 1..].to_vec();
                let ifr = match &model.ifr {
                    IfrSchedule::Constant(f) => vec![*f; observed.len()],
                    IfrSchedule::Daily(v) => {
                        if v.len() < data.counts.len() {
                            return Err(Error::Shape(format!(
                                "IFR schedule covers {} days, series has {}",
                                v.len(),
                                data.counts.len()
                            )));
                        }
                        v[start - 1..data.counts.len()].to_vec()
                    }
                };
                let lik = Likelihood::deaths(
                    observed,
                    first - start,
                    model.population_n,
                    model.gi.clone(),
                    model.pi.clone(),
                    ifr,
                    model.seed_days,
                )?;
                (lik, start)
            }
        };
        if let PhaseModel::FixedK(p) = &model.phases {
            if p.k_phases > 1 && lik.horizon() as f64 <= p.t1_lower + 1.0 {
                return Err(Error::Config(format!(
                    "timeline of {} days too short for changepoints",
                    lik.horizon()
                )));
            }
        }
        let lik = if config.prior_only {
            lik.prior_only()
        } else {
            lik
        };
        let scored_days = (lik.first_scored()..lik.horizon())
            .map(|u| timeline_start + u)
            .collect();
        Ok(Self {
            lik,
            config: config.clone(),
            timeline_start,
            scored_days,
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.lik
    }

    /// Names of the monitored scalars for this model.
    pub fn scalar_names(&self) -> Vec<String> {
        sampler::scalar_names(self)
    }

    /// Runs chain `chain` (its random stream is `chain` under `rng_seed`).
    pub fn run_chain(&self, chain: usize) -> Result<ChainDraws> {
        sampler::run_chain(self, chain)
    }

    /// Merges finished chains (in chain order) into posterior draws.
    pub fn assemble(&self, mut chains: Vec<ChainDraws>) -> Result<PosteriorDraws> {
        chains.sort_by_key(|c| c.chain);
        if chains.len() >= 2 && chains.iter().all(|c| c.overall_acceptance < 0.01) {
            let snapshot: Vec<String> = chains
                .iter()
                .map(|c| {
                    let last = c
                        .scalars
                        .last()
                        .map(|r| format!("{r:?}"))
                        .unwrap_or_default();
                    format!(
                        "chain {}: acceptance {:.4}, last draw {last}",
                        c.chain, c.overall_acceptance
                    )
                })
                .collect();
            return Err(Error::SamplerFailure(format!(
                "every chain accepted < 1% of proposals; scalars {:?}; {}",
                self.scalar_names(),
                snapshot.join("; ")
            )));
        }
        Ok(PosteriorDraws {
            model: self.config.model.phases.label(),
            regime: self.lik.regime(),
            population_n: self.lik.population_n(),
            timeline_start: self.timeline_start,
            horizon: self.lik.horizon(),
            scored_days: self.scored_days.clone(),
            observed: self.lik.counts().to_vec(),
            scalar_names: self.scalar_names(),
            chains,
        })
    }
}

/// Prepares the fit, runs every chain in turn and merges the draws.
pub fn run_mcmc(data: &TimeSeries, config: &FitConfig) -> Result<PosteriorDraws> {
    let problem = FitProblem::prepare(data, config)?;
    let chains = (0..config.n_chains)
        .map(|c| problem.run_chain(c))
        .collect::<Result<Vec<_>>>()?;
    problem.assemble(chains)
}
