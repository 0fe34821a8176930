//! End-to-end fitting: series and study configuration in, posterior draws,
//! summaries and diagnostics out, with chains run in parallel.

use std::path::{Path, PathBuf};

use epiphase_core::inference::{
    diagnostics, ChainDraws, DiagnosticsReport, FitConfig, FitProblem, PosteriorDraws, TimeSeries,
};
use epiphase_core::summary::summarize;
use rayon::prelude::*;

use crate::config::{ModelChoice, StudyConfig};
use crate::error::{AppError, Result};
use crate::results::{self, StoredPointwise, StoredSummary};
use crate::series::RegionSeries;

/// Runs every chain of `problem` on a pool of `jobs` threads and merges
/// them. Each chain owns its random stream, so the draws do not depend on
/// `jobs`.
pub fn run_chains(problem: &FitProblem, jobs: usize) -> Result<PosteriorDraws> {
    let n = problem.config().n_chains;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.clamp(1, n.max(1)))
        .build()
        .map_err(|e| AppError::Runtime(format!("thread pool: {e}")))?;
    let chains: Vec<ChainDraws> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|c| problem.run_chain(c))
            .collect::<epiphase_core::Result<Vec<_>>>()
    })?;
    Ok(problem.assemble(chains)?)
}

/// Series cut at the configured horizon end.
pub fn study_window(series: &RegionSeries, study: &StudyConfig) -> Result<RegionSeries> {
    match study.horizon_end()? {
        Some(end) => series.truncate_at(&end),
        None => Ok(series.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub config: FitConfig,
    pub draws: PosteriorDraws,
    pub summary: StoredSummary,
    /// Absent when the chains are too short for diagnostics.
    pub diagnostics: Option<DiagnosticsReport>,
    pub warnings: Vec<String>,
}

impl FitOutcome {
    /// Names of scalars whose split-`R-hat` exceeds the flag threshold.
    pub fn flagged_scalars(&self) -> Vec<String> {
        self.diagnostics.as_ref().map_or_else(Vec::new, |d| {
            d.flagged().iter().map(|s| s.name.clone()).collect()
        })
    }
}

/// Resolved sampler configuration for `model` on `series`.
pub fn resolve(
    series: &RegionSeries,
    study: &StudyConfig,
    model: ModelChoice,
    scale: Option<(usize, usize)>,
) -> Result<FitConfig> {
    let spec = study.model_spec(model, series)?;
    study.fit_config(spec, scale)
}

/// Fits `model` to the configured window of `series`.
pub fn fit(
    series: &RegionSeries,
    study: &StudyConfig,
    config: &FitConfig,
    jobs: usize,
) -> Result<FitOutcome> {
    let regime = config.model.regime;
    let counts = series
        .counts(regime)
        .ok_or_else(|| AppError::Config(format!("series has no {} column", regime.as_str())))?;
    let data = TimeSeries {
        counts: counts.to_vec(),
        regime,
    };
    let problem = FitProblem::prepare(&data, config)?;
    let draws = run_chains(&problem, jobs)?;
    let mut warnings = Vec::new();
    let diagnostics = match diagnostics(&draws) {
        Ok(d) => Some(d),
        Err(e) => {
            warnings.push(format!("diagnostics skipped: {e}"));
            None
        }
    };
    let summary = StoredSummary {
        region: study.region.clone(),
        axis: series.axis,
        summary: summarize(&draws)?,
    };
    let mut outcome = FitOutcome {
        config: config.clone(),
        draws,
        summary,
        diagnostics,
        warnings,
    };
    let flagged = outcome.flagged_scalars();
    if !flagged.is_empty() {
        outcome.warnings.push(format!(
            "R-hat above {} for {}: chains have not mixed",
            epiphase_core::inference::RHAT_FLAG,
            flagged.join(", ")
        ));
    }
    Ok(outcome)
}

/// Writes summaries, pointwise log-likelihoods, a draw subsample and
/// diagnostics of `outcome` into `dir`.
pub fn write_fit(
    dir: &Path,
    outcome: &FitOutcome,
    stored_draws_per_chain: usize,
) -> Result<Vec<PathBuf>> {
    let mut written = results::write_summary(dir, &outcome.summary)?;
    written.push(results::write_pointwise(
        dir,
        &StoredPointwise::from_draws(&outcome.draws)?,
    )?);
    written.push(results::write_draws(
        dir,
        &results::subsample_draws(&outcome.draws, stored_draws_per_chain),
    )?);
    if let Some(d) = &outcome.diagnostics {
        written.push(results::write_diagnostics(dir, d)?);
    }
    Ok(written)
}
