//! Ranking of fitted runs by WAIC and PSIS-LOO from their stored
//! pointwise log-likelihoods.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use epiphase_core::selection::{rank_models, ModelCriteria, RankingReport};

use crate::error::{AppError, Result};
use crate::results::{read_pointwise, write_atomic, StoredPointwise};

pub const RANKING_FILE: &str = "ranking.csv";

/// A fitted run named by its result directory.
#[derive(Debug, Clone)]
pub struct RunCriteria {
    pub dir: PathBuf,
    pub pointwise: StoredPointwise,
    pub criteria: ModelCriteria,
}

/// Loads every run and checks that they are comparable: same observation
/// regime and the same scored observations.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<RunCriteria>> {
    if dirs.is_empty() {
        return Err(AppError::Usage(
            "select needs at least one result directory".into(),
        ));
    }
    let mut runs: Vec<RunCriteria> = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let pointwise = read_pointwise(dir).map_err(|e| match e {
            AppError::Read { .. } => AppError::Usage(format!(
                "run {} has no pointwise log-likelihood matrix ({e})",
                dir.display()
            )),
            other => other,
        })?;
        if let Some(first) = runs.first() {
            if first.pointwise.regime != pointwise.regime {
                return Err(AppError::Usage(format!(
                    "cannot compare {} ({}) with {} ({}): likelihoods of different observation regimes are incommensurable",
                    first.dir.display(),
                    first.pointwise.regime.as_str(),
                    dir.display(),
                    pointwise.regime.as_str()
                )));
            }
            if first.pointwise.matrix.observation_days() != pointwise.matrix.observation_days() {
                return Err(AppError::Usage(format!(
                    "cannot compare {} with {}: they score different observation days",
                    first.dir.display(),
                    dir.display()
                )));
            }
        }
        let name = run_name(dir, &pointwise.model);
        let criteria = ModelCriteria::evaluate(name, &pointwise.matrix)
            .map_err(|e| AppError::Runtime(format!("run {}: {e}", dir.display())))?;
        runs.push(RunCriteria {
            dir: dir.clone(),
            pointwise,
            criteria,
        });
    }
    Ok(runs)
}

fn run_name(dir: &Path, model: &str) -> String {
    let base = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if base.is_empty() || base == model {
        model.to_string()
    } else {
        format!("{base}[{model}]")
    }
}

pub fn rank(runs: &[RunCriteria]) -> Result<RankingReport> {
    let criteria: Vec<ModelCriteria> = runs.iter().map(|r| r.criteria.clone()).collect();
    Ok(rank_models(&criteria)?)
}

/// Fixed-width table of the ranking.
pub fn format_table(report: &RankingReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<4} {:<28} {:>11} {:>8} {:>9} {:>11} {:>8} {:>9} {:>8} {:>8}",
        "rank", "model", "waic", "se", "d_waic", "loo", "se", "d_loo", "p_loo", "k>0.7"
    );
    for (i, r) in report.ranking.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<4} {:<28} {:>11.2} {:>8.2} {:>9.2} {:>11.2} {:>8.2} {:>9.2} {:>8.2} {:>8}{}",
            i + 1,
            r.model,
            r.waic,
            r.waic_se,
            r.waic_vs_best.delta,
            r.loo,
            r.loo_se,
            r.loo_vs_best.delta,
            r.p_loo,
            r.n_pareto_flagged,
            if r.indistinguishable {
                "  (within 2 SE of best)"
            } else {
                ""
            }
        );
    }
    let _ = writeln!(s, "winner by WAIC: {}", report.waic_winner);
    let _ = writeln!(s, "winner by LOO:  {}", report.loo_winner);
    if !report.criteria_agree() {
        let _ = writeln!(s, "note: WAIC and LOO disagree on the winner");
    }
    s
}

/// Writes the ranking as CSV.
pub fn write_ranking(path: &Path, report: &RankingReport) -> Result<()> {
    write_atomic(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| AppError::Runtime(format!("{}: {e}", path.display()));
        cw.write_record([
            "rank",
            "model",
            "waic",
            "waic_se",
            "p_waic",
            "delta_waic",
            "delta_waic_se",
            "loo",
            "loo_se",
            "p_loo",
            "delta_loo",
            "delta_loo_se",
            "pareto_k_flagged",
            "indistinguishable",
            "waic_winner",
            "loo_winner",
        ])
        .map_err(fail)?;
        for (i, r) in report.ranking.iter().enumerate() {
            cw.write_record([
                (i + 1).to_string(),
                r.model.clone(),
                r.waic.to_string(),
                r.waic_se.to_string(),
                r.p_waic.to_string(),
                r.waic_vs_best.delta.to_string(),
                r.waic_vs_best.se.to_string(),
                r.loo.to_string(),
                r.loo_se.to_string(),
                r.p_loo.to_string(),
                r.loo_vs_best.delta.to_string(),
                r.loo_vs_best.se.to_string(),
                r.n_pareto_flagged.to_string(),
                r.indistinguishable.to_string(),
                (r.model == report.waic_winner).to_string(),
                (r.model == report.loo_winner).to_string(),
            ])
            .map_err(fail)?;
        }
        cw.flush().map_err(|source| AppError::Write {
            path: path.into(),
            source,
        })
    })
}
