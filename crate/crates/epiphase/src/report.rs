//! Plot-ready tables from a fit's summaries: one tidy CSV per daily
//! quantity and the attack-rate table.

use std::path::{Path, PathBuf};

use epiphase_core::summary::{Band, DailyQuantity};

use crate::error::{AppError, Result};
use crate::results::{write_atomic, StoredSummary};

pub const ATTACK_RATE_FILE: &str = "attack_rate.csv";

const COLUMNS: [&str; 8] = [
    "label",
    "series_day",
    "day",
    "median",
    "lower_50",
    "upper_50",
    "lower_95",
    "upper_95",
];

fn write_bands(path: &Path, stored: &StoredSummary, bands: &[Band]) -> Result<()> {
    write_atomic(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| AppError::Runtime(format!("{}: {e}", path.display()));
        cw.write_record(COLUMNS).map_err(fail)?;
        for (day, b) in bands.iter().enumerate() {
            cw.write_record([
                stored.label(day),
                (stored.summary.timeline_start + day).to_string(),
                (day + 1).to_string(),
                b.median.to_string(),
                b.lower_50.to_string(),
                b.upper_50.to_string(),
                b.lower_95.to_string(),
                b.upper_95.to_string(),
            ])
            .map_err(fail)?;
        }
        cw.flush().map_err(|source| AppError::Write {
            path: path.into(),
            source,
        })
    })
}

/// Writes `<quantity>.csv` for every summarised daily quantity and
/// `attack_rate.csv` into `out_dir`.
pub fn write_report(out_dir: &Path, stored: &StoredSummary) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for q in [
        DailyQuantity::Rt,
        DailyQuantity::Re,
        DailyQuantity::Infections,
        DailyQuantity::DeathsFit,
    ] {
        if let Some(d) = stored.summary.daily(q) {
            let path = out_dir.join(format!("{}.csv", q.as_str()));
            write_bands(&path, stored, &d.bands)?;
            written.push(path);
        }
    }
    let attack = stored
        .summary
        .attack_rate()
        .ok_or_else(|| AppError::Runtime("summary lacks cumulative infections".into()))?;
    let path = out_dir.join(ATTACK_RATE_FILE);
    write_bands(&path, stored, &attack)?;
    written.push(path);
    Ok(written)
}
