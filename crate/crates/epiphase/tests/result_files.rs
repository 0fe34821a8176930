//! Result files: exact round trips, truncation and schema checks.

mod common;

use std::fs;

use epiphase::config::{ModelChoice, StudyConfig};
use epiphase::error::AppError;
use epiphase::results::{
    read_draws, read_pointwise, read_summary, subsample_draws, write_draws, write_pointwise,
    write_summary, StoredPointwise, POINTWISE_FILE, SUMMARY_FILE,
};
use epiphase::workflow::{fit, resolve, write_fit, FitOutcome};
use epiphase_core::summary::DailyQuantity;

fn small_fit(regime: &str, model: ModelChoice) -> FitOutcome {
    let series = common::constant_series(1.2, 60, 3);
    let study = StudyConfig::from_toml(&common::study_toml(regime, 2, 1_500, "")).unwrap();
    let config = resolve(&series, &study, model, None).unwrap();
    fit(&series, &study, &config, 2).unwrap()
}

#[test]
fn summary_round_trips_exactly() {
    let outcome = small_fit("infections", ModelChoice::FixedK(2));
    let dir = tempfile::tempdir().unwrap();
    write_summary(dir.path(), &outcome.summary).unwrap();
    let back = read_summary(dir.path()).unwrap();
    assert_eq!(back, outcome.summary);
    let s = &back.summary;
    for q in DailyQuantity::ALL
        .into_iter()
        .filter(|q| q.available(s.regime))
    {
        assert_eq!(s.daily(q).unwrap().bands.len(), s.horizon, "{}", q.as_str());
    }
}

#[test]
fn summary_file_has_one_row_per_day_and_quantity() {
    let outcome = small_fit("deaths", ModelChoice::FixedK(1));
    let dir = tempfile::tempdir().unwrap();
    write_summary(dir.path(), &outcome.summary).unwrap();
    let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    let s = &outcome.summary.summary;
    let quantities: Vec<DailyQuantity> = DailyQuantity::ALL
        .into_iter()
        .filter(|q| q.available(s.regime))
        .collect();
    assert!(quantities.contains(&DailyQuantity::DeathsFit));
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(
        header.starts_with("# format=epiphase-summary version=1"),
        "{header}"
    );
    assert!(
        header.contains(&format!("rows={}", s.horizon * quantities.len())),
        "{header}"
    );
    lines.next();
    for q in quantities {
        let rows = lines
            .clone()
            .filter(|l| l.starts_with(&format!("{},", q.as_str())))
            .count();
        assert_eq!(rows, s.horizon, "{}", q.as_str());
    }
}

#[test]
fn pointwise_and_draws_round_trip_exactly() {
    let outcome = small_fit("infections", ModelChoice::DirichletProcess);
    let dir = tempfile::tempdir().unwrap();
    let stored = StoredPointwise::from_draws(&outcome.draws).unwrap();
    write_pointwise(dir.path(), &stored).unwrap();
    assert_eq!(read_pointwise(dir.path()).unwrap(), stored);
    let kept = subsample_draws(&outcome.draws, 25);
    assert!(kept.chains.iter().all(|c| c.len() == 25));
    write_draws(dir.path(), &kept).unwrap();
    assert_eq!(read_draws(dir.path()).unwrap(), kept);
}

#[test]
fn pointwise_rows_sum_to_total_log_likelihood() {
    let outcome = small_fit("infections", ModelChoice::FixedK(2));
    for c in &outcome.draws.chains {
        for (row, total) in c.pointwise.iter().zip(&c.total_ll) {
            let sum: f64 = row.iter().sum();
            assert!(
                (sum - total).abs() <= 1e-9 * total.abs().max(1.0),
                "{sum} vs {total}"
            );
        }
    }
}

#[test]
fn truncated_files_are_rejected() {
    let outcome = small_fit("infections", ModelChoice::FixedK(1));
    let dir = tempfile::tempdir().unwrap();
    write_fit(dir.path(), &outcome, 10).unwrap();
    for name in [SUMMARY_FILE, POINTWISE_FILE] {
        let path = dir.path().join(name);
        let full = fs::read_to_string(&path).unwrap();
        // cut in the middle of a row
        fs::write(&path, &full[..full.len() * 2 / 3]).unwrap();
        let err = if name == SUMMARY_FILE {
            read_summary(dir.path()).unwrap_err()
        } else {
            read_pointwise(dir.path()).unwrap_err()
        };
        assert!(matches!(err, AppError::Parse { .. }), "{err}");
        assert!(err.to_string().contains("truncated"), "{err}");
        // whole rows missing
        let cut = full
            .lines()
            .take(full.lines().count() - 3)
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        fs::write(&path, cut).unwrap();
        let err = if name == SUMMARY_FILE {
            read_summary(dir.path()).unwrap_err()
        } else {
            read_pointwise(dir.path()).unwrap_err()
        };
        assert!(err.to_string().contains("truncated"), "{err}");
        fs::write(&path, full).unwrap();
    }
    read_summary(dir.path()).unwrap();
    read_pointwise(dir.path()).unwrap();
}

#[test]
fn version_mismatch_is_rejected() {
    let outcome = small_fit("infections", ModelChoice::FixedK(1));
    let dir = tempfile::tempdir().unwrap();
    write_fit(dir.path(), &outcome, 10).unwrap();
    let path = dir.path().join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replacen("version=1", "version=2", 1);
    fs::write(&path, text).unwrap();
    let err = read_summary(dir.path()).unwrap_err();
    assert!(
        matches!(
            err,
            AppError::Schema {
                found_version: 2,
                expected_version: 1,
                ..
            }
        ),
        "{err}"
    );

    let path = dir.path().join(epiphase::results::DRAWS_FILE);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replacen("\"version\": 1", "\"version\": 9", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(
        read_draws(dir.path()),
        Err(AppError::Schema {
            found_version: 9,
            ..
        })
    ));

    let path = dir.path().join(POINTWISE_FILE);
    let text = fs::read_to_string(&path).unwrap().replacen(
        "format=epiphase-pointwise",
        "format=epiphase-summary",
        1,
    );
    fs::write(&path, text).unwrap();
    assert!(matches!(
        read_pointwise(dir.path()),
        Err(AppError::Schema { .. })
    ));
}
