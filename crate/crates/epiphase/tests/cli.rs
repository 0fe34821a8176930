//! The `epiphase` binary end to end: exit codes, determinism and the
//! files each command leaves behind.

mod common;

use std::fs;
use std::path::Path;

use common::{epiphase, path_str, stderr, stdout};
use epiphase::config::bundled;
use epiphase::error::{EXIT_OK, EXIT_RUNTIME, EXIT_USER};
use epiphase::results::read_summary;
use epiphase_core::summary::DailyQuantity;

fn fit_run(dir: &Path, name: &str, regime: &str, model: &str, extra: &str) -> std::process::Output {
    let data = common::write_series(dir, "series.csv", &common::constant_series(1.2, 60, 11));
    let study = common::write_study(
        dir,
        &format!("{name}.toml"),
        &common::study_toml(regime, 2, 1_500, extra),
    );
    let out = dir.join(name);
    epiphase(&[
        "fit",
        "--data",
        path_str(&data),
        "--config",
        path_str(&study),
        "--model",
        model,
        "--out",
        path_str(&out),
        "--jobs",
        "2",
    ])
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = common::write_study(dir.path(), "scenario.toml", bundled::FIVE_PHASE_SCENARIO);
    let run = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        let mut args = vec![
            "simulate",
            "--config",
            path_str(&scenario),
            "--out",
            path_str(&out),
        ];
        if !seed.is_empty() {
            args.extend(["--seed", seed]);
        }
        let o = epiphase(&args);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
        fs::read(out.join("simulation.csv")).unwrap()
    };
    let a = run("a", "");
    let b = run("b", "");
    assert_eq!(a, b);
    assert_ne!(a, run("c", "5"));
    let rows = read_csv(&dir.path().join("a/simulation.csv"));
    assert_eq!(rows.len(), 250);
    assert_eq!(&rows[0][1], "100");
    assert!(dir.path().join("a/manifest.json").exists());
}

#[test]
fn missing_inputs_exit_with_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = epiphase(&[
        "simulate",
        "--config",
        "/nonexistent/scenario.toml",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    assert!(
        stderr(&o).contains("/nonexistent/scenario.toml"),
        "{}",
        stderr(&o)
    );

    let bad = common::write_study(
        dir.path(),
        "bad.toml",
        "population = 1\nhorizon = \"long\"\n",
    );
    let o = epiphase(&[
        "simulate",
        "--config",
        path_str(&bad),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_USER));

    let o = epiphase(&["fit", "--data", "x.csv"]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    let o = epiphase(&[
        "fit", "--data", "x.csv", "--config", "y.toml", "--model", "fixedk:0", "--out", "z",
    ]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    let o = epiphase(&["--help"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[test]
fn single_phase_fit_reports_one_phase() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit_run(dir.path(), "k1", "infections", "fixedk:1", "");
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("occupied phases 1: 1.000"),
        "{}",
        stdout(&o)
    );
    let stored = read_summary(&dir.path().join("k1")).unwrap();
    assert_eq!(stored.summary.phase_mode(), Some(1));
    assert_eq!(
        stored.summary.phase_counts,
        vec![(1, stored.summary.n_draws)]
    );
    let rt = stored.summary.daily(DailyQuantity::Rt).unwrap();
    assert!(rt
        .bands
        .iter()
        .all(|b| b.lower_95 < 1.2 && 1.2 < b.upper_95));
    for f in [
        "summary.csv",
        "scalars.csv",
        "phases.csv",
        "pointwise.csv",
        "draws.json",
        "study.toml",
        "manifest.json",
    ] {
        assert!(dir.path().join("k1").join(f).exists(), "{f}");
    }
}

#[test]
fn failed_sampler_exits_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit_run(
        dir.path(),
        "pp",
        "infections",
        "pp",
        "[model.pp]\nfixed_lambda = 1000.0\nk_max = 8\n",
    );
    assert_eq!(
        o.status.code(),
        Some(EXIT_RUNTIME),
        "{}{}",
        stdout(&o),
        stderr(&o)
    );
    let report = fs::read_to_string(dir.path().join("pp/failure.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["model"], "pp");
    assert!(stderr(&o).contains("failure.json"), "{}", stderr(&o));
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[test]
fn select_ranks_runs_and_refuses_mixed_regimes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, model) in [("k1", "fixedk:1"), ("k2", "fixedk:2")] {
        let o = fit_run(dir.path(), name, "infections", model, "");
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    }
    let k1 = dir.path().join("k1");
    let k2 = dir.path().join("k2");

    let o = epiphase(&["select", path_str(&k1)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("winner by WAIC: k1[fixedk:1]"),
        "{}",
        stdout(&o)
    );

    let ranking = dir.path().join("ranking");
    let o = epiphase(&[
        "select",
        path_str(&k1),
        path_str(&k2),
        "--out",
        path_str(&ranking),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let rows = read_csv(&ranking.join("ranking.csv"));
    assert_eq!(rows.len(), 2);
    let waic: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(waic[0] <= waic[1]);

    let o = fit_run(dir.path(), "deaths", "deaths", "fixedk:1", "");
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let o = epiphase(&[
        "select",
        path_str(&k1),
        path_str(&dir.path().join("deaths")),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    assert!(stderr(&o).contains("regime"), "{}", stderr(&o));

    fs::remove_file(k2.join("pointwise.csv")).unwrap();
    let o = epiphase(&["select", path_str(&k1), path_str(&k2)]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    assert!(stderr(&o).contains("pointwise"), "{}", stderr(&o));
}

// ---------------------------------------------------------------------------
// report and replay
// ---------------------------------------------------------------------------

#[test]
fn report_bands_are_ordered_and_attack_rate_is_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit_run(dir.path(), "dp", "infections", "dp", "");
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let run = dir.path().join("dp");
    let o = epiphase(&["report", path_str(&run)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    assert!(stdout(&o).contains("attack rate"), "{}", stdout(&o));

    let report = run.join("report");
    for name in ["rt.csv", "re.csv", "infections.csv", "attack_rate.csv"] {
        let rows = read_csv(&report.join(name));
        assert_eq!(rows.len(), 60, "{name}");
        for r in &rows {
            let v: Vec<f64> = (3..8).map(|i| r[i].parse().unwrap()).collect();
            let (median, l50, u50, l95, u95) = (v[0], v[1], v[2], v[3], v[4]);
            assert!(
                l95 <= l50 && l50 <= median && median <= u50 && u50 <= u95,
                "{name}: {v:?}"
            );
        }
    }
    assert!(!report.join("deaths_fit.csv").exists());

    let stored = read_summary(&run).unwrap();
    let cumulative = stored
        .summary
        .daily(DailyQuantity::CumulativeInfections)
        .unwrap();
    let attack = read_csv(&report.join("attack_rate.csv"));
    for (row, band) in attack.iter().zip(&cumulative.bands) {
        let median: f64 = row[3].parse().unwrap();
        let expected = band.median / common::POPULATION as f64;
        assert!(
            (median - expected).abs() <= 1e-14 * expected,
            "{median} vs {expected}"
        );
    }
}

#[test]
fn replay_reproduces_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit_run(dir.path(), "k2", "infections", "fixedk:2", "");
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let again = dir.path().join("again");
    let o = epiphase(&[
        "replay",
        path_str(&dir.path().join("k2")),
        "--out",
        path_str(&again),
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}{}",
        stdout(&o),
        stderr(&o)
    );
    assert!(stdout(&o).contains("bit-exactly"), "{}", stdout(&o));
    assert_eq!(
        fs::read(dir.path().join("k2/pointwise.csv")).unwrap(),
        fs::read(again.join("pointwise.csv")).unwrap()
    );

    // a changed data file blocks the replay
    fs::write(
        dir.path().join("series.csv"),
        "date_index,infections\n1,1\n",
    )
    .unwrap();
    let o = epiphase(&[
        "replay",
        path_str(&dir.path().join("k2/manifest.json")),
        "--out",
        path_str(&dir.path().join("third")),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_USER));
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));
}
