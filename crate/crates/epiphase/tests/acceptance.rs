//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 4 to 7 check the building blocks against independent oracles
//! and fail the run when they do not hold. Criteria 1 to 3 fit the
//! simulated five-phase epidemic at desk scale; they report their outcome
//! without failing the run and take tens of minutes. Set
//! `EPIPHASE_ACCEPTANCE_SKIP_FITS=1` to skip them.
//!
//! Criterion 8 needs data that is not shipped: `EPIPHASE_UK_DEATHS` names a
//! daily deaths CSV for the United Kingdom and `EPIPHASE_UK_CONFIG` may name
//! a study file carrying the IFR path (the bundled national template is used
//! otherwise). It is skipped when the data path is unset.

use std::path::PathBuf;
use std::process::ExitCode;

use epiphase::config::{bundled, ModelChoice, ScenarioFile, StudyConfig, DESK_SCALE};
use epiphase::series::{parse_series, simulated_series, ParseOptions, RegionSeries};
use epiphase::workflow::{self, FitOutcome};
use epiphase_core::epi::{
    active_infectives, death_expectation, negbin_log_pmf, renewal_expectation, renewal_path,
    DiscretizedInterval, EpidemicState, PhaseTrajectory,
};
use epiphase_core::inference::ObservationRegime;
use epiphase_core::phases::{dp_stick_weights, pp_stick_weights, sample_pp_durations, PP_K_MAX};
use epiphase_core::selection::{psis_loo, rank_models, waic, ModelCriteria, PointwiseLogLik};
use epiphase_core::simulate::{simulate, ScenarioConfig};
use epiphase_core::special::quantile_sorted;
use epiphase_core::summary::DailyQuantity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

/// Changepoints of the simulated schedule, as the last day of each phase.
const TRUE_CHANGEPOINTS: [usize; 4] = [60, 100, 150, 200];
/// Posterior median changepoints must fall this close to the truth.
const CHANGEPOINT_TOLERANCE: f64 = 10.0;
/// An extra changepoint this early is the known spurious first phase.
const EARLY_PHASE_DAYS: f64 = 20.0;
/// Coverage is scored on the days after this one.
const COVERAGE_AFTER_DAY: usize = 10;
const MIN_COVERAGE: f64 = 0.9;
/// Dispersion of the simulated series fitted from observed infections.
const INFECTIONS_SIM_K: f64 = 1e4;
/// Chains and iterations of the Dirichlet-process fit.
const DP_SCALE: (usize, usize) = (8, 50_000);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    Skipped,
}

struct Report {
    lines: Vec<(usize, Outcome, String)>,
    gating_failures: usize,
}

impl Report {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            gating_failures: 0,
        }
    }

    fn record(&mut self, criterion: usize, outcome: Outcome, gating: bool, detail: String) {
        let tag = match outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skipped => "SKIPPED",
        };
        println!("[{tag}] criterion {criterion}: {detail}");
        if gating && outcome == Outcome::Fail {
            self.gating_failures += 1;
        }
        self.lines.push((criterion, outcome, detail));
    }

    fn check(&mut self, criterion: usize, ok: bool, gating: bool, detail: String) {
        self.record(
            criterion,
            if ok { Outcome::Pass } else { Outcome::Fail },
            gating,
            detail,
        );
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile_sorted(&xs, 0.5)
}

// ---------------------------------------------------------------------------
// Fits of the simulated epidemic
// ---------------------------------------------------------------------------

fn reference_scenario(dispersion_k: Option<f64>) -> ScenarioConfig {
    let mut cfg = ScenarioFile::from_toml(bundled::FIVE_PHASE_SCENARIO)
        .and_then(|f| f.to_config())
        .expect("bundled scenario");
    if let Some(k) = dispersion_k {
        cfg.dispersion_k = k;
    }
    cfg
}

fn simulated(cfg: &ScenarioConfig) -> RegionSeries {
    simulated_series(&simulate(cfg).expect("simulation"), "synthetic")
}

fn fit_model(
    series: &RegionSeries,
    study: &StudyConfig,
    choice: ModelChoice,
    scale: (usize, usize),
) -> FitOutcome {
    let fc = workflow::resolve(series, study, choice, Some(scale)).expect("sampler configuration");
    workflow::fit(series, study, &fc, jobs()).expect("fit")
}

/// Share of days after `after_day` whose 95% `R_t` band covers the truth.
fn coverage(outcome: &FitOutcome, truth: &[f64], after_day: usize) -> f64 {
    let s = &outcome.summary.summary;
    let bands = &s.daily(DailyQuantity::Rt).expect("R_t summary").bands;
    let (mut hit, mut n) = (0usize, 0usize);
    for (i, b) in bands.iter().enumerate() {
        let day = s.timeline_start + i;
        if day <= after_day {
            continue;
        }
        n += 1;
        hit += b.covers_95(truth[day - 1]) as usize;
    }
    hit as f64 / n as f64
}

/// Posterior median of each changepoint, as a day of the input series.
fn median_changepoints(outcome: &FitOutcome) -> Vec<f64> {
    let draws = &outcome.draws;
    let m = draws
        .chains
        .first()
        .and_then(|c| c.changepoints.first())
        .map_or(0, Vec::len);
    (0..m)
        .map(|j| {
            let xs: Vec<f64> = draws
                .chains
                .iter()
                .flat_map(|c| c.changepoints.iter().map(move |row| row[j]))
                .collect();
            median(xs) + draws.timeline_start as f64 - 1.0
        })
        .collect()
}

/// The changepoints match the truth within the tolerance, allowing one
/// extra changepoint inside the early days.
fn structure_matches(medians: &[f64]) -> bool {
    let rest = match medians {
        [first, rest @ ..]
            if rest.len() == TRUE_CHANGEPOINTS.len() && *first <= EARLY_PHASE_DAYS =>
        {
            rest
        }
        all => all,
    };
    rest.len() == TRUE_CHANGEPOINTS.len()
        && rest
            .iter()
            .zip(TRUE_CHANGEPOINTS)
            .all(|(m, t)| (m - t as f64).abs() <= CHANGEPOINT_TOLERANCE)
}

fn format_days(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.1}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn fixed_k_sweep(report: &mut Report) {
    let cfg = reference_scenario(None);
    let truth = cfg.rt_schedule.daily_values();
    let series = simulated(&cfg);
    let study = StudyConfig::from_toml(bundled::FIVE_PHASE_DEATHS).expect("bundled study");

    let mut fits = Vec::new();
    for k in 4..=7 {
        let outcome = fit_model(&series, &study, ModelChoice::FixedK(k), DESK_SCALE);
        let ll = PointwiseLogLik::from_draws(&outcome.draws).expect("pointwise log-likelihood");
        let criteria = ModelCriteria::evaluate(format!("fixedk:{k}"), &ll).expect("criteria");
        let cov = coverage(&outcome, &truth, COVERAGE_AFTER_DAY);
        let cps = median_changepoints(&outcome);
        println!(
            "    fixedk:{k}  WAIC {:.2}  LOO {:.2}  coverage {:.3}  changepoints [{}]",
            criteria.waic.waic,
            criteria.loo.loo,
            cov,
            format_days(&cps)
        );
        fits.push((criteria, cov, cps));
    }
    let ranking =
        rank_models(&fits.iter().map(|f| f.0.clone()).collect::<Vec<_>>()).expect("ranking");
    let (_, cov, cps) = fits
        .iter()
        .find(|f| f.0.model == ranking.waic_winner)
        .expect("winner among fits");
    let structure = structure_matches(cps);

    report.check(
        1,
        *cov >= MIN_COVERAGE && structure,
        false,
        format!(
            "fixed-K recovery: selected {} covers truth on {:.3} of days after day {COVERAGE_AFTER_DAY} (need >= {MIN_COVERAGE}); \
             median changepoints [{}] {} truth {:?} within {CHANGEPOINT_TOLERANCE} days",
            ranking.waic_winner,
            cov,
            format_days(cps),
            if structure { "match" } else { "do not match" },
            TRUE_CHANGEPOINTS
        ),
    );
    report.check(
        2,
        ranking.criteria_agree() && structure,
        false,
        format!(
            "selection consistency: WAIC picks {}, LOO picks {}; winner structure {} the truth",
            ranking.waic_winner,
            ranking.loo_winner,
            if structure {
                "matches"
            } else {
                "does not match"
            }
        ),
    );
}

fn stochastic_phase_fits(report: &mut Report) {
    let cfg = reference_scenario(Some(INFECTIONS_SIM_K));
    let truth = cfg.rt_schedule.daily_values();
    let series = simulated(&cfg);
    let study = StudyConfig::from_toml(bundled::FIVE_PHASE_INFECTIONS).expect("bundled study");

    let mut details = Vec::new();
    let mut ok = true;
    for (choice, scale) in [
        (ModelChoice::DirichletProcess, DP_SCALE),
        (ModelChoice::PoissonProcess, DESK_SCALE),
    ] {
        let outcome = fit_model(&series, &study, choice, scale);
        let mode = outcome.summary.summary.phase_mode();
        let cov = coverage(&outcome, &truth, 0);
        println!(
            "    {choice}  phase counts {:?}",
            outcome.summary.summary.phase_counts
        );
        ok &= mode == Some(5) && cov >= MIN_COVERAGE;
        details.push(format!(
            "{choice} ({}x{}) mode {:?}, coverage {cov:.3}",
            scale.0, scale.1, mode
        ));
    }
    report.check(
        3,
        ok,
        false,
        format!(
            "DP/PP on observed infections (need mode 5, coverage >= {MIN_COVERAGE}): {}",
            details.join("; ")
        ),
    );
}

fn uk_validation(report: &mut Report) {
    let Some(data) = std::env::var_os("EPIPHASE_UK_DEATHS").map(PathBuf::from) else {
        report.record(
            8,
            Outcome::Skipped,
            false,
            "UK validation: set EPIPHASE_UK_DEATHS to a deaths CSV".into(),
        );
        return;
    };
    let study = match std::env::var_os("EPIPHASE_UK_CONFIG") {
        Some(path) => StudyConfig::load(&PathBuf::from(path)).expect("study file"),
        None => {
            StudyConfig::from_toml(bundled::NATIONAL_DEATHS_TEMPLATE).expect("bundled template")
        }
    };
    let file = std::fs::File::open(&data).expect("deaths CSV");
    let options = ParseOptions {
        count_regime: ObservationRegime::Deaths,
        ..ParseOptions::default()
    };
    let series = parse_series(file, &data.display().to_string(), &options).expect("deaths series");
    let window = workflow::study_window(&series, &study).expect("study window");
    let choice = study.model.choice.expect("study file names a model");
    let outcome = fit_model(&window, &study, choice, DESK_SCALE);
    let attack = outcome.summary.summary.attack_rate().expect("attack rate");
    let last = attack.last().expect("non-empty horizon");
    let (lo, hi) = (last.lower_95 * 100.0, last.upper_95 * 100.0);
    report.check(
        8,
        lo <= 6.1 && hi >= 5.8,
        false,
        format!(
            "UK attack rate {:.2}% [{lo:.2}%, {hi:.2}%] against the serology interval 5.8-6.1%",
            last.median * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// Prior laws and stick breaking
// ---------------------------------------------------------------------------

fn poisson_pmf(mean: f64, n: usize) -> Vec<f64> {
    let mut p = vec![(-mean).exp()];
    for j in 1..n {
        let prev = p[j - 1];
        p.push(prev * mean / j as f64);
    }
    p
}

fn pp_prior_law(report: &mut Report) {
    const DRAWS: usize = 100_000;
    const HORIZON: f64 = 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for mean in [1.0, 3.0, 10.0] {
        let lambda = mean / HORIZON;
        let mut counts = vec![0usize; PP_K_MAX + 1];
        for _ in 0..DRAWS {
            let durations = sample_pp_durations(lambda, PP_K_MAX, &mut rng).expect("durations");
            let (_, k) = pp_stick_weights(&durations, HORIZON).expect("weights");
            counts[k - 1] += 1;
        }
        let pmf = poisson_pmf(mean, counts.len());
        let covered: f64 = pmf.iter().sum();
        let tv = 0.5
            * (counts
                .iter()
                .zip(&pmf)
                .map(|(c, p)| (*c as f64 / DRAWS as f64 - p).abs())
                .sum::<f64>()
                + (1.0 - covered).max(0.0));
        worst = worst.max(tv);
        parts.push(format!("lambda*T={mean}: {tv:.4}"));
    }
    report.check(
        4,
        worst < 0.02,
        true,
        format!(
            "PP prior law, TV distance to Poisson (need < 0.02): {}",
            parts.join(", ")
        ),
    );
}

fn stick_breaking(report: &mut Report) {
    const INPUTS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dp_worst: f64 = 0.0;
    let mut dp_negative = 0usize;
    for _ in 0..INPUTS {
        let len = rng.random_range(2..=64usize);
        let theta = 10f64.powf(rng.random_range(-2.0..2.0));
        let beta = Beta::new(1.0, theta).expect("beta");
        let betas: Vec<f64> = (0..len - 1)
            .map(|_| {
                beta.sample(&mut rng)
                    .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            })
            .collect();
        let w = dp_stick_weights(&betas).expect("valid sticks");
        dp_negative += w.iter().filter(|x| **x < 0.0).count();
        dp_worst = dp_worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }

    let mut pp_worst: f64 = 0.0;
    let mut pp_negative = 0usize;
    let mut pp_valid = 0usize;
    while pp_valid < INPUTS {
        let horizon = rng.random_range(1.0..400.0);
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let durations = sample_pp_durations(lambda, PP_K_MAX, &mut rng).expect("durations");
        let Ok((w, k)) = pp_stick_weights(&durations, horizon) else {
            continue;
        };
        pp_valid += 1;
        pp_negative += w.iter().filter(|x| **x < 0.0).count() + usize::from(w.len() != k);
        pp_worst = pp_worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    report.check(
        5,
        dp_worst <= 1e-15 && dp_negative == 0 && pp_worst <= 1e-15 && pp_negative == 0,
        true,
        format!(
            "stick breaking over {INPUTS} inputs each: DP max |sum - 1| {dp_worst:.1e}, PP max |sum - 1| {pp_worst:.1e}, \
             invalid entries {}",
            dp_negative + pp_negative
        ),
    );
}

// ---------------------------------------------------------------------------
// Predictive criteria on a conjugate model
// ---------------------------------------------------------------------------

/// `y_i ~ N(mu, 1)` with `mu ~ N(0, PRIOR_VAR)`.
const PRIOR_VAR: f64 = 4.0;
const TOY_DATA: [f64; 7] = [-0.6, 0.3, 0.9, 1.4, 0.1, 2.8, 0.5];

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Posterior mean and variance of `mu` given `ys`.
fn toy_posterior(ys: &[f64]) -> (f64, f64) {
    let precision = 1.0 / PRIOR_VAR + ys.len() as f64;
    (ys.iter().sum::<f64>() / precision, 1.0 / precision)
}

fn exact_loo_elpd() -> f64 {
    (0..TOY_DATA.len())
        .map(|i| {
            let rest: Vec<f64> = TOY_DATA
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, y)| *y)
                .collect();
            let (m, v) = toy_posterior(&rest);
            normal_log_pdf(TOY_DATA[i], m, v + 1.0)
        })
        .sum()
}

fn toy_pointwise(draws: usize, seed: u64) -> PointwiseLogLik {
    let (m, v) = toy_posterior(&TOY_DATA);
    let post = Normal::new(m, v.sqrt()).expect("posterior");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..draws)
        .map(|_| {
            let mu = post.sample(&mut rng);
            TOY_DATA
                .iter()
                .map(|y| normal_log_pdf(*y, mu, 1.0))
                .collect()
        })
        .collect();
    PointwiseLogLik::new(rows, (1..=TOY_DATA.len()).collect()).expect("pointwise matrix")
}

fn predictive_oracle(report: &mut Report) {
    const DRAWS: usize = 4000;
    const REPLICATES: u64 = 40;
    let exact = exact_loo_elpd();
    let estimates: Vec<f64> = (0..REPLICATES)
        .map(|r| {
            psis_loo(&toy_pointwise(DRAWS, 600 + r))
                .expect("PSIS-LOO")
                .elpd
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let mc_se = (estimates
        .iter()
        .map(|e| (e - mean) * (e - mean))
        .sum::<f64>()
        / (estimates.len() - 1) as f64)
        .sqrt();
    let first = estimates[0];
    let loo_ok = (first - exact).abs() <= 2.0 * mc_se;

    let degenerate =
        PointwiseLogLik::new(vec![vec![-1.3, -0.2, -2.7]; 500], vec![1, 2, 3]).expect("matrix");
    let p_waic = waic(&degenerate).expect("WAIC").p_waic;
    report.check(
        6,
        loo_ok && p_waic == 0.0,
        true,
        format!(
            "PSIS-LOO elpd {first:.4} vs exact leave-one-out {exact:.4} (|diff| {:.4}, 2 MC SE {:.4}); degenerate p_waic = {p_waic:e}",
            (first - exact).abs(),
            2.0 * mc_se
        ),
    );
}

// ---------------------------------------------------------------------------
// Renewal arithmetic
// ---------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn renewal_oracle(report: &mut Report) {
    const INSTANCES: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let horizon = rng.random_range(2..=20usize);
        let population = rng.random_range(1_000.0..1e6f64).floor();

        // survival P(Y > j) of the infectious period, non-increasing from 1
        let max_lag = rng.random_range(1..=horizon);
        let mut survival = vec![1.0];
        for _ in 1..max_lag {
            let prev = *survival.last().unwrap();
            survival.push(prev * rng.random_range(0.3..1.0));
        }
        let mean_y: f64 = survival.iter().sum();
        let gi = DiscretizedInterval::from_masses(survival.iter().map(|p| p / mean_y).collect())
            .expect("interval");

        let counts: Vec<u64> = (0..horizon).map(|_| rng.random_range(0..40u64)).collect();
        let c: Vec<f64> = counts.iter().map(|x| *x as f64).collect();
        let state = EpidemicState::from_infections(population, c.clone()).expect("state");
        let rt: Vec<f64> = (0..horizon).map(|_| rng.random_range(0.2..3.0)).collect();
        let traj =
            PhaseTrajectory::from_labels(rt.clone(), (0..horizon).collect()).expect("trajectory");

        // active infectives, one infected individual at a time
        let active = active_infectives(&c, &survival).expect("active infectives");
        for t in 0..horizon {
            let mut brute = 0.0;
            for s in 0..=t {
                for _ in 0..counts[s] {
                    if t - s < survival.len() {
                        brute += survival[t - s];
                    }
                }
            }
            worst = worst.max(rel_err(active[t], brute));
        }

        // expected infections on day t + 1
        let mut susceptible = population;
        for t in 1..horizon {
            susceptible -= c[t - 1];
            let mut pressure = 0.0;
            for s in 1..=t {
                let lag = t + 1 - s;
                if lag <= gi.masses().len() {
                    pressure += c[s - 1] * gi.masses()[lag - 1];
                }
            }
            let brute = (susceptible / population * rt[t - 1] * pressure).max(0.0);
            let got = renewal_expectation(&state, &traj, &gi, t).expect("renewal expectation");
            worst = worst.max(rel_err(got, brute));
            // the same quantity through the active infectives and the mean infectious period
            let via_active = susceptible / population * rt[t - 1] * active[t - 1] / mean_y;
            worst = worst.max(rel_err(got, via_active));
        }

        // expected deaths
        let ifr = rng.random_range(0.001..0.05);
        let pi_len = rng.random_range(1..=horizon);
        let raw: Vec<f64> = (0..pi_len).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let pi = DiscretizedInterval::from_masses(raw.iter().map(|x| x / total).collect())
            .expect("delay");
        for t in 1..=horizon {
            let mut brute = 0.0;
            for i in 1..t {
                if i <= pi_len {
                    brute += c[t - i - 1] * pi.masses()[i - 1];
                }
            }
            let got = death_expectation(&c, ifr, &pi, t).expect("death expectation");
            worst = worst.max(rel_err(got, ifr * brute));
        }

        // deterministic renewal path from seeded days
        let seed_days = rng.random_range(1..=horizon.min(6));
        let seed_level = rng.random_range(1.0..50.0);
        let (path, susc) = renewal_path(seed_level, seed_days, &rt, &gi, population);
        let mut brute_c = vec![0.0; horizon];
        let mut brute_s = vec![0.0; horizon];
        let mut cum = 0.0;
        for t in 0..horizon {
            brute_c[t] = if t < seed_days {
                seed_level.min(population - cum)
            } else {
                let mut pressure = 0.0;
                for s in 0..t {
                    let lag = t - s;
                    if lag <= gi.masses().len() {
                        pressure += brute_c[s] * gi.masses()[lag - 1];
                    }
                }
                (brute_s[t - 1] / population * rt[t - 1] * pressure).min(brute_s[t - 1])
            };
            cum += brute_c[t];
            brute_s[t] = (population - cum).max(0.0);
        }
        for t in 0..horizon {
            worst = worst
                .max(rel_err(path[t], brute_c[t]))
                .max(rel_err(susc[t], brute_s[t]));
        }

        // negative binomial observation law
        let k: f64 = rng.random_range(0.5..50.0);
        let mu: f64 = rng.random_range(0.1..40.0);
        let y = rng.random_range(0..30u64);
        let mut pmf = (k / (k + mu)).powf(k) * (mu / (k + mu)).powi(y as i32);
        for i in 0..y {
            pmf *= (k + i as f64) / (i as f64 + 1.0);
        }
        let got = negbin_log_pmf(y as i64, mu, k)
            .expect("negative binomial")
            .exp();
        worst = worst.max((got - pmf).abs() / pmf);
    }
    report.check(
        7,
        worst <= 1e-12,
        true,
        format!("renewal arithmetic against brute-force loops over {INSTANCES} instances: max relative error {worst:.1e}"),
    );
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let mut report = Report::new();
    let skip_fits = std::env::var_os("EPIPHASE_ACCEPTANCE_SKIP_FITS").is_some_and(|v| v != "0");
    if skip_fits {
        for c in 1..=3 {
            report.record(
                c,
                Outcome::Skipped,
                false,
                "fitting criteria skipped".into(),
            );
        }
    } else {
        fixed_k_sweep(&mut report);
        stochastic_phase_fits(&mut report);
    }
    pp_prior_law(&mut report);
    stick_breaking(&mut report);
    predictive_oracle(&mut report);
    renewal_oracle(&mut report);
    uk_validation(&mut report);

    let count = |o: Outcome| report.lines.iter().filter(|l| l.1 == o).count();
    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        count(Outcome::Pass),
        count(Outcome::Fail),
        count(Outcome::Skipped)
    );
    if report.gating_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
