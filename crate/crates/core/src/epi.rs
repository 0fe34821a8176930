//! Renewal-equation mathematics and the probability kernels shared by the
//! simulator and the likelihoods.
//!
//! Days are 1-based in the public API (`day = 1` is the first day of the
//! horizon) and 0-based in the backing vectors. Interval masses are indexed
//! by lag in whole days starting at lag 1: there is no same-day transmission
//! and no same-day death.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, log1p};

use crate::error::{Error, Result};
use crate::special::{gamma_p, ln_factorial, ln_gamma};

/// Fraction of the continuous distribution retained before renormalising.
pub const INTERVAL_MASS_CAPTURE: f64 = 0.999;

// ---------------------------------------------------------------------------
// Discretised delay distributions
// ---------------------------------------------------------------------------

/// Daily probability masses of a delay distribution, lag 1..=`max_lag`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscretizedInterval {
    masses: Vec<f64>,
    mean_days: f64,
    sd_days: f64,
}

impl DiscretizedInterval {
    /// Normalises arbitrary non-negative lag masses (index 0 is lag 1).
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Domain("interval needs at least one lag".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Domain(
                "interval masses must be finite and >= 0".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("interval masses sum to zero".into()));
        }
        let masses: Vec<f64> = masses.into_iter().map(|m| m / total).collect();
        let mean: f64 = masses
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1) as f64 * m)
            .sum();
        let var: f64 = masses
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let d = (i + 1) as f64 - mean;
                d * d * m
            })
            .sum();
        Ok(Self {
            masses,
            mean_days: mean,
            sd_days: libm::sqrt(var),
        })
    }

    /// All mass at a single lag.
    pub fn point_mass(lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::Domain("lags start at 1".into()));
        }
        let mut masses = vec![0.0; lag];
        masses[lag - 1] = 1.0;
        Self::from_masses(masses)
    }

    /// Masses indexed from lag 1 (`masses()[0]` is lag 1).
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mass at `lag`; zero for lag 0 and beyond the truncation.
    #[inline]
    pub fn mass(&self, lag: usize) -> f64 {
        if lag == 0 {
            0.0
        } else {
            self.masses.get(lag - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn max_lag(&self) -> usize {
        self.masses.len()
    }

    /// Mean of the source continuous distribution (or of the masses when
    /// built from raw masses).
    pub fn mean_days(&self) -> f64 {
        self.mean_days
    }

    pub fn sd_days(&self) -> f64 {
        self.sd_days
    }

    /// Mean lag of the discrete masses.
    pub fn discrete_mean(&self) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1) as f64 * m)
            .sum()
    }
}

/// Discretises a gamma distribution given by its mean and standard deviation.
///
/// `masses[lag] = (F(lag) - F(lag - 1)) / F(S_max)` for `lag = 1..=S_max`,
/// where `F` is the gamma CDF (shape `(mean/sd)^2`, rate `mean/sd^2`) and
/// `S_max` is the first lag with `F(S_max) >= 0.999`.
pub fn discretize_gamma(mean_days: f64, sd_days: f64) -> Result<DiscretizedInterval> {
    if !(mean_days > 0.0 && mean_days.is_finite()) || !(sd_days > 0.0 && sd_days.is_finite()) {
        return Err(Error::Domain(format!(
            "gamma interval needs mean > 0 and sd > 0, got mean={mean_days}, sd={sd_days}"
        )));
    }
    let shape = (mean_days / sd_days) * (mean_days / sd_days);
    let rate = mean_days / (sd_days * sd_days);
    let cdf = |x: f64| gamma_p(shape, rate * x);

    let mut cum = vec![0.0];
    let mut lag = 0usize;
    loop {
        lag += 1;
        let f = cdf(lag as f64);
        cum.push(f);
        if f >= INTERVAL_MASS_CAPTURE || lag >= 100_000 {
            break;
        }
    }
    let total = cum[lag];
    let masses: Vec<f64> = (1..=lag)
        .map(|l| ((cum[l] - cum[l - 1]) / total).max(0.0))
        .collect();
    // renormalise once more so rounding in the differences cannot leave the sum off 1
    let s: f64 = masses.iter().sum();
    let masses = masses.into_iter().map(|m| m / s).collect();
    Ok(DiscretizedInterval {
        masses,
        mean_days,
        sd_days,
    })
}

// ---------------------------------------------------------------------------
// Epidemic state and phase trajectories
// ---------------------------------------------------------------------------

/// Daily susceptibles, infections and deaths of a closed population.
///
/// Counts are real-valued so latent (expected) trajectories and simulated
/// integer trajectories share one type.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpidemicState {
    pub population_n: f64,
    pub susceptible_s: Vec<f64>,
    pub infections_c: Vec<f64>,
    pub deaths_d: Vec<f64>,
}

impl EpidemicState {
    /// Builds the state from daily infections, deriving `S_t = n - sum_{s<=t} c_s`.
    pub fn from_infections(population_n: f64, infections_c: Vec<f64>) -> Result<Self> {
        if !(population_n > 0.0) {
            return Err(Error::Domain("population must be positive".into()));
        }
        let susceptible_s = susceptible_path(population_n, &infections_c);
        if susceptible_s
            .last()
            .is_some_and(|s| *s < -1e-9 * population_n)
        {
            return Err(Error::Domain("infections exceed the population".into()));
        }
        let deaths_d = vec![0.0; infections_c.len()];
        Ok(Self {
            population_n,
            susceptible_s,
            infections_c,
            deaths_d,
        })
    }

    /// Number of populated days.
    pub fn days(&self) -> usize {
        self.infections_c.len()
    }

    pub fn cumulative_infections(&self) -> f64 {
        self.infections_c.iter().sum()
    }
}

/// `S_t = n - sum_{s<=t} c_s`, clamped at zero.
pub fn susceptible_path(population_n: f64, infections: &[f64]) -> Vec<f64> {
    let mut cum = 0.0;
    infections
        .iter()
        .map(|c| {
            cum += c;
            (population_n - cum).max(0.0)
        })
        .collect()
}

/// How days map onto phases.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhaseAssignment {
    /// Sorted changepoint days `T_1 < ... < T_{K-1}`; phase `j` (0-based)
    /// covers `T_j < t <= T_{j+1}` with `T_0 = 0`, `T_K = horizon`.
    Changepoints(Vec<usize>),
    /// One 0-based phase label per day.
    Labels(Vec<usize>),
}

/// Piecewise-constant reproduction number over a horizon of whole days.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseTrajectory {
    phase_values: Vec<f64>,
    assignment: PhaseAssignment,
    horizon: usize,
}

impl PhaseTrajectory {
    pub fn from_changepoints(
        phase_values: Vec<f64>,
        changepoints: Vec<usize>,
        horizon: usize,
    ) -> Result<Self> {
        if phase_values.len() != changepoints.len() + 1 {
            return Err(Error::Shape(format!(
                "{} phase values need {} changepoints, got {}",
                phase_values.len(),
                phase_values.len().saturating_sub(1),
                changepoints.len()
            )));
        }
        let mut prev = 0usize;
        for &cp in &changepoints {
            if cp <= prev || cp >= horizon {
                return Err(Error::Domain(format!(
                    "changepoints must be strictly increasing within (0, {horizon}), got {changepoints:?}"
                )));
            }
            prev = cp;
        }
        check_values(&phase_values)?;
        Ok(Self {
            phase_values,
            assignment: PhaseAssignment::Changepoints(changepoints),
            horizon,
        })
    }

    pub fn from_labels(phase_values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("empty label sequence".into()));
        }
        if let Some(bad) = labels.iter().find(|&&z| z >= phase_values.len()) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} phases",
                phase_values.len()
            )));
        }
        check_values(&phase_values)?;
        let horizon = labels.len();
        Ok(Self {
            phase_values,
            assignment: PhaseAssignment::Labels(labels),
            horizon,
        })
    }

    /// Constant reproduction number over the horizon.
    pub fn constant(value: f64, horizon: usize) -> Result<Self> {
        Self::from_changepoints(vec![value], Vec::new(), horizon)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn phase_values(&self) -> &[f64] {
        &self.phase_values
    }

    pub fn assignment(&self) -> &PhaseAssignment {
        &self.assignment
    }

    /// 0-based phase label of every day.
    pub fn labels(&self) -> Vec<usize> {
        match &self.assignment {
            PhaseAssignment::Labels(z) => z.clone(),
            PhaseAssignment::Changepoints(cps) => labels_from_changepoints(cps, self.horizon),
        }
    }

    /// Changepoint form; fails when the labels are not contiguous blocks
    /// numbered in time order.
    pub fn changepoints(&self) -> Result<Vec<usize>> {
        match &self.assignment {
            PhaseAssignment::Changepoints(cps) => Ok(cps.clone()),
            PhaseAssignment::Labels(z) => changepoints_from_labels(z),
        }
    }

    /// `R_t` for day `t` (1-based).
    pub fn value_on(&self, day: usize) -> Result<f64> {
        if day == 0 || day > self.horizon {
            return Err(Error::OutOfRange {
                day,
                limit: self.horizon,
            });
        }
        let label = match &self.assignment {
            PhaseAssignment::Labels(z) => z[day - 1],
            PhaseAssignment::Changepoints(cps) => cps.iter().take_while(|&&cp| day > cp).count(),
        };
        Ok(self.phase_values[label])
    }

    /// Daily `R_t` for days `1..=horizon`.
    pub fn daily_values(&self) -> Vec<f64> {
        self.labels()
            .into_iter()
            .map(|z| self.phase_values[z])
            .collect()
    }

    /// Number of distinct phases actually used by some day.
    pub fn occupied_phases(&self) -> usize {
        occupied_count(&self.labels(), self.phase_values.len())
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Domain("phase values must be finite and >= 0".into()));
    }
    Ok(())
}

/// Distinct labels among `labels`, each below `n_phases`.
pub fn occupied_count(labels: &[usize], n_phases: usize) -> usize {
    let mut seen = vec![false; n_phases];
    let mut count = 0;
    for &z in labels {
        if !seen[z] {
            seen[z] = true;
            count += 1;
        }
    }
    count
}

pub fn labels_from_changepoints(changepoints: &[usize], horizon: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(horizon);
    let mut phase = 0;
    for day in 1..=horizon {
        while phase < changepoints.len() && day > changepoints[phase] {
            phase += 1;
        }
        labels.push(phase);
    }
    labels
}

pub fn changepoints_from_labels(labels: &[usize]) -> Result<Vec<usize>> {
    let mut cps = Vec::new();
    let Some(&first) = labels.first() else {
        return Ok(cps);
    };
    if first != 0 {
        return Err(Error::Domain("labels must start at phase 0".into()));
    }
    for (i, w) in labels.windows(2).enumerate() {
        if w[1] == w[0] {
            continue;
        }
        if w[1] != w[0] + 1 {
            return Err(Error::Domain(format!(
                "labels are not contiguous time-ordered blocks at day {}",
                i + 2
            )));
        }
        cps.push(i + 1);
    }
    Ok(cps)
}

/// Overdispersion of the negative-binomial emission.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationNoise {
    dispersion_k: f64,
}

impl ObservationNoise {
    /// `f64::INFINITY` gives Poisson emission.
    pub fn new(dispersion_k: f64) -> Result<Self> {
        if !(dispersion_k > 0.0) {
            return Err(Error::Domain(format!(
                "dispersion k must be > 0, got {dispersion_k}"
            )));
        }
        Ok(Self { dispersion_k })
    }

    pub fn dispersion_k(&self) -> f64 {
        self.dispersion_k
    }

    pub fn log_pmf(&self, count: u64, mean_mu: f64) -> f64 {
        nb_log_pmf_unchecked(count, mean_mu, self.dispersion_k)
    }
}

// ---------------------------------------------------------------------------
// Renewal equation
// ---------------------------------------------------------------------------

/// Active infectives `I_t = sum_{s<=t} c_s P(Y > t - s)`.
///
/// `survival[j]` is `P(Y > j)` for lag `j = 0, 1, ...`; lags beyond the
/// slice have survival 0. Both inputs are indexed by day (0-based).
pub fn active_infectives(infections_c: &[f64], survival: &[f64]) -> Result<Vec<f64>> {
    if survival.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain(
            "survival probabilities must lie in [0, 1]".into(),
        ));
    }
    if survival.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Domain(
            "survival must be non-increasing in lag".into(),
        ));
    }
    let n = infections_c.len();
    let mut active = vec![0.0; n];
    for (t, out) in active.iter_mut().enumerate() {
        let lo = (t + 1).saturating_sub(survival.len());
        *out = (lo..=t).map(|s| infections_c[s] * survival[t - s]).sum();
    }
    Ok(active)
}

/// Like [`active_infectives`] but checks the two series share one horizon.
pub fn active_infectives_aligned(infections_c: &[f64], survival: &[f64]) -> Result<Vec<f64>> {
    if infections_c.len() != survival.len() {
        return Err(Error::Shape(format!(
            "infections cover {} days but survival covers {} lags",
            infections_c.len(),
            survival.len()
        )));
    }
    active_infectives(infections_c, survival)
}

/// Infection pressure `sum_{s<=t} c_s g(t + 1 - s)` feeding day `t + 1`,
/// with `day_index` the 0-based index of day `t`.
#[inline]
pub fn infection_pressure(infections: &[f64], day_index: usize, gi: &DiscretizedInterval) -> f64 {
    let masses = gi.masses();
    let lo = (day_index + 1).saturating_sub(masses.len());
    let mut acc = 0.0;
    for s in lo..=day_index {
        acc += infections[s] * masses[day_index - s];
    }
    acc
}

/// Expected infections on day `t + 1`:
/// `(S_t / n) R_t sum_{s<=t} c_s g(t + 1 - s)` for 1-based day `t`.
pub fn renewal_expectation(
    state: &EpidemicState,
    rt: &PhaseTrajectory,
    gi: &DiscretizedInterval,
    day: usize,
) -> Result<f64> {
    let populated = state.days().min(state.susceptible_s.len());
    if day == 0 || day > populated {
        return Err(Error::OutOfRange {
            day,
            limit: populated,
        });
    }
    let r = rt.value_on(day)?;
    let frac = state.susceptible_s[day - 1] / state.population_n;
    Ok((frac * r * infection_pressure(&state.infections_c, day - 1, gi)).max(0.0))
}

/// Expected deaths on 1-based `day`: `IFR sum_{i>=1} c_{t-i} pi(i)`.
pub fn death_expectation(
    infections_c: &[f64],
    ifr: f64,
    pi: &DiscretizedInterval,
    day: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&ifr) {
        return Err(Error::Domain(format!("IFR must lie in [0, 1], got {ifr}")));
    }
    if day == 0 {
        return Err(Error::OutOfRange {
            day,
            limit: infections_c.len() + 1,
        });
    }
    if infections_c.len() + 1 < day {
        return Err(Error::Shape(format!(
            "day {day} needs infections through day {}, have {}",
            day - 1,
            infections_c.len()
        )));
    }
    Ok(ifr * death_convolution(infections_c, pi, day - 1))
}

/// `sum_{i>=1} c[t-i] pi(i)` for 0-based day index `t`.
#[inline]
pub fn death_convolution(infections: &[f64], pi: &DiscretizedInterval, day_index: usize) -> f64 {
    let masses = pi.masses();
    let mut acc = 0.0;
    let upto = masses.len().min(day_index);
    for lag in 1..=upto {
        acc += infections[day_index - lag] * masses[lag - 1];
    }
    acc
}

/// Expected daily deaths for every day of the horizon, with a per-day IFR.
pub fn expected_deaths(
    infections: &[f64],
    ifr_by_day: &[f64],
    pi: &DiscretizedInterval,
) -> Vec<f64> {
    (0..infections.len())
        .map(|t| ifr_by_day[t] * death_convolution(infections, pi, t))
        .collect()
}

/// Effective reproduction number `(S_t / n) R_t`.
pub fn effective_r(rt_value: f64, susceptible_s: f64, population_n: f64) -> Result<f64> {
    if !(population_n > 0.0) {
        return Err(Error::Domain("population must be positive".into()));
    }
    if susceptible_s < 0.0 || susceptible_s > population_n {
        return Err(Error::Domain(format!(
            "susceptibles {susceptible_s} outside [0, {population_n}]"
        )));
    }
    Ok(susceptible_s / population_n * rt_value)
}

/// Deterministic renewal trajectory.
///
/// Days `1..=seed_days` carry `seed_level` infections each; afterwards
/// `c_{t+1} = (S_t / n) R_t sum_{s<=t} c_s g(t + 1 - s)`. `rt` gives `R_t`
/// per day (0-based) and must cover the horizon.
pub fn renewal_path(
    seed_level: f64,
    seed_days: usize,
    rt: &[f64],
    gi: &DiscretizedInterval,
    population_n: f64,
) -> (Vec<f64>, Vec<f64>) {
    let horizon = rt.len();
    let mut c = vec![0.0; horizon];
    let mut s = vec![0.0; horizon];
    let mut cum = 0.0;
    for t in 0..horizon {
        if t < seed_days.max(1) {
            c[t] = seed_level.min((population_n - cum).max(0.0));
        } else {
            let prev = t - 1;
            let frac = s[prev] / population_n;
            c[t] = (frac * rt[prev] * infection_pressure(&c, prev, gi)).min(s[prev]);
        }
        cum += c[t];
        s[t] = (population_n - cum).max(0.0);
    }
    (c, s)
}

/// Recomputes a renewal path in place from 0-based day `from` onwards,
/// reusing everything before it. Produces exactly what [`renewal_path`]
/// would on the same inputs.
pub fn renewal_path_tail(
    c: &mut [f64],
    s: &mut [f64],
    from: usize,
    seed_level: f64,
    seed_days: usize,
    rt: &[f64],
    gi: &DiscretizedInterval,
    population_n: f64,
) {
    let horizon = rt.len();
    // same summation order as the full recursion, so the result is bit-identical
    let mut cum = 0.0;
    for v in &c[..from] {
        cum += *v;
    }
    for t in from..horizon {
        if t < seed_days.max(1) {
            c[t] = seed_level.min((population_n - cum).max(0.0));
        } else {
            let prev = t - 1;
            let frac = s[prev] / population_n;
            c[t] = (frac * rt[prev] * infection_pressure(c, prev, gi)).min(s[prev]);
        }
        cum += c[t];
        s[t] = (population_n - cum).max(0.0);
    }
}

// ---------------------------------------------------------------------------
// Negative binomial emission
// ---------------------------------------------------------------------------

/// Log pmf of the mean/dispersion negative binomial, variance `mu + mu^2/k`.
///
/// A zero mean is a point mass at zero. `k = inf` is the Poisson limit.
pub fn negbin_log_pmf(count: i64, mean_mu: f64, dispersion_k: f64) -> Result<f64> {
    if count < 0 {
        return Err(Error::Domain(format!("count must be >= 0, got {count}")));
    }
    if !(mean_mu >= 0.0) || mean_mu.is_infinite() {
        return Err(Error::Domain(format!(
            "mean must be finite and >= 0, got {mean_mu}"
        )));
    }
    if !(dispersion_k > 0.0) {
        return Err(Error::Domain(format!(
            "dispersion k must be > 0, got {dispersion_k}"
        )));
    }
    Ok(nb_log_pmf_unchecked(count as u64, mean_mu, dispersion_k))
}

/// `ln Gamma(y + k) - ln Gamma(k) - ln y!`, the count-dependent normaliser.
#[inline]
pub fn nb_log_normaliser(count: u64, dispersion_k: f64) -> f64 {
    if count < 64 {
        let mut acc = 0.0;
        for j in 0..count {
            acc += log((dispersion_k + j as f64) / (j as f64 + 1.0));
        }
        acc
    } else {
        ln_gamma(count as f64 + dispersion_k) - ln_gamma(dispersion_k) - ln_factorial(count)
    }
}

/// Mean-dependent part of the log pmf, given the normaliser.
#[inline]
pub fn nb_log_kernel(count: u64, mean_mu: f64, dispersion_k: f64) -> f64 {
    if mean_mu <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let y = count as f64;
    if dispersion_k.is_infinite() {
        return y * log(mean_mu) - mean_mu;
    }
    let ratio = mean_mu / dispersion_k;
    // y ln(mu / (k + mu)) - k ln(1 + mu / k)
    let a = if y > 0.0 {
        y * (log(mean_mu) - log(dispersion_k + mean_mu))
    } else {
        0.0
    };
    a - dispersion_k * log1p(ratio)
}

#[inline]
pub(crate) fn nb_log_pmf_unchecked(count: u64, mean_mu: f64, dispersion_k: f64) -> f64 {
    if mean_mu <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if dispersion_k.is_infinite() {
        return poisson_log_pmf(count, mean_mu);
    }
    nb_log_normaliser(count, dispersion_k) + nb_log_kernel(count, mean_mu, dispersion_k)
}

pub fn poisson_log_pmf(count: u64, mean_mu: f64) -> f64 {
    if mean_mu <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    count as f64 * log(mean_mu) - mean_mu - ln_factorial(count)
}

/// Probability mass (not log) helper used by tests and diagnostics.
pub fn negbin_pmf(count: u64, mean_mu: f64, dispersion_k: f64) -> f64 {
    exp(nb_log_pmf_unchecked(count, mean_mu, dispersion_k))
}

#[cfg(test)]
pub(crate) fn rel_diff(a: f64, b: f64) -> f64 {
    use libm::fabs;
    fabs(a - b) / fabs(a).max(fabs(b)).max(1e-300)
}
