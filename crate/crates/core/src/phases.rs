//! Priors over the phase structure of `R_t`.
//!
//! Three constructions are supported:
//!
//! - a fixed number of phases `K` with changepoints `T_1 < ... < T_{K-1}`,
//!   `T_1 ~ Uniform(3, T)` and gaps `T_{i+1} - T_i ~ Uniform(0, 100)`;
//! - Poisson-process stick breaking: phase durations `T_i ~ Exponential(lambda)`,
//!   weights `pi_k = T_k / T` up to the first `K` whose durations cover the
//!   horizon, `lambda ~ Gamma(0.02, 1)`, truncated at `K_max = 100`;
//! - Dirichlet-process stick breaking truncated at `L = 36` sticks,
//!   `v_i ~ Beta(1, theta)`, `theta ~ Gamma(1, 1)`.
//!
//! In the two stick-breaking models every day draws its own label
//! `z_t ~ Categorical(weights)` and `R_t = r_{z_t}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, LogNormal};

use crate::epi::{PhaseAssignment, PhaseTrajectory};
use crate::error::{Error, Result};

/// Default Poisson-process truncation.
pub const PP_K_MAX: usize = 100;
/// Default Dirichlet-process truncation.
pub const DP_TRUNCATION: usize = 36;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-normal prior `f(.)` on each phase value `r_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseValuePrior {
    pub log_median: f64,
    pub log_sd: f64,
}

impl Default for PhaseValuePrior {
    fn default() -> Self {
        Self {
            log_median: 0.0,
            log_sd: 0.75,
        }
    }
}

impl PhaseValuePrior {
    pub fn log_density(&self, r: f64) -> f64 {
        if !(r > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lr = log(r);
        let z = (lr - self.log_median) / self.log_sd;
        -0.5 * z * z - log(self.log_sd) - LN_SQRT_2PI - lr
    }

    /// Log density of `log r` (what a random walk on the log scale targets).
    pub fn log_density_of_log(&self, log_r: f64) -> f64 {
        let z = (log_r - self.log_median) / self.log_sd;
        -0.5 * z * z - log(self.log_sd) - LN_SQRT_2PI
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        LogNormal::new(self.log_median, self.log_sd)
            .expect("validated log-normal prior")
            .sample(rng)
    }
}

// ---------------------------------------------------------------------------
// Fixed number of phases
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedKPrior {
    pub k_phases: usize,
    /// Lower bound of the uniform prior on `T_1` (the upper bound is the horizon).
    pub t1_lower: f64,
    /// Upper bound of the uniform prior on each gap.
    pub gap_upper: f64,
    pub r_prior: PhaseValuePrior,
}

impl FixedKPrior {
    pub fn new(k_phases: usize) -> Result<Self> {
        if k_phases == 0 {
            return Err(Error::Config(
                "fixed-K model needs at least one phase".into(),
            ));
        }
        Ok(Self {
            k_phases,
            t1_lower: 3.0,
            gap_upper: 100.0,
            r_prior: PhaseValuePrior::default(),
        })
    }

    /// Draws changepoints from the prior, rejecting draws that overrun the horizon.
    pub fn sample_changepoints<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Vec<f64> {
        let n = self.k_phases - 1;
        loop {
            let mut cps = Vec::with_capacity(n);
            let mut t = self.t1_lower + rng.random::<f64>() * (horizon - self.t1_lower);
            for i in 0..n {
                if i > 0 {
                    t += rng.random::<f64>() * self.gap_upper;
                }
                cps.push(t);
            }
            if fixedk_changepoints_logprior(&cps, horizon, self).is_finite() {
                return cps;
            }
        }
    }
}

/// Log prior density of changepoints `T_1 < ... < T_{K-1}`; `-inf` when any
/// constraint (ordering, `3 < T_1 < T`, gaps in `(0, 100)`, `T_{K-1} < T`)
/// fails.
pub fn fixedk_changepoints_logprior(
    changepoints: &[f64],
    horizon: f64,
    prior: &FixedKPrior,
) -> f64 {
    if changepoints.len() + 1 != prior.k_phases {
        return f64::NEG_INFINITY;
    }
    let Some(&first) = changepoints.first() else {
        return 0.0;
    };
    if !(first > prior.t1_lower && first < horizon) {
        return f64::NEG_INFINITY;
    }
    let mut lp = -log(horizon - prior.t1_lower);
    for w in changepoints.windows(2) {
        let gap = w[1] - w[0];
        if !(gap > 0.0 && gap < prior.gap_upper) {
            return f64::NEG_INFINITY;
        }
        lp -= log(prior.gap_upper);
    }
    if !(changepoints[changepoints.len() - 1] < horizon) {
        return f64::NEG_INFINITY;
    }
    lp
}

// ---------------------------------------------------------------------------
// Poisson-process stick breaking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PpPrior {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub k_max: usize,
    pub r_prior: PhaseValuePrior,
    /// Holds `lambda` at this value instead of sampling it.
    pub fixed_lambda: Option<f64>,
}

impl Default for PpPrior {
    fn default() -> Self {
        Self {
            lambda_shape: 0.02,
            lambda_rate: 1.0,
            k_max: PP_K_MAX,
            r_prior: PhaseValuePrior::default(),
            fixed_lambda: None,
        }
    }
}

impl PpPrior {
    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.lambda_shape, 1.0 / self.lambda_rate)
            .expect("validated gamma prior")
            .sample(rng)
    }
}

/// Draws `k_max` i.i.d. `Exponential(lambda)` durations.
pub fn sample_pp_durations<R: Rng + ?Sized>(
    lambda: f64,
    k_max: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let exp =
        Exp::new(lambda).map_err(|_| Error::Domain(format!("rate must be > 0, got {lambda}")))?;
    Ok((0..k_max).map(|_| exp.sample(rng)).collect())
}

/// Phase weights from Poisson-process durations.
///
/// `K = min{j : T_1 + ... + T_j >= T}`, `pi_k = T_k / T` for `k < K` and
/// `pi_K = 1 - sum_{k<K} pi_k`. Returns `(weights, K)`.
pub fn pp_stick_weights(durations: &[f64], horizon: f64) -> Result<(Vec<f64>, usize)> {
    if !(horizon > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    if durations.iter().any(|d| !(*d > 0.0) || d.is_infinite()) {
        return Err(Error::Domain(
            "durations must be finite and positive".into(),
        ));
    }
    let mut covered = 0.0;
    let mut k = None;
    for (j, d) in durations.iter().enumerate() {
        covered += d;
        if covered >= horizon {
            k = Some(j + 1);
            break;
        }
    }
    let Some(k) = k else {
        return Err(Error::TruncationOverflow {
            covered,
            horizon,
            k_max: durations.len(),
        });
    };
    let mut weights = Vec::with_capacity(k);
    let mut used = 0.0;
    for d in &durations[..k - 1] {
        let w = d / horizon;
        used += w;
        weights.push(w);
    }
    weights.push((1.0 - used).max(0.0));
    Ok((weights, k))
}

// ---------------------------------------------------------------------------
// Dirichlet-process stick breaking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DpPrior {
    pub theta_shape: f64,
    pub theta_rate: f64,
    pub truncation: usize,
    pub r_prior: PhaseValuePrior,
    /// Holds `theta` at this value instead of sampling it.
    pub fixed_theta: Option<f64>,
}

impl Default for DpPrior {
    fn default() -> Self {
        Self {
            theta_shape: 1.0,
            theta_rate: 1.0,
            truncation: DP_TRUNCATION,
            r_prior: PhaseValuePrior::default(),
            fixed_theta: None,
        }
    }
}

impl DpPrior {
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.theta_shape, 1.0 / self.theta_rate)
            .expect("validated gamma prior")
            .sample(rng)
    }
}

/// Draws `L - 1` stick proportions `v_i ~ Beta(1, theta)`.
pub fn sample_dp_betas<R: Rng + ?Sized>(
    theta: f64,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let beta = Beta::new(1.0, theta)
        .map_err(|_| Error::Domain(format!("concentration must be > 0, got {theta}")))?;
    Ok((0..truncation.saturating_sub(1))
        .map(|_| {
            beta.sample(rng)
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        })
        .collect())
}

/// Truncated stick-breaking weights `w_1 = v_1`,
/// `w_l = v_l prod_{j<l}(1 - v_j)`, `w_L = prod_{k<L}(1 - v_k)`.
///
/// The last weight is taken as the remainder of the stick so the weights
/// sum to one to rounding.
pub fn dp_stick_weights(betas: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = betas.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!(
            "stick proportions must lie in (0, 1), got {v}"
        )));
    }
    let mut weights = Vec::with_capacity(betas.len() + 1);
    let mut stick = 1.0;
    let mut used = 0.0;
    for v in betas {
        let w = v * stick;
        weights.push(w);
        used += w;
        stick *= 1.0 - v;
    }
    weights.push((1.0 - used).max(0.0));
    Ok(weights)
}

/// `ln Beta(1, theta)` density of one stick proportion.
pub fn beta_one_theta_log_density(v: f64, theta: f64) -> f64 {
    if !(v > 0.0 && v < 1.0) {
        return f64::NEG_INFINITY;
    }
    log(theta) + (theta - 1.0) * libm::log1p(-v)
}

/// Daily `R_t` from phase values and either changepoints or labels.
pub fn assemble_rt(
    phase_values: Vec<f64>,
    assignment: PhaseAssignment,
    horizon: usize,
) -> Result<PhaseTrajectory> {
    match assignment {
        PhaseAssignment::Changepoints(cps) => {
            PhaseTrajectory::from_changepoints(phase_values, cps, horizon)
        }
        PhaseAssignment::Labels(z) => {
            if z.len() != horizon {
                return Err(Error::Shape(format!(
                    "{} labels for horizon {horizon}",
                    z.len()
                )));
            }
            PhaseTrajectory::from_labels(phase_values, z)
        }
    }
}

/// Integer changepoint days from continuous changepoint locations:
/// day `t` belongs to phase `j + 1` iff `t > T_j`, so `T_j` acts as `floor(T_j)`.
pub fn changepoint_days(changepoints: &[f64]) -> Vec<usize> {
    changepoints
        .iter()
        .map(|t| libm::floor(*t).max(0.0) as usize)
        .collect()
}

/// Daily `R_t` from continuous changepoints, written into `out`.
pub fn fill_rt_from_changepoints(values: &[f64], changepoints: &[f64], out: &mut [f64]) {
    let mut phase = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let day = (i + 1) as f64;
        while phase < changepoints.len() && day > changepoints[phase] {
            phase += 1;
        }
        *slot = values[phase];
    }
}

/// Samples one label per day from `weights`.
pub fn sample_labels<R: Rng + ?Sized>(weights: &[f64], days: usize, rng: &mut R) -> Vec<usize> {
    (0..days).map(|_| categorical(weights, rng)).collect()
}

pub(crate) fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples from normalised log weights.
pub(crate) fn categorical_log<R: Rng + ?Sized>(
    log_w: &[f64],
    scratch: &mut Vec<f64>,
    rng: &mut R,
) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scratch.clear();
    scratch.extend(
        log_w
            .iter()
            .map(|lw| if max.is_finite() { exp(lw - max) } else { 0.0 }),
    );
    if !max.is_finite() {
        // nothing has positive probability; keep the first slot
        return 0;
    }
    categorical(scratch, rng)
}

/// Draws an entire prior trajectory of the Poisson-process model, retrying on
/// truncation overflow at most `max_tries` times.
pub fn sample_pp_trajectory<R: Rng + ?Sized>(
    prior: &PpPrior,
    lambda: f64,
    horizon: usize,
    rng: &mut R,
    max_tries: usize,
) -> Result<PhaseTrajectory> {
    let mut last_err = Error::Domain("no attempts".into());
    for _ in 0..max_tries.max(1) {
        let durations = sample_pp_durations(lambda, prior.k_max, rng)?;
        match pp_stick_weights(&durations, horizon as f64) {
            Ok((weights, k)) => {
                let values: Vec<f64> = (0..k).map(|_| prior.r_prior.sample(rng)).collect();
                let z = sample_labels(&weights, horizon, rng);
                return PhaseTrajectory::from_labels(values, z);
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Draws a prior trajectory of the Dirichlet-process model.
pub fn sample_dp_trajectory<R: Rng + ?Sized>(
    prior: &DpPrior,
    theta: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<PhaseTrajectory> {
    let betas = sample_dp_betas(theta, prior.truncation, rng)?;
    let weights = dp_stick_weights(&betas)?;
    let values: Vec<f64> = (0..prior.truncation)
        .map(|_| prior.r_prior.sample(rng))
        .collect();
    let z = sample_labels(&weights, horizon, rng);
    PhaseTrajectory::from_labels(values, z)
}

/// Counts of each label, sized `n_phases`.
pub fn label_counts(labels: &[usize], n_phases: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_phases];
    for &z in labels {
        counts[z] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    extern crate std;
    use libm::fabs;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixedk_logprior_examples() {
        let one = FixedKPrior::new(1).unwrap();
        assert_eq!(fixedk_changepoints_logprior(&[], 250.0, &one), 0.0);

        let five = FixedKPrior::new(5).unwrap();
        let lp = fixedk_changepoints_logprior(&[60.0, 100.0, 150.0, 200.0], 250.0, &five);
        let expected = -log(247.0) - 3.0 * log(100.0);
        assert!(fabs(lp - expected) < 1e-12);

        let lp = fixedk_changepoints_logprior(&[10.0, 160.0, 170.0, 200.0], 250.0, &five);
        assert_eq!(lp, f64::NEG_INFINITY);
        // unsorted
        let lp = fixedk_changepoints_logprior(&[100.0, 60.0, 150.0, 200.0], 250.0, &five);
        assert_eq!(lp, f64::NEG_INFINITY);
        // beyond horizon
        let lp = fixedk_changepoints_logprior(&[200.0, 230.0, 240.0, 260.0], 250.0, &five);
        assert_eq!(lp, f64::NEG_INFINITY);
        // T_1 below its lower bound
        let lp = fixedk_changepoints_logprior(&[2.0, 60.0, 150.0, 200.0], 250.0, &five);
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn pp_weights_examples() {
        let (w, k) = pp_stick_weights(&[120.0, 5.0], 100.0).unwrap();
        assert_eq!(k, 1);
        assert_eq!(w, vec![1.0]);
        let (w, k) = pp_stick_weights(&[60.0, 70.0], 100.0).unwrap();
        assert_eq!(k, 2);
        assert!(fabs(w[0] - 0.6) < 1e-15 && fabs(w[1] - 0.4) < 1e-15);
        assert!(matches!(
            pp_stick_weights(&[1.0, 2.0], 100.0),
            Err(Error::TruncationOverflow { .. })
        ));
    }

    #[test]
    fn dp_weights_examples() {
        let w = dp_stick_weights(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.125, 0.125]);
        let eps = 1e-9;
        let w = dp_stick_weights(&[1.0 - eps, 0.3, 0.3]).unwrap();
        assert!(fabs(w[0] - 1.0) < 1e-8);
        assert!(w[1..].iter().all(|x| *x < 1e-8));
        assert!(dp_stick_weights(&[0.0, 0.5]).is_err());
        assert!(dp_stick_weights(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn dp_occupancy_increases_with_concentration() {
        let prior = DpPrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut means = std::vec::Vec::new();
        for &theta in &[0.1, 1.0, 10.0] {
            let mut total = 0usize;
            let reps = 4000;
            for _ in 0..reps {
                let v = sample_dp_betas(theta, prior.truncation, &mut rng).unwrap();
                let w = dp_stick_weights(&v).unwrap();
                total += w.iter().filter(|x| **x > 0.01).count();
            }
            means.push(total as f64 / reps as f64);
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn assemble_rt_examples() {
        let t = assemble_rt(vec![1.5], PhaseAssignment::Changepoints(vec![]), 30).unwrap();
        assert!(t.daily_values().iter().all(|r| *r == 1.5));

        let values = vec![1.5, 0.95, 1.35, 0.8, 1.8];
        let t = assemble_rt(
            values.clone(),
            PhaseAssignment::Changepoints(vec![60, 100, 150, 200]),
            250,
        )
        .unwrap();
        let daily = t.daily_values();
        for day in 1..=250usize {
            let expected = match day {
                d if d <= 60 => 1.5,
                d if d <= 100 => 0.95,
                d if d <= 150 => 1.35,
                d if d <= 200 => 0.8,
                _ => 1.8,
            };
            assert_eq!(daily[day - 1], expected, "day {day}");
        }
        assert_eq!(t.occupied_phases(), 5);
        let labels = t.labels();
        let back = assemble_rt(values, PhaseAssignment::Labels(labels), 250).unwrap();
        assert_eq!(back.changepoints().unwrap(), vec![60, 100, 150, 200]);

        assert!(assemble_rt(vec![1.0, 2.0], PhaseAssignment::Labels(vec![0, 2]), 2).is_err());
    }

    #[test]
    fn continuous_changepoints_fill() {
        let mut out = [0.0; 6];
        fill_rt_from_changepoints(&[1.0, 2.0], &[3.4], &mut out);
        assert_eq!(out, [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(changepoint_days(&[3.4]), std::vec![3]);
    }

    proptest! {
        #[test]
        fn pp_weights_form_simplex(durations in proptest::collection::vec(0.01f64..80.0, 1..100), horizon in 1.0f64..300.0) {
            if let Ok((w, k)) = pp_stick_weights(&durations, horizon) {
                prop_assert_eq!(w.len(), k);
                prop_assert!(w.iter().all(|x| *x >= 0.0));
                prop_assert!(fabs(w.iter().sum::<f64>() - 1.0) < 1e-12);
            }
        }

        #[test]
        fn dp_weights_form_simplex(v in proptest::collection::vec(1e-6f64..0.999_999, 1..40)) {
            let w = dp_stick_weights(&v).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!(fabs(w.iter().sum::<f64>() - 1.0) <= 1e-15);
        }

        #[test]
        fn fixedk_rejects_any_unsorted(mut cps in proptest::collection::vec(4.0f64..240.0, 2..6)) {
            cps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cps.reverse();
            if cps.windows(2).any(|w| w[0] > w[1]) {
                let prior = FixedKPrior::new(cps.len() + 1).unwrap();
                prop_assert_eq!(fixedk_changepoints_logprior(&cps, 250.0, &prior), f64::NEG_INFINITY);
            }
        }
    }
}
