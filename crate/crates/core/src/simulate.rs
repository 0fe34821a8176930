//! Forward simulation of multiphase epidemics from the renewal model with
//! negative-binomial emission of daily infections and deaths.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::epi::{
    death_convolution, discretize_gamma, infection_pressure, DiscretizedInterval, EpidemicState,
    PhaseTrajectory,
};
use crate::error::{Error, Result};

/// Default number of seeded days.
pub const DEFAULT_SEED_DAYS: usize = 6;
/// Default daily seed count.
pub const DEFAULT_SEED_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioConfig {
    pub population_n: u64,
    pub horizon: usize,
    pub rt_schedule: PhaseTrajectory,
    pub ifr: f64,
    /// Negative-binomial dispersion shared by infections and deaths;
    /// `f64::INFINITY` gives Poisson noise.
    pub dispersion_k: f64,
    pub gi: DiscretizedInterval,
    pub pi: DiscretizedInterval,
    /// Infections on days `1..=seed_infections.len()`.
    pub seed_infections: Vec<u64>,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// The five-phase reference scenario: `n = 10^8`, IFR 2%, 250 days,
    /// `R_t` = 1.5 / 0.95 / 1.35 / 0.8 / 1.8 switching after days 60, 100,
    /// 150 and 200, gamma generation interval (6.5, 4.4) and gamma
    /// infection-to-death delay (19, 8.5).
    pub fn five_phase_reference(dispersion_k: f64, rng_seed: u64) -> Result<Self> {
        let rt_schedule = PhaseTrajectory::from_changepoints(
            vec![1.5, 0.95, 1.35, 0.8, 1.8],
            vec![60, 100, 150, 200],
            250,
        )?;
        Ok(Self {
            population_n: 100_000_000,
            horizon: 250,
            rt_schedule,
            ifr: 0.02,
            dispersion_k,
            gi: discretize_gamma(6.5, 4.4)?,
            pi: discretize_gamma(19.0, 8.5)?,
            seed_infections: vec![DEFAULT_SEED_COUNT; DEFAULT_SEED_DAYS],
            rng_seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_n == 0 {
            return Err(Error::Config("population must be positive".into()));
        }
        if self.horizon < self.seed_infections.len() {
            return Err(Error::Config(format!(
                "horizon {} shorter than the seeding window {}",
                self.horizon,
                self.seed_infections.len()
            )));
        }
        if self.rt_schedule.horizon() < self.horizon {
            return Err(Error::Config(format!(
                "R_t schedule covers {} days, horizon is {}",
                self.rt_schedule.horizon(),
                self.horizon
            )));
        }
        if !(0.0..=1.0).contains(&self.ifr) {
            return Err(Error::Config(format!(
                "IFR must lie in [0, 1], got {}",
                self.ifr
            )));
        }
        if !(self.dispersion_k > 0.0) {
            return Err(Error::Config(format!(
                "dispersion k must be > 0, got {}",
                self.dispersion_k
            )));
        }
        let seeded: u64 = self.seed_infections.iter().sum();
        if seeded > self.population_n {
            return Err(Error::Config(
                "seed infections exceed the population".into(),
            ));
        }
        Ok(())
    }
}

/// One negative-binomial draw with mean `mu` and dispersion `k`, as a
/// gamma-Poisson mixture.
pub fn sample_negbin<R: Rng + ?Sized>(mu: f64, k: f64, rng: &mut R) -> u64 {
    if !(mu > 0.0) {
        return 0;
    }
    let rate = if k.is_infinite() {
        mu
    } else {
        Gamma::new(k, mu / k)
            .expect("positive gamma parameters")
            .sample(rng)
    };
    if !(rate > 0.0) {
        return 0;
    }
    Poisson::new(rate)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Random stream for one replicate: stream 0 is what [`simulate`] uses.
pub fn replicate_rng(rng_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(replicate);
    rng
}

/// Simulates daily infections and deaths; deterministic given `rng_seed`.
///
/// Seeds fill the first days, then for every day `t` the next day's
/// infections are drawn around the renewal expectation and clamped to the
/// remaining susceptibles, and deaths on day `t` are drawn around the
/// IFR-scaled delay convolution of past infections.
pub fn simulate(config: &ScenarioConfig) -> Result<EpidemicState> {
    config.validate()?;
    let mut rng = replicate_rng(config.rng_seed, 0);
    Ok(simulate_with(config, &mut rng))
}

/// Runs `n_replicates` independent simulations, replicate `i` on stream `i`.
pub fn replicate_study(config: &ScenarioConfig, n_replicates: usize) -> Result<Vec<EpidemicState>> {
    if n_replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    config.validate()?;
    Ok((0..n_replicates)
        .map(|i| simulate_with(config, &mut replicate_rng(config.rng_seed, i as u64)))
        .collect())
}

/// Simulation core on a caller-supplied random stream.
pub fn simulate_with<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> EpidemicState {
    let horizon = config.horizon;
    let n = config.population_n as f64;
    let rt = config.rt_schedule.daily_values();
    let seeds = &config.seed_infections;

    let mut c = vec![0.0; horizon];
    let mut s = vec![0.0; horizon];
    let mut d = vec![0.0; horizon];
    let mut remaining = n;

    if horizon == 0 {
        return EpidemicState {
            population_n: n,
            susceptible_s: s,
            infections_c: c,
            deaths_d: d,
        };
    }
    c[0] = (seeds.first().copied().unwrap_or(0) as f64).min(remaining);
    remaining -= c[0];
    s[0] = remaining;

    for t in 0..horizon {
        if t + 1 < horizon {
            let next = if t + 1 < seeds.len() {
                (seeds[t + 1] as f64).min(remaining)
            } else {
                let mean = s[t] / n * rt[t] * infection_pressure(&c, t, &config.gi);
                (sample_negbin(mean, config.dispersion_k, rng) as f64).min(remaining)
            };
            c[t + 1] = next;
            remaining -= next;
            s[t + 1] = remaining;
        }
        let death_mean = config.ifr * death_convolution(&c, &config.pi, t);
        d[t] = sample_negbin(death_mean, config.dispersion_k, rng) as f64;
    }
    EpidemicState {
        population_n: n,
        susceptible_s: s,
        infections_c: c,
        deaths_d: d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    extern crate std;
    use crate::special::{mean, variance};
    use libm::fabs;
    use std::vec::Vec;

    fn reference(k: f64) -> ScenarioConfig {
        ScenarioConfig::five_phase_reference(k, 20_240_601).unwrap()
    }

    #[test]
    fn zero_reproduction_keeps_only_seeds() {
        let mut cfg = reference(10.0);
        cfg.rt_schedule = PhaseTrajectory::constant(0.0, 250).unwrap();
        let sim = simulate(&cfg).unwrap();
        for (t, c) in sim.infections_c.iter().enumerate() {
            let expected = if t < 6 { 10.0 } else { 0.0 };
            assert_eq!(*c, expected);
        }
        // deaths can only come from the 60 seeded infections
        let total_deaths: f64 = sim.deaths_d.iter().sum();
        assert!(total_deaths <= 60.0);
    }

    #[test]
    fn reference_scenario_has_five_regimes() {
        let sim = simulate(&reference(10.0)).unwrap();
        assert_eq!(sim.days(), 250);
        assert!(sim.cumulative_infections() < 1e8);
        // weekly totals grow or shrink according to each phase
        let week = |end: usize| -> f64 { sim.infections_c[end - 7..end].iter().sum() };
        assert!(week(60) > 3.0 * week(30));
        assert!(week(100) < week(70));
        assert!(week(150) > 2.0 * week(115));
        assert!(week(200) < 0.5 * week(160));
        assert!(week(250) > 5.0 * week(215));
        // S stays consistent with the infections
        let mut cum = 0.0;
        for t in 0..250 {
            cum += sim.infections_c[t];
            assert!(fabs(sim.susceptible_s[t] - (1e8 - cum)) < 1e-6);
            if t > 0 {
                assert!(sim.susceptible_s[t] <= sim.susceptible_s[t - 1]);
                assert!(sim.infections_c[t] <= sim.susceptible_s[t - 1]);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let cfg = reference(f64::INFINITY);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn single_replicate_equals_simulate() {
        let cfg = reference(5.0);
        let reps = replicate_study(&cfg, 1).unwrap();
        assert_eq!(reps[0], simulate(&cfg).unwrap());
        let reps = replicate_study(&cfg, 3).unwrap();
        assert!(reps[0] != reps[1] || reps[1] != reps[2]);
        assert!(replicate_study(&cfg, 0).is_err());
    }

    #[test]
    fn small_population_is_exhausted_not_overrun() {
        let mut cfg = reference(2.0);
        cfg.population_n = 5_000;
        cfg.rt_schedule = PhaseTrajectory::constant(3.0, 250).unwrap();
        let sim = simulate(&cfg).unwrap();
        assert!(sim.cumulative_infections() <= 5_000.0);
        assert!(sim.susceptible_s.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn negbin_sampler_matches_variance() {
        // gamma-Poisson mixture: Var = mu + mu^2 / k
        let mut rng = replicate_rng(99, 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_negbin(5.0, 0.16, &mut rng) as f64)
            .collect();
        let v = variance(&draws);
        let expected = 5.0 + 25.0 / 0.16;
        assert!(
            fabs(v / expected - 1.0) < 0.02,
            "variance {v} vs {expected}"
        );
        assert!(fabs(mean(&draws) - 5.0) < 0.1);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = reference(5.0);
        cfg.horizon = 3;
        assert!(matches!(simulate(&cfg), Err(Error::Config(_))));
        let mut cfg = reference(5.0);
        cfg.ifr = 1.5;
        assert!(simulate(&cfg).is_err());
    }
}
