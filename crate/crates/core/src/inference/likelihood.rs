//! Observation likelihoods for the two data regimes, plus the cached
//! evaluator the sampler uses for local updates.
//!
//! Under the infections regime the renewal mean of day `u` is built from
//! the observed history (`c_s` plugged in), so changing `R_t` touches only
//! the term for day `t + 1`. Under the deaths regime the latent infections
//! are the deterministic renewal path, and changing `R_t` moves every death
//! mean after day `t + 1`; the evaluator recomputes exactly that tail.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::epi::{
    death_convolution, infection_pressure, nb_log_kernel, nb_log_normaliser, poisson_log_pmf,
    renewal_path, renewal_path_tail, susceptible_path, DiscretizedInterval,
};
use crate::error::{Error, Result};

/// Which series the model is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ObservationRegime {
    Infections,
    Deaths,
}

impl ObservationRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObservationRegime::Infections => "infections",
            ObservationRegime::Deaths => "deaths",
        }
    }
}

/// Everything the likelihood depends on besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    /// `R_t` for every day of the model timeline.
    pub rt: Vec<f64>,
    /// Daily infections on each seeded day (deaths regime only).
    pub seed_level: f64,
    pub dispersion_k: f64,
}

/// A data series bound to its model timeline.
#[derive(Debug, Clone)]
pub struct Likelihood {
    regime: ObservationRegime,
    counts: Vec<u64>,
    first_scored: usize,
    population_n: f64,
    gi: DiscretizedInterval,
    pi: DiscretizedInterval,
    ifr: Vec<f64>,
    seed_days: usize,
    /// Infections regime: `(S_{u-1} / n) * sum_s c_s g(u - s)` for every day `u >= 1`.
    base: Vec<f64>,
    susceptible: Vec<f64>,
    use_data: bool,
}

impl Likelihood {
    /// Likelihood of an observed infection series. The first
    /// `conditioning_days` observations only feed the renewal history.
    pub fn infections(
        observed: Vec<u64>,
        population_n: f64,
        gi: DiscretizedInterval,
        conditioning_days: usize,
    ) -> Result<Self> {
        check_population(population_n)?;
        let conditioning_days = conditioning_days.max(1);
        if observed.len() <= conditioning_days {
            return Err(Error::Shape(format!(
                "{} observations leave nothing to score after {conditioning_days} conditioning days",
                observed.len()
            )));
        }
        let history: Vec<f64> = observed.iter().map(|c| *c as f64).collect();
        let total: f64 = history.iter().sum();
        if total > population_n {
            return Err(Error::Domain(format!(
                "observed infections {total} exceed the population {population_n}"
            )));
        }
        let susceptible = susceptible_path(population_n, &history);
        let mut base = vec![0.0; observed.len()];
        for u in 1..observed.len() {
            base[u] = susceptible[u - 1] / population_n * infection_pressure(&history, u - 1, &gi);
        }
        Ok(Self {
            regime: ObservationRegime::Infections,
            counts: observed,
            first_scored: conditioning_days,
            population_n,
            pi: gi.clone(),
            gi,
            ifr: Vec::new(),
            seed_days: conditioning_days,
            base,
            susceptible,
            use_data: true,
        })
    }

    /// Likelihood of an observed death series whose timeline starts with
    /// `seed_days` seeded days. Observations before `first_scored` (0-based)
    /// are ignored. `ifr` gives the IFR on every timeline day.
    pub fn deaths(
        observed: Vec<u64>,
        first_scored: usize,
        population_n: f64,
        gi: DiscretizedInterval,
        pi: DiscretizedInterval,
        ifr: Vec<f64>,
        seed_days: usize,
    ) -> Result<Self> {
        check_population(population_n)?;
        if first_scored >= observed.len() {
            return Err(Error::Shape(format!(
                "first scored day {first_scored} beyond {} observations",
                observed.len()
            )));
        }
        if ifr.len() != observed.len() {
            return Err(Error::Shape(format!(
                "{} IFR values for {} days",
                ifr.len(),
                observed.len()
            )));
        }
        if let Some(bad) = ifr.iter().find(|f| !(**f >= 0.0 && **f <= 1.0)) {
            return Err(Error::Domain(format!("IFR must lie in [0, 1], got {bad}")));
        }
        Ok(Self {
            regime: ObservationRegime::Deaths,
            counts: observed,
            first_scored,
            population_n,
            gi,
            pi,
            ifr,
            seed_days: seed_days.max(1),
            base: Vec::new(),
            susceptible: Vec::new(),
            use_data: true,
        })
    }

    /// Switches the data off: every log-likelihood becomes zero, leaving
    /// the sampler to explore the prior.
    pub fn prior_only(mut self) -> Self {
        self.use_data = false;
        self
    }

    pub fn regime(&self) -> ObservationRegime {
        self.regime
    }

    /// Days on the model timeline.
    pub fn horizon(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// 0-based index of the first scored observation.
    pub fn first_scored(&self) -> usize {
        self.first_scored
    }

    pub fn n_scored(&self) -> usize {
        self.counts.len() - self.first_scored
    }

    pub fn population_n(&self) -> f64 {
        self.population_n
    }

    pub fn seed_days(&self) -> usize {
        self.seed_days
    }

    pub fn generation_interval(&self) -> &DiscretizedInterval {
        &self.gi
    }

    pub fn uses_data(&self) -> bool {
        self.use_data
    }

    /// Latent infections and susceptibles implied by the parameters: the
    /// renewal path under the deaths regime, the one-step renewal means
    /// (with the observed first day) under the infections regime.
    pub fn latent_path(&self, rt: &[f64], seed_level: f64) -> (Vec<f64>, Vec<f64>) {
        match self.regime {
            ObservationRegime::Deaths => {
                renewal_path(seed_level, self.seed_days, rt, &self.gi, self.population_n)
            }
            ObservationRegime::Infections => {
                let mut c = vec![0.0; self.counts.len()];
                c[0] = self.counts[0] as f64;
                for u in 1..c.len() {
                    c[u] = rt[u - 1] * self.base[u];
                }
                (c, self.susceptible.clone())
            }
        }
    }

    /// Expected deaths per timeline day for a latent path (deaths regime).
    pub fn death_means(&self, latent_c: &[f64]) -> Vec<f64> {
        (0..latent_c.len())
            .map(|u| {
                self.ifr.get(u).copied().unwrap_or(0.0) * death_convolution(latent_c, &self.pi, u)
            })
            .collect()
    }

    fn check_params(&self, params: &ParamState) -> Result<()> {
        if params.rt.len() != self.counts.len() {
            return Err(Error::Shape(format!(
                "R_t covers {} days, timeline has {}",
                params.rt.len(),
                self.counts.len()
            )));
        }
        if params.rt.iter().any(|r| !(*r >= 0.0) || r.is_infinite()) {
            return Err(Error::Domain("R_t values must be finite and >= 0".into()));
        }
        if !(params.dispersion_k > 0.0) {
            return Err(Error::Domain(format!(
                "dispersion k must be > 0, got {}",
                params.dispersion_k
            )));
        }
        if self.regime == ObservationRegime::Deaths
            && !(params.seed_level >= 0.0 && params.seed_level.is_finite())
        {
            return Err(Error::Domain(format!(
                "seed level must be finite and >= 0, got {}",
                params.seed_level
            )));
        }
        Ok(())
    }

    /// Total and per-observation log-likelihood, computed from scratch.
    pub fn evaluate(&self, params: &ParamState) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        let k = params.dispersion_k;
        let means: Vec<f64> = match self.regime {
            ObservationRegime::Infections => (self.first_scored..self.counts.len())
                .map(|u| params.rt[u - 1] * self.base[u])
                .collect(),
            ObservationRegime::Deaths => {
                let (c, _) = renewal_path(
                    params.seed_level,
                    self.seed_days,
                    &params.rt,
                    &self.gi,
                    self.population_n,
                );
                (self.first_scored..self.counts.len())
                    .map(|u| self.ifr[u] * death_convolution(&c, &self.pi, u))
                    .collect()
            }
        };
        let pointwise: Vec<f64> = means
            .iter()
            .zip(&self.counts[self.first_scored..])
            .map(|(mu, y)| self.term(*y, *mu, k, nb_log_normaliser(*y, k)))
            .collect();
        Ok((pointwise.iter().sum(), pointwise))
    }

    #[inline]
    fn term(&self, count: u64, mean_mu: f64, k: f64, normaliser: f64) -> f64 {
        if !self.use_data {
            return 0.0;
        }
        if k.is_infinite() {
            return poisson_log_pmf(count, mean_mu);
        }
        if mean_mu <= 0.0 {
            return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        normaliser + nb_log_kernel(count, mean_mu, k)
    }
}

fn check_population(population_n: f64) -> Result<()> {
    if !(population_n > 0.0) || population_n.is_infinite() {
        return Err(Error::Domain(format!(
            "population must be finite and positive, got {population_n}"
        )));
    }
    Ok(())
}

/// Log-likelihood of an infection series (first `conditioning_days` used
/// as history only). Returns the total and the per-day terms.
pub fn log_likelihood_infections(
    observed_c: &[u64],
    params: &ParamState,
    population_n: f64,
    gi: &DiscretizedInterval,
    conditioning_days: usize,
) -> Result<(f64, Vec<f64>)> {
    Likelihood::infections(
        observed_c.to_vec(),
        population_n,
        gi.clone(),
        conditioning_days,
    )?
    .evaluate(params)
}

/// Log-likelihood of a death series given the latent renewal path.
#[allow(clippy::too_many_arguments)]
pub fn log_likelihood_deaths(
    observed_d: &[u64],
    first_scored: usize,
    params: &ParamState,
    population_n: f64,
    gi: &DiscretizedInterval,
    pi: &DiscretizedInterval,
    ifr: &[f64],
    seed_days: usize,
) -> Result<(f64, Vec<f64>)> {
    Likelihood::deaths(
        observed_d.to_vec(),
        first_scored,
        population_n,
        gi.clone(),
        pi.clone(),
        ifr.to_vec(),
        seed_days,
    )?
    .evaluate(params)
}

// ---------------------------------------------------------------------------
// Cached evaluator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Pending {
    c_from: usize,
    p_from: usize,
    p_to: usize,
    total: f64,
}

/// Holds the current latent path, death means and pointwise terms, and
/// evaluates proposals that change `R_t` on a range of days by recomputing
/// only what the change can reach. Every `propose_*` must be followed by
/// [`Evaluator::resolve`].
#[derive(Debug, Clone)]
pub(crate) struct Evaluator<'a> {
    lik: &'a Likelihood,
    k: f64,
    norm: Vec<f64>,
    norm_try: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    c_try: Vec<f64>,
    s_try: Vec<f64>,
    pub mean: Vec<f64>,
    mean_try: Vec<f64>,
    pub point: Vec<f64>,
    point_try: Vec<f64>,
    pub total: f64,
    /// Inverse temperature applied to log-likelihood differences.
    pub temper: f64,
    pending: Option<Pending>,
    pending_k: Option<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(lik: &'a Likelihood, rt: &[f64], seed_level: f64, k: f64) -> Self {
        let n_obs = lik.n_scored();
        let horizon = lik.horizon();
        let norm: Vec<f64> = lik.counts[lik.first_scored..]
            .iter()
            .map(|y| nb_log_normaliser(*y, k))
            .collect();
        let mut ev = Self {
            lik,
            k,
            norm_try: norm.clone(),
            norm,
            c: vec![0.0; horizon],
            s: vec![0.0; horizon],
            c_try: vec![0.0; horizon],
            s_try: vec![0.0; horizon],
            mean: vec![0.0; n_obs],
            mean_try: vec![0.0; n_obs],
            point: vec![0.0; n_obs],
            point_try: vec![0.0; n_obs],
            total: 0.0,
            temper: 1.0,
            pending: None,
            pending_k: None,
        };
        ev.reset(rt, seed_level);
        ev
    }

    /// Tempered log-likelihood gain of a candidate total over the current one.
    pub fn gain(&self, candidate: f64) -> f64 {
        self.temper * (candidate - self.total)
    }

    /// Recomputes everything from scratch.
    pub fn reset(&mut self, rt: &[f64], seed_level: f64) {
        let lik = self.lik;
        let f = lik.first_scored;
        match lik.regime {
            ObservationRegime::Deaths => {
                let (c, s) = renewal_path(seed_level, lik.seed_days, rt, &lik.gi, lik.population_n);
                self.c.copy_from_slice(&c);
                self.s.copy_from_slice(&s);
                self.c_try.copy_from_slice(&c);
                self.s_try.copy_from_slice(&s);
                for i in 0..self.mean.len() {
                    self.mean[i] = lik.ifr[f + i] * death_convolution(&self.c, &lik.pi, f + i);
                }
            }
            ObservationRegime::Infections => {
                for i in 0..self.mean.len() {
                    self.mean[i] = rt[f + i - 1] * lik.base[f + i];
                }
            }
        }
        for i in 0..self.mean.len() {
            self.point[i] = lik.term(lik.counts[f + i], self.mean[i], self.k, self.norm[i]);
        }
        self.total = self.point.iter().sum();
        self.pending = None;
        self.pending_k = None;
    }

    /// Re-sums the pointwise terms to shed accumulated rounding.
    pub fn refresh_total(&mut self) {
        self.total = self.point.iter().sum();
    }

    /// Candidate total when `R_t` differs from the current trajectory only
    /// on days `lo..=hi` (0-based). `seed_changed` forces a full path
    /// recompute under the deaths regime.
    pub fn propose_rt(
        &mut self,
        rt: &[f64],
        seed_level: f64,
        lo: usize,
        hi: usize,
        seed_changed: bool,
    ) -> f64 {
        debug_assert!(self.pending.is_none(), "unresolved proposal");
        let lik = self.lik;
        let horizon = lik.horizon();
        let f = lik.first_scored;
        let (c_from, u_from, u_to) = match lik.regime {
            ObservationRegime::Infections => (horizon, (lo + 1).max(f), (hi + 2).min(horizon)),
            ObservationRegime::Deaths => {
                let c_from = if seed_changed {
                    0
                } else {
                    (lo + 1).min(horizon)
                };
                (c_from, (c_from + 1).max(f), horizon)
            }
        };
        if lik.regime == ObservationRegime::Deaths && c_from < horizon {
            renewal_path_tail(
                &mut self.c_try,
                &mut self.s_try,
                c_from,
                seed_level,
                lik.seed_days,
                rt,
                &lik.gi,
                lik.population_n,
            );
        }
        if u_from >= u_to {
            let p = Pending {
                c_from,
                p_from: 0,
                p_to: 0,
                total: self.total,
            };
            self.pending = Some(p);
            return self.total;
        }
        let (p_from, p_to) = (u_from - f, u_to - f);
        let mut old_sum = 0.0;
        let mut new_sum = 0.0;
        for i in p_from..p_to {
            let u = f + i;
            let mu = match lik.regime {
                ObservationRegime::Infections => rt[u - 1] * lik.base[u],
                ObservationRegime::Deaths => {
                    lik.ifr[u] * death_convolution(&self.c_try, &lik.pi, u)
                }
            };
            self.mean_try[i] = mu;
            let term = lik.term(lik.counts[u], mu, self.k, self.norm[i]);
            self.point_try[i] = term;
            new_sum += term;
            old_sum += self.point[i];
        }
        let total = if old_sum.is_finite() {
            self.total - old_sum + new_sum
        } else {
            self.point[..p_from].iter().sum::<f64>()
                + new_sum
                + self.point[p_to..].iter().sum::<f64>()
        };
        self.pending = Some(Pending {
            c_from,
            p_from,
            p_to,
            total,
        });
        total
    }

    /// Accepts or discards the pending `R_t` proposal.
    pub fn resolve(&mut self, accept: bool) {
        let Some(p) = self.pending.take() else {
            return;
        };
        let horizon = self.c.len();
        if accept {
            if p.c_from < horizon {
                self.c[p.c_from..].copy_from_slice(&self.c_try[p.c_from..]);
                self.s[p.c_from..].copy_from_slice(&self.s_try[p.c_from..]);
            }
            self.mean[p.p_from..p.p_to].copy_from_slice(&self.mean_try[p.p_from..p.p_to]);
            self.point[p.p_from..p.p_to].copy_from_slice(&self.point_try[p.p_from..p.p_to]);
            self.total = p.total;
        } else if p.c_from < horizon {
            self.c_try[p.c_from..].copy_from_slice(&self.c[p.c_from..]);
            self.s_try[p.c_from..].copy_from_slice(&self.s[p.c_from..]);
        }
    }

    /// Candidate total under a new dispersion `k`.
    pub fn propose_k(&mut self, k: f64) -> f64 {
        let lik = self.lik;
        let f = lik.first_scored;
        let mut total = 0.0;
        for i in 0..self.mean.len() {
            let y = lik.counts[f + i];
            self.norm_try[i] = nb_log_normaliser(y, k);
            let term = lik.term(y, self.mean[i], k, self.norm_try[i]);
            self.point_try[i] = term;
            total += term;
        }
        self.pending_k = Some(total);
        total
    }

    pub fn resolve_k(&mut self, accept: bool, k: f64) {
        let Some(total) = self.pending_k.take() else {
            return;
        };
        if accept {
            self.k = k;
            core::mem::swap(&mut self.norm, &mut self.norm_try);
            self.point.copy_from_slice(&self.point_try);
            self.total = total;
        }
    }
}
