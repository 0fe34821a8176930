//! Adaptive Metropolis-within-Gibbs chains.
//!
//! Positive scalars move by Gaussian random walks on the log scale with
//! Robbins-Monro scale adaptation during warmup. Fixed-K changepoints get a
//! natural-scale random walk plus a uniform proposal between their
//! neighbours, and all fixed-K parameters share an adaptive-covariance
//! block update. Stick-breaking models update their labels by Gibbs sweeps,
//! their sticks and concentration by conjugate draws, and redraw the
//! values of unused phases from the prior.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, floor, log, pow, sqrt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, StandardNormal};

use super::labels::{sweep, LabelScratch};
use super::likelihood::{Evaluator, ObservationRegime, ParamState};
use super::{ChainDraws, Dispersion, FitProblem, PhaseModel};
use crate::error::{Error, Result};
use crate::phases::{
    dp_stick_weights, fill_rt_from_changepoints, fixedk_changepoints_logprior, label_counts,
    pp_stick_weights, sample_pp_durations, DpPrior, FixedKPrior, PhaseValuePrior, PpPrior,
};
use crate::special::ln_gamma;

const LOG_SCALE_MIN: f64 = -12.0;
const LOG_SCALE_MAX: f64 = 4.0;
const RATE_FLOOR: f64 = 1e-290;
const INIT_BLOCKS: usize = 4;
const PP_INIT_TRIES: usize = 1000;
const RELOCATE_SPREADS: [f64; 3] = [0.05, 0.2, 0.6];
const SPLIT_MERGE_TRIES: usize = 2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

// ---------------------------------------------------------------------------
// Adaptation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Adapt {
    log_scale: f64,
    steps: f64,
    tries: u64,
    accepted: u64,
}

impl Adapt {
    fn new(scale: f64) -> Self {
        Self {
            log_scale: log(scale),
            steps: 0.0,
            tries: 0,
            accepted: 0,
        }
    }

    fn scale(&self) -> f64 {
        exp(self.log_scale)
    }

    fn record(&mut self, log_ratio: f64, accepted: bool, target: f64, adapting: bool) {
        if adapting {
            self.steps += 1.0;
            let alpha = if log_ratio >= 0.0 {
                1.0
            } else if log_ratio.is_nan() {
                0.0
            } else {
                exp(log_ratio)
            };
            self.log_scale = (self.log_scale + (alpha - target) / pow(self.steps, 0.6))
                .clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
        } else {
            self.tries += 1;
            self.accepted += accepted as u64;
        }
    }
}

/// Adaptive-covariance random walk over a fixed-dimension vector.
#[derive(Debug, Clone)]
struct JointAdapt {
    adapt: Adapt,
    dim: usize,
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    chol: Vec<f64>,
    ready: bool,
}

impl JointAdapt {
    fn new(dim: usize) -> Self {
        Self {
            adapt: Adapt::new(1.0),
            dim,
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            chol: vec![0.0; dim * dim],
            ready: false,
        }
    }

    fn observe(&mut self, x: &[f64]) {
        self.count += 1.0;
        let d = self.dim;
        let mut delta = vec![0.0; d];
        for i in 0..d {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / self.count;
        }
        for i in 0..d {
            let after = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += after * delta[j];
            }
        }
    }

    /// Cholesky factor of the running covariance (plus a small ridge).
    fn refresh(&mut self) {
        let d = self.dim;
        if self.count < (2 * d + 10) as f64 {
            return;
        }
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = 0.5 * (self.m2[i * d + j] + self.m2[j * d + i]) / (self.count - 1.0);
            }
            a[i * d + i] += 1e-8 + 1e-6 * a[i * d + i];
        }
        if let Some(l) = cholesky(&a, d) {
            self.chol = l;
            self.ready = true;
        }
    }

    fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let s = self.adapt.scale() * 2.38 / sqrt(d as f64);
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += self.chol[i * d + j] * z[j];
                }
                x[i] + s * acc
            })
            .collect()
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * d + i] = sqrt(sum);
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    // NaN compares false and is rejected
    log(rng.random::<f64>()) < log_ratio
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Log density of `log x` when `x ~ Exponential(mean)`, up to a constant.
fn log_target_exp_of_log(x: f64, mean: f64) -> f64 {
    if !(x > 0.0) || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    log(x) - x / mean
}

/// Normalised log density of the equal mixture of centred normals used for
/// log-value differences. Split and merge moves use it unpaired, so the
/// constant matters.
fn log_spread_density(w: f64) -> f64 {
    let dens: f64 = RELOCATE_SPREADS
        .iter()
        .map(|sd| {
            let z = w / sd;
            exp(-0.5 * z * z) / (sd * SQRT_2PI)
        })
        .sum();
    log(dens / RELOCATE_SPREADS.len() as f64)
}

fn sample_spread<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    RELOCATE_SPREADS[rng.random_range(0..RELOCATE_SPREADS.len())] * normal(rng)
}

fn sample_exp_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

// ---------------------------------------------------------------------------
// Phase states
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct FixedState {
    prior: FixedKPrior,
    values: Vec<f64>,
    cps: Vec<f64>,
    r_adapt: Vec<Adapt>,
    cp_adapt: Vec<Adapt>,
    cp_jump: Adapt,
    relocate: Adapt,
    joint: JointAdapt,
}

#[derive(Debug, Clone)]
struct DpState {
    prior: DpPrior,
    values: Vec<f64>,
    betas: Vec<f64>,
    weights: Vec<f64>,
    theta: f64,
    labels: Vec<usize>,
    counts: Vec<usize>,
    r_adapt: Vec<Adapt>,
    split_merge: Adapt,
}

#[derive(Debug, Clone)]
struct PpState {
    prior: PpPrior,
    values: Vec<f64>,
    durations: Vec<f64>,
    weights: Vec<f64>,
    lambda: f64,
    labels: Vec<usize>,
    counts: Vec<usize>,
    r_adapt: Vec<Adapt>,
    dur_adapt: Adapt,
    split_merge: Adapt,
    jump: Adapt,
}

#[derive(Debug, Clone)]
enum Phases {
    Fixed(FixedState),
    Dp(DpState),
    Pp(PpState),
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

struct Chain<'a> {
    p: &'a FitProblem,
    ev: Evaluator<'a>,
    rt: Vec<f64>,
    rt_try: Vec<f64>,
    seed: f64,
    k: f64,
    seed_adapt: Adapt,
    k_adapt: Adapt,
    phases: Phases,
    rng: ChaCha8Rng,
    adapting: bool,
    scratch: LabelScratch,
}

pub(crate) fn scalar_names(p: &FitProblem) -> Vec<String> {
    let model = &p.config.model;
    let mut names = Vec::new();
    match &model.phases {
        PhaseModel::FixedK(prior) => {
            names.extend((1..=prior.k_phases).map(|j| format!("r_{j}")));
            names.extend((1..prior.k_phases).map(|j| format!("t_{j}")));
        }
        PhaseModel::PoissonProcess(_) => {
            names.push("lambda".to_string());
            names.push("phases".to_string());
        }
        PhaseModel::DirichletProcess(_) => {
            names.push("theta".to_string());
            names.push("phases".to_string());
        }
    }
    if model.regime == ObservationRegime::Deaths {
        names.push("seed".to_string());
    }
    if matches!(model.dispersion, Dispersion::Sampled { .. }) {
        names.push("k".to_string());
    }
    names.push("log_lik".to_string());
    names
}

fn label_days(labels: &[usize], label: usize) -> Option<(usize, usize)> {
    let lo = labels.iter().position(|z| *z == label)?;
    let hi = labels.iter().rposition(|z| *z == label)?;
    Some((lo, hi))
}

/// Equal contiguous blocks of labels `0..blocks`.
fn block_labels(horizon: usize, blocks: usize) -> Vec<usize> {
    let blocks = blocks.clamp(1, horizon.max(1));
    (0..horizon)
        .map(|t| (t * blocks / horizon).min(blocks - 1))
        .collect()
}

impl<'a> Chain<'a> {
    fn new(p: &'a FitProblem, chain: usize) -> Result<Self> {
        let config = &p.config;
        let model = &config.model;
        let lik = &p.lik;
        let horizon = lik.horizon();
        let t_len = horizon as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(chain as u64);

        let deaths = model.regime == ObservationRegime::Deaths;
        let k = match model.dispersion {
            Dispersion::Fixed(k) => k,
            Dispersion::Sampled { prior_mean } => prior_mean,
        };

        // a phase structure, then the best of several prior draws of the values
        let mut phases = match &model.phases {
            PhaseModel::FixedK(prior) => {
                let kk = prior.k_phases;
                Phases::Fixed(FixedState {
                    prior: *prior,
                    values: vec![1.0; kk],
                    cps: prior.sample_changepoints(t_len, &mut rng),
                    r_adapt: vec![Adapt::new(0.1); kk],
                    cp_adapt: vec![Adapt::new(5.0); kk.saturating_sub(1)],
                    cp_jump: Adapt::new(1.0),
                    relocate: Adapt::new(1.0),
                    joint: JointAdapt::new(2 * kk - 1 + deaths as usize),
                })
            }
            PhaseModel::DirichletProcess(prior) => {
                let l = prior.truncation;
                let labels = block_labels(horizon, INIT_BLOCKS.min(l));
                let counts = label_counts(&labels, l);
                let theta = prior.fixed_theta.unwrap_or(1.0);
                let mut st = DpState {
                    prior: *prior,
                    values: (0..l).map(|_| prior.r_prior.sample(&mut rng)).collect(),
                    betas: vec![0.5; l - 1],
                    weights: vec![0.0; l],
                    theta,
                    labels,
                    counts,
                    r_adapt: vec![Adapt::new(0.1); l],
                    split_merge: Adapt::new(1.0),
                };
                dp_update_sticks(&mut st, &mut rng)?;
                Phases::Dp(st)
            }
            PhaseModel::PoissonProcess(prior) => {
                let lambda = prior.fixed_lambda.unwrap_or(INIT_BLOCKS as f64 / t_len);
                let mut found = None;
                let mut last_err = None;
                for _ in 0..PP_INIT_TRIES {
                    let durations = sample_pp_durations(lambda, prior.k_max, &mut rng)?;
                    match pp_stick_weights(&durations, t_len) {
                        Ok((weights, _)) => {
                            found = Some((durations, weights));
                            break;
                        }
                        Err(e) => last_err = Some(e),
                    }
                }
                let Some((durations, weights)) = found else {
                    return Err(
                        last_err.unwrap_or(Error::SamplerFailure("no valid PP start".into()))
                    );
                };
                // phase i covers the days its duration spans
                let mut labels = vec![0usize; horizon];
                let mut edge = 0.0;
                let mut phase = 0;
                for (t, z) in labels.iter_mut().enumerate() {
                    while phase + 1 < weights.len() && (t as f64) >= edge + durations[phase] {
                        edge += durations[phase];
                        phase += 1;
                    }
                    *z = phase;
                }
                let counts = label_counts(&labels, prior.k_max);
                Phases::Pp(PpState {
                    prior: *prior,
                    values: (0..prior.k_max)
                        .map(|_| prior.r_prior.sample(&mut rng))
                        .collect(),
                    durations,
                    weights,
                    lambda,
                    labels,
                    counts,
                    r_adapt: vec![Adapt::new(0.1); prior.k_max],
                    dur_adapt: Adapt::new(0.3),
                    split_merge: Adapt::new(1.0),
                    jump: Adapt::new(1.0),
                })
            }
        };

        let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
        let mut rt = vec![0.0; horizon];
        for _ in 0..config.init_candidates.max(1) {
            let (values, cps) = match &phases {
                Phases::Fixed(st) => (
                    (0..st.values.len())
                        .map(|_| st.prior.r_prior.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                    st.prior.sample_changepoints(t_len, &mut rng),
                ),
                Phases::Dp(st) => (
                    st.values
                        .iter()
                        .map(|_| st.prior.r_prior.sample(&mut rng))
                        .collect(),
                    Vec::new(),
                ),
                Phases::Pp(st) => (
                    st.values
                        .iter()
                        .map(|_| st.prior.r_prior.sample(&mut rng))
                        .collect(),
                    Vec::new(),
                ),
            };
            let seed = if deaths {
                sample_exp_mean(model.seed_prior_mean, &mut rng)
            } else {
                0.0
            };
            let prior_lp = match &phases {
                Phases::Fixed(st) => {
                    fill_rt_from_changepoints(&values, &cps, &mut rt);
                    values
                        .iter()
                        .map(|r| st.prior.r_prior.log_density(*r))
                        .sum::<f64>()
                }
                Phases::Dp(st) => {
                    for (slot, z) in rt.iter_mut().zip(&st.labels) {
                        *slot = values[*z];
                    }
                    occupied_prior(&st.prior.r_prior, &values, &st.counts)
                }
                Phases::Pp(st) => {
                    for (slot, z) in rt.iter_mut().zip(&st.labels) {
                        *slot = values[*z];
                    }
                    occupied_prior(&st.prior.r_prior, &values, &st.counts)
                }
            };
            let (ll, _) = lik.evaluate(&ParamState {
                rt: rt.clone(),
                seed_level: seed,
                dispersion_k: k,
            })?;
            let seed_lp = if deaths {
                -seed / model.seed_prior_mean
            } else {
                0.0
            };
            let score = ll + prior_lp + seed_lp;
            if score.is_nan() {
                continue;
            }
            if !matches!(&best, Some(b) if b.0 >= score) {
                best = Some((score, values, cps, seed));
            }
        }
        let Some((_, values, cps, seed)) = best else {
            return Err(Error::SamplerFailure(
                "no finite starting point among prior draws".into(),
            ));
        };
        match &mut phases {
            Phases::Fixed(st) => {
                st.values = values;
                st.cps = cps;
                fill_rt_from_changepoints(&st.values, &st.cps, &mut rt);
            }
            Phases::Dp(st) => {
                st.values = values;
                for (slot, z) in rt.iter_mut().zip(&st.labels) {
                    *slot = st.values[*z];
                }
            }
            Phases::Pp(st) => {
                st.values = values;
                for (slot, z) in rt.iter_mut().zip(&st.labels) {
                    *slot = st.values[*z];
                }
            }
        }
        let ev = Evaluator::new(lik, &rt, seed, k);
        Ok(Self {
            p,
            ev,
            rt_try: rt.clone(),
            rt,
            seed,
            k,
            seed_adapt: Adapt::new(0.1),
            k_adapt: Adapt::new(0.3),
            phases,
            rng,
            adapting: true,
            scratch: LabelScratch::default(),
        })
    }

    fn deaths(&self) -> bool {
        self.p.lik.regime() == ObservationRegime::Deaths
    }

    fn scalar_target(&self) -> f64 {
        self.p.config.scalar_target_acceptance
    }

    // -- shared scalar updates ------------------------------------------------

    fn update_seed(&mut self) {
        if !self.deaths() {
            return;
        }
        let mean = self.p.config.model.seed_prior_mean;
        let new = exp(log(self.seed) + self.seed_adapt.scale() * normal(&mut self.rng));
        let cand = self.ev.propose_rt(&self.rt_try, new, 0, 0, true);
        let ratio = self.ev.gain(cand) + log_target_exp_of_log(new, mean)
            - log_target_exp_of_log(self.seed, mean);
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve(ok);
        if ok {
            self.seed = new;
        }
        self.seed_adapt.record(
            ratio,
            ok,
            self.p.config.scalar_target_acceptance,
            self.adapting,
        );
    }

    fn update_k(&mut self) {
        let Dispersion::Sampled { prior_mean } = self.p.config.model.dispersion else {
            return;
        };
        let new = exp(log(self.k) + self.k_adapt.scale() * normal(&mut self.rng));
        if !(new > 0.0) || new.is_infinite() {
            self.k_adapt.record(
                f64::NEG_INFINITY,
                false,
                self.scalar_target(),
                self.adapting,
            );
            return;
        }
        let cand = self.ev.propose_k(new);
        let ratio = self.ev.gain(cand) + log_target_exp_of_log(new, prior_mean)
            - log_target_exp_of_log(self.k, prior_mean);
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve_k(ok, new);
        if ok {
            self.k = new;
        }
        self.k_adapt.record(
            ratio,
            ok,
            self.p.config.scalar_target_acceptance,
            self.adapting,
        );
    }

    // -- fixed K ----------------------------------------------------------------

    fn fixed_iteration(&mut self) {
        let target = self.scalar_target();
        let adapting = self.adapting;
        let horizon = self.rt.len();
        let t_len = horizon as f64;
        let Phases::Fixed(st) = &mut self.phases else {
            unreachable!()
        };
        let kk = st.values.len();

        for j in 0..kk {
            let old = st.values[j];
            let log_new = log(old) + st.r_adapt[j].scale() * normal(&mut self.rng);
            let new = exp(log_new);
            let lo = if j == 0 {
                0
            } else {
                (floor(st.cps[j - 1]) as usize).min(horizon)
            };
            let hi = if j + 1 == kk {
                horizon
            } else {
                (floor(st.cps[j]) as usize).min(horizon)
            };
            let prior_diff = st.prior.r_prior.log_density_of_log(log_new)
                - st.prior.r_prior.log_density_of_log(log(old));
            if lo >= hi {
                let ok = accept(prior_diff, &mut self.rng);
                if ok {
                    st.values[j] = new;
                }
                st.r_adapt[j].record(prior_diff, ok, target, adapting);
                continue;
            }
            for slot in &mut self.rt_try[lo..hi] {
                *slot = new;
            }
            let cand = self
                .ev
                .propose_rt(&self.rt_try, self.seed, lo, hi - 1, false);
            let ratio = self.ev.gain(cand) + prior_diff;
            let ok = accept(ratio, &mut self.rng);
            self.ev.resolve(ok);
            let keep = if ok { new } else { old };
            for (a, b) in self.rt[lo..hi].iter_mut().zip(&mut self.rt_try[lo..hi]) {
                *a = keep;
                *b = keep;
            }
            if ok {
                st.values[j] = new;
            }
            st.r_adapt[j].record(ratio, ok, target, adapting);
        }

        for j in 0..kk.saturating_sub(1) {
            for jump in [false, true] {
                let old = st.cps[j];
                let new = if jump {
                    let lower = if j == 0 {
                        st.prior.t1_lower
                    } else {
                        st.cps[j - 1]
                    };
                    let upper = if j + 2 == kk { t_len } else { st.cps[j + 1] };
                    lower + self.rng.random::<f64>() * (upper - lower)
                } else {
                    old + st.cp_adapt[j].scale() * normal(&mut self.rng)
                };
                let lp_old = fixedk_changepoints_logprior(&st.cps, t_len, &st.prior);
                st.cps[j] = new;
                let lp_new = fixedk_changepoints_logprior(&st.cps, t_len, &st.prior);
                let adapt = if jump {
                    &mut st.cp_jump
                } else {
                    &mut st.cp_adapt[j]
                };
                if lp_new == f64::NEG_INFINITY {
                    st.cps[j] = old;
                    adapt.record(f64::NEG_INFINITY, false, target, adapting);
                    continue;
                }
                let d_old = (floor(old) as usize).min(horizon);
                let d_new = (floor(new) as usize).min(horizon);
                if d_old == d_new {
                    let ratio = lp_new - lp_old;
                    let ok = accept(ratio, &mut self.rng);
                    if !ok {
                        st.cps[j] = old;
                    }
                    adapt.record(ratio, ok, target, adapting);
                    continue;
                }
                let (lo, hi, value) = if d_new > d_old {
                    (d_old, d_new, st.values[j])
                } else {
                    (d_new, d_old, st.values[j + 1])
                };
                for slot in &mut self.rt_try[lo..hi] {
                    *slot = value;
                }
                let cand = self
                    .ev
                    .propose_rt(&self.rt_try, self.seed, lo, hi - 1, false);
                let ratio = self.ev.gain(cand) + lp_new - lp_old;
                let ok = accept(ratio, &mut self.rng);
                self.ev.resolve(ok);
                if ok {
                    self.rt[lo..hi].copy_from_slice(&self.rt_try[lo..hi]);
                } else {
                    st.cps[j] = old;
                    self.rt_try[lo..hi].copy_from_slice(&self.rt[lo..hi]);
                }
                adapt.record(ratio, ok, target, adapting);
            }
        }

        self.fixed_relocate();
        self.update_seed();
        self.update_k();
        self.fixed_joint();
    }

    /// Removes one changepoint and adds another elsewhere, in log-`r`
    /// coordinates. The two phases around the removed changepoint merge into
    /// one whose log value is their length-weighted mean; the phase
    /// containing a uniform new location splits so that the length-weighted
    /// mean is kept and the right-minus-left log difference is a Gaussian
    /// draw. Both maps have unit Jacobian, and the reverse move is the same
    /// construction with the roles swapped.
    fn fixed_relocate(&mut self) {
        let target = self.p.config.target_acceptance;
        let adapting = self.adapting;
        let t_len = self.rt.len() as f64;
        let Phases::Fixed(st) = &mut self.phases else {
            unreachable!()
        };
        let kk = st.values.len();
        if kk < 2 {
            return;
        }
        let bound = |cps: &[f64], i: usize| -> f64 {
            // boundary i of the phases: 0, cps..., T
            if i == 0 {
                0.0
            } else if i > cps.len() {
                t_len
            } else {
                cps[i - 1]
            }
        };
        let j = self.rng.random_range(0..kk - 1);
        let mut cps = st.cps.clone();
        let mut logs: Vec<f64> = st.values.iter().map(|r| log(*r)).collect();
        // merge phases j and j + 1
        let la = bound(&cps, j + 1) - bound(&cps, j);
        let lb = bound(&cps, j + 2) - bound(&cps, j + 1);
        let w_old = logs[j + 1] - logs[j];
        logs[j] = (la * logs[j] + lb * logs[j + 1]) / (la + lb);
        logs.remove(j + 1);
        cps.remove(j);
        // split the phase containing s
        let s = st.prior.t1_lower + self.rng.random::<f64>() * (t_len - st.prior.t1_lower);
        let i = cps.iter().filter(|c| **c < s).count();
        let (lo, hi) = (bound(&cps, i), bound(&cps, i + 1));
        let (ll, lr) = (s - lo, hi - s);
        let w_new = sample_spread(&mut self.rng);
        let m = logs[i];
        logs[i] = m - lr / (ll + lr) * w_new;
        logs.insert(i + 1, m + ll / (ll + lr) * w_new);
        cps.insert(i, s);

        let lp_new = fixedk_changepoints_logprior(&cps, t_len, &st.prior);
        let values: Vec<f64> = logs.iter().map(|l| exp(*l)).collect();
        if lp_new == f64::NEG_INFINITY || values.iter().any(|v| !(*v > 0.0) || v.is_infinite()) {
            st.relocate
                .record(f64::NEG_INFINITY, false, target, adapting);
            return;
        }
        let lp_old = fixedk_changepoints_logprior(&st.cps, t_len, &st.prior);
        let r_prior = st.prior.r_prior;
        let logs_lp = |v: &[f64]| {
            v.iter()
                .map(|r| r_prior.log_density_of_log(log(*r)))
                .sum::<f64>()
        };
        let prior_diff = lp_new - lp_old + logs_lp(&values) - logs_lp(&st.values);
        let proposal_diff = log_spread_density(w_old) - log_spread_density(w_new);
        fill_rt_from_changepoints(&values, &cps, &mut self.rt_try);
        let last = self.rt.len() - 1;
        let cand = self.ev.propose_rt(&self.rt_try, self.seed, 0, last, false);
        let ratio = self.ev.gain(cand) + prior_diff + proposal_diff;
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve(ok);
        if ok {
            self.rt.copy_from_slice(&self.rt_try);
            st.values = values;
            st.cps = cps;
        } else {
            self.rt_try.copy_from_slice(&self.rt);
        }
        st.relocate.record(ratio, ok, target, adapting);
    }

    fn fixed_vector(&self) -> Vec<f64> {
        let Phases::Fixed(st) = &self.phases else {
            unreachable!()
        };
        let mut x: Vec<f64> = st.values.iter().map(|r| log(*r)).collect();
        x.extend_from_slice(&st.cps);
        if self.deaths() {
            x.push(log(self.seed));
        }
        x
    }

    fn fixed_joint(&mut self) {
        let deaths = self.deaths();
        let seed_mean = self.p.config.model.seed_prior_mean;
        let target = self.p.config.target_acceptance;
        let adapting = self.adapting;
        let x = self.fixed_vector();
        let t_len = self.rt.len() as f64;
        let Phases::Fixed(st) = &mut self.phases else {
            unreachable!()
        };
        if !st.joint.ready {
            return;
        }
        let kk = st.values.len();
        let y = st.joint.propose(&x, &mut self.rng);
        let values: Vec<f64> = y[..kk].iter().map(|v| exp(*v)).collect();
        let cps = y[kk..2 * kk - 1].to_vec();
        let seed = if deaths {
            exp(y[2 * kk - 1])
        } else {
            self.seed
        };
        let lp_cps = fixedk_changepoints_logprior(&cps, t_len, &st.prior);
        if lp_cps == f64::NEG_INFINITY || values.iter().any(|v| !(*v > 0.0) || v.is_infinite()) {
            st.joint
                .adapt
                .record(f64::NEG_INFINITY, false, target, adapting);
            return;
        }
        let lp = |v: &[f64], c_lp: f64, s: f64| -> f64 {
            let mut acc = c_lp;
            for r in v {
                acc += st.prior.r_prior.log_density_of_log(log(*r));
            }
            if deaths {
                acc += log_target_exp_of_log(s, seed_mean);
            }
            acc
        };
        let prior_diff = lp(&values, lp_cps, seed)
            - lp(
                &st.values,
                fixedk_changepoints_logprior(&st.cps, t_len, &st.prior),
                self.seed,
            );
        fill_rt_from_changepoints(&values, &cps, &mut self.rt_try);
        let last = self.rt.len() - 1;
        let cand = self.ev.propose_rt(&self.rt_try, seed, 0, last, deaths);
        let ratio = self.ev.gain(cand) + prior_diff;
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve(ok);
        if ok {
            self.rt.copy_from_slice(&self.rt_try);
            st.values = values;
            st.cps = cps;
            self.seed = seed;
        } else {
            self.rt_try.copy_from_slice(&self.rt);
        }
        st.joint.adapt.record(ratio, ok, target, adapting);
    }

    fn fixed_observe(&mut self, iteration: usize, warmup: usize) {
        if !self.adapting || iteration < (warmup / 10).max(self.p.config.anneal_end()) {
            return;
        }
        let x = self.fixed_vector();
        let Phases::Fixed(st) = &mut self.phases else {
            unreachable!()
        };
        st.joint.observe(&x);
        if iteration % 100 == 0 {
            st.joint.refresh();
        }
    }

    // -- stick-breaking models -----------------------------------------------

    fn update_labels(&mut self) {
        let slice = self.deaths();
        let (labels, counts, weights, values) = match &mut self.phases {
            Phases::Dp(st) => (&mut st.labels, &mut st.counts, &st.weights, &st.values),
            Phases::Pp(st) => (&mut st.labels, &mut st.counts, &st.weights, &st.values),
            Phases::Fixed(_) => return,
        };
        sweep(
            &mut self.ev,
            &mut self.rt,
            &mut self.rt_try,
            labels,
            counts,
            weights,
            values,
            self.seed,
            slice,
            &mut self.scratch,
            &mut self.rng,
        );
    }

    fn update_occupied_values(&mut self) {
        let target = self.p.config.scalar_target_acceptance;
        let adapting = self.adapting;
        let (labels, counts, values, adapts, r_prior) = match &mut self.phases {
            Phases::Dp(st) => (
                &st.labels,
                &st.counts,
                &mut st.values,
                &mut st.r_adapt,
                st.prior.r_prior,
            ),
            Phases::Pp(st) => (
                &st.labels,
                &st.counts,
                &mut st.values,
                &mut st.r_adapt,
                st.prior.r_prior,
            ),
            Phases::Fixed(_) => return,
        };
        for l in 0..values.len() {
            if counts[l] == 0 {
                values[l] = r_prior.sample(&mut self.rng);
                continue;
            }
            let Some((lo, hi)) = label_days(labels, l) else {
                continue;
            };
            let old = values[l];
            let log_new = log(old) + adapts[l].scale() * normal(&mut self.rng);
            let new = exp(log_new);
            for t in lo..=hi {
                if labels[t] == l {
                    self.rt_try[t] = new;
                }
            }
            let cand = self.ev.propose_rt(&self.rt_try, self.seed, lo, hi, false);
            let ratio = self.ev.gain(cand) + r_prior.log_density_of_log(log_new)
                - r_prior.log_density_of_log(log(old));
            let ok = accept(ratio, &mut self.rng);
            self.ev.resolve(ok);
            let keep = if ok { new } else { old };
            for t in lo..=hi {
                if labels[t] == l {
                    self.rt[t] = keep;
                    self.rt_try[t] = keep;
                }
            }
            values[l] = keep;
            adapts[l].record(ratio, ok, target, adapting);
        }
    }

    /// Splits one occupied phase in time or merges two phases that follow
    /// each other in time. A split sends the later days of a phase to an
    /// unused label; a merge absorbs a phase whose days all come after those
    /// of another. The log values move as in the fixed-K relocation (the
    /// day-weighted mean of log `r` is kept, unit Jacobian), and the value
    /// an unused label loses or regains is a prior draw, so it cancels.
    /// The phase weights are integrated out of the acceptance ratio and must
    /// be redrawn from their conditional before anything else uses them.
    fn split_merge(&mut self) {
        let adapting = self.adapting;
        let target = self.p.config.target_acceptance;
        let (labels, counts, n_labels, values, r_prior, tracker, theta) = match &mut self.phases {
            Phases::Dp(st) => {
                let n = st.values.len();
                (
                    &mut st.labels,
                    &mut st.counts,
                    n,
                    &mut st.values,
                    st.prior.r_prior,
                    &mut st.split_merge,
                    Some(st.theta),
                )
            }
            Phases::Pp(st) => {
                let n = st.weights.len();
                (
                    &mut st.labels,
                    &mut st.counts,
                    n,
                    &mut st.values,
                    st.prior.r_prior,
                    &mut st.split_merge,
                    None,
                )
            }
            Phases::Fixed(_) => return,
        };
        let label_marginal = |counts: &[usize]| -> f64 {
            match theta {
                Some(theta) => dp_label_log_marginal(&counts[..n_labels], theta),
                None => pp_label_log_marginal(&counts[..n_labels]),
            }
        };
        let span = |labels: &[usize]| -> (Vec<usize>, Vec<usize>) {
            let mut first = vec![usize::MAX; n_labels];
            let mut last = vec![0usize; n_labels];
            for (t, z) in labels.iter().enumerate() {
                first[*z] = first[*z].min(t);
                last[*z] = t;
            }
            (first, last)
        };
        let mergeable =
            |counts: &[usize], first: &[usize], last: &[usize]| -> Vec<(usize, usize)> {
                let mut pairs = Vec::new();
                for a in (0..n_labels).filter(|l| counts[*l] > 0) {
                    for b in (0..n_labels).filter(|l| counts[*l] > 0) {
                        if a != b && last[a] < first[b] {
                            pairs.push((a, b));
                        }
                    }
                }
                pairs
            };
        let n_occupied = counts[..n_labels].iter().filter(|c| **c > 0).count();
        let n_empty = n_labels - n_occupied;
        let (first, last) = span(labels);
        let lp = |x: f64| r_prior.log_density_of_log(x);

        let mut new_labels = labels.clone();
        let mut new_counts = counts.clone();
        let mut new_values = values.clone();
        let (lo, hi, log_ratio);
        if self.rng.random::<f64>() < 0.5 {
            if n_empty == 0 {
                return;
            }
            let occupied: Vec<usize> = (0..n_labels).filter(|l| counts[*l] > 0).collect();
            let empty: Vec<usize> = (0..n_labels).filter(|l| counts[*l] == 0).collect();
            let a = occupied[self.rng.random_range(0..occupied.len())];
            let b = empty[self.rng.random_range(0..empty.len())];
            let m = counts[a];
            if m < 2 {
                tracker.record(f64::NEG_INFINITY, false, target, adapting);
                return;
            }
            let na = self.rng.random_range(1..m);
            let nb = m - na;
            let days: Vec<usize> = (first[a]..=last[a]).filter(|t| labels[*t] == a).collect();
            for t in &days[na..] {
                new_labels[*t] = b;
            }
            new_counts[a] = na;
            new_counts[b] = nb;
            let u = sample_spread(&mut self.rng);
            let mean = log(values[a]);
            let (left, right) = (
                mean - nb as f64 / m as f64 * u,
                mean + na as f64 / m as f64 * u,
            );
            new_values[a] = exp(left);
            new_values[b] = exp(right);
            let (nf, nl) = span(&new_labels);
            let reverse = mergeable(&new_counts, &nf, &nl).len() as f64;
            let label_prior = label_marginal(&new_counts) - label_marginal(counts);
            log_ratio = label_prior + lp(left) + lp(right) - lp(mean) - log(reverse)
                + log(n_occupied as f64)
                + log(n_empty as f64)
                + log((m - 1) as f64)
                - log_spread_density(u);
            lo = first[a];
            hi = last[a];
        } else {
            let pairs = mergeable(counts, &first, &last);
            if pairs.is_empty() {
                return;
            }
            let (a, b) = pairs[self.rng.random_range(0..pairs.len())];
            let (na, nb) = (counts[a], counts[b]);
            let m = na + nb;
            for t in first[b]..=last[b] {
                if labels[t] == b {
                    new_labels[t] = a;
                }
            }
            new_counts[a] = m;
            new_counts[b] = 0;
            let (la, lb) = (log(values[a]), log(values[b]));
            let mean = (na as f64 * la + nb as f64 * lb) / m as f64;
            new_values[a] = exp(mean);
            new_values[b] = r_prior.sample(&mut self.rng);
            let label_prior = label_marginal(&new_counts) - label_marginal(counts);
            log_ratio = label_prior + lp(mean) - lp(la) - lp(lb) + log(pairs.len() as f64)
                - log((n_occupied - 1) as f64)
                - log((n_empty + 1) as f64)
                - log((m - 1) as f64)
                + log_spread_density(lb - la);
            lo = first[a];
            hi = last[b];
        }
        if !log_ratio.is_finite() || new_values.iter().any(|v| !(*v > 0.0) || v.is_infinite()) {
            tracker.record(f64::NEG_INFINITY, false, target, adapting);
            return;
        }
        for t in lo..=hi {
            self.rt_try[t] = new_values[new_labels[t]];
        }
        let cand = self.ev.propose_rt(&self.rt_try, self.seed, lo, hi, false);
        let ratio = self.ev.gain(cand) + log_ratio;
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve(ok);
        if ok {
            self.rt[lo..=hi].copy_from_slice(&self.rt_try[lo..=hi]);
            *labels = new_labels;
            *counts = new_counts;
            *values = new_values;
        } else {
            self.rt_try[lo..=hi].copy_from_slice(&self.rt[lo..=hi]);
        }
        tracker.record(ratio, ok, target, adapting);
    }

    fn dp_iteration(&mut self) -> Result<()> {
        self.update_labels();
        self.update_occupied_values();
        for _ in 0..SPLIT_MERGE_TRIES {
            self.split_merge();
        }
        let Phases::Dp(st) = &mut self.phases else {
            unreachable!()
        };
        dp_update_sticks(st, &mut self.rng)?;
        self.update_seed();
        self.update_k();
        Ok(())
    }

    fn pp_iteration(&mut self) -> Result<()> {
        self.update_labels();
        self.update_occupied_values();
        for _ in 0..SPLIT_MERGE_TRIES {
            self.split_merge();
        }
        self.pp_jump();
        let t_len = self.rt.len() as f64;
        let Phases::Pp(st) = &mut self.phases else {
            unreachable!()
        };
        pp_update_rate(st, &mut self.rng)?;
        pp_update_weights(st, t_len, &mut self.rng)?;
        self.pp_update_durations();
        self.update_seed();
        self.update_k();
        Ok(())
    }

    /// Changes the number of active Poisson-process phases with the weights
    /// and `lambda` integrated out. The active labels are first permuted at
    /// random, which leaves the target unchanged since the weights are
    /// exchangeable given their number. Then either an empty last phase is
    /// added or dropped, or the later days of an occupied phase open a new
    /// last phase, or the last phase is merged into one that ends before it
    /// starts. `lambda`, the weights and the durations must be redrawn
    /// before anything else uses them.
    fn pp_jump(&mut self) {
        let adapting = self.adapting;
        let target = self.p.config.target_acceptance;
        let horizon = self.rt.len();
        let t_len = horizon as f64;
        let Phases::Pp(st) = &mut self.phases else {
            return;
        };
        let kk = st.weights.len();

        let mut perm: Vec<usize> = (0..kk).collect();
        perm.shuffle(&mut self.rng);
        let (values, counts, adapts) = (
            st.values[..kk].to_vec(),
            st.counts[..kk].to_vec(),
            st.r_adapt[..kk].to_vec(),
        );
        for (l, to) in perm.iter().enumerate() {
            st.values[*to] = values[l];
            st.counts[*to] = counts[l];
            st.r_adapt[*to] = adapts[l].clone();
        }
        for z in st.labels.iter_mut() {
            *z = perm[*z];
        }

        // log P(K + 1) - log P(K) for the labels with the weights integrated out
        let prior = st.prior;
        let grow =
            |k: usize| pp_log_growth(&prior, k, t_len) + log(k as f64) - log(t_len + k as f64);
        let k_max = st.prior.k_max;
        let empty_move = self.rng.random::<f64>() < 0.5;
        let add = self.rng.random::<f64>() < 0.5;
        if empty_move {
            let ratio = if add {
                if kk == k_max {
                    return;
                }
                grow(kk)
            } else {
                if kk == 1 || st.counts[kk - 1] > 0 {
                    return;
                }
                -grow(kk - 1)
            };
            let ok = accept(ratio, &mut self.rng);
            if ok && add {
                st.values[kk] = st.prior.r_prior.sample(&mut self.rng);
                st.weights.push(0.0);
            } else if ok {
                st.weights.pop();
            }
            st.jump.record(ratio, ok, target, adapting);
            return;
        }

        let r_prior = st.prior.r_prior;
        let lp = |x: f64| r_prior.log_density_of_log(x);
        let occupied: Vec<usize> = (0..kk).filter(|l| st.counts[*l] > 0).collect();
        let n_occupied = occupied.len();
        let span = |labels: &[usize], l: usize| -> (usize, usize) {
            label_days(labels, l).unwrap_or((usize::MAX, 0))
        };
        // occupied phases other than `last` whose days all precede those of `last`
        let earlier = |labels: &[usize], counts: &[usize], last: usize, n: usize| -> Vec<usize> {
            let (first_last, _) = span(labels, last);
            (0..n)
                .filter(|l| *l != last && counts[*l] > 0 && span(labels, *l).1 < first_last)
                .collect()
        };
        let split_gamma = |na: usize, nb: usize| {
            ln_gamma(1.0 + na as f64) + ln_gamma(1.0 + nb as f64) - ln_gamma(1.0 + (na + nb) as f64)
        };

        let mut new_labels = st.labels.clone();
        let (a, b, lo, hi, log_ratio, new_a, new_b);
        if add {
            if kk == k_max {
                return;
            }
            a = occupied[self.rng.random_range(0..n_occupied)];
            b = kk;
            let m = st.counts[a];
            if m < 2 {
                st.jump.record(f64::NEG_INFINITY, false, target, adapting);
                return;
            }
            let na = self.rng.random_range(1..m);
            let nb = m - na;
            let (first, last) = span(&st.labels, a);
            let days: Vec<usize> = (first..=last).filter(|t| st.labels[*t] == a).collect();
            for t in &days[na..] {
                new_labels[*t] = b;
            }
            let mut new_counts = st.counts.clone();
            new_counts[a] = na;
            new_counts[b] = nb;
            let reverse = earlier(&new_labels, &new_counts, b, kk + 1).len() as f64;
            let u = sample_spread(&mut self.rng);
            let mean = log(st.values[a]);
            let (left, right) = (
                mean - nb as f64 / m as f64 * u,
                mean + na as f64 / m as f64 * u,
            );
            new_a = exp(left);
            new_b = exp(right);
            log_ratio = grow(kk) + split_gamma(na, nb) + lp(left) + lp(right) - lp(mean)
                + log(n_occupied as f64)
                + log((m - 1) as f64)
                - log_spread_density(u)
                - log(reverse);
            lo = first;
            hi = last;
        } else {
            b = kk - 1;
            if kk == 1 || st.counts[b] == 0 {
                return;
            }
            let pairs = earlier(&st.labels, &st.counts, b, kk);
            if pairs.is_empty() {
                st.jump.record(f64::NEG_INFINITY, false, target, adapting);
                return;
            }
            a = pairs[self.rng.random_range(0..pairs.len())];
            let (na, nb) = (st.counts[a], st.counts[b]);
            let m = na + nb;
            let (la, lb) = (log(st.values[a]), log(st.values[b]));
            let mean = (na as f64 * la + nb as f64 * lb) / m as f64;
            let (first_b, last_b) = span(&st.labels, b);
            for t in first_b..=last_b {
                if st.labels[t] == b {
                    new_labels[t] = a;
                }
            }
            new_a = exp(mean);
            new_b = st.values[b];
            log_ratio = -grow(kk - 1) - split_gamma(na, nb) + lp(mean)
                - lp(la)
                - lp(lb)
                - log((n_occupied - 1) as f64)
                - log((m - 1) as f64)
                + log_spread_density(lb - la)
                + log(pairs.len() as f64);
            lo = span(&st.labels, a).0;
            hi = last_b;
        }
        if !log_ratio.is_finite()
            || !(new_a > 0.0)
            || new_a.is_infinite()
            || !(new_b > 0.0)
            || new_b.is_infinite()
        {
            st.jump.record(f64::NEG_INFINITY, false, target, adapting);
            return;
        }
        for t in lo..=hi {
            let z = new_labels[t];
            self.rt_try[t] = if z == a {
                new_a
            } else if z == b {
                new_b
            } else {
                st.values[z]
            };
        }
        let cand = self.ev.propose_rt(&self.rt_try, self.seed, lo, hi, false);
        let ratio = self.ev.gain(cand) + log_ratio;
        let ok = accept(ratio, &mut self.rng);
        self.ev.resolve(ok);
        if ok {
            self.rt[lo..=hi].copy_from_slice(&self.rt_try[lo..=hi]);
            st.labels = new_labels;
            st.counts = label_counts(&st.labels, k_max);
            st.values[a] = new_a;
            st.values[b] = new_b;
            if add {
                st.weights.push(0.0);
            } else {
                st.weights.pop();
            }
        } else {
            self.rt_try[lo..=hi].copy_from_slice(&self.rt[lo..=hi]);
        }
        st.jump.record(ratio, ok, target, adapting);
    }

    fn pp_update_durations(&mut self) {
        let target = self.scalar_target();
        let adapting = self.adapting;
        let t_len = self.rt.len() as f64;
        let Phases::Pp(st) = &mut self.phases else {
            unreachable!()
        };
        let max_label = st.counts.iter().rposition(|c| *c > 0).unwrap_or(0);
        let mut i = 0;
        while i < st.weights.len() {
            let old = st.durations[i];
            let log_new = log(old) + st.dur_adapt.scale() * normal(&mut self.rng);
            let new = exp(log_new);
            st.durations[i] = new;
            let outcome = pp_stick_weights(&st.durations, t_len);
            let Ok((weights, kk)) = outcome else {
                st.durations[i] = old;
                st.dur_adapt
                    .record(f64::NEG_INFINITY, false, target, adapting);
                i += 1;
                continue;
            };
            if max_label >= kk {
                st.durations[i] = old;
                st.dur_adapt
                    .record(f64::NEG_INFINITY, false, target, adapting);
                i += 1;
                continue;
            }
            let mut ratio = (log_new - st.lambda * new) - (log(old) - st.lambda * old);
            for (l, c) in st.counts.iter().enumerate().take(kk) {
                if *c > 0 {
                    ratio += *c as f64 * (log(weights[l]) - log(st.weights[l]));
                }
            }
            let ok = accept(ratio, &mut self.rng);
            if ok {
                st.weights = weights;
            } else {
                st.durations[i] = old;
            }
            st.dur_adapt.record(ratio, ok, target, adapting);
            i += 1;
        }
    }

    // -- draws ------------------------------------------------------------------

    fn iterate(&mut self, iteration: usize, warmup: usize) -> Result<()> {
        self.adapting = iteration < warmup;
        self.ev.temper = self.p.config.inverse_temperature(iteration);
        match self.phases {
            Phases::Fixed(_) => {
                self.fixed_iteration();
                self.fixed_observe(iteration, warmup);
            }
            Phases::Dp(_) => self.dp_iteration()?,
            Phases::Pp(_) => self.pp_iteration()?,
        }
        self.ev.refresh_total();
        Ok(())
    }

    fn record(&self, out: &mut ChainDraws) {
        let lik = &self.p.lik;
        let n = lik.population_n();
        let (c, s) = match lik.regime() {
            ObservationRegime::Deaths => (self.ev.c.clone(), self.ev.s.clone()),
            ObservationRegime::Infections => lik.latent_path(&self.rt, self.seed),
        };
        let re: Vec<f64> = self.rt.iter().zip(&s).map(|(r, si)| si / n * r).collect();
        if lik.regime() == ObservationRegime::Deaths {
            out.deaths_fit.push(lik.death_means(&c));
        }
        let pointwise = self.ev.point.clone();
        let total: f64 = pointwise.iter().sum();

        let mut scalars = Vec::new();
        let occupied = match &self.phases {
            Phases::Fixed(st) => {
                scalars.extend_from_slice(&st.values);
                let offset = self.p.timeline_start as f64 - 1.0;
                scalars.extend(st.cps.iter().map(|t| t + offset));
                out.changepoints
                    .push(st.cps.iter().map(|t| t + offset).collect());
                let mut occupied = 0;
                let mut prev = 0usize;
                for j in 0..st.values.len() {
                    let hi = if j < st.cps.len() {
                        (floor(st.cps[j]) as usize).min(self.rt.len())
                    } else {
                        self.rt.len()
                    };
                    if hi > prev {
                        occupied += 1;
                    }
                    prev = prev.max(hi);
                }
                occupied
            }
            Phases::Dp(st) => {
                let occ = st.counts.iter().filter(|c| **c > 0).count();
                scalars.push(st.theta);
                scalars.push(occ as f64);
                occ
            }
            Phases::Pp(st) => {
                let occ = st.counts.iter().filter(|c| **c > 0).count();
                scalars.push(st.lambda);
                scalars.push(occ as f64);
                occ
            }
        };
        if self.deaths() {
            scalars.push(self.seed);
        }
        if matches!(self.p.config.model.dispersion, Dispersion::Sampled { .. }) {
            scalars.push(self.k);
        }
        scalars.push(total);

        out.scalars.push(scalars);
        out.rt.push(self.rt.clone());
        out.re.push(re);
        out.infections.push(c);
        out.pointwise.push(pointwise);
        out.total_ll.push(total);
        out.occupied.push(occupied);
    }

    fn acceptance(&self) -> Vec<(String, f64)> {
        let mut blocks: Vec<(String, u64, u64)> = Vec::new();
        let mut add = |name: String, a: &Adapt| {
            if a.tries > 0 {
                blocks.push((name, a.accepted, a.tries));
            }
        };
        let pooled = |adapts: &[Adapt]| -> Adapt {
            let mut a = Adapt::new(1.0);
            for x in adapts {
                a.tries += x.tries;
                a.accepted += x.accepted;
            }
            a
        };
        match &self.phases {
            Phases::Fixed(st) => {
                for (j, a) in st.r_adapt.iter().enumerate() {
                    add(format!("r_{}", j + 1), a);
                }
                for (j, a) in st.cp_adapt.iter().enumerate() {
                    add(format!("t_{}", j + 1), a);
                }
                add("t_jump".to_string(), &st.cp_jump);
                add("relocate".to_string(), &st.relocate);
                add("joint".to_string(), &st.joint.adapt);
            }
            Phases::Dp(st) => {
                add("r".to_string(), &pooled(&st.r_adapt));
                add("split_merge".to_string(), &st.split_merge);
            }
            Phases::Pp(st) => {
                add("r".to_string(), &pooled(&st.r_adapt));
                add("durations".to_string(), &st.dur_adapt);
                add("split_merge".to_string(), &st.split_merge);
                add("jump".to_string(), &st.jump);
            }
        }
        add("seed".to_string(), &self.seed_adapt);
        add("k".to_string(), &self.k_adapt);
        blocks
            .into_iter()
            .map(|(name, acc, tries)| (name, acc as f64 / tries as f64))
            .collect()
    }
}

fn occupied_prior(prior: &PhaseValuePrior, values: &[f64], counts: &[usize]) -> f64 {
    values
        .iter()
        .zip(counts)
        .filter(|(_, c)| **c > 0)
        .map(|(r, _)| prior.log_density(*r))
        .sum()
}

/// Log probability of the label counts with the sticks integrated out, up
/// to a constant in the counts.
fn dp_label_log_marginal(counts: &[usize], theta: f64) -> f64 {
    let mut tail: usize = counts.iter().sum();
    let mut total = 0.0;
    for n in &counts[..counts.len() - 1] {
        tail -= n;
        let (a, b) = (1.0 + *n as f64, theta + tail as f64);
        total += ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    }
    total
}

/// Given the number of active phases, the Poisson-process weights are
/// uniform on the simplex, so the labels are Dirichlet-multinomial; this is
/// their log probability up to a constant in the counts.
fn pp_label_log_marginal(counts: &[usize]) -> f64 {
    counts.iter().map(|n| ln_gamma(1.0 + *n as f64)).sum()
}

/// Redraws the active weights from their Dirichlet conditional given the
/// labels and the number of active phases, rewriting the durations to
/// match; the last active duration keeps an exponential excess past the
/// horizon.
fn pp_update_weights<R: Rng + ?Sized>(st: &mut PpState, horizon: f64, rng: &mut R) -> Result<()> {
    let kk = st.weights.len();
    let mut draws = Vec::with_capacity(kk);
    for n in &st.counts[..kk] {
        let g = Gamma::new(1.0 + *n as f64, 1.0)
            .map_err(|e| Error::SamplerFailure(format!("weight update: {e}")))?
            .sample(rng);
        draws.push(g.max(f64::MIN_POSITIVE));
    }
    let total: f64 = draws.iter().sum();
    let exp =
        Exp::new(st.lambda).map_err(|e| Error::SamplerFailure(format!("weight update: {e}")))?;
    let mut used = 0.0;
    for (l, g) in draws.iter().enumerate().take(kk - 1) {
        let w = g / total;
        st.weights[l] = w;
        st.durations[l] = (w * horizon).max(f64::MIN_POSITIVE);
        used += w;
    }
    st.weights[kk - 1] = (1.0 - used).max(0.0);
    let covered: f64 = st.durations[..kk - 1].iter().sum();
    st.durations[kk - 1] = (horizon - covered) + exp.sample(rng);
    Ok(())
}

/// Conjugate draws of the sticks given the label counts, then of `theta`.
fn dp_update_sticks<R: Rng + ?Sized>(st: &mut DpState, rng: &mut R) -> Result<()> {
    let l = st.values.len();
    let mut tail: usize = st.counts.iter().sum();
    for i in 0..l - 1 {
        tail -= st.counts[i];
        let beta = Beta::new(1.0 + st.counts[i] as f64, st.theta + tail as f64)
            .map_err(|e| Error::SamplerFailure(format!("stick update: {e}")))?;
        st.betas[i] = beta
            .sample(rng)
            .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    }
    st.weights = dp_stick_weights(&st.betas)?;
    if st.prior.fixed_theta.is_none() {
        let log_rest: f64 = st.betas.iter().map(|v| libm::log1p(-v)).sum();
        let shape = st.prior.theta_shape + (l - 1) as f64;
        let rate = st.prior.theta_rate - log_rest;
        st.theta = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::SamplerFailure(format!("concentration update: {e}")))?
            .sample(rng)
            .max(RATE_FLOOR);
    }
    Ok(())
}

/// `log P(K = k + 1) - log P(K = k)` for the number of active phases,
/// with `lambda` integrated out unless it is held fixed.
fn pp_log_growth(prior: &PpPrior, k: usize, horizon: f64) -> f64 {
    match prior.fixed_lambda {
        Some(lambda) => log(lambda * horizon) - log(k as f64),
        None => {
            log((prior.lambda_shape + (k - 1) as f64) / k as f64)
                + log(horizon / (prior.lambda_rate + horizon))
        }
    }
}

/// Draws `lambda` given the number of active phases, then redraws the
/// inactive durations. The active ones follow from the weights.
fn pp_update_rate<R: Rng + ?Sized>(st: &mut PpState, rng: &mut R) -> Result<()> {
    let kk = st.weights.len();
    if st.prior.fixed_lambda.is_none() {
        let shape = st.prior.lambda_shape + (kk - 1) as f64;
        let rate = st.prior.lambda_rate + st.labels.len() as f64;
        st.lambda = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::SamplerFailure(format!("rate update: {e}")))?
            .sample(rng)
            .max(RATE_FLOOR);
    }
    let exp =
        Exp::new(st.lambda).map_err(|e| Error::SamplerFailure(format!("duration refresh: {e}")))?;
    for d in &mut st.durations[kk..] {
        *d = exp.sample(rng).max(f64::MIN_POSITIVE);
    }
    Ok(())
}

pub(crate) fn run_chain(p: &FitProblem, chain: usize) -> Result<ChainDraws> {
    let config = &p.config;
    let mut state = Chain::new(p, chain)?;
    let warmup = config.warmup();
    let thin = config.thin();
    let mut out = ChainDraws {
        chain,
        scalars: Vec::new(),
        rt: Vec::new(),
        re: Vec::new(),
        infections: Vec::new(),
        deaths_fit: Vec::new(),
        pointwise: Vec::new(),
        total_ll: Vec::new(),
        occupied: Vec::new(),
        changepoints: Vec::new(),
        acceptance: Vec::new(),
        overall_acceptance: 0.0,
    };
    for it in 0..config.n_iterations {
        state.iterate(it, warmup)?;
        if it >= warmup && (it - warmup + 1) % thin == 0 {
            state.record(&mut out);
        }
    }
    out.acceptance = state.acceptance();
    out.overall_acceptance = if out.acceptance.is_empty() {
        1.0
    } else {
        out.acceptance.iter().map(|(_, a)| a).sum::<f64>() / out.acceptance.len() as f64
    };
    Ok(out)
}
