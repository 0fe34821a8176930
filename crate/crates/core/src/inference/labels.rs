//! Gibbs updates of the per-day phase labels `z_t`.

use alloc::format;
use alloc::vec::Vec;

use libm::log;
use rand::Rng;

use super::likelihood::{Evaluator, Likelihood};
use crate::error::{Error, Result};
use crate::phases::categorical_log;

/// Buffers and bookkeeping for label sweeps.
#[derive(Debug, Default, Clone)]
pub(crate) struct LabelScratch {
    log_w: Vec<f64>,
    probs: Vec<f64>,
}

/// One ascending sweep over the days. Each `z_t` is drawn from its full
/// conditional, proportional to `weights[l]` times the likelihood of the
/// trajectory with `R_t = values[l]`.
///
/// With `slice` set, a uniform auxiliary `u_t ~ U(0, weights[z_t])` first
/// restricts the candidates to labels whose weight exceeds it; the
/// stationary law of the labels is unchanged and far fewer candidate
/// trajectories need evaluating.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep<R: Rng + ?Sized>(
    ev: &mut Evaluator<'_>,
    rt: &mut [f64],
    rt_try: &mut [f64],
    labels: &mut [usize],
    counts: &mut [usize],
    weights: &[f64],
    values: &[f64],
    seed_level: f64,
    slice: bool,
    scratch: &mut LabelScratch,
    rng: &mut R,
) {
    let n_labels = weights.len().min(values.len());
    for t in 0..labels.len() {
        let current = labels[t];
        let floor = if slice {
            rng.random::<f64>() * weights[current]
        } else {
            0.0
        };
        scratch.log_w.clear();
        for l in 0..n_labels {
            let w = weights[l];
            // under the slice the current label is always admissible
            let admissible = w > floor || (slice && l == current);
            if !admissible {
                scratch.log_w.push(f64::NEG_INFINITY);
                continue;
            }
            let ll = if values[l] == rt[t] {
                ev.total
            } else {
                rt_try[t] = values[l];
                let cand = ev.propose_rt(rt_try, seed_level, t, t, false);
                ev.resolve(false);
                rt_try[t] = rt[t];
                cand
            };
            // the slice variant samples uniformly among the admissible labels
            let prior = if slice { 0.0 } else { log(w) };
            scratch.log_w.push(prior + ev.gain(ll));
        }
        let chosen = if scratch.log_w.iter().all(|lw| *lw == f64::NEG_INFINITY) {
            current
        } else {
            categorical_log(&scratch.log_w, &mut scratch.probs, rng)
        };
        if chosen != current {
            if values[chosen] != rt[t] {
                rt_try[t] = values[chosen];
                ev.propose_rt(rt_try, seed_level, t, t, false);
                ev.resolve(true);
                rt[t] = values[chosen];
            }
            labels[t] = chosen;
            counts[current] -= 1;
            counts[chosen] += 1;
        }
    }
    ev.refresh_total();
}

/// One Gibbs sweep over all labels, each `z_t` (ascending in `t`) drawn from
/// its full conditional given the phase weights, phase values, seed level
/// and dispersion.
pub fn gibbs_update_labels<R: Rng + ?Sized>(
    labels: &mut [usize],
    weights: &[f64],
    values: &[f64],
    likelihood: &Likelihood,
    seed_level: f64,
    dispersion_k: f64,
    rng: &mut R,
) -> Result<()> {
    if labels.len() != likelihood.horizon() {
        return Err(Error::Shape(format!(
            "{} labels for {} days",
            labels.len(),
            likelihood.horizon()
        )));
    }
    if weights.len() != values.len() || weights.is_empty() {
        return Err(Error::Shape(format!(
            "{} weights for {} phase values",
            weights.len(),
            values.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::Domain(
            "weights must be non-negative with a positive sum".into(),
        ));
    }
    if let Some(z) = labels.iter().find(|z| **z >= weights.len()) {
        return Err(Error::Shape(format!(
            "label {z} out of range for {} phases",
            weights.len()
        )));
    }
    if !(dispersion_k > 0.0) {
        return Err(Error::Domain(format!(
            "dispersion k must be > 0, got {dispersion_k}"
        )));
    }
    let mut rt: Vec<f64> = labels.iter().map(|z| values[*z]).collect();
    let mut rt_try = rt.clone();
    let mut counts = alloc::vec![0usize; weights.len()];
    for z in labels.iter() {
        counts[*z] += 1;
    }
    let mut ev = Evaluator::new(likelihood, &rt, seed_level, dispersion_k);
    let mut scratch = LabelScratch::default();
    sweep(
        &mut ev,
        &mut rt,
        &mut rt_try,
        labels,
        &mut counts,
        weights,
        values,
        seed_level,
        false,
        &mut scratch,
        rng,
    );
    Ok(())
}
