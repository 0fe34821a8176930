//! Convergence diagnostics: split-`R-hat`, rank-normalised bulk effective
//! sample size and per-chain acceptance rates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::PosteriorDraws;
use crate::error::{Error, Result};
use crate::special::{mean, normal_quantile};

/// Scalars with `R-hat` above this are flagged.
pub const RHAT_FLAG: f64 = 1.05;
const MIN_DRAWS_PER_CHAIN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalarDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticsReport {
    pub scalars: Vec<ScalarDiagnostic>,
    /// Mean Metropolis acceptance of each chain.
    pub chain_acceptance: Vec<f64>,
    /// Per-chain acceptance of each Metropolis block.
    pub block_acceptance: Vec<Vec<(String, f64)>>,
}

impl DiagnosticsReport {
    pub fn flagged(&self) -> Vec<&ScalarDiagnostic> {
        self.scalars.iter().filter(|s| s.flagged).collect()
    }
}

fn halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let n = c.len() / 2;
            [&c[..n], &c[c.len() - n..]]
        })
        .collect()
}

fn check_chains(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    if let Some(c) = chains.iter().find(|c| c.len() < 4) {
        return Err(Error::InsufficientDraws(format!(
            "chain with {} draws",
            c.len()
        )));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("chains differ in length".into()));
    }
    Ok(())
}

/// Split-`R-hat`: each chain is halved, then the classic between/within
/// variance ratio is formed. Constant identical chains give exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let parts = halves(chains);
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let within: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
        .collect();
    let w = mean(&within);
    let grand = mean(&means);
    let b = n * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (means.len() as f64 - 1.0);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok(sqrt(var_plus / w))
}

/// Rank-normalised bulk effective sample size over split chains, with
/// Geyer's initial monotone sequence truncation. `NaN` for constant draws.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let z = rank_normalise(chains);
    let parts = halves(&z);
    Ok(ess_of(&parts))
}

fn rank_normalise(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (ci, c) in chains.iter().enumerate() {
        for (i, x) in c.iter().enumerate() {
            order.push((*x, ci, i));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].0 == order[i].0 {
            j += 1;
        }
        // average rank (1-based) for ties
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal_quantile((rank - 0.375) / (s + 0.25));
        for item in &order[i..=j] {
            out[item.1][item.2] = z;
        }
        i = j + 1;
    }
    out
}

fn ess_of(parts: &[&[f64]]) -> f64 {
    let m = parts.len();
    let n = parts[0].len();
    let nf = n as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let autocov = |p: &[f64], mu: f64, lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += (p[t] - mu) * (p[t + lag] - mu);
        }
        acc / nf
    };
    let acov0: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| autocov(p, *mu, 0))
        .collect();
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = mean(&means);
        var_plus += means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov: f64 = parts
            .iter()
            .zip(&means)
            .map(|(p, mu)| autocov(p, *mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    // Geyer: sum positive, monotone pair sums
    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let r0 = if k == 0 { 1.0 } else { rho(2 * k) };
        let r1 = rho(2 * k + 1);
        let mut pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau_sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / libm::log10(m as f64 * nf));
    m as f64 * nf / tau
}

/// Split-`R-hat` and bulk ESS of every monitored scalar plus `R_t` on every
/// 25th timeline day, and per-chain acceptance.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<DiagnosticsReport> {
    if draws.chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "need at least 2 chains, got {}",
            draws.chains.len()
        )));
    }
    if let Some(c) = draws.chains.iter().find(|c| c.len() < MIN_DRAWS_PER_CHAIN) {
        return Err(Error::InsufficientDraws(format!(
            "chain {} has {} post-warmup draws; need at least {MIN_DRAWS_PER_CHAIN}",
            c.chain,
            c.len()
        )));
    }
    let mut columns: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for name in &draws.scalar_names {
        if let Some(cols) = draws.scalar_chains(name) {
            columns.push((name.clone(), cols));
        }
    }
    let mut day = 24;
    while day < draws.horizon {
        let cols = draws
            .chains
            .iter()
            .map(|c| c.rt.iter().map(|row| row[day]).collect())
            .collect();
        columns.push((format!("rt_day_{}", draws.timeline_start + day), cols));
        day += 25;
    }
    let mut scalars = Vec::with_capacity(columns.len());
    for (name, cols) in columns {
        let rhat = split_rhat(&cols)?;
        let ess_bulk = bulk_ess(&cols)?;
        scalars.push(ScalarDiagnostic {
            flagged: rhat > RHAT_FLAG || rhat.is_nan(),
            name,
            rhat,
            ess_bulk,
        });
    }
    Ok(DiagnosticsReport {
        scalars,
        chain_acceptance: draws.chains.iter().map(|c| c.overall_acceptance).collect(),
        block_acceptance: draws.chains.iter().map(|c| c.acceptance.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    extern crate std;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::vec::Vec;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| shift + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    #[test]
    fn constant_identical_chains_give_one() {
        let chains = vec![vec![2.5; 200], vec![2.5; 200], vec![2.5; 200]];
        assert_eq!(split_rhat(&chains).unwrap(), 1.0);
    }

    #[test]
    fn iid_chains_close_to_one() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normals(s, 1000, 0.0)).collect();
        let r = split_rhat(&chains).unwrap();
        assert!(r < 1.01, "{r}");
    }

    #[test]
    fn separated_chains_flagged() {
        let chains = vec![normals(1, 500, 0.0), normals(2, 500, 5.0)];
        assert!(split_rhat(&chains).unwrap() > 1.5);
    }

    #[test]
    fn iid_ess_near_draw_count() {
        let chains: Vec<Vec<f64>> = (10..14).map(|s| normals(s, 1000, 0.0)).collect();
        let ess = bulk_ess(&chains).unwrap();
        assert!((ess / 4000.0 - 1.0).abs() < 0.1, "ess {ess}");
    }

    #[test]
    fn ar1_ess_matches_autocorrelation_oracle() {
        // for AR(1) with coefficient rho the integrated autocorrelation time is (1 + rho) / (1 - rho)
        let rho: f64 = 0.8;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|s| {
                let e = normals(100 + s, 5000, 0.0);
                let mut x = 0.0;
                e.iter()
                    .map(|ei| {
                        x = rho * x + (1.0 - rho * rho).sqrt() * ei;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = bulk_ess(&chains).unwrap();
        let expected = 20_000.0 * (1.0 - rho) / (1.0 + rho);
        assert!(
            (ess / expected - 1.0).abs() < 0.2,
            "ess {ess} vs {expected}"
        );
    }

    #[test]
    fn too_few_chains_rejected() {
        assert!(matches!(
            split_rhat(&[vec![1.0; 10]]),
            Err(Error::InsufficientDraws(_))
        ));
    }
}
