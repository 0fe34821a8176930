//! Predictive model comparison from the pointwise log-likelihood matrix:
//! WAIC, Pareto-smoothed importance-sampling leave-one-out (PSIS-LOO) and a
//! ranking of candidate fits.
//!
//! Both criteria are reported on the deviance scale (`-2 * elpd`), so the
//! lower value is preferred.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, exp, expm1, floor, log, log1p, sqrt};

use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::special::log_sum_exp;

/// Pareto shape above which an observation's importance weights are unreliable.
pub const PARETO_K_FLAG: f64 = 0.7;
/// Draws required before the importance-ratio tail can be fitted.
pub const PSIS_MIN_DRAWS: usize = 100;

const GPD_PRIOR: f64 = 3.0;
const GPD_MIN_GRID: usize = 30;
const GPD_MIN_TAIL: usize = 5;

// ---------------------------------------------------------------------------
// Pointwise log-likelihood
// ---------------------------------------------------------------------------

/// Matrix of `log p(y_i | draw s)`, draws by observations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointwiseLogLik {
    rows: Vec<Vec<f64>>,
    /// Identifier of each observation (input-series day).
    observation_days: Vec<usize>,
}

impl PointwiseLogLik {
    pub fn new(rows: Vec<Vec<f64>>, observation_days: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientDraws(
                "pointwise matrix has no draws".into(),
            ));
        }
        let n = observation_days.len();
        if n == 0 {
            return Err(Error::Shape("pointwise matrix has no observations".into()));
        }
        if let Some((s, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Shape(format!(
                "draw {s} has {} entries for {n} observations",
                row.len()
            )));
        }
        for (s, row) in rows.iter().enumerate() {
            if let Some(i) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite log-likelihood at draw {s}, observation {i}"
                )));
            }
        }
        Ok(Self {
            rows,
            observation_days,
        })
    }

    /// Pointwise matrix of a fit, draws pooled in chain order.
    pub fn from_draws(draws: &PosteriorDraws) -> Result<Self> {
        Self::new(draws.pointwise_matrix(), draws.scored_days.clone())
    }

    pub fn n_draws(&self) -> usize {
        self.rows.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observation_days.len()
    }

    pub fn observation_days(&self) -> &[usize] {
        &self.observation_days
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Sample variance computed around the first element, exactly zero for
/// identical values.
fn shifted_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let x0 = xs[0];
    let (mut s1, mut s2) = (0.0, 0.0);
    for x in xs {
        let d = x - x0;
        s1 += d;
        s2 += d * d;
    }
    ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
}

fn standard_error(pointwise: &[f64]) -> f64 {
    if pointwise.len() < 2 {
        return 0.0;
    }
    sqrt(pointwise.len() as f64 * shifted_variance(pointwise))
}

// ---------------------------------------------------------------------------
// WAIC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Waic {
    /// `-2 * (lppd - p_waic)`.
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
    /// Standard error of `waic` over observations.
    pub se: f64,
    /// Per-observation deviance contributions; they sum to `waic`.
    pub pointwise: Vec<f64>,
}

pub fn waic(ll: &PointwiseLogLik) -> Result<Waic> {
    let s = ll.n_draws();
    if s < 2 {
        return Err(Error::InsufficientDraws(format!(
            "WAIC needs at least 2 draws, got {s}"
        )));
    }
    let log_s = log(s as f64);
    let mut pointwise = Vec::with_capacity(ll.n_observations());
    let (mut lppd, mut p_waic) = (0.0, 0.0);
    for i in 0..ll.n_observations() {
        let col = ll.column(i);
        let lppd_i = log_sum_exp(&col) - log_s;
        let p_i = shifted_variance(&col);
        lppd += lppd_i;
        p_waic += p_i;
        pointwise.push(-2.0 * (lppd_i - p_i));
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
        se: standard_error(&pointwise),
        pointwise,
    })
}

// ---------------------------------------------------------------------------
// PSIS-LOO
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Loo {
    /// `-2 * elpd_loo`.
    pub loo: f64,
    pub elpd: f64,
    /// `lppd - elpd_loo`.
    pub p_loo: f64,
    pub se: f64,
    /// Per-observation deviance contributions; they sum to `loo`.
    pub pointwise: Vec<f64>,
    /// Fitted Pareto shape per observation; `NaN` where no tail was fitted.
    pub pareto_k: Vec<f64>,
}

impl Loo {
    /// Observations whose Pareto shape exceeds the reliability threshold
    /// or could not be estimated.
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.pareto_k.len())
            .filter(|i| !(self.pareto_k[*i] <= PARETO_K_FLAG))
            .collect()
    }
}

/// Generalized-Pareto fit (shape `k`, scale `sigma`) to exceedances, by the
/// profile-likelihood weighted grid estimate with weak shrinkage of the
/// shape towards 0.5. `x` must be ascending and positive.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let m = GPD_MIN_GRID + floor(sqrt(nf)) as usize;
    let quartile = x[(floor(nf / 4.0 + 0.5) as usize).clamp(1, n) - 1];
    let x_max = x[n - 1];
    let profile = |theta: f64| -> f64 {
        let k = x.iter().map(|xi| log1p(-theta * xi)).sum::<f64>() / nf;
        nf * (log(-theta / k) - k - 1.0)
    };
    let thetas: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - sqrt(m as f64 / (j as f64 - 0.5))) / GPD_PRIOR / quartile)
        .collect();
    let lp: Vec<f64> = thetas.iter().map(|t| profile(*t)).collect();
    let norm = log_sum_exp(&lp);
    let theta_hat: f64 = thetas.iter().zip(&lp).map(|(t, l)| t * exp(l - norm)).sum();
    let k = x.iter().map(|xi| log1p(-theta_hat * xi)).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let shrink = 10.0;
    ((k * nf + shrink * 0.5) / (nf + shrink), sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k == 0.0 {
        -sigma * log1p(-p)
    } else {
        sigma * expm1(-k * log1p(-p)) / k
    }
}

/// Pareto-smoothed log importance weights for one observation and the
/// fitted tail shape (`NaN` when the tail was left unsmoothed).
pub fn psis_log_weights(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let sf = s as f64;
    let m = ceil((0.2 * sf).min(3.0 * sqrt(sf))) as usize;
    if m < GPD_MIN_TAIL || m >= s {
        return (lw, f64::NAN);
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|a, b| lw[*a].total_cmp(&lw[*b]));
    let tail = &order[s - m..];
    let cutoff = lw[order[s - m - 1]];
    let exp_cut = exp(cutoff);
    let exceed: Vec<f64> = tail.iter().map(|i| exp(lw[*i]) - exp_cut).collect();
    if exceed.iter().all(|e| *e <= 0.0) || exceed[0] == exceed[m - 1] {
        return (lw, f64::NAN);
    }
    let (k, sigma) = gpd_fit(&exceed);
    if !k.is_finite() || !(sigma > 0.0) {
        return (lw, f64::NAN);
    }
    for (j, i) in tail.iter().enumerate() {
        let p = (j as f64 + 0.5) / m as f64;
        let smoothed = log(exp_cut + gpd_quantile(p, k, sigma));
        lw[*i] = smoothed.min(0.0);
    }
    (lw, k)
}

pub fn psis_loo(ll: &PointwiseLogLik) -> Result<Loo> {
    let s = ll.n_draws();
    if s < PSIS_MIN_DRAWS {
        return Err(Error::InsufficientDraws(format!(
            "PSIS-LOO needs at least {PSIS_MIN_DRAWS} draws, got {s}"
        )));
    }
    let log_s = log(s as f64);
    let n = ll.n_observations();
    let mut pointwise = Vec::with_capacity(n);
    let mut pareto_k = Vec::with_capacity(n);
    let (mut elpd, mut lppd) = (0.0, 0.0);
    let mut buf = vec![0.0; s];
    for i in 0..n {
        let col = ll.column(i);
        lppd += log_sum_exp(&col) - log_s;
        let neg: Vec<f64> = col.iter().map(|x| -x).collect();
        let (lw, k) = psis_log_weights(&neg);
        for ((b, w), x) in buf.iter_mut().zip(&lw).zip(&col) {
            *b = w + x;
        }
        let elpd_i = log_sum_exp(&buf) - log_sum_exp(&lw);
        elpd += elpd_i;
        pointwise.push(-2.0 * elpd_i);
        pareto_k.push(k);
    }
    Ok(Loo {
        loo: -2.0 * elpd,
        elpd,
        p_loo: lppd - elpd,
        se: standard_error(&pointwise),
        pointwise,
        pareto_k,
    })
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

/// Both criteria for one fitted model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelCriteria {
    pub model: String,
    pub waic: Waic,
    pub loo: Loo,
}

impl ModelCriteria {
    pub fn evaluate(model: impl Into<String>, ll: &PointwiseLogLik) -> Result<Self> {
        Ok(Self {
            model: model.into(),
            waic: waic(ll)?,
            loo: psis_loo(ll)?,
        })
    }
}

/// Difference `b - a` of a criterion between two models with the standard
/// error of the paired per-observation differences.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriterionDifference {
    pub delta: f64,
    /// `NaN` when the models were scored on different observations.
    pub se: f64,
}

impl CriterionDifference {
    fn between(a: &[f64], b: &[f64], total_a: f64, total_b: f64) -> Self {
        let se = if a.len() == b.len() {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            standard_error(&d)
        } else {
            f64::NAN
        };
        Self {
            delta: total_b - total_a,
            se,
        }
    }

    /// The difference is smaller than twice its standard error.
    pub fn indistinguishable(&self) -> bool {
        self.delta.abs() < 2.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankedModel {
    pub model: String,
    pub waic: f64,
    pub waic_se: f64,
    pub p_waic: f64,
    pub loo: f64,
    pub loo_se: f64,
    pub p_loo: f64,
    pub n_pareto_flagged: usize,
    /// WAIC relative to the top-ranked model.
    pub waic_vs_best: CriterionDifference,
    /// LOO relative to the top-ranked model.
    pub loo_vs_best: CriterionDifference,
    /// WAIC difference to the top-ranked model is within 2 standard errors.
    pub indistinguishable: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    pub waic: CriterionDifference,
    pub loo: CriterionDifference,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankingReport {
    /// Ascending by WAIC, ties broken by LOO.
    pub ranking: Vec<RankedModel>,
    pub pairwise: Vec<PairwiseComparison>,
    pub waic_winner: String,
    pub loo_winner: String,
}

impl RankingReport {
    pub fn criteria_agree(&self) -> bool {
        self.waic_winner == self.loo_winner
    }

    pub fn winner(&self) -> &str {
        &self.waic_winner
    }
}

/// Orders models by WAIC (LOO breaks ties) and reports differences to the
/// winner, every pairwise difference, and each criterion's own winner.
pub fn rank_models(results: &[ModelCriteria]) -> Result<RankingReport> {
    if results.is_empty() {
        return Err(Error::InsufficientDraws("no models to rank".into()));
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|a, b| {
        let (x, y) = (&results[*a], &results[*b]);
        x.waic
            .waic
            .total_cmp(&y.waic.waic)
            .then(x.loo.loo.total_cmp(&y.loo.loo))
    });
    let best = &results[order[0]];
    let ranking = order
        .iter()
        .map(|i| {
            let m = &results[*i];
            let waic_vs_best = CriterionDifference::between(
                &best.waic.pointwise,
                &m.waic.pointwise,
                best.waic.waic,
                m.waic.waic,
            );
            let loo_vs_best = CriterionDifference::between(
                &best.loo.pointwise,
                &m.loo.pointwise,
                best.loo.loo,
                m.loo.loo,
            );
            RankedModel {
                model: m.model.clone(),
                waic: m.waic.waic,
                waic_se: m.waic.se,
                p_waic: m.waic.p_waic,
                loo: m.loo.loo,
                loo_se: m.loo.se,
                p_loo: m.loo.p_loo,
                n_pareto_flagged: m.loo.flagged().len(),
                indistinguishable: *i != order[0] && waic_vs_best.indistinguishable(),
                waic_vs_best,
                loo_vs_best,
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for (x, i) in order.iter().enumerate() {
        for j in &order[x + 1..] {
            let (a, b) = (&results[*i], &results[*j]);
            pairwise.push(PairwiseComparison {
                a: a.model.clone(),
                b: b.model.clone(),
                waic: CriterionDifference::between(
                    &a.waic.pointwise,
                    &b.waic.pointwise,
                    a.waic.waic,
                    b.waic.waic,
                ),
                loo: CriterionDifference::between(
                    &a.loo.pointwise,
                    &b.loo.pointwise,
                    a.loo.loo,
                    b.loo.loo,
                ),
            });
        }
    }
    let loo_best = (0..results.len())
        .min_by(|a, b| {
            let (x, y) = (&results[*a], &results[*b]);
            x.loo
                .loo
                .total_cmp(&y.loo.loo)
                .then(x.waic.waic.total_cmp(&y.waic.waic))
        })
        .expect("non-empty");
    Ok(RankingReport {
        ranking,
        pairwise,
        waic_winner: best.model.clone(),
        loo_winner: results[loo_best].model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    extern crate std;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, Distribution};
    use std::vec::Vec;

    fn matrix(rows: Vec<Vec<f64>>) -> PointwiseLogLik {
        let n = rows[0].len();
        PointwiseLogLik::new(rows, (1..=n).collect()).unwrap()
    }

    #[test]
    fn two_by_one_matches_hand_arithmetic() {
        let (a, b) = (0.5f64.ln(), 0.25f64.ln());
        let w = waic(&matrix(vec![vec![a], vec![b]])).unwrap();
        let lppd = ((0.5 + 0.25) / 2.0f64).ln();
        let mean = (a + b) / 2.0;
        let var = ((a - mean).powi(2) + (b - mean).powi(2)) / 1.0;
        assert!((w.lppd - lppd).abs() < 1e-14);
        assert!((w.p_waic - var).abs() < 1e-14);
        assert!((w.p_waic - 2.0f64.ln().powi(2) / 2.0).abs() < 1e-14);
        assert!((w.waic + 2.0 * (lppd - var)).abs() < 1e-13);
    }

    #[test]
    fn degenerate_posterior_has_zero_effective_parameters() {
        let row = vec![-1.3, -0.2, -7.9, -0.1];
        let ll = matrix(vec![row.clone(); 150]);
        let w = waic(&ll).unwrap();
        assert_eq!(w.p_waic, 0.0);
        let expected = -2.0 * row.iter().sum::<f64>();
        assert!((w.waic - expected).abs() < 1e-12);
        let l = psis_loo(&ll).unwrap();
        assert!((l.loo - expected).abs() < 1e-12);
        assert!(l.pareto_k.iter().all(|k| k.is_nan()));
        assert_eq!(l.flagged().len(), 4);
    }

    #[test]
    fn constant_shift_moves_waic_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| -rng.random::<f64>() * 3.0).collect())
            .collect();
        let c = 0.37;
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|x| x + c).collect())
            .collect();
        let (a, b) = (
            waic(&matrix(rows)).unwrap(),
            waic(&matrix(shifted)).unwrap(),
        );
        assert!((b.waic - (a.waic - 2.0 * 5.0 * c)).abs() < 1e-10);
        assert!((a.p_waic - b.p_waic).abs() < 1e-12);
    }

    #[test]
    fn too_few_draws_rejected() {
        assert!(matches!(
            waic(&matrix(vec![vec![-1.0]])),
            Err(Error::InsufficientDraws(_))
        ));
        assert!(matches!(
            psis_loo(&matrix(vec![vec![-1.0]; 99])),
            Err(Error::InsufficientDraws(_))
        ));
        assert!(PointwiseLogLik::new(vec![vec![f64::NEG_INFINITY]], vec![1]).is_err());
        assert!(PointwiseLogLik::new(vec![vec![0.0, 1.0], vec![0.0]], vec![1, 2]).is_err());
    }

    #[test]
    fn gpd_fit_recovers_known_shape() {
        // inverse-cdf draws from a GPD with shape 0.3 and scale 2
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x: Vec<f64> = (0..20_000)
            .map(|_| gpd_quantile(rng.random::<f64>(), 0.3, 2.0))
            .collect();
        x.sort_by(|a, b| a.total_cmp(b));
        let (k, sigma) = gpd_fit(&x);
        assert!((k - 0.3).abs() < 0.05, "k {k}");
        assert!((sigma / 2.0 - 1.0).abs() < 0.05, "sigma {sigma}");
    }

    /// Bernoulli observations under a Beta(1, 1) prior: posterior draws are
    /// exact, and leave-one-out predictive densities follow from refitting
    /// the conjugate posterior without each observation.
    fn bernoulli_toy(seed: u64, draws: usize) -> (PointwiseLogLik, f64) {
        let y = [1u8, 0, 1, 1, 0, 1, 1, 1];
        let n = y.len() as f64;
        let ones = y.iter().filter(|v| **v == 1).count() as f64;
        let post = Beta::new(1.0 + ones, 1.0 + n - ones).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..draws)
            .map(|_| {
                let p: f64 = post.sample(&mut rng);
                y.iter()
                    .map(|v| if *v == 1 { p.ln() } else { (1.0 - p).ln() })
                    .collect()
            })
            .collect();
        let mut exact = 0.0;
        for v in &y {
            let yi = f64::from(*v);
            let a = 1.0 + ones - yi;
            let b = 1.0 + (n - ones) - (1.0 - yi);
            let pred = if *v == 1 { a / (a + b) } else { b / (a + b) };
            exact += pred.ln();
        }
        (matrix(rows), -2.0 * exact)
    }

    #[test]
    fn psis_loo_matches_refit_on_conjugate_toy() {
        let reps: Vec<f64> = (0..30)
            .map(|s| psis_loo(&bernoulli_toy(100 + s, 4000).0).unwrap().loo)
            .collect();
        let exact = bernoulli_toy(0, 10).1;
        let m = reps.iter().sum::<f64>() / reps.len() as f64;
        let mc_se =
            (reps.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
        let (ll, _) = bernoulli_toy(7, 4000);
        let loo = psis_loo(&ll).unwrap();
        assert!(
            (loo.loo - exact).abs() < 2.0 * mc_se,
            "loo {} exact {exact} mc se {mc_se}",
            loo.loo
        );
        assert!(loo.pareto_k.iter().all(|k| *k < 0.5), "{:?}", loo.pareto_k);
        let w = waic(&ll).unwrap();
        assert!((w.waic - loo.loo).abs() < 2.0 * w.se);
    }

    #[test]
    fn draw_order_does_not_matter() {
        let (ll, _) = bernoulli_toy(5, 1000);
        let mut rows = ll.rows().to_vec();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let shuffled = matrix(rows);
        let (a, b) = (psis_loo(&ll).unwrap(), psis_loo(&shuffled).unwrap());
        assert!((a.loo - b.loo).abs() < 1e-9);
        assert!((waic(&ll).unwrap().waic - waic(&shuffled).unwrap().waic).abs() < 1e-9);
    }

    fn criteria(name: &str, rows: Vec<Vec<f64>>) -> ModelCriteria {
        ModelCriteria::evaluate(name, &matrix(rows)).unwrap()
    }

    fn noisy_rows(seed: u64, draws: usize, centres: &[f64]) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws)
            .map(|_| {
                centres
                    .iter()
                    .map(|c| c - 0.1 * rng.random::<f64>())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_model_ranks_itself() {
        let report = rank_models(&[criteria("only", noisy_rows(1, 200, &[-1.0, -2.0]))]).unwrap();
        assert_eq!(report.winner(), "only");
        assert!(report.criteria_agree());
        assert_eq!(report.ranking.len(), 1);
        assert!(!report.ranking[0].indistinguishable);
        assert!(rank_models(&[]).is_err());
    }

    #[test]
    fn ranking_follows_waic_and_flags_close_models() {
        let centres_a = [-1.0, -2.0, -1.5, -0.7, -1.1, -2.2];
        let centres_b: Vec<f64> = centres_a
            .iter()
            .enumerate()
            .map(|(i, c)| c + if i % 2 == 0 { 0.3 } else { -0.31 })
            .collect();
        let centres_c: Vec<f64> = centres_a.iter().map(|c| c - 3.0).collect();
        let models = [
            criteria("c", noisy_rows(3, 300, &centres_c)),
            criteria("a", noisy_rows(1, 300, &centres_a)),
            criteria("b", noisy_rows(2, 300, &centres_b)),
        ];
        let report = rank_models(&models).unwrap();
        let mut sorted: Vec<&ModelCriteria> = models.iter().collect();
        sorted.sort_by(|x, y| x.waic.waic.total_cmp(&y.waic.waic));
        let names: Vec<&str> = report.ranking.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(
            names,
            sorted.iter().map(|m| m.model.as_str()).collect::<Vec<_>>()
        );
        assert_eq!(report.winner(), sorted[0].model);
        // direct oracle for the standard error of each difference
        for r in &report.ranking[1..] {
            let m = models.iter().find(|m| m.model == r.model).unwrap();
            let d: Vec<f64> = sorted[0]
                .waic
                .pointwise
                .iter()
                .zip(&m.waic.pointwise)
                .map(|(x, y)| y - x)
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            let se = (d.len() as f64 * var).sqrt();
            assert!((r.waic_vs_best.se - se).abs() < 1e-9);
            assert_eq!(
                r.indistinguishable,
                (m.waic.waic - sorted[0].waic.waic).abs() < 2.0 * se
            );
        }
        let c = report.ranking.iter().find(|r| r.model == "c").unwrap();
        assert!(!c.indistinguishable);
        assert!(report.ranking.iter().any(|r| r.indistinguishable));
        assert_eq!(report.pairwise.len(), 3);
    }

    proptest! {
        #[test]
        fn effective_parameters_never_negative(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..0.0, 3), 2..40)) {
            let w = waic(&matrix(rows)).unwrap();
            prop_assert!(w.p_waic >= 0.0);
            prop_assert!((w.pointwise.iter().sum::<f64>() - w.waic).abs() < 1e-8 * w.waic.abs().max(1.0));
        }
    }
}
