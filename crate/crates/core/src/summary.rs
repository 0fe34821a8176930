//! Posterior summaries of a fit: daily medians with 50% and 95% credible
//! bands, scalar summaries and the posterior of the occupied-phase count.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::inference::{ChainDraws, ObservationRegime, PosteriorDraws};
use crate::special::{mean, quantile_sorted, variance};

/// Median with central 50% and 95% credible intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Band {
    pub median: f64,
    pub lower_50: f64,
    pub upper_50: f64,
    pub lower_95: f64,
    pub upper_95: f64,
}

impl Band {
    /// Band of a sample; `values` is sorted in place.
    pub fn of(values: &mut [f64]) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        Self {
            median: quantile_sorted(values, 0.5),
            lower_50: quantile_sorted(values, 0.25),
            upper_50: quantile_sorted(values, 0.75),
            lower_95: quantile_sorted(values, 0.025),
            upper_95: quantile_sorted(values, 0.975),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            median: self.median * factor,
            lower_50: self.lower_50 * factor,
            upper_50: self.upper_50 * factor,
            lower_95: self.lower_95 * factor,
            upper_95: self.upper_95 * factor,
        }
    }

    pub fn covers_95(&self, x: f64) -> bool {
        self.lower_95 <= x && x <= self.upper_95
    }
}

/// Daily quantities summarised over the model timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DailyQuantity {
    Rt,
    Re,
    Infections,
    CumulativeInfections,
    DeathsFit,
}

impl DailyQuantity {
    pub const ALL: [DailyQuantity; 5] = [
        DailyQuantity::Rt,
        DailyQuantity::Re,
        DailyQuantity::Infections,
        DailyQuantity::CumulativeInfections,
        DailyQuantity::DeathsFit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DailyQuantity::Rt => "rt",
            DailyQuantity::Re => "re",
            DailyQuantity::Infections => "infections",
            DailyQuantity::CumulativeInfections => "cumulative_infections",
            DailyQuantity::DeathsFit => "deaths_fit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.as_str() == s)
    }

    /// Whether fits in `regime` produce this quantity.
    pub fn available(&self, regime: ObservationRegime) -> bool {
        !matches!(
            (self, regime),
            (DailyQuantity::DeathsFit, ObservationRegime::Infections)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DailySummary {
    pub quantity: DailyQuantity,
    /// One band per timeline day.
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalarSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitSummary {
    pub model: String,
    pub regime: ObservationRegime,
    pub population_n: f64,
    /// Input-series day (1-based) of timeline day 1.
    pub timeline_start: usize,
    pub horizon: usize,
    pub n_draws: usize,
    pub daily: Vec<DailySummary>,
    pub scalars: Vec<ScalarSummary>,
    /// `(occupied phases, draws)`, ascending in the phase count.
    pub phase_counts: Vec<(usize, usize)>,
}

impl FitSummary {
    pub fn daily(&self, quantity: DailyQuantity) -> Option<&DailySummary> {
        self.daily.iter().find(|d| d.quantity == quantity)
    }

    /// Most frequent occupied-phase count (the smaller one on ties).
    pub fn phase_mode(&self) -> Option<usize> {
        self.phase_counts
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|p| p.0)
    }

    /// Attack rate (cumulative infections over population) on each day.
    pub fn attack_rate(&self) -> Option<Vec<Band>> {
        let cum = self.daily(DailyQuantity::CumulativeInfections)?;
        Some(
            cum.bands
                .iter()
                .map(|b| b.scaled(1.0 / self.population_n))
                .collect(),
        )
    }
}

fn daily_draws(chain: &ChainDraws, quantity: DailyQuantity) -> Vec<Vec<f64>> {
    match quantity {
        DailyQuantity::Rt => chain.rt.clone(),
        DailyQuantity::Re => chain.re.clone(),
        DailyQuantity::Infections => chain.infections.clone(),
        DailyQuantity::DeathsFit => chain.deaths_fit.clone(),
        DailyQuantity::CumulativeInfections => chain
            .infections
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Summarises pooled draws of every daily quantity and monitored scalar.
pub fn summarize(draws: &PosteriorDraws) -> Result<FitSummary> {
    let n_draws = draws.n_draws();
    if n_draws == 0 {
        return Err(Error::InsufficientDraws(
            "no posterior draws to summarise".into(),
        ));
    }
    let mut daily = Vec::new();
    for quantity in DailyQuantity::ALL {
        if !quantity.available(draws.regime) {
            continue;
        }
        let per_chain: Vec<Vec<Vec<f64>>> = draws
            .chains
            .iter()
            .map(|c| daily_draws(c, quantity))
            .collect();
        let mut bands = Vec::with_capacity(draws.horizon);
        let mut column = Vec::with_capacity(n_draws);
        for day in 0..draws.horizon {
            column.clear();
            for rows in &per_chain {
                for row in rows {
                    let v = row.get(day).copied().ok_or_else(|| {
                        Error::Shape(format!(
                            "{} draw has {} days, timeline {}",
                            quantity.as_str(),
                            row.len(),
                            draws.horizon
                        ))
                    })?;
                    column.push(v);
                }
            }
            bands.push(Band::of(&mut column));
        }
        daily.push(DailySummary { quantity, bands });
    }
    let mut scalars = Vec::new();
    for name in &draws.scalar_names {
        let mut pooled: Vec<f64> = draws
            .scalar_chains(name)
            .unwrap_or_default()
            .into_iter()
            .flatten()
            .collect();
        let m = mean(&pooled);
        let sd = sqrt(variance(&pooled));
        scalars.push(ScalarSummary {
            name: name.to_string(),
            mean: m,
            sd,
            band: Band::of(&mut pooled),
        });
    }
    let mut phase_counts: Vec<(usize, usize)> = Vec::new();
    for k in draws.chains.iter().flat_map(|c| c.occupied.iter().copied()) {
        match phase_counts.iter_mut().find(|p| p.0 == k) {
            Some(p) => p.1 += 1,
            None => phase_counts.push((k, 1)),
        }
    }
    phase_counts.sort_unstable();
    Ok(FitSummary {
        model: draws.model.clone(),
        regime: draws.regime,
        population_n: draws.population_n,
        timeline_start: draws.timeline_start,
        horizon: draws.horizon,
        n_draws,
        daily,
        scalars,
        phase_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chain(id: usize, rt: Vec<Vec<f64>>, occupied: Vec<usize>) -> ChainDraws {
        let n = rt.len();
        ChainDraws {
            chain: id,
            scalars: (0..n).map(|i| vec![i as f64]).collect(),
            re: rt.clone(),
            infections: rt
                .iter()
                .map(|r| r.iter().map(|x| 10.0 * x).collect())
                .collect(),
            deaths_fit: vec![],
            pointwise: vec![vec![-1.0]; n],
            total_ll: vec![-1.0; n],
            occupied,
            changepoints: vec![vec![]; n],
            acceptance: vec![],
            overall_acceptance: 0.3,
            rt,
        }
    }

    fn draws() -> PosteriorDraws {
        PosteriorDraws {
            model: "dp".into(),
            regime: ObservationRegime::Infections,
            population_n: 1000.0,
            timeline_start: 3,
            horizon: 2,
            scored_days: vec![4],
            observed: vec![5, 6],
            scalar_names: vec!["phases".into()],
            chains: vec![
                chain(0, vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![1, 2]),
                chain(1, vec![vec![5.0, 6.0], vec![7.0, 8.0]], vec![2, 3]),
            ],
        }
    }

    #[test]
    fn bands_are_ordered_and_match_quantiles() {
        let s = summarize(&draws()).unwrap();
        let rt = s.daily(DailyQuantity::Rt).unwrap();
        assert_eq!(rt.bands.len(), 2);
        // pooled day-1 values 1, 3, 5, 7: type-7 median 4, quartiles 2.5 and 5.5
        assert_eq!(rt.bands[0].median, 4.0);
        assert_eq!(rt.bands[0].lower_50, 2.5);
        assert_eq!(rt.bands[0].upper_50, 5.5);
        for d in &s.daily {
            for b in &d.bands {
                assert!(b.lower_95 <= b.lower_50 && b.lower_50 <= b.median);
                assert!(b.median <= b.upper_50 && b.upper_50 <= b.upper_95);
            }
        }
        assert!(s.daily(DailyQuantity::DeathsFit).is_none());
    }

    #[test]
    fn cumulative_infections_and_attack_rate() {
        let s = summarize(&draws()).unwrap();
        let cum = s.daily(DailyQuantity::CumulativeInfections).unwrap();
        // per-draw totals 30, 70, 110, 150
        assert_eq!(cum.bands[1].median, 90.0);
        let ar = s.attack_rate().unwrap();
        assert_eq!(ar[1].median, 90.0 / 1000.0);
    }

    #[test]
    fn phase_count_table_and_mode() {
        let s = summarize(&draws()).unwrap();
        assert_eq!(s.phase_counts, vec![(1, 1), (2, 2), (3, 1)]);
        assert_eq!(s.phase_mode(), Some(2));
        assert_eq!(s.scalars[0].name, "phases");
        assert_eq!(s.scalars[0].mean, 0.5);
    }
}
