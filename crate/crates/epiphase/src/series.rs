//! Daily count series: CSV parsing, cumulative-to-incident conversion,
//! the start rule and horizon trimming.

use std::fmt;
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use epiphase_core::epi::EpidemicState;
use epiphase_core::inference::{start_day, ObservationRegime};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// ISO 8601 calendar date format of the `date` column.
pub const DATE_FORMAT: &str = "%Y-%m-%d";

// ---------------------------------------------------------------------------
// Day axis
// ---------------------------------------------------------------------------

/// Label of the first day of a series: a calendar date or an integer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateAxis {
    Calendar(NaiveDate),
    Index(i64),
}

impl DateAxis {
    /// Label of the day `offset` days after the first.
    pub fn label(&self, offset: usize) -> DayLabel {
        match self {
            DateAxis::Calendar(d) => DayLabel::Date(*d + Days::new(offset as u64)),
            DateAxis::Index(i) => DayLabel::Index(i + offset as i64),
        }
    }

    /// Offset of `day` from the first day, if the label kinds match.
    pub fn offset_of(&self, day: &DayLabel) -> Option<i64> {
        match (self, day) {
            (DateAxis::Calendar(a), DayLabel::Date(b)) => Some((*b - *a).num_days()),
            (DateAxis::Index(a), DayLabel::Index(b)) => Some(b - a),
            _ => None,
        }
    }

    pub fn column_name(&self) -> &'static str {
        match self {
            DateAxis::Calendar(_) => "date",
            DateAxis::Index(_) => "date_index",
        }
    }
}

/// A single day, by calendar date or by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DayLabel {
    Index(i64),
    Date(NaiveDate),
}

impl DayLabel {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Some(DayLabel::Index(i));
        }
        NaiveDate::parse_from_str(s, DATE_FORMAT)
            .ok()
            .map(DayLabel::Date)
    }
}

impl fmt::Display for DayLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DayLabel::Index(i) => write!(f, "{i}"),
            DayLabel::Date(d) => write!(f, "{}", d.format(DATE_FORMAT)),
        }
    }
}

// ---------------------------------------------------------------------------
// Region series
// ---------------------------------------------------------------------------

/// Contiguous daily deaths and/or cases of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSeries {
    pub region: String,
    /// Label of the first retained day.
    pub axis: DateAxis,
    pub deaths: Option<Vec<u64>>,
    pub cases: Option<Vec<u64>>,
    pub population: Option<f64>,
    /// Label of the first day of the series as parsed, before any trimming.
    pub original_start: DateAxis,
    /// Non-fatal problems found while parsing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RegionSeries {
    pub fn len(&self) -> usize {
        self.deaths
            .as_ref()
            .or(self.cases.as_ref())
            .map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Counts observed under `regime` (cases stand for observed infections).
    pub fn counts(&self, regime: ObservationRegime) -> Option<&[u64]> {
        match regime {
            ObservationRegime::Deaths => self.deaths.as_deref(),
            ObservationRegime::Infections => self.cases.as_deref(),
        }
    }

    pub fn label(&self, offset: usize) -> DayLabel {
        self.axis.label(offset)
    }

    /// Days dropped from the front since parsing.
    pub fn leading_days_dropped(&self) -> usize {
        self.original_start
            .offset_of(&self.axis.label(0))
            .unwrap_or(0) as usize
    }

    fn map_counts(&self, f: impl Fn(&[u64]) -> Vec<u64>) -> Self {
        Self {
            deaths: self.deaths.as_deref().map(&f),
            cases: self.cases.as_deref().map(&f),
            ..self.clone()
        }
    }

    /// Keeps days up to and including `end`.
    pub fn truncate_at(&self, end: &DayLabel) -> Result<Self> {
        let offset = self.axis.offset_of(end).ok_or_else(|| {
            AppError::Config(format!(
                "horizon end {end} does not match the series' {} column",
                self.axis.column_name()
            ))
        })?;
        if offset < 0 {
            return Err(AppError::Config(format!(
                "horizon end {end} precedes the first day {}",
                self.label(0)
            )));
        }
        let keep = (offset as usize + 1).min(self.len());
        Ok(self.map_counts(|v| v[..keep].to_vec()))
    }

    /// Writes the series as incident counts in the same CSV layout it is parsed from.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.axis.column_name()];
        if self.deaths.is_some() {
            header.push("deaths");
        }
        if self.cases.is_some() {
            header.push("cases");
        }
        let fail = |e: csv::Error| AppError::Runtime(format!("writing series: {e}"));
        w.write_record(&header).map_err(fail)?;
        for i in 0..self.len() {
            let mut row = vec![self.label(i).to_string()];
            for col in [&self.deaths, &self.cases].into_iter().flatten() {
                row.push(col[i].to_string());
            }
            w.write_record(&row).map_err(fail)?;
        }
        w.flush()
            .map_err(|e| AppError::Runtime(format!("writing series: {e}")))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOptions {
    pub region: String,
    /// Counts are running totals to be differenced into daily counts.
    pub cumulative: bool,
    pub population: Option<f64>,
    /// Slot for a generic `count` column.
    pub count_regime: ObservationRegime,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            region: String::new(),
            cumulative: false,
            population: None,
            count_regime: ObservationRegime::Deaths,
        }
    }
}

/// Parses a daily series from CSV.
///
/// The header names a `date` column (ISO 8601, `YYYY-MM-DD`) or a
/// `date_index` column (integers), plus at least one count column: `deaths`,
/// `cases` (or `infections`) or `count`. Days must be strictly consecutive.
/// Negative daily counts, including those produced by differencing a
/// decreasing cumulative series, are clamped to zero with a warning.
/// `source` names the input in error messages; rows are numbered from 1 at
/// the header.
pub fn parse_series<R: Read>(
    reader: R,
    source: &str,
    options: &ParseOptions,
) -> Result<RegionSeries> {
    let row_err = |row: usize, message: String| AppError::Row {
        input: source.to_string(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| row_err(1, format!("unreadable header: {e}")))?
        .clone();
    let find = |names: &[&str]| {
        header
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let (date_col, calendar) = match (find(&["date"]), find(&["date_index"])) {
        (Some(c), _) => (c, true),
        (None, Some(c)) => (c, false),
        _ => {
            return Err(row_err(
                1,
                "header needs a `date` or `date_index` column".into(),
            ))
        }
    };
    let count_col = find(&["count"]);
    let mut deaths_col = find(&["deaths"]);
    let mut cases_col = find(&["cases", "infections"]);
    match (count_col, options.count_regime) {
        (Some(c), ObservationRegime::Deaths) if deaths_col.is_none() => deaths_col = Some(c),
        (Some(c), ObservationRegime::Infections) if cases_col.is_none() => cases_col = Some(c),
        _ => {}
    }
    if deaths_col.is_none() && cases_col.is_none() {
        return Err(row_err(
            1,
            "header needs a `deaths`, `cases`, `infections` or `count` column".into(),
        ));
    }

    let mut labels: Vec<DayLabel> = Vec::new();
    let mut raw: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| row_err(row, format!("unreadable record: {e}")))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let date_text = field(date_col);
        let label = if calendar {
            NaiveDate::parse_from_str(date_text, DATE_FORMAT)
                .map(DayLabel::Date)
                .map_err(|_| row_err(row, format!("date `{date_text}` is not YYYY-MM-DD")))?
        } else {
            date_text
                .parse::<i64>()
                .map(DayLabel::Index)
                .map_err(|_| row_err(row, format!("date_index `{date_text}` is not an integer")))?
        };
        if let Some(prev) = labels.last() {
            let expected = next_day(prev);
            if label != expected {
                return Err(row_err(
                    row,
                    format!("expected day {expected} after {prev}, found {label}"),
                ));
            }
        }
        labels.push(label);
        for (slot, col) in [deaths_col, cases_col].into_iter().enumerate() {
            if let Some(c) = col {
                let text = field(c);
                let v = parse_count(text)
                    .ok_or_else(|| row_err(row, format!("count `{text}` is not an integer")))?;
                raw[slot].push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(row_err(2, "series has no data rows".into()));
    }

    let mut warnings = Vec::new();
    let mut convert = |values: &[i64], name: &str| -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(values.len());
        let mut prev = 0i64;
        for (i, v) in values.iter().enumerate() {
            let incident = if options.cumulative {
                if *v < 0 {
                    return Err(row_err(i + 2, format!("negative cumulative {name} {v}")));
                }
                let d = v - prev;
                prev = *v;
                d
            } else {
                *v
            };
            if incident < 0 {
                warnings.push(format!(
                    "{}: {name} on {} is {incident}; clamped to 0",
                    source, labels[i]
                ));
            }
            out.push(incident.max(0) as u64);
        }
        Ok(out)
    };
    let deaths = deaths_col.map(|_| convert(&raw[0], "deaths")).transpose()?;
    let cases = cases_col.map(|_| convert(&raw[1], "cases")).transpose()?;
    let axis = match labels[0] {
        DayLabel::Date(d) => DateAxis::Calendar(d),
        DayLabel::Index(i) => DateAxis::Index(i),
    };
    Ok(RegionSeries {
        region: options.region.clone(),
        axis,
        deaths,
        cases,
        population: options.population,
        original_start: axis,
        warnings,
    })
}

fn next_day(day: &DayLabel) -> DayLabel {
    match day {
        DayLabel::Date(d) => DayLabel::Date(*d + Days::new(1)),
        DayLabel::Index(i) => DayLabel::Index(i + 1),
    }
}

fn parse_count(text: &str) -> Option<i64> {
    if let Ok(v) = text.parse::<i64>() {
        return Some(v);
    }
    // integral values written as floats, such as "12.0"
    let f: f64 = text.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Drops the days before the first on which cumulative `regime` counts
/// reach `threshold`. A threshold of 0 keeps the series unchanged.
pub fn apply_start_rule(
    series: &RegionSeries,
    threshold: u64,
    regime: ObservationRegime,
) -> Result<RegionSeries> {
    if series.is_empty() {
        return Err(AppError::Config("series is empty".into()));
    }
    if threshold == 0 {
        return Ok(series.clone());
    }
    let counts = series
        .counts(regime)
        .ok_or_else(|| AppError::Config(format!("series has no {} column", regime.as_str())))?;
    let first = start_day(counts, threshold)?;
    let mut trimmed = series.map_counts(|v| v[first - 1..].to_vec());
    trimmed.axis = match series.label(first - 1) {
        DayLabel::Date(d) => DateAxis::Calendar(d),
        DayLabel::Index(i) => DateAxis::Index(i),
    };
    Ok(trimmed)
}

/// Region series holding a simulated epidemic: infections as cases and
/// deaths, indexed from day 1.
pub fn simulated_series(state: &EpidemicState, region: &str) -> RegionSeries {
    let to_counts = |v: &[f64]| {
        v.iter()
            .map(|x| x.round().max(0.0) as u64)
            .collect::<Vec<u64>>()
    };
    RegionSeries {
        region: region.to_string(),
        axis: DateAxis::Index(1),
        deaths: Some(to_counts(&state.deaths_d)),
        cases: Some(to_counts(&state.infections_c)),
        population: Some(state.population_n),
        original_start: DateAxis::Index(1),
        warnings: Vec::new(),
    }
}

/// Writes a simulated epidemic as CSV with columns `date_index`,
/// `infections`, `deaths`.
pub fn write_simulation_csv<W: Write>(state: &EpidemicState, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| AppError::Runtime(format!("writing simulation: {e}"));
    w.write_record(["date_index", "infections", "deaths"])
        .map_err(fail)?;
    for t in 0..state.days() {
        w.write_record([
            (t + 1).to_string(),
            format!("{}", state.infections_c[t].round()),
            format!("{}", state.deaths_d[t].round()),
        ])
        .map_err(fail)?;
    }
    w.flush()
        .map_err(|e| AppError::Runtime(format!("writing simulation: {e}")))?;
    Ok(())
}
