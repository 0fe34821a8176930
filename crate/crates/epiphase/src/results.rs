//! Result files of a fit and their lossless read-back.
//!
//! Tabular files are CSV whose first line is a metadata comment,
//! `# format=<name> version=<n> rows=<rows> key=value ...`; the row count
//! lets a truncated file be told apart from a short one. Draw subsamples
//! and diagnostics are JSON objects carrying the same `format` and
//! `version` fields. Every file is written to a temporary file in the
//! target directory and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use epiphase_core::inference::{DiagnosticsReport, ObservationRegime, PosteriorDraws};
use epiphase_core::selection::PointwiseLogLik;
use epiphase_core::summary::{Band, DailyQuantity, DailySummary, FitSummary, ScalarSummary};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::series::DateAxis;

/// Version of every result format written by this crate.
pub const RESULTS_VERSION: u32 = 1;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SCALARS_FILE: &str = "scalars.csv";
pub const PHASES_FILE: &str = "phases.csv";
pub const POINTWISE_FILE: &str = "pointwise.csv";
pub const DRAWS_FILE: &str = "draws.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

const SUMMARY_FORMAT: &str = "epiphase-summary";
const SCALARS_FORMAT: &str = "epiphase-scalars";
const PHASES_FORMAT: &str = "epiphase-phases";
const POINTWISE_FORMAT: &str = "epiphase-pointwise";
const DRAWS_FORMAT: &str = "epiphase-draws";
const DIAGNOSTICS_FORMAT: &str = "epiphase-diagnostics";

const BAND_COLUMNS: [&str; 5] = ["median", "lower_50", "upper_50", "lower_95", "upper_95"];

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let werr = |source| AppError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(werr)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(werr)?;
    }
    tmp.as_file().sync_all().map_err(werr)?;
    tmp.persist(path).map_err(|e| werr(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)
            .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|source| AppError::Write {
            path: path.into(),
            source,
        })
    })
}

// ---------------------------------------------------------------------------
// Headed CSV
// ---------------------------------------------------------------------------

/// Metadata line of a headed CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileHeader {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub meta: BTreeMap<String, String>,
}

impl FileHeader {
    fn new(format: &str, rows: usize, meta: &[(&str, String)]) -> Self {
        Self {
            format: format.into(),
            version: RESULTS_VERSION,
            rows,
            meta: meta
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    fn line(&self) -> String {
        let mut s = format!(
            "# format={} version={} rows={}",
            self.format, self.version, self.rows
        );
        for (k, v) in &self.meta {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }

    fn parse(path: &Path, line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| AppError::parse(path, "missing `# format=...` header line"))?;
        let mut fields = BTreeMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| AppError::parse(path, format!("bad header field `{tok}`")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let mut take = |k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| AppError::parse(path, format!("header lacks `{k}`")))
        };
        let format = take("format")?;
        let version = take("version")?
            .parse()
            .map_err(|_| AppError::parse(path, "header version is not an integer"))?;
        let rows = take("rows")?
            .parse()
            .map_err(|_| AppError::parse(path, "header rows is not an integer"))?;
        Ok(Self {
            format,
            version,
            rows,
            meta: fields,
        })
    }

    pub fn get(&self, key: &str, path: &Path) -> Result<&str> {
        self.meta
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| AppError::parse(path, format!("header lacks `{key}`")))
    }
}

fn check_schema(path: &Path, header: &FileHeader, expected: &str) -> Result<()> {
    if header.format != expected || header.version != RESULTS_VERSION {
        return Err(AppError::Schema {
            path: path.into(),
            found: header.format.clone(),
            found_version: header.version,
            expected: expected.into(),
            expected_version: RESULTS_VERSION,
        });
    }
    Ok(())
}

fn write_headed(
    path: &Path,
    header: &FileHeader,
    columns: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    debug_assert_eq!(header.rows, rows.len());
    write_atomic(path, |w| {
        let werr = |source| AppError::Write {
            path: path.into(),
            source,
        };
        writeln!(w, "{}", header.line()).map_err(werr)?;
        let mut cw = csv::Writer::from_writer(w);
        let cerr = |e: csv::Error| AppError::Runtime(format!("{}: {e}", path.display()));
        cw.write_record(columns).map_err(cerr)?;
        for r in rows {
            cw.write_record(r).map_err(cerr)?;
        }
        cw.flush().map_err(werr)
    })
}

/// Header, column names and rows of a headed CSV file; fails unless the
/// row count matches the header.
fn read_headed(
    path: &Path,
    expected: &str,
) -> Result<(FileHeader, Vec<String>, Vec<csv::StringRecord>)> {
    let text = fs::read_to_string(path).map_err(|source| AppError::Read {
        path: path.into(),
        source,
    })?;
    if !text.ends_with('\n') {
        return Err(AppError::parse(
            path,
            "truncated: file does not end with a complete line",
        ));
    }
    let (first, body) = text.split_once('\n').expect("ends with a newline");
    let header = FileHeader::parse(path, first.trim_end())?;
    check_schema(path, &header, expected)?;
    let mut cr = csv::Reader::from_reader(body.as_bytes());
    let columns: Vec<String> = cr
        .headers()
        .map_err(|e| AppError::parse(path, format!("column header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::with_capacity(header.rows);
    for (i, rec) in cr.records().enumerate() {
        let rec = rec.map_err(|e| AppError::parse(path, format!("data row {}: {e}", i + 1)))?;
        if rec.len() != columns.len() {
            return Err(AppError::parse(
                path,
                format!(
                    "data row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    columns.len()
                ),
            ));
        }
        rows.push(rec);
    }
    if rows.len() != header.rows {
        return Err(AppError::parse(
            path,
            format!(
                "truncated: header promises {} rows, found {}",
                header.rows,
                rows.len()
            ),
        ));
    }
    Ok((header, columns, rows))
}

fn num(path: &Path, row: usize, text: &str) -> Result<f64> {
    text.parse()
        .map_err(|_| AppError::parse(path, format!("data row {row}: `{text}` is not a number")))
}

fn int(path: &Path, row: usize, text: &str) -> Result<usize> {
    text.parse()
        .map_err(|_| AppError::parse(path, format!("data row {row}: `{text}` is not a count")))
}

fn band_fields(b: &Band) -> [String; 5] {
    [b.median, b.lower_50, b.upper_50, b.lower_95, b.upper_95].map(|x| x.to_string())
}

fn band_from(path: &Path, row: usize, fields: &[&str]) -> Result<Band> {
    Ok(Band {
        median: num(path, row, fields[0])?,
        lower_50: num(path, row, fields[1])?,
        upper_50: num(path, row, fields[2])?,
        lower_95: num(path, row, fields[3])?,
        upper_95: num(path, row, fields[4])?,
    })
}

// ---------------------------------------------------------------------------
// Axis encoding
// ---------------------------------------------------------------------------

fn axis_text(axis: &DateAxis) -> String {
    match axis {
        DateAxis::Calendar(d) => format!("date:{}", d.format(crate::series::DATE_FORMAT)),
        DateAxis::Index(i) => format!("index:{i}"),
    }
}

fn parse_axis(path: &Path, text: &str) -> Result<DateAxis> {
    let bad = || AppError::parse(path, format!("bad axis `{text}`"));
    match text.split_once(':') {
        Some(("date", d)) => chrono::NaiveDate::parse_from_str(d, crate::series::DATE_FORMAT)
            .map(DateAxis::Calendar)
            .map_err(|_| bad()),
        Some(("index", i)) => i.parse().map(DateAxis::Index).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

pub fn parse_regime(path: &Path, text: &str) -> Result<ObservationRegime> {
    match text {
        "deaths" => Ok(ObservationRegime::Deaths),
        "infections" => Ok(ObservationRegime::Infections),
        other => Err(AppError::parse(path, format!("unknown regime `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// A fit summary together with the day labels of its input series.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSummary {
    pub region: String,
    /// Label of day 1 of the input series.
    pub axis: DateAxis,
    pub summary: FitSummary,
}

impl StoredSummary {
    /// Label of timeline day `day` (0-based).
    pub fn label(&self, day: usize) -> String {
        self.axis
            .label(self.summary.timeline_start - 1 + day)
            .to_string()
    }
}

/// Writes `summary.csv`, `scalars.csv` and `phases.csv` into `dir`.
pub fn write_summary(dir: &Path, stored: &StoredSummary) -> Result<Vec<PathBuf>> {
    let s = &stored.summary;
    let meta = [
        ("model", s.model.clone()),
        ("regime", s.regime.as_str().to_string()),
        ("population", s.population_n.to_string()),
        ("timeline_start", s.timeline_start.to_string()),
        ("horizon", s.horizon.to_string()),
        ("n_draws", s.n_draws.to_string()),
        ("axis", axis_text(&stored.axis)),
        ("region", stored.region.replace(char::is_whitespace, "_")),
    ];
    let mut rows = Vec::new();
    for d in &s.daily {
        for (day, b) in d.bands.iter().enumerate() {
            let mut r = vec![
                d.quantity.as_str().to_string(),
                (day + 1).to_string(),
                (s.timeline_start + day).to_string(),
                stored.label(day),
            ];
            r.extend(band_fields(b));
            rows.push(r);
        }
    }
    let mut columns: Vec<String> = ["quantity", "day", "series_day", "label"]
        .map(String::from)
        .to_vec();
    columns.extend(BAND_COLUMNS.map(String::from));
    let summary_path = dir.join(SUMMARY_FILE);
    write_headed(
        &summary_path,
        &FileHeader::new(SUMMARY_FORMAT, rows.len(), &meta),
        &columns,
        &rows,
    )?;

    let scalar_rows: Vec<Vec<String>> = s
        .scalars
        .iter()
        .map(|sc| {
            let mut r = vec![sc.name.clone(), sc.mean.to_string(), sc.sd.to_string()];
            r.extend(band_fields(&sc.band));
            r
        })
        .collect();
    let mut columns: Vec<String> = ["name", "mean", "sd"].map(String::from).to_vec();
    columns.extend(BAND_COLUMNS.map(String::from));
    let scalars_path = dir.join(SCALARS_FILE);
    write_headed(
        &scalars_path,
        &FileHeader::new(SCALARS_FORMAT, scalar_rows.len(), &meta[..1]),
        &columns,
        &scalar_rows,
    )?;

    let total = s.phase_counts.iter().map(|p| p.1).sum::<usize>().max(1) as f64;
    let phase_rows: Vec<Vec<String>> = s
        .phase_counts
        .iter()
        .map(|(k, n)| {
            vec![
                k.to_string(),
                n.to_string(),
                (*n as f64 / total).to_string(),
            ]
        })
        .collect();
    let phases_path = dir.join(PHASES_FILE);
    write_headed(
        &phases_path,
        &FileHeader::new(PHASES_FORMAT, phase_rows.len(), &meta[..1]),
        &["occupied", "draws", "probability"].map(String::from),
        &phase_rows,
    )?;
    Ok(vec![summary_path, scalars_path, phases_path])
}

pub fn read_summary(dir: &Path) -> Result<StoredSummary> {
    let path = dir.join(SUMMARY_FILE);
    let (h, _, rows) = read_headed(&path, SUMMARY_FORMAT)?;
    let model = h.get("model", &path)?.to_string();
    let regime = parse_regime(&path, h.get("regime", &path)?)?;
    let population_n = num(&path, 0, h.get("population", &path)?)?;
    let timeline_start = int(&path, 0, h.get("timeline_start", &path)?)?;
    let horizon = int(&path, 0, h.get("horizon", &path)?)?;
    let n_draws = int(&path, 0, h.get("n_draws", &path)?)?;
    let axis = parse_axis(&path, h.get("axis", &path)?)?;
    let region = h.meta.get("region").cloned().unwrap_or_default();
    let mut daily: Vec<DailySummary> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let q = DailyQuantity::parse(&r[0]).ok_or_else(|| {
            AppError::parse(
                &path,
                format!("data row {row}: unknown quantity `{}`", &r[0]),
            )
        })?;
        let day = int(&path, row, &r[1])?;
        let fields: Vec<&str> = r.iter().skip(4).collect();
        let band = band_from(&path, row, &fields)?;
        if daily.last().is_none_or(|d| d.quantity != q) {
            daily.push(DailySummary {
                quantity: q,
                bands: Vec::with_capacity(horizon),
            });
        }
        let current = daily.last_mut().expect("just pushed");
        if day != current.bands.len() + 1 {
            return Err(AppError::parse(
                &path,
                format!("data row {row}: day {day} out of sequence"),
            ));
        }
        current.bands.push(band);
    }
    if let Some(d) = daily.iter().find(|d| d.bands.len() != horizon) {
        return Err(AppError::parse(
            &path,
            format!(
                "{} has {} rows, horizon {horizon}",
                d.quantity.as_str(),
                d.bands.len()
            ),
        ));
    }

    let spath = dir.join(SCALARS_FILE);
    let (_, _, srows) = read_headed(&spath, SCALARS_FORMAT)?;
    let mut scalars = Vec::with_capacity(srows.len());
    for (i, r) in srows.iter().enumerate() {
        let fields: Vec<&str> = r.iter().skip(3).collect();
        scalars.push(ScalarSummary {
            name: r[0].to_string(),
            mean: num(&spath, i + 1, &r[1])?,
            sd: num(&spath, i + 1, &r[2])?,
            band: band_from(&spath, i + 1, &fields)?,
        });
    }

    let ppath = dir.join(PHASES_FILE);
    let (_, _, prows) = read_headed(&ppath, PHASES_FORMAT)?;
    let mut phase_counts = Vec::with_capacity(prows.len());
    for (i, r) in prows.iter().enumerate() {
        phase_counts.push((int(&ppath, i + 1, &r[0])?, int(&ppath, i + 1, &r[1])?));
    }
    Ok(StoredSummary {
        region,
        axis,
        summary: FitSummary {
            model,
            regime,
            population_n,
            timeline_start,
            horizon,
            n_draws,
            daily,
            scalars,
            phase_counts,
        },
    })
}

// ---------------------------------------------------------------------------
// Pointwise log-likelihood
// ---------------------------------------------------------------------------

/// Pointwise log-likelihood of one fit with the labels needed to compare it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPointwise {
    pub model: String,
    pub regime: ObservationRegime,
    /// Chain of each draw.
    pub chains: Vec<usize>,
    pub matrix: PointwiseLogLik,
}

impl StoredPointwise {
    pub fn from_draws(draws: &PosteriorDraws) -> Result<Self> {
        Ok(Self {
            model: draws.model.clone(),
            regime: draws.regime,
            chains: draws
                .chains
                .iter()
                .flat_map(|c| std::iter::repeat_n(c.chain, c.len()))
                .collect(),
            matrix: PointwiseLogLik::from_draws(draws)?,
        })
    }
}

pub fn write_pointwise(dir: &Path, p: &StoredPointwise) -> Result<PathBuf> {
    let meta = [
        ("model", p.model.clone()),
        ("regime", p.regime.as_str().to_string()),
    ];
    let mut columns = vec!["chain".to_string()];
    columns.extend(
        p.matrix
            .observation_days()
            .iter()
            .map(|d| format!("day_{d}")),
    );
    let rows: Vec<Vec<String>> = p
        .matrix
        .rows()
        .iter()
        .zip(&p.chains)
        .map(|(r, c)| {
            std::iter::once(c.to_string())
                .chain(r.iter().map(|x| x.to_string()))
                .collect()
        })
        .collect();
    let path = dir.join(POINTWISE_FILE);
    write_headed(
        &path,
        &FileHeader::new(POINTWISE_FORMAT, rows.len(), &meta),
        &columns,
        &rows,
    )?;
    Ok(path)
}

pub fn read_pointwise(dir: &Path) -> Result<StoredPointwise> {
    let path = dir.join(POINTWISE_FILE);
    let (h, columns, rows) = read_headed(&path, POINTWISE_FORMAT)?;
    let days = columns[1..]
        .iter()
        .map(|c| {
            c.strip_prefix("day_")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| AppError::parse(&path, format!("bad column `{c}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut chains = Vec::with_capacity(rows.len());
    let mut matrix = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        chains.push(int(&path, i + 1, &r[0])?);
        matrix.push(
            r.iter()
                .skip(1)
                .map(|x| num(&path, i + 1, x))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(StoredPointwise {
        model: h.get("model", &path)?.to_string(),
        regime: parse_regime(&path, h.get("regime", &path)?)?,
        chains,
        matrix: PointwiseLogLik::new(matrix, days)
            .map_err(|e| AppError::parse(&path, e.to_string()))?,
    })
}

// ---------------------------------------------------------------------------
// Draws and diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Versioned<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DrawsBody {
    draws: PosteriorDraws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiagnosticsBody {
    diagnostics: DiagnosticsReport,
}

#[derive(Deserialize)]
struct Probe {
    format: String,
    version: u32,
}

fn read_versioned<T: serde::de::DeserializeOwned>(path: &Path, expected: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| AppError::Read {
        path: path.into(),
        source,
    })?;
    let probe: Probe =
        serde_json::from_str(&text).map_err(|e| AppError::parse(path, e.to_string()))?;
    check_schema(
        path,
        &FileHeader {
            format: probe.format,
            version: probe.version,
            rows: 0,
            meta: BTreeMap::new(),
        },
        expected,
    )?;
    let v: Versioned<T> =
        serde_json::from_str(&text).map_err(|e| AppError::parse(path, e.to_string()))?;
    Ok(v.body)
}

/// Keeps `per_chain` evenly spaced draws of every chain.
pub fn subsample_draws(draws: &PosteriorDraws, per_chain: usize) -> PosteriorDraws {
    let mut out = draws.clone();
    for c in &mut out.chains {
        let n = c.len();
        if per_chain >= n {
            continue;
        }
        let keep: Vec<usize> = (0..per_chain).map(|i| i * n / per_chain).collect();
        fn pick<T: Clone>(v: &mut Vec<T>, keep: &[usize]) {
            if !v.is_empty() {
                *v = keep.iter().map(|i| v[*i].clone()).collect();
            }
        }
        pick(&mut c.scalars, &keep);
        pick(&mut c.rt, &keep);
        pick(&mut c.re, &keep);
        pick(&mut c.infections, &keep);
        pick(&mut c.deaths_fit, &keep);
        pick(&mut c.pointwise, &keep);
        pick(&mut c.total_ll, &keep);
        pick(&mut c.occupied, &keep);
        pick(&mut c.changepoints, &keep);
    }
    out
}

pub fn write_draws(dir: &Path, draws: &PosteriorDraws) -> Result<PathBuf> {
    let path = dir.join(DRAWS_FILE);
    write_json(
        &path,
        &Versioned {
            format: DRAWS_FORMAT.into(),
            version: RESULTS_VERSION,
            body: DrawsBody {
                draws: draws.clone(),
            },
        },
    )?;
    Ok(path)
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    Ok(read_versioned::<DrawsBody>(&dir.join(DRAWS_FILE), DRAWS_FORMAT)?.draws)
}

pub fn write_diagnostics(dir: &Path, report: &DiagnosticsReport) -> Result<PathBuf> {
    let path = dir.join(DIAGNOSTICS_FILE);
    let body = DiagnosticsBody {
        diagnostics: report.clone(),
    };
    write_json(
        &path,
        &Versioned {
            format: DIAGNOSTICS_FORMAT.into(),
            version: RESULTS_VERSION,
            body,
        },
    )?;
    Ok(path)
}
