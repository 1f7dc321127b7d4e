//! CSV exchange formats.
//!
//! All files are UTF-8, comma separated, with a header row. Scenario
//! temperature files additionally carry `# key=value` metadata lines before
//! the header identifying the climate model pair and emission pathway.
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! a write followed by a read reproduces values bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    AgeBucketScheme, AnnualMortalityData, AnnualMortalitySurface, DailyStratumSeries,
    DailyTemperatureSeries, DataError, Gender,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} line {line}: {msg}")]
    Row {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: DataError,
    },
}

/// Emission pathway identifier accepted in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rcp {
    Rcp26,
    Rcp45,
    Rcp85,
}

impl Rcp {
    pub const ALL: [Rcp; 3] = [Rcp::Rcp26, Rcp::Rcp45, Rcp::Rcp85];

    pub fn as_str(self) -> &'static str {
        match self {
            Rcp::Rcp26 => "rcp26",
            Rcp::Rcp45 => "rcp45",
            Rcp::Rcp85 => "rcp85",
        }
    }
}

impl FromStr for Rcp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "rcp26" => Ok(Rcp::Rcp26),
            "rcp45" => Ok(Rcp::Rcp45),
            "rcp85" => Ok(Rcp::Rcp85),
            other => Err(format!(
                "unknown emission pathway '{other}' (expected rcp26, rcp45 or rcp85)"
            )),
        }
    }
}

impl fmt::Display for Rcp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of one climate scenario: global model, regional model, pathway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub gcm: String,
    pub rcm: String,
    pub rcp: Rcp,
}

impl ScenarioMeta {
    /// Stable identifier used in output tables: `gcm/rcm`.
    pub fn model_id(&self) -> String {
        format!("{}/{}", self.gcm, self.rcm)
    }
}

struct Columns {
    idx: Vec<usize>,
}

impl Columns {
    fn resolve(path: &Path, headers: &csv::StringRecord, names: &[&str]) -> Result<Self, IoError> {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            let pos = headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| IoError::MissingColumn {
                    path: path.to_path_buf(),
                    column: (*name).to_string(),
                })?;
            idx.push(pos);
        }
        Ok(Self { idx })
    }

    fn get<'r>(
        &self,
        path: &Path,
        record: &'r csv::StringRecord,
        col: usize,
        line: u64,
    ) -> Result<&'r str, IoError> {
        record.get(self.idx[col]).ok_or_else(|| IoError::Row {
            path: path.to_path_buf(),
            line,
            msg: format!("row has only {} fields", record.len()),
        })
    }
}

fn row_err(path: &Path, line: u64, msg: impl Into<String>) -> IoError {
    IoError::Row {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_field<T: FromStr>(
    path: &Path,
    line: u64,
    field: &str,
    what: &str,
) -> Result<T, IoError> {
    field
        .trim()
        .parse::<T>()
        .map_err(|_| row_err(path, line, format!("cannot parse {what} from '{field}'")))
}

fn record_line(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Loads daily death counts and folds single ages into (gender, bucket)
/// strata.
///
/// Expected columns: `date, gender, age, deaths`. Rows may arrive in any
/// order; missing day-age combinations count zero deaths; several rows for
/// the same cell accumulate. Lines starting with `#` are ignored. The date
/// axis runs from the earliest to the latest date in the file. Strata are
/// returned in a fixed order: all female buckets youngest first, then all
/// male buckets.
pub fn load_daily_deaths(
    path: impl AsRef<Path>,
    scheme: &AgeBucketScheme,
) -> Result<Vec<DailyStratumSeries>, IoError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = Columns::resolve(path, &headers, &["date", "gender", "age", "deaths"])?;

    let mut rows: Vec<(NaiveDate, Gender, usize, u32)> = Vec::new();
    let mut first: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record_line(&record, i as u64 + 2);
        let date: NaiveDate = parse_field(path, line, cols.get(path, &record, 0, line)?, "date")?;
        let gender_s = cols.get(path, &record, 1, line)?;
        let gender = Gender::parse(gender_s)
            .ok_or_else(|| row_err(path, line, format!("unknown gender '{gender_s}'")))?;
        let age: u16 = parse_field(path, line, cols.get(path, &record, 2, line)?, "age")?;
        let deaths: u32 =
            parse_field(path, line, cols.get(path, &record, 3, line)?, "death count")?;
        let bucket = scheme.bucket_index(age).map_err(|source| IoError::Data {
            path: path.to_path_buf(),
            source,
        })?;
        first = Some(first.map_or(date, |f| f.min(date)));
        last = Some(last.map_or(date, |l| l.max(date)));
        rows.push((date, gender, bucket, deaths));
    }
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                msg: "file contains no data rows".into(),
            })
        }
    };
    let n_days = (last - first).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..n_days)
        .map(|i| first.checked_add_days(Days::new(i as u64)).expect("in range"))
        .collect();
    let nb = scheme.n_buckets();
    let mut counts = vec![vec![0u32; n_days]; 2 * nb];
    for (date, gender, bucket, deaths) in rows {
        let day = (date - first).num_days() as usize;
        counts[gender.index() * nb + bucket][day] += deaths;
    }
    let mut strata = Vec::with_capacity(2 * nb);
    for gender in Gender::BOTH {
        for bucket in 0..nb {
            let series = DailyStratumSeries::new(
                gender,
                bucket,
                scheme.label(bucket),
                dates.clone(),
                std::mem::take(&mut counts[gender.index() * nb + bucket]),
            )
            .map_err(|source| IoError::Data {
                path: path.to_path_buf(),
                source,
            })?;
            strata.push(series);
        }
    }
    Ok(strata)
}

/// Loads annual deaths and exposures on a complete (year, age, gender) grid.
///
/// Expected columns: `year, age, gender, deaths, exposure`. Deaths may be
/// fractional (as published in standardised life-table datasets); exposures
/// must be strictly positive. Every grid cell must appear exactly once.
pub fn load_annual_mortality(path: impl AsRef<Path>) -> Result<AnnualMortalityData, IoError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = Columns::resolve(path, &headers, &["year", "age", "gender", "deaths", "exposure"])?;

    let mut cells: BTreeMap<(Gender, u16, i32), (f64, f64)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record_line(&record, i as u64 + 2);
        let year: i32 = parse_field(path, line, cols.get(path, &record, 0, line)?, "year")?;
        let age: u16 = parse_field(path, line, cols.get(path, &record, 1, line)?, "age")?;
        let gender_s = cols.get(path, &record, 2, line)?;
        let gender = Gender::parse(gender_s)
            .ok_or_else(|| row_err(path, line, format!("unknown gender '{gender_s}'")))?;
        let deaths: f64 = parse_field(path, line, cols.get(path, &record, 3, line)?, "deaths")?;
        let exposure: f64 =
            parse_field(path, line, cols.get(path, &record, 4, line)?, "exposure")?;
        if !deaths.is_finite() || deaths < 0.0 {
            return Err(row_err(path, line, format!("deaths must be finite and non-negative, got {deaths}")));
        }
        if !exposure.is_finite() || exposure <= 0.0 {
            return Err(row_err(path, line, format!("exposure must be finite and strictly positive, got {exposure}")));
        }
        if cells.insert((gender, age, year), (deaths, exposure)).is_some() {
            return Err(row_err(
                path,
                line,
                format!("duplicate cell: year {year}, age {age}, gender {gender}"),
            ));
        }
    }
    if cells.is_empty() {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: "file contains no data rows".into(),
        });
    }
    let max_age = cells.keys().map(|&(_, a, _)| a).max().expect("non-empty");
    let (y0, y1) = cells
        .keys()
        .fold((i32::MAX, i32::MIN), |(lo, hi), &(_, _, y)| (lo.min(y), hi.max(y)));
    let ages: Vec<u16> = (0..=max_age).collect();
    let years: Vec<i32> = (y0..=y1).collect();

    let build = |gender: Gender| -> Result<AnnualMortalitySurface, IoError> {
        let mut deaths = DMatrix::zeros(ages.len(), years.len());
        let mut exposures = DMatrix::zeros(ages.len(), years.len());
        let mut missing: Vec<String> = Vec::new();
        for (ai, &age) in ages.iter().enumerate() {
            for (yi, &year) in years.iter().enumerate() {
                match cells.get(&(gender, age, year)) {
                    Some(&(d, e)) => {
                        deaths[(ai, yi)] = d;
                        exposures[(ai, yi)] = e;
                    }
                    None if missing.len() < 6 => {
                        missing.push(format!("({year}, {age}, {gender})"))
                    }
                    None => {}
                }
            }
        }
        if !missing.is_empty() {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                msg: format!(
                    "grid is incomplete; first missing cells (year, age, gender): {}",
                    missing.join(", ")
                ),
            });
        }
        Ok(AnnualMortalitySurface {
            ages: ages.clone(),
            years: years.clone(),
            deaths,
            exposures,
        })
    };

    Ok(AnnualMortalityData {
        female: build(Gender::Female)?,
        male: build(Gender::Male)?,
    })
}

/// Loads per-station daily temperatures, one series per station, sorted by
/// station identifier.
///
/// Expected columns: `date, station_id, tmin, tmean, tmax`. Each station
/// must cover a contiguous daily range with one row per day.
pub fn load_station_temperatures(
    path: impl AsRef<Path>,
) -> Result<Vec<DailyTemperatureSeries>, IoError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = Columns::resolve(path, &headers, &["date", "station_id", "tmin", "tmean", "tmax"])?;

    let mut by_station: BTreeMap<String, Vec<(NaiveDate, f64, f64, f64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record_line(&record, i as u64 + 2);
        let date: NaiveDate = parse_field(path, line, cols.get(path, &record, 0, line)?, "date")?;
        let station = cols.get(path, &record, 1, line)?.to_string();
        let tmin: f64 = parse_field(path, line, cols.get(path, &record, 2, line)?, "tmin")?;
        let tmean: f64 = parse_field(path, line, cols.get(path, &record, 3, line)?, "tmean")?;
        let tmax: f64 = parse_field(path, line, cols.get(path, &record, 4, line)?, "tmax")?;
        by_station
            .entry(station)
            .or_default()
            .push((date, tmin, tmean, tmax));
    }
    if by_station.is_empty() {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: "file contains no data rows".into(),
        });
    }
    let mut out = Vec::with_capacity(by_station.len());
    for (station, mut rows) in by_station {
        rows.sort_by_key(|r| r.0);
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(IoError::Invalid {
                    path: path.to_path_buf(),
                    msg: format!("station {station} has duplicate rows for {}", w[0].0),
                });
            }
        }
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
        report_gaps(path, &format!("station {station}"), &dates)?;
        let series = DailyTemperatureSeries::new(
            station,
            dates,
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
        )
        .map_err(|source| IoError::Data {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(series);
    }
    Ok(out)
}

fn report_gaps(path: &Path, what: &str, sorted_dates: &[NaiveDate]) -> Result<(), IoError> {
    let first = sorted_dates[0];
    let last = sorted_dates[sorted_dates.len() - 1];
    let expected = (last - first).num_days() as usize + 1;
    if expected == sorted_dates.len() {
        return Ok(());
    }
    let mut missing = Vec::new();
    let mut cursor = first;
    let mut it = sorted_dates.iter();
    let mut next = it.next();
    while cursor <= last {
        match next {
            Some(&d) if d == cursor => next = it.next(),
            _ => missing.push(cursor),
        }
        cursor = cursor.checked_add_days(Days::new(1)).expect("in range");
    }
    let shown: Vec<String> = missing.iter().take(8).map(|d| d.to_string()).collect();
    let suffix = if missing.len() > shown.len() {
        format!(" and {} more", missing.len() - shown.len())
    } else {
        String::new()
    };
    Err(IoError::Invalid {
        path: path.to_path_buf(),
        msg: format!(
            "{what} is missing {} day(s): {}{suffix}",
            missing.len(),
            shown.join(", ")
        ),
    })
}

/// Loads one climate scenario temperature path.
///
/// The file starts with `# gcm=`, `# rcm=` and `# rcp=` metadata lines,
/// followed by a normal CSV with columns `date, tmin, tmean, tmax` on a
/// contiguous daily axis. Gaps are reported with the missing days listed.
pub fn load_scenario_temperatures(
    path: impl AsRef<Path>,
) -> Result<(ScenarioMeta, DailyTemperatureSeries), IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut body_start = 0usize;
    let mut meta_lines = 0u64;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len() + 1;
            meta_lines += 1;
        } else {
            break;
        }
    }
    let need = |key: &str| -> Result<String, IoError> {
        meta.get(key).cloned().ok_or_else(|| IoError::Invalid {
            path: path.to_path_buf(),
            msg: format!("missing '# {key}=' metadata line"),
        })
    };
    let gcm = need("gcm")?;
    let rcm = need("rcm")?;
    let rcp: Rcp = need("rcp")?.parse().map_err(|e: String| IoError::Invalid {
        path: path.to_path_buf(),
        msg: e,
    })?;
    let meta = ScenarioMeta { gcm, rcm, rcp };

    let body = &text[body_start.min(text.len())..];
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = Columns::resolve(path, &headers, &["date", "tmin", "tmean", "tmax"])?;
    let mut rows: Vec<(NaiveDate, f64, f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record_line(&record, i as u64 + 2) + meta_lines;
        let date: NaiveDate = parse_field(path, line, cols.get(path, &record, 0, line)?, "date")?;
        let tmin: f64 = parse_field(path, line, cols.get(path, &record, 1, line)?, "tmin")?;
        let tmean: f64 = parse_field(path, line, cols.get(path, &record, 2, line)?, "tmean")?;
        let tmax: f64 = parse_field(path, line, cols.get(path, &record, 3, line)?, "tmax")?;
        rows.push((date, tmin, tmean, tmax));
    }
    if rows.is_empty() {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: "file contains no data rows".into(),
        });
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                msg: format!("duplicate rows for {}", w[0].0),
            });
        }
    }
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    report_gaps(path, "scenario", &dates)?;
    let series = DailyTemperatureSeries::new(
        meta.model_id(),
        dates,
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        rows.iter().map(|r| r.3).collect(),
    )
    .map_err(|source| IoError::Data {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((meta, series))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IoError::File {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let file = fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn io_write_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a scenario file readable by [`load_scenario_temperatures`].
pub fn write_scenario_temperatures(
    path: impl AsRef<Path>,
    meta: &ScenarioMeta,
    series: &DailyTemperatureSeries,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "# gcm={}", meta.gcm).map_err(|e| io_write_err(path, e))?;
    writeln!(w, "# rcm={}", meta.rcm).map_err(|e| io_write_err(path, e))?;
    writeln!(w, "# rcp={}", meta.rcp).map_err(|e| io_write_err(path, e))?;
    writeln!(w, "date,tmin,tmean,tmax").map_err(|e| io_write_err(path, e))?;
    for i in 0..series.len() {
        writeln!(
            w,
            "{},{},{},{}",
            series.dates[i], series.min[i], series.mean[i], series.max[i]
        )
        .map_err(|e| io_write_err(path, e))?;
    }
    w.flush().map_err(|e| io_write_err(path, e))
}

/// One row of the daily death file.
#[derive(Debug, Clone, Copy)]
pub struct DailyDeathRecord {
    pub date: NaiveDate,
    pub gender: Gender,
    pub age: u16,
    pub deaths: u32,
}

/// Writes a daily death file readable by [`load_daily_deaths`]; rows with
/// zero deaths are skipped.
pub fn write_daily_deaths<I>(path: impl AsRef<Path>, records: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = DailyDeathRecord>,
{
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "date,gender,age,deaths").map_err(|e| io_write_err(path, e))?;
    for r in records {
        if r.deaths == 0 {
            continue;
        }
        writeln!(w, "{},{},{},{}", r.date, r.gender, r.age, r.deaths)
            .map_err(|e| io_write_err(path, e))?;
    }
    w.flush().map_err(|e| io_write_err(path, e))
}

/// Writes per-station temperatures readable by [`load_station_temperatures`].
pub fn write_station_temperatures(
    path: impl AsRef<Path>,
    stations: &[DailyTemperatureSeries],
) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "date,station_id,tmin,tmean,tmax").map_err(|e| io_write_err(path, e))?;
    for s in stations {
        for i in 0..s.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.dates[i], s.label, s.min[i], s.mean[i], s.max[i]
            )
            .map_err(|e| io_write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_write_err(path, e))
}

/// Writes annual deaths and exposures readable by [`load_annual_mortality`].
pub fn write_annual_mortality(
    path: impl AsRef<Path>,
    data: &AnnualMortalityData,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "year,age,gender,deaths,exposure").map_err(|e| io_write_err(path, e))?;
    for gender in Gender::BOTH {
        let s = data.surface(gender);
        for (yi, &year) in s.years.iter().enumerate() {
            for (ai, &age) in s.ages.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    year,
                    age,
                    gender,
                    s.deaths[(ai, yi)],
                    s.exposures[(ai, yi)]
                )
                .map_err(|e| io_write_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_write_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn daily_deaths_group_into_strata_and_zero_fill() {
        let f = write_tmp(
            "date,gender,age,deaths\n\
             2010-01-01,F,40,3\n\
             2010-01-03,F,41,2\n\
             2010-01-01,M,90,5\n\
             2010-01-03,F,70,1\n",
        );
        let scheme = AgeBucketScheme::default_four();
        let strata = load_daily_deaths(f.path(), &scheme).unwrap();
        assert_eq!(strata.len(), 8);
        // female 0-64 first, axis 2010-01-01..03 zero-filled in the middle
        assert_eq!(strata[0].gender, Gender::Female);
        assert_eq!(strata[0].bucket_label, "0-64");
        assert_eq!(strata[0].deaths, vec![3, 0, 2]);
        assert_eq!(strata[1].deaths, vec![0, 0, 1]); // F 65-74
        assert_eq!(strata[7].gender, Gender::Male);
        assert_eq!(strata[7].bucket_label, "85+");
        assert_eq!(strata[7].deaths, vec![5, 0, 0]);
        let total: u32 = strata.iter().flat_map(|s| s.deaths.iter()).sum();
        assert_eq!(total, 11);
    }

    #[test]
    fn daily_deaths_rejects_negative_and_bad_gender() {
        let scheme = AgeBucketScheme::default_four();
        let f = write_tmp("date,gender,age,deaths\n2010-01-01,X,40,3\n");
        assert!(matches!(
            load_daily_deaths(f.path(), &scheme),
            Err(IoError::Row { .. })
        ));
        let f = write_tmp("date,gender,age,deaths\n2010-01-01,F,40,-3\n");
        assert!(matches!(
            load_daily_deaths(f.path(), &scheme),
            Err(IoError::Row { .. })
        ));
        let f = write_tmp("date,gender,age,deaths\n2010-01-01,F,140,3\n");
        assert!(load_daily_deaths(f.path(), &scheme).is_err());
    }

    #[test]
    fn annual_mortality_round_trips_and_validates() {
        let f = write_tmp(
            "year,age,gender,deaths,exposure\n\
             2000,0,F,10.5,1000\n\
             2000,1,F,2.25,1100\n\
             2001,0,F,9,1005\n\
             2001,1,F,3,1090\n\
             2000,0,M,12,990\n\
             2000,1,M,2,1080\n\
             2001,0,M,11,995\n\
             2001,1,M,4,1070\n",
        );
        let data = load_annual_mortality(f.path()).unwrap();
        assert_eq!(data.female.ages, vec![0, 1]);
        assert_eq!(data.female.years, vec![2000, 2001]);
        assert_eq!(data.female.deaths[(0, 0)], 10.5);
        assert_eq!(data.male.exposures[(1, 1)], 1070.0);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("annual.csv");
        write_annual_mortality(&out, &data).unwrap();
        let reread = load_annual_mortality(&out).unwrap();
        assert_eq!(reread, data);
    }

    #[test]
    fn annual_mortality_rejects_incomplete_grid() {
        let f = write_tmp(
            "year,age,gender,deaths,exposure\n\
             2000,0,F,10,1000\n\
             2000,0,M,12,990\n\
             2001,0,F,9,1005\n",
        );
        let err = load_annual_mortality(f.path()).unwrap_err();
        assert!(err.to_string().contains("incomplete"));
    }

    #[test]
    fn annual_mortality_rejects_nonpositive_exposure() {
        let f = write_tmp("year,age,gender,deaths,exposure\n2000,0,F,10,0\n");
        assert!(matches!(
            load_annual_mortality(f.path()),
            Err(IoError::Row { .. })
        ));
    }

    #[test]
    fn stations_split_and_sort() {
        let f = write_tmp(
            "date,station_id,tmin,tmean,tmax\n\
             2010-01-02,b,1,2,3\n\
             2010-01-01,b,0,1,2\n\
             2010-01-01,a,5,6,7\n\
             2010-01-02,a,4,5,6\n",
        );
        let stations = load_station_temperatures(f.path()).unwrap();
        assert_eq!(stations.len(), 2);
        assert_eq!(stations[0].label, "a");
        assert_eq!(stations[0].mean, vec![6.0, 5.0]);
        assert_eq!(stations[1].mean, vec![1.0, 2.0]);
    }

    #[test]
    fn station_gap_is_reported_with_missing_days() {
        let f = write_tmp(
            "date,station_id,tmin,tmean,tmax\n\
             2010-01-01,a,0,1,2\n\
             2010-01-04,a,0,1,2\n",
        );
        let err = load_station_temperatures(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2010-01-02"), "{msg}");
        assert!(msg.contains("2010-01-03"), "{msg}");
    }

    #[test]
    fn scenario_metadata_and_body_round_trip_exactly() {
        let meta = ScenarioMeta {
            gcm: "CNRM-CM5".into(),
            rcm: "ALADIN63".into(),
            rcp: Rcp::Rcp45,
        };
        let dates: Vec<NaiveDate> = (0..3)
            .map(|i| {
                NaiveDate::from_ymd_opt(2050, 6, 1)
                    .unwrap()
                    .checked_add_days(Days::new(i))
                    .unwrap()
            })
            .collect();
        let series = DailyTemperatureSeries::new(
            meta.model_id(),
            dates,
            vec![10.123456789012345, -0.1, 3.25],
            vec![15.000000000000002, 4.5, 9.875],
            vec![21.9, 8.75, 16.0625],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.csv");
        write_scenario_temperatures(&path, &meta, &series).unwrap();
        let (meta2, series2) = load_scenario_temperatures(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(series2.dates, series.dates);
        assert_eq!(series2.min, series.min);
        assert_eq!(series2.mean, series.mean);
        assert_eq!(series2.max, series.max);
    }

    #[test]
    fn scenario_requires_metadata_and_known_rcp() {
        let f = write_tmp("date,tmin,tmean,tmax\n2050-01-01,1,2,3\n");
        let err = load_scenario_temperatures(f.path()).unwrap_err();
        assert!(err.to_string().contains("gcm"));

        let f = write_tmp(
            "# gcm=a\n# rcm=b\n# rcp=rcp60\ndate,tmin,tmean,tmax\n2050-01-01,1,2,3\n",
        );
        let err = load_scenario_temperatures(f.path()).unwrap_err();
        assert!(err.to_string().contains("rcp60"));
    }

    #[test]
    fn scenario_gap_lists_missing_days() {
        let f = write_tmp(
            "# gcm=a\n# rcm=b\n# rcp=rcp26\n\
             date,tmin,tmean,tmax\n\
             2050-01-01,1,2,3\n\
             2050-01-03,1,2,3\n",
        );
        let err = load_scenario_temperatures(f.path()).unwrap_err();
        assert!(err.to_string().contains("2050-01-02"));
    }

    #[test]
    fn daily_deaths_totals_match_group_by_oracle() {
        // build a file with a deterministic generator, then compare against
        // an independent hash-map group-by
        use std::collections::HashMap;
        let mut rows = String::from("date,gender,age,deaths\n");
        let mut oracle: HashMap<(Gender, usize), u64> = HashMap::new();
        let scheme = AgeBucketScheme::default_four();
        let mut state = 0x9e3779b97f4a7c15u64;
        let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
        for i in 0..10_000u64 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let day = (state >> 33) % 200;
            let age = ((state >> 17) % 106) as u16;
            let gender = if (state >> 7) % 2 == 0 { Gender::Female } else { Gender::Male };
            let deaths = (i % 4) as u32;
            let date = start.checked_add_days(Days::new(day)).unwrap();
            rows.push_str(&format!("{date},{gender},{age},{deaths}\n"));
            let bucket = scheme.bucket_index(age).unwrap();
            *oracle.entry((gender, bucket)).or_default() += deaths as u64;
        }
        let f = write_tmp(&rows);
        let strata = load_daily_deaths(f.path(), &scheme).unwrap();
        for s in &strata {
            let total: u64 = s.deaths.iter().map(|&d| d as u64).sum();
            assert_eq!(
                total,
                *oracle.get(&(s.gender, s.bucket)).unwrap_or(&0),
                "stratum {} {}",
                s.gender,
                s.bucket_label
            );
        }
    }
}
