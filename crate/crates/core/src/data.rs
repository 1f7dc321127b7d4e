//! Shared containers for daily and annual mortality data and the
//! empirical quantile convention used throughout the crate.

use chrono::{Datelike, Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building or combining the core data containers.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("series is empty")]
    Empty,
    #[error("dates are not contiguous: expected {expected} after {previous}, found {found}")]
    NonContiguousDates {
        previous: NaiveDate,
        expected: NaiveDate,
        found: NaiveDate,
    },
    #[error("temperature ordering violated on {date}: min {min}, mean {mean}, max {max}")]
    TemperatureOrder {
        date: NaiveDate,
        min: f64,
        mean: f64,
        max: f64,
    },
    #[error("non-finite value in {what} on {date}")]
    NonFinite { what: &'static str, date: NaiveDate },
    #[error("column lengths differ: dates {dates}, {what} {got}")]
    LengthMismatch {
        dates: usize,
        what: &'static str,
        got: usize,
    },
    #[error("quantile probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("quantile input contains a non-finite value")]
    NonFiniteSample,
    #[error("station date axes differ: {label_a} runs {a_start}..{a_end}, {label_b} runs {b_start}..{b_end}")]
    StationAxisMismatch {
        label_a: String,
        a_start: NaiveDate,
        a_end: NaiveDate,
        label_b: String,
        b_start: NaiveDate,
        b_end: NaiveDate,
    },
    #[error("invalid age bucket boundaries: {0}")]
    BadBuckets(String),
    #[error("age {age} exceeds the maximum modelled age {max_age}")]
    AgeOutOfRange { age: u16, max_age: u16 },
    #[error("date axes differ: {context} ({detail})")]
    AxisMismatch { context: &'static str, detail: String },
    #[error("requested year range {first}..={last} is not covered by the series ({have_first}..={have_last})")]
    YearRangeNotCovered {
        first: i32,
        last: i32,
        have_first: i32,
        have_last: i32,
    },
}

/// Population gender, encoded as `F` / `M` in all exchange formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim() {
            "F" | "f" => Some(Gender::Female),
            "M" | "m" => Some(Gender::Male),
            _ => None,
        }
    }

    /// Index into two-element per-gender arrays (female first).
    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }
}

impl std::fmt::Display for Gender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// A contiguous daily temperature series with minimum, mean and maximum
/// columns.
///
/// Invariants enforced on construction: at least one day, strictly
/// consecutive calendar dates (leap days included), `min <= mean <= max`
/// day by day, and finite values throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyTemperatureSeries {
    pub label: String,
    pub dates: Vec<NaiveDate>,
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

impl DailyTemperatureSeries {
    pub fn new(
        label: impl Into<String>,
        dates: Vec<NaiveDate>,
        min: Vec<f64>,
        mean: Vec<f64>,
        max: Vec<f64>,
    ) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::Empty);
        }
        for (what, col) in [("min", &min), ("mean", &mean), ("max", &max)] {
            if col.len() != dates.len() {
                return Err(DataError::LengthMismatch {
                    dates: dates.len(),
                    what,
                    got: col.len(),
                });
            }
        }
        check_contiguous(&dates)?;
        for i in 0..dates.len() {
            for (what, col) in [("min", &min), ("mean", &mean), ("max", &max)] {
                if !col[i].is_finite() {
                    return Err(DataError::NonFinite {
                        what,
                        date: dates[i],
                    });
                }
            }
            if !(min[i] <= mean[i] && mean[i] <= max[i]) {
                return Err(DataError::TemperatureOrder {
                    date: dates[i],
                    min: min[i],
                    mean: mean[i],
                    max: max[i],
                });
            }
        }
        Ok(Self {
            label: label.into(),
            dates,
            min,
            mean,
            max,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last_date(&self) -> NaiveDate {
        *self.dates.last().expect("non-empty by construction")
    }

    /// Restricts the series to whole calendar years `first..=last`.
    pub fn restrict_years(&self, first: i32, last: i32) -> Result<Self, DataError> {
        let start = NaiveDate::from_ymd_opt(first, 1, 1).expect("valid year");
        let end = NaiveDate::from_ymd_opt(last, 12, 31).expect("valid year");
        if start < self.first_date() || end > self.last_date() {
            return Err(DataError::YearRangeNotCovered {
                first,
                last,
                have_first: self.first_date().year(),
                have_last: self.last_date().year(),
            });
        }
        let a = self.index_of(start).expect("covered");
        let b = self.index_of(end).expect("covered");
        Ok(Self {
            label: self.label.clone(),
            dates: self.dates[a..=b].to_vec(),
            min: self.min[a..=b].to_vec(),
            mean: self.mean[a..=b].to_vec(),
            max: self.max[a..=b].to_vec(),
        })
    }

    /// Position of `date` in the axis, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.first_date()).num_days();
        if offset < 0 || offset as usize >= self.len() {
            None
        } else {
            Some(offset as usize)
        }
    }
}

fn check_contiguous(dates: &[NaiveDate]) -> Result<(), DataError> {
    for w in dates.windows(2) {
        let expected = w[0]
            .checked_add_days(Days::new(1))
            .expect("date overflow is out of modelled range");
        if w[1] != expected {
            return Err(DataError::NonContiguousDates {
                previous: w[0],
                expected,
                found: w[1],
            });
        }
    }
    Ok(())
}

/// Partition of single ages `0..=max_age` into contiguous buckets.
///
/// `lower_bounds` lists the first age of each bucket and must start at 0;
/// the last bucket is open-ended up to `max_age` and labelled `"85+"`
/// style. The default scheme is `0-64, 65-74, 75-84, 85+` with
/// `max_age = 105`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBucketScheme {
    lower_bounds: Vec<u16>,
    max_age: u16,
}

impl AgeBucketScheme {
    pub fn new(lower_bounds: Vec<u16>, max_age: u16) -> Result<Self, DataError> {
        if lower_bounds.is_empty() {
            return Err(DataError::BadBuckets("no bucket boundaries given".into()));
        }
        if lower_bounds[0] != 0 {
            return Err(DataError::BadBuckets(format!(
                "first bucket must start at age 0, got {}",
                lower_bounds[0]
            )));
        }
        if !lower_bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(DataError::BadBuckets(
                "bucket boundaries must be strictly increasing".into(),
            ));
        }
        let last = *lower_bounds.last().expect("non-empty");
        if last > max_age {
            return Err(DataError::BadBuckets(format!(
                "last bucket start {last} exceeds maximum age {max_age}"
            )));
        }
        Ok(Self {
            lower_bounds,
            max_age,
        })
    }

    /// The `0-64, 65-74, 75-84, 85+` scheme over ages `0..=105`.
    pub fn default_four() -> Self {
        Self::new(vec![0, 65, 75, 85], 105).expect("static scheme is valid")
    }

    pub fn n_buckets(&self) -> usize {
        self.lower_bounds.len()
    }

    pub fn max_age(&self) -> u16 {
        self.max_age
    }

    pub fn bucket_index(&self, age: u16) -> Result<usize, DataError> {
        if age > self.max_age {
            return Err(DataError::AgeOutOfRange {
                age,
                max_age: self.max_age,
            });
        }
        Ok(self
            .lower_bounds
            .iter()
            .rposition(|&lo| lo <= age)
            .expect("first bound is 0"))
    }

    pub fn label(&self, bucket: usize) -> String {
        let lo = self.lower_bounds[bucket];
        match self.lower_bounds.get(bucket + 1) {
            Some(&next) => format!("{}-{}", lo, next - 1),
            None => format!("{lo}+"),
        }
    }

    pub fn ages_in(&self, bucket: usize) -> std::ops::RangeInclusive<u16> {
        let lo = self.lower_bounds[bucket];
        let hi = self
            .lower_bounds
            .get(bucket + 1)
            .map(|&next| next - 1)
            .unwrap_or(self.max_age);
        lo..=hi
    }
}

/// Daily death counts for one (gender, age bucket) stratum.
///
/// The date axis is contiguous; days without any record count zero deaths.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyStratumSeries {
    pub gender: Gender,
    pub bucket: usize,
    pub bucket_label: String,
    pub dates: Vec<NaiveDate>,
    pub deaths: Vec<u32>,
}

impl DailyStratumSeries {
    pub fn new(
        gender: Gender,
        bucket: usize,
        bucket_label: String,
        dates: Vec<NaiveDate>,
        deaths: Vec<u32>,
    ) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::Empty);
        }
        if deaths.len() != dates.len() {
            return Err(DataError::LengthMismatch {
                dates: dates.len(),
                what: "deaths",
                got: deaths.len(),
            });
        }
        check_contiguous(&dates)?;
        Ok(Self {
            gender,
            bucket,
            bucket_label,
            dates,
            deaths,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Restricts the stratum to whole calendar years `first..=last`.
    pub fn restrict_years(&self, first: i32, last: i32) -> Result<Self, DataError> {
        let start = NaiveDate::from_ymd_opt(first, 1, 1).expect("valid year");
        let end = NaiveDate::from_ymd_opt(last, 12, 31).expect("valid year");
        let first_have = self.dates[0];
        let last_have = *self.dates.last().expect("non-empty");
        if start < first_have || end > last_have {
            return Err(DataError::YearRangeNotCovered {
                first,
                last,
                have_first: first_have.year(),
                have_last: last_have.year(),
            });
        }
        let a = (start - first_have).num_days() as usize;
        let b = (end - first_have).num_days() as usize;
        Ok(Self {
            gender: self.gender,
            bucket: self.bucket,
            bucket_label: self.bucket_label.clone(),
            dates: self.dates[a..=b].to_vec(),
            deaths: self.deaths[a..=b].to_vec(),
        })
    }
}

/// Requires two date axes to be identical, with a readable error otherwise.
pub fn check_same_axis(
    context: &'static str,
    a: &[NaiveDate],
    b: &[NaiveDate],
) -> Result<(), DataError> {
    if a == b {
        return Ok(());
    }
    let detail = if a.is_empty() || b.is_empty() {
        "one of the axes is empty".to_string()
    } else {
        format!(
            "{}..{} ({} days) vs {}..{} ({} days)",
            a[0],
            a[a.len() - 1],
            a.len(),
            b[0],
            b[b.len() - 1],
            b.len()
        )
    };
    Err(DataError::AxisMismatch { context, detail })
}

/// Annual deaths and central exposures for one gender on an age x year grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualMortalitySurface {
    pub ages: Vec<u16>,
    pub years: Vec<i32>,
    /// Deaths, rows indexed by age, columns by year.
    pub deaths: DMatrix<f64>,
    /// Person-year exposures, strictly positive, same layout as `deaths`.
    pub exposures: DMatrix<f64>,
}

impl AnnualMortalitySurface {
    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    /// Restricts the surface to years `first..=last`.
    pub fn restrict_years(&self, first: i32, last: i32) -> Result<Self, DataError> {
        let a = self.year_index(first);
        let b = self.year_index(last);
        match (a, b) {
            (Some(a), Some(b)) if a <= b => Ok(Self {
                ages: self.ages.clone(),
                years: self.years[a..=b].to_vec(),
                deaths: self.deaths.columns(a, b - a + 1).into_owned(),
                exposures: self.exposures.columns(a, b - a + 1).into_owned(),
            }),
            _ => Err(DataError::YearRangeNotCovered {
                first,
                last,
                have_first: *self.years.first().unwrap_or(&0),
                have_last: *self.years.last().unwrap_or(&0),
            }),
        }
    }
}

/// Annual mortality data for both genders on a common age x year grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualMortalityData {
    pub female: AnnualMortalitySurface,
    pub male: AnnualMortalitySurface,
}

impl AnnualMortalityData {
    pub fn surface(&self, gender: Gender) -> &AnnualMortalitySurface {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    pub fn restrict_years(&self, first: i32, last: i32) -> Result<Self, DataError> {
        Ok(Self {
            female: self.female.restrict_years(first, last)?,
            male: self.male.restrict_years(first, last)?,
        })
    }
}

/// Empirical quantile with linear interpolation between order statistics.
///
/// For a sorted sample `v[0..n]` the quantile at probability `p` sits at
/// position `1 + (n - 1) p` in one-based terms: with `h = (n - 1) p`,
/// `q = v[floor(h)] + frac(h) * (v[floor(h) + 1] - v[floor(h)])`. `p = 0`
/// and `p = 1` return the minimum and maximum exactly.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64, DataError> {
    if values.is_empty() {
        return Err(DataError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteSample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    quantile_of_sorted(&sorted, p)
}

/// Same convention as [`empirical_quantile`] but assumes `sorted` is already
/// ascending; useful when many probabilities are needed from one sample.
pub fn quantile_of_sorted(sorted: &[f64], p: f64) -> Result<f64, DataError> {
    if sorted.is_empty() {
        return Err(DataError::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::BadProbability(p));
    }
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        return Ok(sorted[lo.min(n - 1)]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Averages several station series into one national series, day by day with
/// equal station weights. All stations must share the same date axis.
pub fn aggregate_stations(
    stations: &[DailyTemperatureSeries],
) -> Result<DailyTemperatureSeries, DataError> {
    let first = stations.first().ok_or(DataError::Empty)?;
    for other in &stations[1..] {
        if other.dates != first.dates {
            return Err(DataError::StationAxisMismatch {
                label_a: first.label.clone(),
                a_start: first.first_date(),
                a_end: first.last_date(),
                label_b: other.label.clone(),
                b_start: other.first_date(),
                b_end: other.last_date(),
            });
        }
    }
    let n = first.len();
    let k = stations.len() as f64;
    let mut min = vec![0.0; n];
    let mut mean = vec![0.0; n];
    let mut max = vec![0.0; n];
    for s in stations {
        for i in 0..n {
            min[i] += s.min[i];
            mean[i] += s.mean[i];
            max[i] += s.max[i];
        }
    }
    for i in 0..n {
        min[i] /= k;
        mean[i] /= k;
        max[i] /= k;
    }
    DailyTemperatureSeries::new("aggregate", first.dates.clone(), min, mean, max)
}
