//! Per-cell visitor ratios and their standardized fields.
//!
//! A ratio is the share of a demographic group among all visitors of a cell,
//! summed over the 4-hour bins that fall in a time window. Standardization
//! turns the ratios into z-scores using the sample standard deviation, so a
//! value of 0 means the cell matches the city average.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CellGrid, Group, VisitRecord, BIN_HOURS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricId {
    /// Women ratio.
    G,
    /// Elder ratio.
    E,
    /// Tourist ratio.
    T,
    #[serde(rename = "income")]
    Income,
    #[serde(rename = "custom")]
    Custom,
}

impl MetricId {
    pub fn numerator(self) -> Option<GroupSet> {
        match self {
            MetricId::G => Some(GroupSet::Female),
            MetricId::E => Some(GroupSet::Elder),
            MetricId::T => Some(GroupSet::Tourist),
            MetricId::Income | MetricId::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::G => "G",
            MetricId::E => "E",
            MetricId::T => "T",
            MetricId::Income => "income",
            MetricId::Custom => "custom",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" | "g" => Ok(MetricId::G),
            "E" | "e" => Ok(MetricId::E),
            "T" | "t" => Ok(MetricId::T),
            "income" => Ok(MetricId::Income),
            "custom" => Ok(MetricId::Custom),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

/// Groups counted in a ratio's numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSet {
    Female,
    /// Every age cohort whose lower bound is at least 65.
    Elder,
    /// National and foreign tourists.
    Tourist,
}

impl GroupSet {
    pub fn contains(self, group: Group) -> bool {
        match (self, group) {
            (GroupSet::Female, Group::Female) => true,
            (GroupSet::Elder, Group::Age(c)) => c.is_elder(),
            (GroupSet::Tourist, Group::TouristNational | Group::TouristForeign) => true,
            _ => false,
        }
    }
}

/// Hours of the day (and optionally dates) whose bins enter a ratio.
///
/// `start_hour > end_hour` wraps past midnight. Both bounds sit on bin
/// boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_hour: u32,
    pub end_hour: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days: Option<(NaiveDate, NaiveDate)>,
}

impl Default for TimeWindow {
    /// 8am to midnight.
    fn default() -> Self {
        TimeWindow {
            start_hour: 8,
            end_hour: 24,
            days: None,
        }
    }
}

impl TimeWindow {
    pub fn new(start_hour: u32, end_hour: u32, days: Option<(NaiveDate, NaiveDate)>) -> Result<Self> {
        let w = TimeWindow {
            start_hour,
            end_hour,
            days,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start_hour.is_multiple_of(BIN_HOURS) || !self.end_hour.is_multiple_of(BIN_HOURS) {
            return Err(Error::InvalidConfig(format!(
                "time window {self} is not aligned to {BIN_HOURS}-hour bins"
            )));
        }
        if self.start_hour >= 24 || self.end_hour > 24 || self.end_hour == 0 || self.start_hour == self.end_hour {
            return Err(Error::InvalidConfig(format!("invalid time window {self}")));
        }
        if let Some((a, b)) = self.days {
            if a > b {
                return Err(Error::InvalidConfig(format!("empty date range in window {self}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, period_start: &NaiveDateTime) -> bool {
        let h = period_start.hour();
        let in_hours = if self.start_hour < self.end_hour {
            self.start_hour <= h && h < self.end_hour
        } else {
            h >= self.start_hour || h < self.end_hour
        };
        let in_days = self
            .days
            .is_none_or(|(a, b)| (a..=b).contains(&period_start.date()));
        in_hours && in_days
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}h-{:02}h", self.start_hour, self.end_hour)?;
        if let Some((a, b)) = self.days {
            write!(f, " {a}..{b}")?;
        }
        Ok(())
    }
}

/// A visit count divided by its cell's scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledVisit {
    pub cell_id: String,
    pub period_start: NaiveDateTime,
    pub group: Group,
    pub value: f64,
}

/// Divides each count by the number of regular cells merged into its cell.
pub fn scale_merged_cells(visits: &[VisitRecord], grid: &CellGrid) -> Vec<ScaledVisit> {
    visits
        .iter()
        .map(|r| {
            let factor = grid.get(&r.cell_id).map_or(1, |c| c.scale_factor);
            ScaledVisit {
                cell_id: r.cell_id.clone(),
                period_start: r.period_start,
                group: r.group,
                value: r.count as f64 / factor as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioResult {
    pub values: BTreeMap<String, f64>,
    /// Cells with no visitors in the window.
    pub undefined: Vec<String>,
}

/// Numerator share of total visitors per cell over the bins in `window`.
pub fn ratio(
    visits: &[ScaledVisit],
    grid: &CellGrid,
    numerator: GroupSet,
    window: &TimeWindow,
) -> Result<RatioResult> {
    let mut sums: BTreeMap<&str, (f64, f64)> = grid.ids().map(|id| (id, (0.0, 0.0))).collect();
    let mut any_bin = false;
    for v in visits.iter().filter(|v| window.contains(&v.period_start)) {
        any_bin = true;
        let Some(entry) = sums.get_mut(v.cell_id.as_str()) else {
            continue;
        };
        if v.group == Group::Total {
            entry.1 += v.value;
        } else if numerator.contains(v.group) {
            entry.0 += v.value;
        }
    }
    if !any_bin {
        return Err(Error::EmptyWindow(window.to_string()));
    }
    let mut values = BTreeMap::new();
    let mut undefined = Vec::new();
    for (id, (num, total)) in sums {
        if total > 0.0 {
            let r = num / total;
            debug_assert!((0.0..=1.0 + 1e-12).contains(&r), "ratio {r} out of bounds for {id}");
            values.insert(id.to_string(), r.min(1.0));
        } else {
            undefined.push(id.to_string());
        }
    }
    Ok(RatioResult { values, undefined })
}

/// A standardized per-cell scalar field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    pub metric: MetricId,
    pub raw: BTreeMap<String, f64>,
    pub standardized: BTreeMap<String, f64>,
    pub n_cells: usize,
}

/// Z-scores with the sample (n - 1) standard deviation.
pub fn standardize(metric: MetricId, raw: BTreeMap<String, f64>) -> Result<MetricField> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::DegenerateField(format!(
            "{metric}: {n} defined cells, need at least 2"
        )));
    }
    let mean = raw.values().sum::<f64>() / n as f64;
    let var = raw.values().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = raw.values().fold(0.0f64, |m, x| m.max(x.abs()));
    if sd.is_nan() || sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateField(format!("{metric}: zero variance")));
    }
    let standardized = raw.iter().map(|(k, x)| (k.clone(), (x - mean) / sd)).collect();
    Ok(MetricField {
        metric,
        raw,
        standardized,
        n_cells: n,
    })
}

impl MetricField {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_id,raw,standardized\n");
        for (id, raw) in &self.raw {
            out.push_str(&format!("{id},{raw},{}\n", self.standardized[id]));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, metric: MetricId) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let ctx = || path.display().to_string();
        let headers = rdr.headers().map_err(|e| Error::malformed(ctx(), e))?;
        if headers.iter().ne(["cell_id", "raw", "standardized"]) {
            return Err(Error::malformed(ctx(), "header must be `cell_id,raw,standardized`"));
        }
        let mut raw = BTreeMap::new();
        let mut standardized = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::malformed(ctx(), e))?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::malformed(ctx(), format!("bad number in {row:?}")))
            };
            let id = row.get(0).unwrap_or_default().to_string();
            raw.insert(id.clone(), num(1)?);
            standardized.insert(id, num(2)?);
        }
        Ok(MetricField {
            metric,
            n_cells: raw.len(),
            raw,
            standardized,
        })
    }
}
