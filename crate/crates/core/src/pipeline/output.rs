//! Output rendering and atomic commits into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geojson::{Feature, FeatureCollection, GeometryValue, JsonObject};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::characterize::ecdf_points;
use crate::error::{Error, Result};
use crate::ingest::CellGrid;
use crate::metrics::{MetricField, MetricId};
use crate::spatial::{GlobalMoranResult, LocalMoranResult, Quadrant, SpotLabel, SpotSummary};

/// Files produced by a stage, keyed by file name, held in memory until
/// committed.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct OutputSet {
    files: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), contents.into());
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.files
            .iter()
            .map(|(file, data)| ManifestEntry {
                file: file.clone(),
                bytes: data.len(),
                sha256: hex(&Sha256::digest(data)),
            })
            .collect()
    }

    /// Replaces `dir` with exactly these files. Everything is written to a
    /// sibling staging directory first, so a failure leaves `dir` untouched.
    pub fn commit_replace(&self, dir: &Path) -> Result<()> {
        check_replaceable(dir)?;
        let staging = sibling(dir, "partial");
        let old = sibling(dir, "old");
        for d in [&staging, &old] {
            if d.exists() {
                fs::remove_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
        }
        let result = (|| {
            fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
            for (name, data) in &self.files {
                let path = staging.join(name);
                fs::write(&path, data).map_err(|e| Error::io(path, e))?;
            }
            if dir.exists() {
                fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
        })();
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
            if old.exists() && !dir.exists() {
                let _ = fs::rename(&old, dir);
            }
        }
        result?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    /// Adds these files to `dir`, each written to a temporary name and then
    /// renamed into place.
    pub fn commit_merge(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, data) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            let path = dir.join(name);
            fs::write(&tmp, data).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    dir.with_file_name(format!(".{name}.{tag}"))
}

const OUTPUT_EXTENSIONS: [&str; 3] = ["csv", "json", "geojson"];

/// Refuses to replace a directory holding anything other than files this
/// tool writes.
fn check_replaceable(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    if !dir.is_dir() {
        return Err(Error::InvalidConfig(format!("output_dir {} is not a directory", dir.display())));
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ours = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| OUTPUT_EXTENSIONS.contains(&e));
        if !ours {
            return Err(Error::InvalidConfig(format!(
                "output_dir {} contains {}, which this tool did not write; refusing to replace it",
                dir.display(),
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn metric_file(metric: MetricId) -> String {
    format!("metric_{metric}.csv")
}

pub fn spots_csv_file(metric: MetricId) -> String {
    format!("spots_{metric}.csv")
}

pub fn spots_geojson_file(metric: MetricId) -> String {
    format!("spots_{metric}.geojson")
}

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const REPORT_FILE: &str = "report.json";
pub const MORAN_GLOBAL_FILE: &str = "moran_global.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const INCOME_FILE: &str = "income.csv";
pub const POI_COUNTS_FILE: &str = "poi_counts.csv";
pub const CHARACTERIZATION_FILE: &str = "characterization.csv";
pub const POI_LOG_ODDS_FILE: &str = "poi_log_odds.csv";
pub const POI_ENTROPY_FILE: &str = "poi_entropy.csv";
pub const CDF_INCOME_FILE: &str = "cdf_income.csv";
pub const CDF_ENTROPY_FILE: &str = "cdf_entropy.csv";

pub fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::malformed(path.display().to_string(), e))
}

pub fn global_csv(results: &[GlobalMoranResult]) -> Vec<u8> {
    csv_bytes(results)
}

pub fn read_global_csv(path: &Path) -> Result<Vec<GlobalMoranResult>> {
    read_csv(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    metric: MetricId,
    #[serde(rename = "global_I")]
    global_i: f64,
    #[serde(rename = "expected_I")]
    expected_i: f64,
    pseudo_p: f64,
    permutations: usize,
    n_hot: usize,
    n_cold: usize,
}

pub fn summary_csv(global: &[GlobalMoranResult], spots: &[SpotSummary]) -> Vec<u8> {
    let rows: Vec<SummaryRow> = global
        .iter()
        .map(|g| {
            let s = spots.iter().find(|s| s.metric == g.metric);
            SummaryRow {
                metric: g.metric,
                global_i: g.i,
                expected_i: g.expected_i,
                pseudo_p: g.pseudo_p,
                permutations: g.permutations,
                n_hot: s.map_or(0, |s| s.count(SpotLabel::Hot)),
                n_cold: s.map_or(0, |s| s.count(SpotLabel::Cold)),
            }
        })
        .collect();
    csv_bytes(&rows)
}

/// Label written for grid cells whose metric is undefined.
pub const UNDEFINED_LABEL: &str = "undefined";

/// One cell of a local Moran result, as written to `spots_{metric}.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRow {
    pub cell_id: String,
    pub metric: MetricId,
    pub raw: Option<f64>,
    pub standardized: Option<f64>,
    #[serde(rename = "local_I")]
    pub local_i: Option<f64>,
    pub lag: Option<f64>,
    pub quadrant: Option<Quadrant>,
    pub pseudo_p: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub label: String,
}

/// Rows for every grid cell, in grid order.
pub fn spot_rows(grid: &CellGrid, field: &MetricField, local: &LocalMoranResult) -> Vec<SpotRow> {
    let by_id: BTreeMap<&str, _> = local.cells.iter().map(|c| (c.cell_id.as_str(), c)).collect();
    grid.ids()
        .map(|id| {
            let cell = by_id.get(id);
            SpotRow {
                cell_id: id.to_string(),
                metric: field.metric,
                raw: field.raw.get(id).copied(),
                standardized: field.standardized.get(id).copied(),
                local_i: cell.and_then(|c| c.local_i),
                lag: cell.and_then(|c| c.lag),
                quadrant: cell.and_then(|c| c.quadrant),
                pseudo_p: cell.and_then(|c| c.pseudo_p),
                p_adjusted: cell.and_then(|c| c.p_adjusted),
                label: cell.map_or(UNDEFINED_LABEL, |c| c.label.as_str()).to_string(),
            }
        })
        .collect()
}

pub fn spots_csv(rows: &[SpotRow]) -> Vec<u8> {
    csv_bytes(rows)
}

pub fn read_spots_csv(path: &Path, metric: MetricId) -> Result<SpotSummary> {
    let rows: Vec<SpotRow> = read_csv(path)?;
    let mut labels = BTreeMap::new();
    for r in rows {
        if r.label == UNDEFINED_LABEL {
            continue;
        }
        let label = r
            .label
            .parse()
            .map_err(|_| Error::malformed(path.display().to_string(), format!("unknown label `{}`", r.label)))?;
        labels.insert(r.cell_id, label);
    }
    Ok(SpotSummary::from_labels(metric, labels))
}

pub fn spots_geojson(grid: &CellGrid, rows: &[SpotRow], run_config: &Value) -> Vec<u8> {
    let features = grid
        .cells()
        .iter()
        .zip(rows)
        .map(|(cell, row)| {
            let mut props = JsonObject::new();
            props.insert("cell_id".into(), json!(row.cell_id));
            props.insert("metric".into(), json!(row.metric));
            props.insert("raw".into(), json!(row.raw));
            props.insert("standardized".into(), json!(row.standardized));
            props.insert("local_I".into(), json!(row.local_i));
            props.insert("lag".into(), json!(row.lag));
            props.insert("quadrant".into(), json!(row.quadrant));
            props.insert("pseudo_p".into(), json!(row.pseudo_p));
            props.insert("label".into(), json!(row.label));
            Feature {
                bbox: None,
                geometry: Some(geojson::Geometry::new(GeometryValue::from(&cell.polygon))),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    let mut fc = FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    };
    let mut members = JsonObject::new();
    if let Some(crs) = grid.crs() {
        members.insert("crs".into(), json!({ "type": "name", "properties": { "name": crs } }));
    }
    members.insert("run_config".into(), run_config.clone());
    fc.foreign_members = Some(members);
    let mut out = serde_json::to_vec(&fc).expect("geojson serializes");
    out.push(b'\n');
    out
}

#[derive(Serialize)]
struct CdfRow<'a> {
    metric: MetricId,
    side: &'a str,
    value: f64,
    cdf: f64,
}

/// ECDF points of hot and cold samples per metric.
pub fn cdf_csv(samples: &[(MetricId, Vec<f64>, Vec<f64>)]) -> Vec<u8> {
    let mut rows = Vec::new();
    for (metric, hot, cold) in samples {
        for (side, sample) in [("hot", hot), ("cold", cold)] {
            for (value, cdf) in ecdf_points(sample) {
                rows.push(CdfRow {
                    metric: *metric,
                    side,
                    value,
                    cdf,
                });
            }
        }
    }
    if rows.is_empty() {
        return b"metric,side,value,cdf\n".to_vec();
    }
    csv_bytes(&rows)
}
