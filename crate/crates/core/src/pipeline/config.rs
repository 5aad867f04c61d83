use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characterize::{KsMethod, DEFAULT_PRIOR_ALPHA};
use crate::error::{Error, Result};
use crate::geometry::{Contiguity, DEFAULT_MIN_COVERAGE, DEFAULT_SNAP_TOLERANCE};
use crate::metrics::{MetricId, TimeWindow};
use crate::spatial::{LocalVariance, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};

/// Environment variable naming the output directory when the config and the
/// command line leave it unset.
pub const OUTPUT_DIR_ENV: &str = "URBAN_SUBDIVIDE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "urban-subdivide-out";
pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub grid: PathBuf,
    pub visits: PathBuf,
    pub neighborhoods: PathBuf,
    pub pois: PathBuf,
}

impl InputPaths {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Path)> {
        [
            ("grid", self.grid.as_path()),
            ("visits", self.visits.as_path()),
            ("neighborhoods", self.neighborhoods.as_path()),
            ("pois", self.pois.as_path()),
        ]
        .into_iter()
    }
}

fn default_metrics() -> Vec<MetricId> {
    vec![MetricId::G, MetricId::E, MetricId::T]
}

fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_prior_alpha() -> f64 {
    DEFAULT_PRIOR_ALPHA
}

fn default_snap_tolerance() -> f64 {
    DEFAULT_SNAP_TOLERANCE
}

fn default_min_coverage() -> f64 {
    DEFAULT_MIN_COVERAGE
}

fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Everything a run depends on. Serialized verbatim (with defaults filled
/// in) into `run_config.json`, `report.json` and every spots GeoJSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricId>,
    #[serde(default)]
    pub window: TimeWindow,
    /// Per-metric windows overriding `window`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metric_windows: BTreeMap<MetricId, TimeWindow>,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub contiguity: Contiguity,
    #[serde(default)]
    pub local_variance: LocalVariance,
    #[serde(default = "default_prior_alpha")]
    pub prior_alpha: f64,
    /// Benjamini–Hochberg correction of local p-values.
    #[serde(default)]
    pub fdr: bool,
    #[serde(default)]
    pub ks_method: KsMethod,
    #[serde(default = "default_snap_tolerance")]
    pub snap_tolerance: f64,
    #[serde(default = "default_min_coverage")]
    pub min_coverage: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Top-level keys that took their default value. Not part of the echo.
    #[serde(skip)]
    pub defaulted: BTreeSet<String>,
}

const TOP_LEVEL_KEYS: [&str; 15] = [
    "inputs",
    "metrics",
    "window",
    "metric_windows",
    "permutations",
    "seed",
    "alpha",
    "contiguity",
    "local_variance",
    "prior_alpha",
    "fdr",
    "ks_method",
    "snap_tolerance",
    "min_coverage",
    "output_dir",
];

impl RunConfig {
    /// Config with every optional field at its default.
    pub fn with_inputs(inputs: InputPaths) -> Self {
        RunConfig {
            inputs,
            metrics: default_metrics(),
            window: TimeWindow::default(),
            metric_windows: BTreeMap::new(),
            permutations: default_permutations(),
            seed: 0,
            alpha: default_alpha(),
            contiguity: Contiguity::default(),
            local_variance: LocalVariance::default(),
            prior_alpha: default_prior_alpha(),
            fdr: false,
            ks_method: KsMethod::default(),
            snap_tolerance: default_snap_tolerance(),
            min_coverage: default_min_coverage(),
            output_dir: default_output_dir(),
            defaulted: TOP_LEVEL_KEYS
                .iter()
                .filter(|k| **k != "inputs")
                .map(|k| k.to_string())
                .collect(),
        }
    }

    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut cfg: RunConfig =
            RunConfig::deserialize(table.clone()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.defaulted = TOP_LEVEL_KEYS
            .iter()
            .filter(|k| !table.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.inputs.grid);
        resolve(&mut cfg.inputs.visits);
        resolve(&mut cfg.inputs.neighborhoods);
        resolve(&mut cfg.inputs.pois);
        if table.contains_key("output_dir") {
            resolve(&mut cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        RunConfig::from_toml_str(&text, base)
    }

    /// Marks a key as explicitly set (used for command-line overrides).
    pub fn mark_set(&mut self, key: &str) {
        self.defaulted.remove(key);
    }

    pub fn window_for(&self, metric: MetricId) -> &TimeWindow {
        self.metric_windows.get(&metric).unwrap_or(&self.window)
    }

    /// Checks value ranges; does not touch the file system.
    pub fn validate_values(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.metrics.is_empty() {
            return bad("metrics must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.metrics {
            if m.numerator().is_none() {
                return bad(format!("metric `{m}` is not a visitor ratio; use G, E or T"));
            }
            if !seen.insert(*m) {
                return bad(format!("metric `{m}` listed twice"));
            }
        }
        self.window.validate()?;
        for (m, w) in &self.metric_windows {
            if !self.metrics.contains(m) {
                return bad(format!("metric_windows names `{m}`, which is not in metrics"));
            }
            w.validate()?;
        }
        if self.permutations < MIN_PERMUTATIONS {
            return bad(format!(
                "permutations = {} is below the minimum of {MIN_PERMUTATIONS}",
                self.permutations
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha = {} must lie in (0, 0.5]", self.alpha));
        }
        if !(self.prior_alpha > 0.0 && self.prior_alpha.is_finite()) {
            return bad(format!("prior_alpha = {} must be positive", self.prior_alpha));
        }
        if !(self.snap_tolerance >= 0.0 && self.snap_tolerance.is_finite()) {
            return bad(format!("snap_tolerance = {} must be non-negative", self.snap_tolerance));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad(format!("min_coverage = {} must lie in [0, 1]", self.min_coverage));
        }
        Ok(())
    }

    /// Value checks plus existence of every input file.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        for (kind, path) in self.inputs.iter() {
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!("{kind} input {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
