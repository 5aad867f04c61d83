//! Global and local Moran's I with permutation inference.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng;
use super::weights::{AnalysisSet, WeightMatrix};
use crate::error::{Error, Result};
use crate::metrics::{MetricField, MetricId};

pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Tail used to turn a permutation distribution into a pseudo p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// One-sided, in the direction the observed statistic deviates from the
    /// permutation mean: p = (R + 1) / (M + 1).
    Directional,
    /// Twice the directional p-value, capped at 1.
    TwoSided,
}

impl Alternative {
    fn pseudo_p(self, observed: f64, permuted: &[f64]) -> f64 {
        let m = permuted.len();
        let mean = permuted.iter().sum::<f64>() / m as f64;
        let r = if observed >= mean {
            permuted.iter().filter(|&&v| v >= observed).count()
        } else {
            permuted.iter().filter(|&&v| v <= observed).count()
        };
        let p = (r + 1) as f64 / (m + 1) as f64;
        match self {
            Alternative::Directional => p,
            Alternative::TwoSided => (2.0 * p).min(1.0),
        }
    }
}

/// Denominator of the local statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalVariance {
    /// Global second moment m2 = Σ (x_j - x̄)² / N.
    #[default]
    Anselin,
    /// Sample variance of the neighbors' values; falls back to m2 where fewer
    /// than two neighbors exist or their values are all equal.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    /// Benjamini–Hochberg false discovery rate.
    Fdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalOptions {
    pub permutations: usize,
    pub seed: u64,
    pub alternative: Alternative,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        GlobalOptions {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            alternative: Alternative::Directional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub permutations: usize,
    pub seed: u64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub variance: LocalVariance,
    pub correction: Correction,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            alternative: Alternative::TwoSided,
            variance: LocalVariance::Anselin,
            correction: Correction::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMoranResult {
    pub metric: MetricId,
    pub i: f64,
    pub expected_i: f64,
    pub pseudo_p: f64,
    pub permutations: usize,
    pub n: usize,
    /// Mean and standard deviation of the permutation distribution.
    pub permutation_mean: f64,
    pub permutation_sd: f64,
    pub alternative: Alternative,
}

struct Prepared {
    set: AnalysisSet,
    deviations: Vec<f64>,
    sum_sq: f64,
}

fn prepare(field: &MetricField, weights: &WeightMatrix) -> Result<Prepared> {
    let set = AnalysisSet::new(field, weights);
    if set.len() < 3 {
        return Err(Error::TooFewCells {
            found: set.len(),
            needed: 3,
        });
    }
    let mean = set.mean();
    let deviations: Vec<f64> = set.values.iter().map(|x| x - mean).collect();
    let sum_sq: f64 = deviations.iter().map(|z| z * z).sum();
    let scale = set.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sum_sq.is_nan() || sum_sq <= 1e-24 * scale.max(1.0).powi(2) * set.len() as f64 {
        return Err(Error::DegenerateField(format!("{}: zero variance over analysed cells", field.metric)));
    }
    Ok(Prepared {
        set,
        deviations,
        sum_sq,
    })
}

/// (N / W) Σ_i z_i Σ_j w_ij z_j / Σ_i z_i² for centered values `z`.
fn statistic(weights: &WeightMatrix, z: &[f64], sum_sq: f64, total_weight: f64) -> f64 {
    let cross: f64 = (0..z.len())
        .map(|i| z[i] * weights.row(i).iter().map(|&(j, w)| w * z[j]).sum::<f64>())
        .sum();
    z.len() as f64 / total_weight * cross / sum_sq
}

/// Moran's I over the analysed cells, without inference.
pub fn moran_i(field: &MetricField, weights: &WeightMatrix) -> Result<f64> {
    let p = prepare(field, weights)?;
    Ok(statistic(&p.set.weights, &p.deviations, p.sum_sq, p.set.weights.total_weight()))
}

pub fn global_moran(field: &MetricField, weights: &WeightMatrix, opts: &GlobalOptions) -> Result<GlobalMoranResult> {
    if opts.permutations == 0 {
        return Err(Error::InvalidConfig("permutations must be positive".into()));
    }
    let p = prepare(field, weights)?;
    let w = &p.set.weights;
    let total = w.total_weight();
    let n = p.set.len();
    let observed = statistic(w, &p.deviations, p.sum_sq, total);
    let permuted: Vec<f64> = (0..opts.permutations)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(opts.seed, "global", &k.to_string());
            let mut z = p.deviations.clone();
            z.shuffle(&mut rng);
            statistic(w, &z, p.sum_sq, total)
        })
        .collect();
    let m = permuted.len() as f64;
    let permutation_mean = permuted.iter().sum::<f64>() / m;
    let permutation_sd = (permuted.iter().map(|v| (v - permutation_mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt();
    Ok(GlobalMoranResult {
        metric: field.metric,
        i: observed,
        expected_i: -1.0 / (n as f64 - 1.0),
        pseudo_p: opts.alternative.pseudo_p(observed, &permuted),
        permutations: opts.permutations,
        n,
        permutation_mean,
        permutation_sd,
        alternative: opts.alternative,
    })
}

// ---------------------------------------------------------------------------
// Local

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    HH,
    LL,
    HL,
    LH,
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::HH => "HH",
            Quadrant::LL => "LL",
            Quadrant::HL => "HL",
            Quadrant::LH => "LH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotLabel {
    Hot,
    Cold,
    Outlier,
    NotSignificant,
    Island,
}

impl SpotLabel {
    pub const ALL: [SpotLabel; 5] = [
        SpotLabel::Hot,
        SpotLabel::Cold,
        SpotLabel::Outlier,
        SpotLabel::NotSignificant,
        SpotLabel::Island,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpotLabel::Hot => "hot",
            SpotLabel::Cold => "cold",
            SpotLabel::Outlier => "outlier",
            SpotLabel::NotSignificant => "not_significant",
            SpotLabel::Island => "island",
        }
    }

    pub fn is_significant(self) -> bool {
        matches!(self, SpotLabel::Hot | SpotLabel::Cold | SpotLabel::Outlier)
    }
}

impl fmt::Display for SpotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpotLabel {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        SpotLabel::ALL.into_iter().find(|l| l.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCell {
    pub cell_id: String,
    /// Standardized value of the cell.
    pub value: f64,
    pub local_i: Option<f64>,
    /// Σ_j w_ij x_j.
    pub lag: Option<f64>,
    pub quadrant: Option<Quadrant>,
    pub pseudo_p: Option<f64>,
    /// FDR-adjusted p-value when a correction was requested.
    pub p_adjusted: Option<f64>,
    pub label: SpotLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMoranResult {
    pub metric: MetricId,
    pub mean: f64,
    pub options: LocalOptions,
    /// Analysed cells and islands, in weight-matrix order.
    pub cells: Vec<LocalCell>,
    pub undefined: Vec<String>,
    /// Cells where the neighbor variance was unusable and m2 was used instead.
    pub literal_fallbacks: usize,
}

fn neighbor_variance(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let n = values.clone().count();
    if n < 2 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var > 0.0).then_some(var)
}

/// Benjamini–Hochberg adjusted p-values, same order as the input.
pub fn fdr_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

fn label_for(quadrant: Quadrant, p: f64, alpha: f64) -> SpotLabel {
    if p > alpha {
        return SpotLabel::NotSignificant;
    }
    match quadrant {
        Quadrant::HH => SpotLabel::Hot,
        Quadrant::LL => SpotLabel::Cold,
        Quadrant::HL | Quadrant::LH => SpotLabel::Outlier,
    }
}

/// Local Moran's I with conditional permutation: each cell keeps its value
/// while its neighbor slots are filled with draws (without replacement) from
/// the other cells.
pub fn local_moran(field: &MetricField, weights: &WeightMatrix, opts: &LocalOptions) -> Result<LocalMoranResult> {
    if opts.permutations == 0 {
        return Err(Error::InvalidConfig("permutations must be positive".into()));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", opts.alpha)));
    }
    let p = prepare(field, weights)?;
    let set = &p.set;
    let w = &set.weights;
    let n = set.len();
    let z = &p.deviations;
    let m2 = p.sum_sq / n as f64;
    let mean = set.mean();

    struct Raw {
        local_i: f64,
        lag: f64,
        lag_dev: f64,
        p: f64,
        fallback: bool,
    }

    let raw: Vec<Raw> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = w.row(i);
            let lag_dev: f64 = row.iter().map(|&(j, wt)| wt * z[j]).sum();
            let lag: f64 = row.iter().map(|&(j, wt)| wt * set.values[j]).sum();
            let (denom, fallback) = match opts.variance {
                LocalVariance::Anselin => (m2, false),
                LocalVariance::PaperLiteral => match neighbor_variance(row.iter().map(|&(j, _)| z[j])) {
                    Some(v) => (v, false),
                    None => (m2, true),
                },
            };
            let local_i = z[i] * lag_dev / denom;

            let mut rng = rng::stream(opts.seed, "local", &w.ids()[i]);
            let mut pool: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let k = row.len();
            let permuted: Vec<f64> = (0..opts.permutations)
                .map(|_| {
                    let (drawn, _) = pool.partial_shuffle(&mut rng, k);
                    let lag_perm: f64 = drawn.iter().zip(row).map(|(&j, &(_, wt))| wt * z[j]).sum();
                    let denom = match opts.variance {
                        LocalVariance::Anselin => m2,
                        LocalVariance::PaperLiteral => neighbor_variance(drawn.iter().map(|&j| z[j])).unwrap_or(m2),
                    };
                    z[i] * lag_perm / denom
                })
                .collect();
            Raw {
                local_i,
                lag,
                lag_dev,
                p: opts.alternative.pseudo_p(local_i, &permuted),
                fallback,
            }
        })
        .collect();

    let adjusted = match opts.correction {
        Correction::None => None,
        Correction::Fdr => Some(fdr_adjust(&raw.iter().map(|r| r.p).collect::<Vec<_>>())),
    };

    let mut by_id: BTreeMap<&str, LocalCell> = BTreeMap::new();
    for (i, r) in raw.iter().enumerate() {
        let quadrant = match (z[i] >= 0.0, r.lag_dev >= 0.0) {
            (true, true) => Quadrant::HH,
            (false, false) => Quadrant::LL,
            (true, false) => Quadrant::HL,
            (false, true) => Quadrant::LH,
        };
        let p_adjusted = adjusted.as_ref().map(|a| a[i]);
        let label = label_for(quadrant, p_adjusted.unwrap_or(r.p), opts.alpha);
        by_id.insert(
            &w.ids()[i],
            LocalCell {
                cell_id: w.ids()[i].clone(),
                value: set.values[i],
                local_i: Some(r.local_i),
                lag: Some(r.lag),
                quadrant: Some(quadrant),
                pseudo_p: Some(r.p),
                p_adjusted,
                label,
            },
        );
    }
    for id in &set.islands {
        by_id.insert(
            id,
            LocalCell {
                cell_id: id.clone(),
                value: field.standardized[id],
                local_i: None,
                lag: None,
                quadrant: None,
                pseudo_p: None,
                p_adjusted: None,
                label: SpotLabel::Island,
            },
        );
    }
    let cells = weights
        .ids()
        .iter()
        .filter_map(|id| by_id.remove(id.as_str()))
        .collect();

    Ok(LocalMoranResult {
        metric: field.metric,
        mean,
        options: *opts,
        cells,
        undefined: set.undefined.clone(),
        literal_fallbacks: raw.iter().filter(|r| r.fallback).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSummary {
    pub metric: MetricId,
    pub labels: BTreeMap<String, SpotLabel>,
    pub counts: BTreeMap<SpotLabel, usize>,
}

impl SpotSummary {
    pub fn count(&self, label: SpotLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn cells_with(&self, label: SpotLabel) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(move |(_, l)| **l == label)
            .map(|(id, _)| id.as_str())
    }
}

impl SpotSummary {
    pub fn from_labels(metric: MetricId, labels: BTreeMap<String, SpotLabel>) -> Self {
        let mut counts: BTreeMap<SpotLabel, usize> = SpotLabel::ALL.iter().map(|l| (*l, 0)).collect();
        for l in labels.values() {
            *counts.entry(*l).or_default() += 1;
        }
        SpotSummary { metric, labels, counts }
    }
}

pub fn classify_spots(result: &LocalMoranResult) -> SpotSummary {
    let labels = result
        .cells
        .iter()
        .map(|c| (c.cell_id.clone(), c.label))
        .collect();
    SpotSummary::from_labels(result.metric, labels)
}
