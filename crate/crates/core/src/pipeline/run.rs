use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::RunConfig;
use super::output::{self, ManifestEntry, OutputSet};
use crate::characterize::{
    compare_entropy, compare_income, compare_poi_association, poi_entropy, poi_log_odds, split_by_spot,
    Comparison, ComparisonRow, EntropyField, PoiAssociation,
};
use crate::error::{Error, Result};
use crate::geometry::{
    assign_pois, build_adjacency, income_csv, interpolate_income, poi_counts_csv, IncomeField, PoiTable,
};
use crate::ingest::{
    load_grid, load_neighborhoods, load_pois, load_visits, CellGrid, NeighborhoodIncome, PoiCategory, PoiRecord,
    VisitSet,
};
use crate::metrics::{ratio, scale_merged_cells, standardize, MetricField, MetricId};
use crate::spatial::{
    build_weights, classify_spots, global_moran, local_moran, Alternative, Correction, GlobalMoranResult,
    GlobalOptions, LocalMoranResult, LocalOptions, SpotSummary, WeightMatrix,
};

pub struct Inputs {
    pub grid: CellGrid,
    pub visits: VisitSet,
    pub neighborhoods: Vec<NeighborhoodIncome>,
    pub pois: Vec<PoiRecord>,
}

fn check_crs(grid: &CellGrid, path: &Path) -> Result<()> {
    // neighborhoods carry their own crs member; a mismatch would make the
    // overlay meaningless
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::malformed(path.display().to_string(), e))?;
    let theirs = value.pointer("/crs/properties/name").and_then(Value::as_str);
    match (grid.crs(), theirs) {
        (Some(a), Some(b)) if a != b => Err(Error::malformed(
            path.display().to_string(),
            format!("crs {b} differs from the grid's {a}"),
        )),
        _ => Ok(()),
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let stage = |e: Error| e.in_stage("ingest");
    let grid = load_grid(&cfg.inputs.grid).map_err(stage)?;
    let visits = load_visits(&cfg.inputs.visits, &grid).map_err(stage)?;
    let neighborhoods = load_neighborhoods(&cfg.inputs.neighborhoods).map_err(stage)?;
    check_crs(&grid, &cfg.inputs.neighborhoods).map_err(stage)?;
    let pois = load_pois(&cfg.inputs.pois).map_err(stage)?;
    info!(
        "loaded {} cells, {} visit records, {} neighborhoods, {} POIs",
        grid.len(),
        visits.records.len(),
        neighborhoods.len(),
        pois.len()
    );
    Ok(Inputs {
        grid,
        visits,
        neighborhoods,
        pois,
    })
}

/// Input paths for `validate`; any subset may be given.
#[derive(Debug, Clone, Default)]
pub struct InputSelection {
    pub grid: Option<PathBuf>,
    pub visits: Option<PathBuf>,
    pub neighborhoods: Option<PathBuf>,
    pub pois: Option<PathBuf>,
}

#[derive(Debug)]
pub struct FileCheck {
    pub kind: &'static str,
    pub path: PathBuf,
    pub outcome: Result<String>,
}

/// Loads each given file independently and reports one outcome per file.
/// Visits are checked against the grid, so they need a valid grid.
pub fn validate_inputs(sel: &InputSelection) -> Vec<FileCheck> {
    let mut out = Vec::new();
    let mut grid = None;
    if let Some(path) = &sel.grid {
        let outcome = load_grid(path).map(|g| {
            let msg = format!("{} cells", g.len());
            grid = Some(g);
            msg
        });
        out.push(FileCheck {
            kind: "grid",
            path: path.clone(),
            outcome,
        });
    }
    if let Some(path) = &sel.visits {
        let outcome = match &grid {
            Some(g) => load_visits(path, g)
                .map(|v| format!("{} records, {} missing rows counted as 0", v.records.len(), v.missing_rows)),
            None => Err(Error::InvalidConfig("visits can only be checked against a valid grid".into())),
        };
        out.push(FileCheck {
            kind: "visits",
            path: path.clone(),
            outcome,
        });
    }
    if let Some(path) = &sel.neighborhoods {
        let outcome = load_neighborhoods(path).map(|n| format!("{} neighborhoods", n.len()));
        out.push(FileCheck {
            kind: "neighborhoods",
            path: path.clone(),
            outcome,
        });
    }
    if let Some(path) = &sel.pois {
        let outcome = load_pois(path).map(|p| format!("{} POIs", p.len()));
        out.push(FileCheck {
            kind: "pois",
            path: path.clone(),
            outcome,
        });
    }
    out
}

/// A metric field plus the grid cells it leaves undefined.
#[derive(Debug, Clone)]
pub struct FieldWithGaps {
    pub field: MetricField,
    pub undefined: Vec<String>,
}

fn with_gaps(grid: &CellGrid, field: MetricField) -> FieldWithGaps {
    let undefined = grid
        .ids()
        .filter(|id| !field.raw.contains_key(*id))
        .map(str::to_string)
        .collect();
    FieldWithGaps { field, undefined }
}

pub fn compute_fields(cfg: &RunConfig, inputs: &Inputs) -> Result<Vec<FieldWithGaps>> {
    let scaled = scale_merged_cells(&inputs.visits.records, &inputs.grid);
    cfg.metrics
        .iter()
        .map(|&metric| {
            let numerator = metric.numerator().expect("validated metric");
            let r = ratio(&scaled, &inputs.grid, numerator, cfg.window_for(metric))?;
            if !r.undefined.is_empty() {
                warn!("{metric}: {} cells have no visitors in the window", r.undefined.len());
            }
            Ok(with_gaps(&inputs.grid, standardize(metric, r.values)?))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("metrics"))
}

pub fn compute_weights(cfg: &RunConfig, grid: &CellGrid) -> WeightMatrix {
    build_weights(&build_adjacency(grid, cfg.contiguity, cfg.snap_tolerance))
}

pub fn compute_income(cfg: &RunConfig, inputs: &Inputs) -> IncomeField {
    let field = interpolate_income(&inputs.grid, &inputs.neighborhoods, cfg.min_coverage);
    if !field.low_coverage.is_empty() {
        warn!("{} cells have too little neighborhood coverage for an income", field.low_coverage.len());
    }
    field
}

pub fn compute_poi_table(inputs: &Inputs) -> PoiTable {
    let table = assign_pois(&inputs.grid, &inputs.pois);
    if table.unassigned > 0 {
        warn!("{} POIs fall outside every cell", table.unassigned);
    }
    table
}

pub fn global_options(cfg: &RunConfig) -> GlobalOptions {
    GlobalOptions {
        permutations: cfg.permutations,
        seed: cfg.seed,
        alternative: Alternative::Directional,
    }
}

pub fn local_options(cfg: &RunConfig) -> LocalOptions {
    LocalOptions {
        permutations: cfg.permutations,
        seed: cfg.seed,
        alpha: cfg.alpha,
        alternative: Alternative::TwoSided,
        variance: cfg.local_variance,
        correction: if cfg.fdr { Correction::Fdr } else { Correction::None },
    }
}

pub fn compute_global(cfg: &RunConfig, fields: &[MetricField], weights: &WeightMatrix) -> Result<Vec<GlobalMoranResult>> {
    let opts = global_options(cfg);
    fields
        .iter()
        .map(|f| global_moran(f, weights, &opts))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("spatial"))
}

pub fn compute_local(cfg: &RunConfig, fields: &[MetricField], weights: &WeightMatrix) -> Result<Vec<LocalMoranResult>> {
    let opts = local_options(cfg);
    fields
        .iter()
        .map(|f| local_moran(f, weights, &opts))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("spatial"))
}

/// Bonferroni family sizes: each comparison table is corrected on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonferroniFamilies {
    pub income: usize,
    pub poi_log_odds: usize,
    pub entropy: usize,
}

impl BonferroniFamilies {
    pub fn for_metrics(n_metrics: usize) -> Self {
        BonferroniFamilies {
            income: n_metrics,
            poi_log_odds: n_metrics * PoiCategory::ALL.len(),
            entropy: n_metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedComparison {
    pub metric: MetricId,
    pub comparison: Comparison,
    pub reason: String,
}

pub struct Characterization {
    pub rows: Vec<ComparisonRow>,
    pub skipped: Vec<SkippedComparison>,
    pub families: BonferroniFamilies,
    pub association: PoiAssociation,
    pub entropy: EntropyField,
    pub income_samples: Vec<(MetricId, Vec<f64>, Vec<f64>)>,
    pub entropy_samples: Vec<(MetricId, Vec<f64>, Vec<f64>)>,
}

/// Hot vs cold comparisons for every metric. A metric without hot or cold
/// cells is skipped (and reported) rather than failing the run.
pub fn characterize(
    cfg: &RunConfig,
    spots: &[SpotSummary],
    income: &IncomeField,
    pois: &PoiTable,
) -> Result<Characterization> {
    let stage = |e: Error| e.in_stage("characterize");
    let families = BonferroniFamilies::for_metrics(cfg.metrics.len());
    let association = poi_log_odds(pois, cfg.prior_alpha).map_err(stage)?;
    let entropy = poi_entropy(pois);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut income_samples = Vec::new();
    let mut entropy_samples = Vec::new();
    for s in spots {
        let mut handle = |comparison, r: Result<Vec<ComparisonRow>>| -> Result<()> {
            match r {
                Ok(mut new) => rows.append(&mut new),
                Err(e @ Error::NoSpots(_)) => {
                    warn!("skipping {} {}: {e}", s.metric, Comparison::as_str(comparison));
                    skipped.push(SkippedComparison {
                        metric: s.metric,
                        comparison,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(stage(e)),
            }
            Ok(())
        };
        let row = |comparison, category, result| ComparisonRow {
            metric: s.metric,
            comparison,
            category,
            result,
        };
        handle(
            Comparison::Income,
            compare_income(s, income, cfg.ks_method, families.income).map(|r| vec![row(Comparison::Income, None, r)]),
        )?;
        handle(
            Comparison::PoiLogOdds,
            compare_poi_association(s, &association, cfg.ks_method, families.poi_log_odds).map(|v| {
                v.into_iter()
                    .map(|(cat, r)| row(Comparison::PoiLogOdds, Some(cat), r))
                    .collect()
            }),
        )?;
        handle(
            Comparison::Entropy,
            compare_entropy(s, &entropy, cfg.ks_method, families.entropy).map(|r| vec![row(Comparison::Entropy, None, r)]),
        )?;
        let (hot, cold) = split_by_spot(s, |id| income.income(id));
        income_samples.push((s.metric, hot, cold));
        let (hot, cold) = split_by_spot(s, |id| entropy.values.get(id).map(|v| v.entropy));
        entropy_samples.push((s.metric, hot, cold));
    }
    Ok(Characterization {
        rows,
        skipped,
        families,
        association,
        entropy,
        income_samples,
        entropy_samples,
    })
}

// ---------------------------------------------------------------------------
// File sets per stage

pub fn metrics_outputs(fields: &[FieldWithGaps], income: &IncomeField, pois: &PoiTable, cfg: &RunConfig) -> OutputSet {
    let mut out = OutputSet::default();
    for f in fields {
        out.add(output::metric_file(f.field.metric), f.field.to_csv());
    }
    out.add(output::INCOME_FILE, income_csv(income));
    out.add(output::POI_COUNTS_FILE, poi_counts_csv(pois));
    out.add(output::RUN_CONFIG_FILE, output::json_bytes(&cfg.to_json()));
    out
}

pub fn global_outputs(global: &[GlobalMoranResult], cfg: &RunConfig) -> OutputSet {
    let mut out = OutputSet::default();
    out.add(output::MORAN_GLOBAL_FILE, output::global_csv(global));
    out.add(output::RUN_CONFIG_FILE, output::json_bytes(&cfg.to_json()));
    out
}

pub fn local_outputs(
    grid: &CellGrid,
    fields: &[MetricField],
    local: &[LocalMoranResult],
    global: &[GlobalMoranResult],
    cfg: &RunConfig,
) -> OutputSet {
    let mut out = OutputSet::default();
    let config = cfg.to_json();
    let mut spots = Vec::new();
    for (field, result) in fields.iter().zip(local) {
        let rows = output::spot_rows(grid, field, result);
        out.add(output::spots_csv_file(field.metric), output::spots_csv(&rows));
        out.add(output::spots_geojson_file(field.metric), output::spots_geojson(grid, &rows, &config));
        spots.push(classify_spots(result));
    }
    out.add(output::SUMMARY_FILE, output::summary_csv(global, &spots));
    out.add(output::RUN_CONFIG_FILE, output::json_bytes(&config));
    out
}

pub fn characterize_outputs(c: &Characterization, cfg: &RunConfig) -> OutputSet {
    let mut out = OutputSet::default();
    out.add(output::CHARACTERIZATION_FILE, crate::characterize::comparison_csv(&c.rows));
    let mut lo = String::from("cell_id,category,delta\n");
    for (id, deltas) in c.association.ids.iter().zip(&c.association.deltas) {
        for cat in PoiCategory::ALL {
            lo.push_str(&format!("{id},{},{}\n", cat.as_str(), deltas[cat.index()]));
        }
    }
    out.add(output::POI_LOG_ODDS_FILE, lo);
    let mut en = String::from("cell_id,entropy,n_pois\n");
    for (id, v) in &c.entropy.values {
        en.push_str(&format!("{id},{},{}\n", v.entropy, v.n_pois));
    }
    out.add(output::POI_ENTROPY_FILE, en);
    out.add(output::CDF_INCOME_FILE, output::cdf_csv(&c.income_samples));
    out.add(output::CDF_ENTROPY_FILE, output::cdf_csv(&c.entropy_samples));
    out.add(output::RUN_CONFIG_FILE, output::json_bytes(&cfg.to_json()));
    out
}

// ---------------------------------------------------------------------------
// Stage commands: each reads what earlier stages wrote to the output
// directory and adds its own files.

fn read_fields(cfg: &RunConfig) -> Result<Vec<MetricField>> {
    cfg.metrics
        .iter()
        .map(|&m| MetricField::read_csv(cfg.output_dir.join(output::metric_file(m)), m))
        .collect()
}

pub fn run_metrics_stage(cfg: &RunConfig) -> Result<OutputSet> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let fields = compute_fields(cfg, &inputs)?;
    let income = compute_income(cfg, &inputs);
    let pois = compute_poi_table(&inputs);
    let out = metrics_outputs(&fields, &income, &pois, cfg);
    out.commit_merge(&cfg.output_dir).map_err(|e| e.in_stage("output"))?;
    Ok(out)
}

pub fn run_global_stage(cfg: &RunConfig) -> Result<(OutputSet, Vec<GlobalMoranResult>)> {
    cfg.validate()?;
    let grid = load_grid(&cfg.inputs.grid).map_err(|e| e.in_stage("ingest"))?;
    let fields = read_fields(cfg).map_err(|e| e.in_stage("metrics"))?;
    let global = compute_global(cfg, &fields, &compute_weights(cfg, &grid))?;
    let out = global_outputs(&global, cfg);
    out.commit_merge(&cfg.output_dir).map_err(|e| e.in_stage("output"))?;
    Ok((out, global))
}

pub fn run_local_stage(cfg: &RunConfig) -> Result<(OutputSet, Vec<SpotSummary>)> {
    cfg.validate()?;
    let grid = load_grid(&cfg.inputs.grid).map_err(|e| e.in_stage("ingest"))?;
    let fields = read_fields(cfg).map_err(|e| e.in_stage("metrics"))?;
    let global = output::read_global_csv(&cfg.output_dir.join(output::MORAN_GLOBAL_FILE)).map_err(|e| e.in_stage("spatial"))?;
    let local = compute_local(cfg, &fields, &compute_weights(cfg, &grid))?;
    let out = local_outputs(&grid, &fields, &local, &global, cfg);
    out.commit_merge(&cfg.output_dir).map_err(|e| e.in_stage("output"))?;
    Ok((out, local.iter().map(classify_spots).collect()))
}

pub fn run_characterize_stage(cfg: &RunConfig) -> Result<(OutputSet, Characterization)> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let spots = cfg
        .metrics
        .iter()
        .map(|&m| output::read_spots_csv(&cfg.output_dir.join(output::spots_csv_file(m)), m))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("spatial"))?;
    let income = compute_income(cfg, &inputs);
    let pois = compute_poi_table(&inputs);
    let c = characterize(cfg, &spots, &income, &pois)?;
    let out = characterize_outputs(&c, cfg);
    out.commit_merge(&cfg.output_dir).map_err(|e| e.in_stage("output"))?;
    Ok((out, c))
}

// ---------------------------------------------------------------------------
// Full run

/// A parameter the analysis needs but the method description leaves open,
/// with the value this run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterChoice {
    pub parameter: String,
    pub value: Value,
    /// `default`, `config` or `fixed`.
    pub source: String,
    pub note: String,
}

fn parameter_choices(cfg: &RunConfig) -> Vec<ParameterChoice> {
    let source = |key: &str| {
        if cfg.defaulted.contains(key) {
            "default"
        } else {
            "config"
        }
        .to_string()
    };
    let fixed = || "fixed".to_string();
    let choice = |parameter: &str, value: Value, source: String, note: &str| ParameterChoice {
        parameter: parameter.into(),
        value,
        source,
        note: note.into(),
    };
    vec![
        choice("permutations", json!(cfg.permutations), source("permutations"), "pseudo p = (R + 1) / (M + 1)"),
        choice("alpha", json!(cfg.alpha), source("alpha"), "local significance level and Bonferroni threshold"),
        choice(
            "global_alternative",
            json!(Alternative::Directional),
            fixed(),
            "one-sided in the direction of the observed deviation from the permutation mean",
        ),
        choice(
            "local_alternative",
            json!(Alternative::TwoSided),
            fixed(),
            "twice the directional pseudo p, capped at 1",
        ),
        choice(
            "local_variance",
            json!(cfg.local_variance),
            source("local_variance"),
            "anselin: global second moment m2; paper_literal: sample variance of neighbor values",
        ),
        choice("local_correction", json!(if cfg.fdr { "fdr" } else { "none" }), source("fdr"), "multiple-comparison correction of local p-values"),
        choice("contiguity", json!(cfg.contiguity), source("contiguity"), "binary contiguity, row-standardized"),
        choice("window", json!(cfg.window), source("window"), "applied to every metric unless metric_windows overrides it"),
        choice("prior_alpha", json!(cfg.prior_alpha), source("prior_alpha"), "uniform Dirichlet pseudo-count per POI category"),
        choice("ks_method", json!(cfg.ks_method), source("ks_method"), "p-value method of the two-sample KS tests"),
        choice(
            "bonferroni_family",
            json!("per_table"),
            fixed(),
            "m = number of tests in each comparison table (income, POI log-odds, entropy)",
        ),
        choice("entropy_log_base", json!("e"), fixed(), "Shannon entropy in nats; cells without POIs are excluded"),
        choice(
            "income_coverage",
            json!({ "min_coverage": cfg.min_coverage, "renormalized": true }),
            source("min_coverage"),
            "area-weighted income renormalized by the covered fraction of each cell",
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub cells: usize,
    pub visit_records: usize,
    pub missing_visit_rows: usize,
    pub neighborhoods: usize,
    pub pois: usize,
    pub unassigned_pois: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricId,
    pub n_cells: usize,
    pub undefined: Vec<String>,
    pub islands: Vec<String>,
    pub global: GlobalMoranResult,
    pub spot_counts: BTreeMap<String, usize>,
    pub literal_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub metric: MetricId,
    pub comparison: Comparison,
    pub category: Option<PoiCategory>,
    pub ks: f64,
    pub p: f64,
    pub p_bonferroni: f64,
    pub bonferroni_m: usize,
    pub n_hot: usize,
    pub n_cold: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: Value,
    pub parameters: Vec<ParameterChoice>,
    pub ingest: IngestSummary,
    pub income_low_coverage: Vec<String>,
    pub cells_without_pois: Vec<String>,
    pub metrics: Vec<MetricSummary>,
    pub bonferroni: BonferroniFamilies,
    pub comparisons: Vec<ComparisonSummary>,
    pub skipped_comparisons: Vec<SkippedComparison>,
    /// Every other file of the run, with its SHA-256.
    pub manifest: Vec<ManifestEntry>,
}

impl RunReport {
    /// Comparisons significant after Bonferroni correction.
    pub fn significant(&self) -> impl Iterator<Item = &ComparisonSummary> {
        self.comparisons.iter().filter(|c| c.significant)
    }
}

/// Computes every output of a full run without touching the output
/// directory.
pub fn compute_run(cfg: &RunConfig) -> Result<(OutputSet, RunReport)> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let fields = compute_fields(cfg, &inputs)?;
    let income = compute_income(cfg, &inputs);
    let pois = compute_poi_table(&inputs);
    let weights = compute_weights(cfg, &inputs.grid);
    let plain: Vec<MetricField> = fields.iter().map(|f| f.field.clone()).collect();
    let global = compute_global(cfg, &plain, &weights)?;
    let local = compute_local(cfg, &plain, &weights)?;
    let spots: Vec<SpotSummary> = local.iter().map(classify_spots).collect();
    let c = characterize(cfg, &spots, &income, &pois)?;

    let mut out = OutputSet::default();
    for set in [
        metrics_outputs(&fields, &income, &pois, cfg),
        global_outputs(&global, cfg),
        local_outputs(&inputs.grid, &plain, &local, &global, cfg),
        characterize_outputs(&c, cfg),
    ] {
        for name in set.names() {
            out.add(name, set.get(name).expect("listed"));
        }
    }

    let islands: Vec<String> = weights.islands().into_iter().map(str::to_string).collect();
    let metrics = fields
        .iter()
        .zip(&global)
        .zip(&local)
        .zip(&spots)
        .map(|(((f, g), l), s)| MetricSummary {
            metric: f.field.metric,
            n_cells: f.field.n_cells,
            undefined: f.undefined.clone(),
            islands: islands
                .iter()
                .filter(|id| f.field.raw.contains_key(*id))
                .cloned()
                .collect(),
            global: g.clone(),
            spot_counts: s.counts.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect(),
            literal_fallbacks: l.literal_fallbacks,
        })
        .collect();
    let comparisons = c
        .rows
        .iter()
        .map(|r| ComparisonSummary {
            metric: r.metric,
            comparison: r.comparison,
            category: r.category,
            ks: r.result.statistic,
            p: r.result.p_value,
            p_bonferroni: r.result.p_bonferroni,
            bonferroni_m: r.result.bonferroni_m,
            n_hot: r.result.n_a,
            n_cold: r.result.n_b,
            significant: r.significant(cfg.alpha),
        })
        .collect();
    let report = RunReport {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.to_json(),
        parameters: parameter_choices(cfg),
        ingest: IngestSummary {
            cells: inputs.grid.len(),
            visit_records: inputs.visits.records.len(),
            missing_visit_rows: inputs.visits.missing_rows,
            neighborhoods: inputs.neighborhoods.len(),
            pois: inputs.pois.len(),
            unassigned_pois: pois.unassigned,
        },
        income_low_coverage: income.low_coverage.clone(),
        cells_without_pois: c.entropy.empty.clone(),
        metrics,
        bonferroni: c.families,
        comparisons,
        skipped_comparisons: c.skipped.clone(),
        manifest: out.manifest(),
    };
    out.add(output::REPORT_FILE, output::json_bytes(&report));
    Ok((out, report))
}

/// Full run: ingest → geometry → metrics → spatial → characterize, then an
/// atomic replacement of the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let (out, report) = compute_run(cfg)?;
    out.commit_replace(&cfg.output_dir).map_err(|e| e.in_stage("output"))?;
    info!("wrote {} files to {}", report.manifest.len() + 1, cfg.output_dir.display());
    Ok(report)
}
