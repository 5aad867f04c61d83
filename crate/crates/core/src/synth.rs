//! Synthetic fixtures with known ground truth, and a brute-force Moran's I
//! used to cross-check the spatial module.
//!
//! Fixtures live on a lattice of unit-square cells, so contiguity is exact.
//! Each fixture carries a design field (the planted pattern plus noise), the
//! POI and income data needed by the characterization stage, and can be
//! written to disk in the same formats the loaders read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use geo::{MultiPolygon, Point};
use rand::RngExt;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AdjacencyList, CellIncome, Contiguity, IncomeField, PoiTable};
use crate::ingest::{
    rect_polygon, write_grid, write_neighborhoods, write_pois, write_visits, AgeCohort, Cell, CellGrid, Group,
    NeighborhoodIncome, PoiCategory, PoiRecord, VisitRecord,
};
use crate::metrics::{standardize, MetricField, MetricId};
use crate::spatial::{rng, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Alternating ±1.
    Checkerboard,
    /// A square block raised by `contrast` over a noise background.
    PlantedBlock,
    /// Pure noise.
    Random,
    /// Left half raised by `contrast`, right half at 0.
    HalfSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// (row, col) of the block's first cell.
    pub origin: (usize, usize),
    pub size: usize,
    pub contrast: f64,
}

/// Characterization contrasts applied to the planted cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedContrasts {
    /// Category whose POI counts are multiplied by `poi_factor`.
    pub poi_category: Option<PoiCategory>,
    pub poi_factor: f64,
    /// Income shift in units of the income standard deviation.
    pub income_shift_sd: f64,
}

impl Default for PlantedContrasts {
    fn default() -> Self {
        PlantedContrasts {
            poi_category: None,
            poi_factor: 1.0,
            income_shift_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub pattern: Pattern,
    /// Block for `planted_block` (defaults to a centered 3×3 of contrast 3);
    /// its contrast also drives `half_split`.
    pub block: Option<Block>,
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default)]
    pub contrasts: PlantedContrasts,
}

impl SynthSpec {
    pub fn new(rows: usize, cols: usize, pattern: Pattern, noise_sd: f64, seed: u64) -> Self {
        SynthSpec {
            rows,
            cols,
            pattern,
            block: None,
            noise_sd,
            seed,
            contrasts: PlantedContrasts::default(),
        }
    }

    pub fn with_block(mut self, block: Block) -> Self {
        self.block = Some(block);
        self
    }

    /// Sets the block (or half-split) contrast, keeping the default block
    /// placement when none was given.
    pub fn with_contrast(mut self, contrast: f64) -> Self {
        self.block = Some(Block {
            contrast,
            ..self.resolved_block()
        });
        self
    }

    pub fn with_contrasts(mut self, contrasts: PlantedContrasts) -> Self {
        self.contrasts = contrasts;
        self
    }

    fn resolved_block(&self) -> Block {
        self.block.unwrap_or(Block {
            origin: (self.rows.saturating_sub(3) / 2, self.cols.saturating_sub(3) / 2),
            size: 3,
            contrast: 3.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidSpec(format!("grid {}x{} is too small", self.rows, self.cols)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_sd {} must be non-negative", self.noise_sd)));
        }
        if self.pattern == Pattern::Random && self.noise_sd == 0.0 {
            return Err(Error::InvalidSpec("random pattern needs noise_sd > 0".into()));
        }
        if self.pattern == Pattern::PlantedBlock {
            let b = self.resolved_block();
            if b.size == 0 || b.origin.0 + b.size > self.rows || b.origin.1 + b.size > self.cols {
                return Err(Error::InvalidSpec(format!(
                    "block at {:?} of size {} does not fit a {}x{} grid",
                    b.origin, b.size, self.rows, self.cols
                )));
            }
        }
        if self.contrasts.poi_factor < 0.0 || !self.contrasts.poi_factor.is_finite() {
            return Err(Error::InvalidSpec("poi_factor must be non-negative".into()));
        }
        Ok(())
    }
}

/// Cell id for lattice position (row, col).
pub fn cell_id(spec_cols: usize, rows: usize, row: usize, col: usize) -> String {
    let width = (rows * spec_cols).saturating_sub(1).to_string().len();
    format!("c{:0width$}", row * spec_cols + col)
}

/// Unit-square lattice grid in row-major order.
pub fn lattice_grid(rows: usize, cols: usize) -> CellGrid {
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            cells.push(Cell {
                cell_id: cell_id(cols, rows, r, c),
                polygon: rect_polygon(c as f64, r as f64, c as f64 + 1.0, r as f64 + 1.0),
                scale_factor: 1,
            });
        }
    }
    CellGrid::new(cells, None).expect("lattice cells are valid and disjoint")
}

/// Lattice contiguity computed from row/column offsets.
pub fn lattice_adjacency(rows: usize, cols: usize, contiguity: Contiguity) -> AdjacencyList {
    let ids = (0..rows * cols).map(|k| cell_id(cols, rows, k / cols, k % cols)).collect();
    let lists = (0..rows * cols)
        .map(|k| {
            let (r, c) = ((k / cols) as i64, (k % cols) as i64);
            let mut out = Vec::new();
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if (dr, dc) == (0, 0) || (contiguity == Contiguity::Rook && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < rows as i64 && cc < cols as i64 {
                        out.push(rr as usize * cols + cc as usize);
                    }
                }
            }
            out
        })
        .collect();
    AdjacencyList::from_indices(ids, lists)
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub spec: SynthSpec,
    pub grid: CellGrid,
    /// Design value per cell.
    pub values: BTreeMap<String, f64>,
    /// Custom-metric field built from `values`.
    pub field: MetricField,
    /// Ground truth: cells carrying the planted signal.
    pub planted: BTreeSet<String>,
    pub pois: Vec<PoiRecord>,
    pub poi_table: PoiTable,
    pub neighborhoods: Vec<NeighborhoodIncome>,
    pub income: IncomeField,
}

impl SynthFixture {
    /// (row, col) of a cell id produced by this fixture.
    pub fn position(&self, id: &str) -> (usize, usize) {
        let k = self.grid.index_of(id).expect("fixture cell");
        (k / self.spec.cols, k % self.spec.cols)
    }
}

fn normal(rng: &mut impl rand::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn design_values(spec: &SynthSpec, key: &str) -> (Vec<f64>, BTreeSet<usize>) {
    let mut rng = rng::stream(spec.seed, "synth", key);
    let block = spec.resolved_block();
    let mut planted = BTreeSet::new();
    let values = (0..spec.rows * spec.cols)
        .map(|k| {
            let (r, c) = (k / spec.cols, k % spec.cols);
            let noise = if spec.noise_sd > 0.0 { spec.noise_sd * normal(&mut rng) } else { 0.0 };
            let base = match spec.pattern {
                Pattern::Checkerboard => {
                    if (r + c) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Pattern::Random => 0.0,
                Pattern::PlantedBlock => {
                    let inside = (block.origin.0..block.origin.0 + block.size).contains(&r)
                        && (block.origin.1..block.origin.1 + block.size).contains(&c);
                    if inside {
                        planted.insert(k);
                        block.contrast
                    } else {
                        0.0
                    }
                }
                Pattern::HalfSplit => {
                    if c < spec.cols / 2 {
                        planted.insert(k);
                        block.contrast
                    } else {
                        0.0
                    }
                }
            };
            base + noise
        })
        .collect();
    (values, planted)
}

/// Mean POI counts per cell and category. Doubling nightlife leaves the
/// expected Shannon entropy of this mix unchanged (to about 1e-3 nats).
pub const POI_BASE_RATES: [f64; 8] = [48.0, 80.0, 96.0, 48.0, 39.2, 24.0, 24.0, 24.0];
/// Per cell and category, rates are scaled by a uniform factor in
/// [1 - spread, 1 + spread]. The planted category gets the narrower
/// spread so that its doubling stands out against the other categories,
/// whose shares it unavoidably lowers.
pub const POI_RATE_SPREAD: f64 = 0.9;
pub const PLANTED_POI_RATE_SPREAD: f64 = 0.1;
const INCOME_MEAN: f64 = 100.0;
const INCOME_SD: f64 = 15.0;

pub fn generate(spec: &SynthSpec) -> Result<SynthFixture> {
    spec.validate()?;
    let grid = lattice_grid(spec.rows, spec.cols);
    let ids: Vec<String> = grid.ids().map(str::to_string).collect();
    let (raw_values, planted_idx) = design_values(spec, "G");
    let values: BTreeMap<String, f64> = ids.iter().cloned().zip(raw_values).collect();
    let field = standardize(MetricId::Custom, values.clone())
        .map_err(|e| Error::InvalidSpec(format!("design field is degenerate: {e}")))?;
    let planted: BTreeSet<String> = planted_idx.iter().map(|&k| ids[k].clone()).collect();

    // POIs: per-cell rates vary around the base mix; planted cells get the
    // chosen category multiplied
    let mut rng = rng::stream(spec.seed, "synth", "pois");
    let mut pois = Vec::new();
    let mut counts = vec![[0u64; 8]; ids.len()];
    for (k, id) in ids.iter().enumerate() {
        let (r, c) = (k / spec.cols, k % spec.cols);
        for cat in PoiCategory::ALL {
            let spread = if spec.contrasts.poi_category == Some(cat) {
                PLANTED_POI_RATE_SPREAD
            } else {
                POI_RATE_SPREAD
            };
            let mut rate = POI_BASE_RATES[cat.index()] * rng.random_range(1.0 - spread..1.0 + spread);
            if planted.contains(id) && spec.contrasts.poi_category == Some(cat) {
                rate *= spec.contrasts.poi_factor;
            }
            let n = if rate > 0.0 {
                Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64
            } else {
                0
            };
            for _ in 0..n {
                let x = c as f64 + rng.random_range(0.05..0.95);
                let y = r as f64 + rng.random_range(0.05..0.95);
                pois.push(PoiRecord {
                    location: Point::new(x, y),
                    category: cat,
                });
            }
            counts[k][cat.index()] = n;
        }
    }
    let poi_table = PoiTable {
        ids: ids.clone(),
        counts,
        unassigned: 0,
    };

    // one neighborhood per cell
    let mut rng = rng::stream(spec.seed, "synth", "income");
    let mut neighborhoods = Vec::with_capacity(ids.len());
    let mut income_values = BTreeMap::new();
    for (k, id) in ids.iter().enumerate() {
        let shift = if planted.contains(id) {
            spec.contrasts.income_shift_sd * INCOME_SD
        } else {
            0.0
        };
        let income = (INCOME_MEAN + INCOME_SD * normal(&mut rng) + shift).max(1.0);
        neighborhoods.push(NeighborhoodIncome {
            name: format!("n_{id}"),
            polygon: MultiPolygon::new(vec![grid.cells()[k].polygon.clone()]),
            income_index: income,
        });
        income_values.insert(
            id.clone(),
            CellIncome {
                income: Some(income),
                covered_fraction: 1.0,
            },
        );
    }
    let income = IncomeField {
        values: income_values,
        low_coverage: Vec::new(),
        min_coverage: crate::geometry::DEFAULT_MIN_COVERAGE,
    };

    Ok(SynthFixture {
        spec: spec.clone(),
        grid,
        values,
        field,
        planted,
        pois,
        poi_table,
        neighborhoods,
        income,
    })
}

/// Visitors per cell and 4-hour bin in generated visit files.
pub const SYNTH_VISITORS_PER_BIN: u64 = 10_000;

/// Maps a design value to a group share in (0, 1).
fn share(x: f64) -> f64 {
    (0.5 + 0.04 * x).clamp(0.02, 0.98)
}

/// Visit records realizing the design pattern for G, E and T (each metric
/// gets its own noise draw around the same planted structure). Night bins
/// carry a flat 50% share so that they only matter if the window is ignored.
pub fn visit_records(fixture: &SynthFixture) -> Vec<VisitRecord> {
    let spec = &fixture.spec;
    let ids: Vec<&str> = fixture.grid.ids().collect();
    let g: Vec<f64> = ids.iter().map(|id| fixture.values[*id]).collect();
    let (e, _) = design_values(spec, "E");
    let (t, _) = design_values(spec, "T");
    let day = NaiveDate::from_ymd_opt(2018, 3, 1).expect("valid date");
    let total = SYNTH_VISITORS_PER_BIN;
    let round = |p: f64| (p * total as f64).round() as u64;
    let mut out = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        for hour in (0..24).step_by(4) {
            let at = day.and_hms_opt(hour, 0, 0).expect("valid hour");
            let daytime = hour >= 8;
            let (pg, pe, pt) = if daytime {
                (share(g[k]), share(e[k]) * 0.5, share(t[k]) * 0.5)
            } else {
                (0.5, 0.25, 0.25)
            };
            let female = round(pg);
            let elder = round(pe);
            let tourists = round(pt);
            let foreign = tourists / 2;
            let rows = [
                (Group::Total, total),
                (Group::Female, female),
                (Group::Male, total - female),
                (Group::Age(AgeCohort { lower: 0, upper: Some(64) }), total - elder),
                (Group::Age(AgeCohort { lower: 65, upper: None }), elder),
                (Group::TouristNational, tourists - foreign),
                (Group::TouristForeign, foreign),
            ];
            for (group, count) in rows {
                out.push(VisitRecord {
                    cell_id: id.to_string(),
                    period_start: at,
                    group,
                    count,
                });
            }
        }
    }
    out
}

/// File names written by [`write_fixture`].
pub const FIXTURE_FILES: [&str; 5] = ["grid.geojson", "visits.csv", "neighborhoods.geojson", "pois.csv", "truth.csv"];

/// Writes the fixture in the loader formats plus a `truth.csv` with the
/// design value and planted flag of each cell.
pub fn write_fixture(dir: impl AsRef<Path>, fixture: &SynthFixture) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_grid(dir.join("grid.geojson"), &fixture.grid)?;
    write_visits(dir.join("visits.csv"), &visit_records(fixture))?;
    write_neighborhoods(dir.join("neighborhoods.geojson"), &fixture.neighborhoods, fixture.grid.crs())?;
    write_pois(dir.join("pois.csv"), &fixture.pois)?;
    let mut truth = String::from("cell_id,value,planted\n");
    for (id, v) in &fixture.values {
        truth.push_str(&format!("{id},{v},{}\n", fixture.planted.contains(id)));
    }
    let path = dir.join("truth.csv");
    fs::write(&path, truth).map_err(|e| Error::io(path, e))
}

/// Moran's I by direct double summation over a dense weight matrix, with
/// the same cell exclusions as the spatial module (undefined cells dropped,
/// rows renormalized, islands dropped). Intended for small grids.
pub fn brute_force_moran(field: &MetricField, weights: &WeightMatrix) -> f64 {
    let ids = weights.ids();
    let defined: Vec<usize> = (0..ids.len())
        .filter(|&i| field.standardized.contains_key(&ids[i]))
        .collect();
    let m = defined.len();
    let mut binary = vec![vec![0.0f64; m]; m];
    for (a, &i) in defined.iter().enumerate() {
        for (b, &j) in defined.iter().enumerate() {
            if weights.row(i).iter().any(|&(k, w)| k == j && w > 0.0) {
                binary[a][b] = 1.0;
            }
        }
    }
    let kept: Vec<usize> = (0..m).filter(|&a| binary[a].iter().any(|&v| v > 0.0)).collect();
    let n = kept.len();
    let mut w = vec![vec![0.0f64; n]; n];
    for (a, &ia) in kept.iter().enumerate() {
        let row_sum: f64 = kept.iter().map(|&ib| binary[ia][ib]).sum();
        for (b, &ib) in kept.iter().enumerate() {
            w[a][b] = binary[ia][ib] / row_sum;
        }
    }
    let x: Vec<f64> = kept
        .iter()
        .map(|&a| field.standardized[&ids[defined[a]]])
        .collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut total_w = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * (x[i] - mean) * (x[j] - mean);
            total_w += w[i][j];
        }
    }
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (n as f64 / total_w) * num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_adjacency, DEFAULT_SNAP_TOLERANCE};

    #[test]
    fn checkerboard_alternates() {
        let f = generate(&SynthSpec::new(8, 8, Pattern::Checkerboard, 0.0, 1)).unwrap();
        let v: Vec<f64> = f.values.values().copied().collect();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], -1.0);
        assert_eq!(v[8], -1.0);
        assert_eq!(v.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn planted_block_mean() {
        let spec = SynthSpec::new(10, 10, Pattern::PlantedBlock, 0.0, 3);
        let f = generate(&spec).unwrap();
        assert_eq!(f.planted.len(), 9);
        assert!(f.planted.iter().all(|id| f.values[id] == 3.0));
        let noisy = generate(&SynthSpec::new(10, 10, Pattern::PlantedBlock, 1.0, 3)).unwrap();
        let mean = noisy.planted.iter().map(|id| noisy.values[id]).sum::<f64>() / 9.0;
        assert!((mean - 3.0).abs() < 1.5);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SynthSpec::new(6, 7, Pattern::Random, 1.0, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.pois, b.pois);
        assert_eq!(a.neighborhoods, b.neighborhoods);
        assert_ne!(generate(&SynthSpec { seed: 43, ..spec }).unwrap().values, a.values);
    }

    #[test]
    fn invalid_specs() {
        let block = Block {
            origin: (8, 8),
            size: 3,
            contrast: 3.0,
        };
        let spec = SynthSpec::new(10, 10, Pattern::PlantedBlock, 1.0, 0).with_block(block);
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        assert!(generate(&SynthSpec::new(10, 10, Pattern::Random, -1.0, 0)).is_err());
    }

    #[test]
    fn lattice_adjacency_matches_geometry() {
        let grid = lattice_grid(5, 4);
        for mode in [Contiguity::Queen, Contiguity::Rook] {
            let geometric = build_adjacency(&grid, mode, DEFAULT_SNAP_TOLERANCE);
            assert_eq!(geometric, lattice_adjacency(5, 4, mode));
        }
    }

    #[test]
    fn visits_respect_subgroup_bounds() {
        let f = generate(&SynthSpec::new(4, 4, Pattern::HalfSplit, 1.0, 5)).unwrap();
        let records = visit_records(&f);
        assert_eq!(records.len(), 16 * 6 * 7);
        assert!(records.iter().all(|r| r.count <= SYNTH_VISITORS_PER_BIN));
    }
}
