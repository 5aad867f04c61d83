//! Spatial predicates and overlays on the cell grid: contiguity, areal
//! interpolation of neighborhood income and POI-to-cell assignment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use geo::coordinate_position::{CoordPos, CoordinatePosition};
use geo::{
    Area, BooleanOps, BoundingRect, Coord, Distance, Euclidean, Line, LineString, Polygon, Rect,
    Validation,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CellGrid, NeighborhoodIncome, PoiCategory, PoiRecord};

/// Default snapping tolerance (CRS units) for boundary contact.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 1e-6;

/// Cells covered below this fraction by neighborhoods get no income.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.05;

/// Checks ring simplicity and positive area.
pub fn validate_polygon(poly: &Polygon<f64>) -> std::result::Result<(), String> {
    if let Err(errors) = poly.check_validation() {
        return Err(errors.to_string());
    }
    if poly.unsigned_area() <= 0.0 {
        return Err("zero area".into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contiguity {
    /// Shared edge or shared vertex.
    #[default]
    Queen,
    /// Shared edge of positive length.
    Rook,
}

/// Symmetric, irreflexive neighbor lists indexed like the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyList {
    ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyList {
    /// Builds from index lists, symmetrizing and dropping self-loops.
    pub fn from_indices(ids: Vec<String>, lists: Vec<Vec<usize>>) -> Self {
        let n = ids.len();
        let mut neighbors = vec![Vec::new(); n];
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if i != j && j < n {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        AdjacencyList { ids, neighbors }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_ids(&self, i: usize) -> impl Iterator<Item = &str> {
        self.neighbors[i].iter().map(|&j| self.ids[j].as_str())
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<String>> {
        (0..self.len())
            .map(|i| (self.ids[i].clone(), self.neighbor_ids(i).map(str::to_string).collect()))
            .collect()
    }
}

fn boundary_lines(poly: &Polygon<f64>) -> Vec<Line<f64>> {
    std::iter::once(poly.exterior())
        .chain(poly.interiors())
        .flat_map(|ring| ring.lines())
        .filter(|l| l.start != l.end)
        .collect()
}

fn point_line_distance(p: Coord<f64>, l: &Line<f64>) -> f64 {
    Euclidean.distance(&geo::Point::from(p), l)
}

/// Length over which two segments run along each other within `tol`.
fn collinear_overlap(a: &Line<f64>, b: &Line<f64>, tol: f64) -> f64 {
    if point_line_distance(b.start, a) > tol || point_line_distance(b.end, a) > tol {
        // b must lie along a's supporting line; test the reverse too for
        // segments where b is the longer one
        if point_line_distance(a.start, b) > tol || point_line_distance(a.end, b) > tol {
            return 0.0;
        }
    }
    let d = a.delta();
    let len = (d.x * d.x + d.y * d.y).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let (ux, uy) = (d.x / len, d.y / len);
    let project = |c: Coord<f64>| (c.x - a.start.x) * ux + (c.y - a.start.y) * uy;
    let (b0, b1) = (project(b.start), project(b.end));
    let (lo, hi) = (b0.min(b1).max(0.0), b0.max(b1).min(len));
    (hi - lo).max(0.0)
}

fn expanded_overlap(a: &Rect<f64>, b: &Rect<f64>, tol: f64) -> bool {
    a.min().x <= b.max().x + tol
        && b.min().x <= a.max().x + tol
        && a.min().y <= b.max().y + tol
        && b.min().y <= a.max().y + tol
}

fn in_contact(a: &[Line<f64>], b: &[Line<f64>], contiguity: Contiguity, tol: f64) -> bool {
    match contiguity {
        Contiguity::Queen => a
            .iter()
            .any(|la| b.iter().any(|lb| Euclidean.distance(la, lb) <= tol)),
        Contiguity::Rook => {
            let shared: f64 = a
                .iter()
                .map(|la| b.iter().map(|lb| collinear_overlap(la, lb, tol)).sum::<f64>())
                .sum();
            shared > tol
        }
    }
}

/// Contiguity between grid cells: two cells are neighbors when their
/// boundaries come within `tolerance` of each other (queen) or share an edge
/// segment longer than `tolerance` (rook).
pub fn build_adjacency(grid: &CellGrid, contiguity: Contiguity, tolerance: f64) -> AdjacencyList {
    let cells = grid.cells();
    let lines: Vec<Vec<Line<f64>>> = cells.iter().map(|c| boundary_lines(&c.polygon)).collect();
    let boxes: Vec<Rect<f64>> = cells
        .iter()
        .map(|c| c.polygon.bounding_rect().expect("validated polygon has a bounding box"))
        .collect();
    let lists: Vec<Vec<usize>> = (0..cells.len())
        .into_par_iter()
        .map(|i| {
            ((i + 1)..cells.len())
                .filter(|&j| {
                    expanded_overlap(&boxes[i], &boxes[j], tolerance)
                        && in_contact(&lines[i], &lines[j], contiguity, tolerance)
                })
                .collect()
        })
        .collect();
    AdjacencyList::from_indices(grid.ids().map(str::to_string).collect(), lists)
}

// ---------------------------------------------------------------------------
// Areal interpolation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellIncome {
    /// Area-weighted mean income over the covered part; `None` when coverage
    /// is below the configured threshold.
    pub income: Option<f64>,
    pub covered_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeField {
    pub values: BTreeMap<String, CellIncome>,
    /// Cells whose covered fraction fell below the threshold.
    pub low_coverage: Vec<String>,
    pub min_coverage: f64,
}

impl IncomeField {
    pub fn income(&self, cell_id: &str) -> Option<f64> {
        self.values.get(cell_id).and_then(|v| v.income)
    }
}

fn is_convex(ring: &LineString<f64>) -> bool {
    let pts: Vec<Coord<f64>> = {
        let mut v = ring.0.clone();
        if v.len() > 1 && v.first() == v.last() {
            v.pop();
        }
        v
    };
    if pts.len() < 3 {
        return false;
    }
    let n = pts.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Sutherland–Hodgman: clips `subject` against the convex ring `window` and
/// returns the shoelace area of the result. Correct in area for non-convex
/// subjects (degenerate connecting edges contribute nothing).
fn clipped_area(subject: &LineString<f64>, window: &LineString<f64>) -> f64 {
    let mut win: Vec<Coord<f64>> = window.0.clone();
    if win.len() > 1 && win.first() == win.last() {
        win.pop();
    }
    // orient the window counter-clockwise
    if signed_area(&win) < 0.0 {
        win.reverse();
    }
    let mut output: Vec<Coord<f64>> = subject.0.clone();
    if output.len() > 1 && output.first() == output.last() {
        output.pop();
    }
    for k in 0..win.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (win[k], win[(k + 1) % win.len()]);
        let side = |p: Coord<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let input = std::mem::take(&mut output);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    signed_area(&output).abs()
}

fn intersect(p: Coord<f64>, q: Coord<f64>, sp: f64, sq: f64) -> Coord<f64> {
    let t = sp / (sp - sq);
    Coord {
        x: p.x + t * (q.x - p.x),
        y: p.y + t * (q.y - p.y),
    }
}

fn signed_area(pts: &[Coord<f64>]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Area of `cell ∩ region`. Convex cells are clipped directly; anything else
/// goes through the general boolean overlay.
pub fn overlap_area(cell: &Polygon<f64>, region: &Polygon<f64>) -> f64 {
    if cell.interiors().is_empty() && is_convex(cell.exterior()) {
        let outer = clipped_area(region.exterior(), cell.exterior());
        let holes: f64 = region
            .interiors()
            .iter()
            .map(|h| clipped_area(h, cell.exterior()))
            .sum();
        (outer - holes).max(0.0)
    } else {
        cell.intersection(region).unsigned_area()
    }
}

/// Income per cell as the overlap-area-weighted mean of intersecting
/// neighborhoods, renormalized over the covered part of the cell.
pub fn interpolate_income(
    grid: &CellGrid,
    neighborhoods: &[NeighborhoodIncome],
    min_coverage: f64,
) -> IncomeField {
    let boxes: Vec<Option<Rect<f64>>> = neighborhoods.iter().map(|n| n.polygon.bounding_rect()).collect();
    let per_cell: Vec<(String, CellIncome)> = grid
        .cells()
        .par_iter()
        .map(|cell| {
            let cell_box = cell.polygon.bounding_rect().expect("validated polygon");
            let cell_area = cell.polygon.unsigned_area();
            let (mut weight, mut weighted) = (0.0, 0.0);
            for (nb, bbox) in neighborhoods.iter().zip(&boxes) {
                if !bbox.is_some_and(|b| expanded_overlap(&cell_box, &b, 0.0)) {
                    continue;
                }
                let a: f64 = nb.polygon.0.iter().map(|p| overlap_area(&cell.polygon, p)).sum();
                if a > 0.0 {
                    weight += a;
                    weighted += a * nb.income_index;
                }
            }
            let covered_fraction = (weight / cell_area).clamp(0.0, 1.0);
            let income = (covered_fraction >= min_coverage && weight > 0.0).then(|| weighted / weight);
            (
                cell.cell_id.clone(),
                CellIncome {
                    income,
                    covered_fraction,
                },
            )
        })
        .collect();
    let low_coverage: Vec<String> = per_cell
        .iter()
        .filter(|(_, v)| v.income.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    if !low_coverage.is_empty() {
        log::warn!(
            "{} cells covered below {min_coverage} by neighborhoods carry no income",
            low_coverage.len()
        );
    }
    IncomeField {
        values: per_cell.into_iter().collect(),
        low_coverage,
        min_coverage,
    }
}

// ---------------------------------------------------------------------------
// POI assignment

/// Per-cell POI counts over the fixed category set, in grid order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoiTable {
    pub ids: Vec<String>,
    pub counts: Vec<[u64; 8]>,
    /// POIs that fell outside every cell.
    pub unassigned: u64,
}

impl PoiTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unassigned
    }

    pub fn row(&self, cell_id: &str) -> Option<&[u64; 8]> {
        self.ids.iter().position(|id| id == cell_id).map(|i| &self.counts[i])
    }
}

/// Assigns each POI to the containing cell; boundary points go to the
/// lexicographically smallest cell_id among the cells touching them.
pub fn assign_pois(grid: &CellGrid, pois: &[PoiRecord]) -> PoiTable {
    let cells = grid.cells();
    let boxes: Vec<Rect<f64>> = cells
        .iter()
        .map(|c| c.polygon.bounding_rect().expect("validated polygon"))
        .collect();
    let mut counts = vec![[0u64; 8]; cells.len()];
    let mut unassigned = 0;
    for poi in pois {
        let p = poi.location.0;
        let mut best: Option<usize> = None;
        for (i, cell) in cells.iter().enumerate() {
            let b = &boxes[i];
            if p.x < b.min().x || p.x > b.max().x || p.y < b.min().y || p.y > b.max().y {
                continue;
            }
            match cell.polygon.coordinate_position(&p) {
                CoordPos::Outside => {}
                CoordPos::Inside | CoordPos::OnBoundary => {
                    if best.is_none_or(|k| cell.cell_id < cells[k].cell_id) {
                        best = Some(i);
                    }
                }
            }
        }
        match best {
            Some(i) => counts[i][poi.category.index()] += 1,
            None => unassigned += 1,
        }
    }
    if unassigned > 0 {
        log::warn!("{unassigned} POIs fall outside the grid");
    }
    PoiTable {
        ids: grid.ids().map(str::to_string).collect(),
        counts,
        unassigned,
    }
}

pub fn income_csv(field: &IncomeField) -> String {
    let mut out = String::from("cell_id,income,covered_fraction\n");
    for (id, v) in &field.values {
        let income = v.income.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!("{id},{income},{}\n", v.covered_fraction));
    }
    out
}

pub fn write_income_csv(path: impl AsRef<Path>, field: &IncomeField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, income_csv(field)).map_err(|e| Error::io(path, e))
}

pub fn poi_counts_csv(table: &PoiTable) -> String {
    let mut out = String::from("cell_id");
    for c in PoiCategory::ALL {
        out.push(',');
        out.push_str(c.as_str());
    }
    out.push('\n');
    for (id, row) in table.ids.iter().zip(&table.counts) {
        out.push_str(id);
        for n in row {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_poi_counts_csv(path: impl AsRef<Path>, table: &PoiTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, poi_counts_csv(table)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{rect_polygon, Cell};
    use geo::{MultiPolygon, Point};

    fn lattice(rows: usize, cols: usize) -> CellGrid {
        let mut cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                cells.push(Cell {
                    cell_id: format!("c{}", r * cols + c + 1),
                    polygon: rect_polygon(c as f64, r as f64, c as f64 + 1.0, r as f64 + 1.0),
                    scale_factor: 1,
                });
            }
        }
        CellGrid::new(cells, None).unwrap()
    }

    fn hood(poly: Polygon<f64>, income: f64) -> NeighborhoodIncome {
        NeighborhoodIncome {
            name: "n".into(),
            polygon: MultiPolygon::new(vec![poly]),
            income_index: income,
        }
    }

    #[test]
    fn queen_center_and_corner() {
        let grid = lattice(3, 3);
        let adj = build_adjacency(&grid, Contiguity::Queen, DEFAULT_SNAP_TOLERANCE);
        assert_eq!(adj.neighbors(4).len(), 8);
        assert_eq!(adj.neighbors(0).len(), 3);
        let rook = build_adjacency(&grid, Contiguity::Rook, DEFAULT_SNAP_TOLERANCE);
        assert_eq!(rook.neighbors(4).len(), 4);
        assert_eq!(rook.neighbors(0).len(), 2);
    }

    #[test]
    fn gap_beyond_tolerance_is_not_contact() {
        let cells = vec![
            Cell {
                cell_id: "a".into(),
                polygon: rect_polygon(0.0, 0.0, 1.0, 1.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "b".into(),
                polygon: rect_polygon(1.001, 0.0, 2.0, 1.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "c".into(),
                polygon: rect_polygon(0.0, 1.0 + 1e-8, 1.0, 2.0),
                scale_factor: 1,
            },
        ];
        let grid = CellGrid::new(cells, None).unwrap();
        let adj = build_adjacency(&grid, Contiguity::Queen, DEFAULT_SNAP_TOLERANCE);
        assert!(adj.neighbors(0).contains(&2), "within snapping tolerance");
        assert!(!adj.neighbors(0).contains(&1));
    }

    #[test]
    fn merged_cell_adjacency() {
        // a 2x2 merged block at the origin next to unit cells
        let cells = vec![
            Cell {
                cell_id: "m".into(),
                polygon: rect_polygon(0.0, 0.0, 2.0, 2.0),
                scale_factor: 4,
            },
            Cell {
                cell_id: "r1".into(),
                polygon: rect_polygon(2.0, 0.0, 3.0, 1.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "r2".into(),
                polygon: rect_polygon(2.0, 1.0, 3.0, 2.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "d".into(),
                polygon: rect_polygon(2.0, 2.0, 3.0, 3.0),
                scale_factor: 1,
            },
        ];
        let grid = CellGrid::new(cells, None).unwrap();
        // r2 touches m along an edge that has no vertex of m in its interior
        let rook = build_adjacency(&grid, Contiguity::Rook, DEFAULT_SNAP_TOLERANCE);
        assert_eq!(rook.neighbors(0), &[1, 2]);
        let queen = build_adjacency(&grid, Contiguity::Queen, DEFAULT_SNAP_TOLERANCE);
        assert_eq!(queen.neighbors(0), &[1, 2, 3]);
    }

    #[test]
    fn income_single_source() {
        let grid = lattice(1, 1);
        let f = interpolate_income(&grid, &[hood(rect_polygon(-1.0, -1.0, 2.0, 2.0), 100.0)], DEFAULT_MIN_COVERAGE);
        let v = f.values["c1"];
        assert_eq!(v.income, Some(100.0));
        assert_eq!(v.covered_fraction, 1.0);
    }

    #[test]
    fn income_half_split() {
        let grid = lattice(1, 1);
        let f = interpolate_income(
            &grid,
            &[
                hood(rect_polygon(-1.0, -1.0, 0.5, 2.0), 80.0),
                hood(rect_polygon(0.5, -1.0, 2.0, 2.0), 120.0),
            ],
            DEFAULT_MIN_COVERAGE,
        );
        assert!((f.income("c1").unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn income_partial_coverage_renormalized() {
        let grid = lattice(1, 1);
        let f = interpolate_income(&grid, &[hood(rect_polygon(0.0, 0.0, 0.4, 1.0), 100.0)], DEFAULT_MIN_COVERAGE);
        let v = f.values["c1"];
        assert!((v.income.unwrap() - 100.0).abs() < 1e-12);
        assert!((v.covered_fraction - 0.4).abs() < 1e-12);
    }

    #[test]
    fn income_below_threshold_is_missing() {
        let grid = lattice(1, 2);
        let f = interpolate_income(&grid, &[hood(rect_polygon(0.0, 0.0, 0.01, 1.0), 100.0)], DEFAULT_MIN_COVERAGE);
        assert_eq!(f.income("c1"), None);
        assert_eq!(f.low_coverage, vec!["c1".to_string(), "c2".to_string()]);
    }

    #[test]
    fn clipping_matches_boolean_overlay() {
        // non-convex L-shaped region with a hole against a unit cell
        let region = Polygon::new(
            LineString::from(vec![(-0.5, -0.5), (0.7, -0.5), (0.7, 0.3), (1.5, 0.3), (1.5, 1.5), (-0.5, 1.5), (-0.5, -0.5)]),
            vec![LineString::from(vec![(0.1, 0.6), (0.3, 0.6), (0.3, 0.8), (0.1, 0.8), (0.1, 0.6)])],
        );
        let cell = rect_polygon(0.0, 0.0, 1.0, 1.0);
        let clipped = overlap_area(&cell, &region);
        let overlay = cell.intersection(&region).unsigned_area();
        assert!((clipped - overlay).abs() < 1e-9, "{clipped} vs {overlay}");
        assert!((clipped - (1.0 - 0.3 * 0.3 - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn poi_assignment_rules() {
        let grid = lattice(3, 3);
        let pois = vec![
            PoiRecord {
                location: Point::new(1.5, 1.5),
                category: PoiCategory::Food,
            },
            PoiRecord {
                location: Point::new(10.0, 10.0),
                category: PoiCategory::Food,
            },
            // shared edge of c1 (x in [0,1]) and c2 (x in [1,2])
            PoiRecord {
                location: Point::new(1.0, 0.5),
                category: PoiCategory::Health,
            },
        ];
        let t = assign_pois(&grid, &pois);
        assert_eq!(t.row("c5").unwrap()[PoiCategory::Food.index()], 1);
        assert_eq!(t.row("c1").unwrap()[PoiCategory::Health.index()], 1);
        assert_eq!(t.row("c2").unwrap()[PoiCategory::Health.index()], 0);
        assert_eq!(t.unassigned, 1);
        assert_eq!(t.total(), 3);
    }
}
