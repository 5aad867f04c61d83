//! Loading and validation of the four input datasets: the cell grid, visitor
//! counts, neighborhood incomes and points of interest.
//!
//! All coordinates are expected in a projected planar CRS measured in meters.
//! A GeoJSON `crs` member naming a geographic system (EPSG:4326 and friends)
//! is rejected; a missing `crs` member is taken as an assertion that the
//! coordinates are already planar.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDateTime, Timelike};
use geo::{Area, BooleanOps, BoundingRect, Coord, LineString, MultiPolygon, Point, Polygon, Rect};
use geojson::{Feature, FeatureCollection, GeoJson, GeometryValue, JsonObject};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::validate_polygon;

/// Hours covered by one visit aggregation bin.
pub const BIN_HOURS: u32 = 4;

/// Lower age bound (inclusive) of the elder population.
pub const ELDER_MIN_AGE: u32 = 65;

const GEOGRAPHIC_CRS: &[&str] = &["4326", "4258", "4269", "4267", "4171", "CRS84", "CRS83", "CRS27"];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cell_id: String,
    pub polygon: Polygon<f64>,
    /// Number of regular cells merged into this one.
    pub scale_factor: u32,
}

/// Polygonal partition of the study area.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    cells: Vec<Cell>,
    crs: Option<String>,
    index: HashMap<String, usize>,
}

impl CellGrid {
    /// Validates ids, polygons and pairwise disjointness.
    pub fn new(cells: Vec<Cell>, crs: Option<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            if cell.cell_id.is_empty() {
                return Err(Error::MissingProperty {
                    feature: format!("#{i}"),
                    property: "cell_id".into(),
                });
            }
            if index.insert(cell.cell_id.clone(), i).is_some() {
                return Err(Error::DuplicateCellId(cell.cell_id.clone()));
            }
            if cell.scale_factor == 0 {
                return Err(Error::MissingProperty {
                    feature: cell.cell_id.clone(),
                    property: "scale_factor".into(),
                });
            }
            validate_polygon(&cell.polygon).map_err(|reason| Error::InvalidPolygon {
                feature: cell.cell_id.clone(),
                reason,
            })?;
        }
        check_disjoint(&cells)?;
        Ok(CellGrid { cells, crs, index })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn crs(&self) -> Option<&str> {
        self.crs.as_deref()
    }

    pub fn index_of(&self, cell_id: &str) -> Option<usize> {
        self.index.get(cell_id).copied()
    }

    pub fn get(&self, cell_id: &str) -> Option<&Cell> {
        self.index_of(cell_id).map(|i| &self.cells[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|c| c.cell_id.as_str())
    }
}

fn check_disjoint(cells: &[Cell]) -> Result<()> {
    let boxes: Vec<Option<Rect<f64>>> = cells.iter().map(|c| c.polygon.bounding_rect()).collect();
    let areas: Vec<f64> = cells.iter().map(|c| c.polygon.unsigned_area()).collect();
    for i in 0..cells.len() {
        for j in (i + 1)..cells.len() {
            let (Some(a), Some(b)) = (boxes[i], boxes[j]) else {
                continue;
            };
            let overlap_w = a.max().x.min(b.max().x) - a.min().x.max(b.min().x);
            let overlap_h = a.max().y.min(b.max().y) - a.min().y.max(b.min().y);
            if overlap_w <= 0.0 || overlap_h <= 0.0 {
                continue;
            }
            let area = cells[i]
                .polygon
                .intersection(&cells[j].polygon)
                .unsigned_area();
            if area > 1e-9 * areas[i].min(areas[j]) {
                return Err(Error::OverlappingCells {
                    a: cells[i].cell_id.clone(),
                    b: cells[j].cell_id.clone(),
                    area,
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// GeoJSON helpers

fn read_feature_collection(path: &Path) -> Result<FeatureCollection> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    match text.parse::<GeoJson>() {
        Ok(GeoJson::FeatureCollection(fc)) => Ok(fc),
        Ok(_) => Err(Error::malformed(context, "expected a GeoJSON FeatureCollection")),
        Err(e) => Err(Error::malformed(context, e)),
    }
}

/// Extracts the CRS code named by the legacy GeoJSON `crs` member and refuses
/// geographic systems.
fn crs_of(fc: &FeatureCollection) -> Result<Option<String>> {
    let Some(name) = fc
        .foreign_members
        .as_ref()
        .and_then(|m| m.get("crs"))
        .and_then(|crs| crs.pointer("/properties/name"))
        .and_then(Value::as_str)
    else {
        return Ok(None);
    };
    let code = name
        .rsplit([':', '/'])
        .find(|s| !s.is_empty())
        .unwrap_or(name);
    if GEOGRAPHIC_CRS.iter().any(|g| g.eq_ignore_ascii_case(code)) {
        return Err(Error::GeographicCrs(name.to_string()));
    }
    Ok(Some(name.to_string()))
}

fn crs_member(name: &str) -> Value {
    serde_json::json!({ "type": "name", "properties": { "name": name } })
}

fn feature_label(i: usize, feature: &Feature, key: &str) -> String {
    feature
        .properties
        .as_ref()
        .and_then(|p| p.get(key))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("#{i}"))
}

fn feature_polygons(label: &str, feature: &Feature) -> Result<MultiPolygon<f64>> {
    let invalid = |reason: &str| Error::InvalidPolygon {
        feature: label.to_string(),
        reason: reason.to_string(),
    };
    let geometry = feature.geometry.as_ref().ok_or_else(|| invalid("missing geometry"))?;
    let mp: MultiPolygon<f64> = match &geometry.value {
        GeometryValue::Polygon { .. } => {
            MultiPolygon::new(vec![Polygon::try_from(&geometry.value).map_err(|e| invalid(&e.to_string()))?])
        }
        GeometryValue::MultiPolygon { .. } => {
            MultiPolygon::try_from(&geometry.value).map_err(|e| invalid(&e.to_string()))?
        }
        other => return Err(invalid(&format!("expected Polygon, found {}", other.type_name()))),
    };
    for poly in &mp.0 {
        if poly.exterior().0.iter().any(|c| !c.x.is_finite() || !c.y.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        validate_polygon(poly).map_err(|reason| invalid(&reason))?;
    }
    Ok(mp)
}

fn polygon_value(poly: &Polygon<f64>) -> GeometryValue {
    GeometryValue::from(poly)
}

// ---------------------------------------------------------------------------
// Grid

pub fn load_grid(path: impl AsRef<Path>) -> Result<CellGrid> {
    let path = path.as_ref();
    let fc = read_feature_collection(path)?;
    let crs = crs_of(&fc)?;
    let mut cells = Vec::with_capacity(fc.features.len());
    for (i, feature) in fc.features.iter().enumerate() {
        let label = feature_label(i, feature, "cell_id");
        let props = feature.properties.as_ref();
        let cell_id = match props.and_then(|p| p.get("cell_id")) {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            _ => {
                return Err(Error::MissingProperty {
                    feature: label,
                    property: "cell_id".into(),
                })
            }
        };
        let scale_factor = match props.and_then(|p| p.get("scale_factor")) {
            None | Some(Value::Null) => 1,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 && n <= u32::MAX as u64 => n as u32,
                _ => {
                    return Err(Error::MissingProperty {
                        feature: label,
                        property: "scale_factor".into(),
                    })
                }
            },
        };
        let mut polys = feature_polygons(&label, feature)?;
        if polys.0.len() != 1 {
            return Err(Error::InvalidPolygon {
                feature: label,
                reason: "a cell must be a single polygon".into(),
            });
        }
        cells.push(Cell {
            cell_id,
            polygon: polys.0.remove(0),
            scale_factor,
        });
    }
    CellGrid::new(cells, crs)
}

pub fn grid_to_geojson(grid: &CellGrid) -> FeatureCollection {
    let features = grid
        .cells()
        .iter()
        .map(|cell| {
            let mut props = JsonObject::new();
            props.insert("cell_id".into(), Value::from(cell.cell_id.clone()));
            props.insert("scale_factor".into(), Value::from(cell.scale_factor));
            Feature {
                geometry: Some(polygon_value(&cell.polygon).into()),
                properties: Some(props),
                ..Default::default()
            }
        })
        .collect::<Vec<_>>();
    let mut fc = FeatureCollection::new(features);
    if let Some(crs) = grid.crs() {
        let mut fm = JsonObject::new();
        fm.insert("crs".into(), crs_member(crs));
        fc.foreign_members = Some(fm);
    }
    fc
}

pub fn write_grid(path: impl AsRef<Path>, grid: &CellGrid) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&grid_to_geojson(grid))
        .map_err(|e| Error::malformed(path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Visits

/// Age cohort `[lower, upper]` in years; `upper = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeCohort {
    pub lower: u32,
    pub upper: Option<u32>,
}

impl AgeCohort {
    pub fn is_elder(&self) -> bool {
        self.lower >= ELDER_MIN_AGE
    }

    fn overlaps(&self, other: &AgeCohort) -> bool {
        let a_hi = self.upper.unwrap_or(u32::MAX);
        let b_hi = other.upper.unwrap_or(u32::MAX);
        self.lower <= b_hi && other.lower <= a_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Total,
    Female,
    Male,
    Age(AgeCohort),
    TouristNational,
    TouristForeign,
}

impl FromStr for Group {
    type Err = ();

    /// Accepts `total`, `female`, `male`, `tourist_national`, `tourist_foreign`,
    /// `elder` (alias of `age_65_plus`), `age_<lo>_<hi>` and `age_<lo>_plus`.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "total" => return Ok(Group::Total),
            "female" => return Ok(Group::Female),
            "male" => return Ok(Group::Male),
            "tourist_national" => return Ok(Group::TouristNational),
            "tourist_foreign" => return Ok(Group::TouristForeign),
            "elder" => {
                return Ok(Group::Age(AgeCohort {
                    lower: ELDER_MIN_AGE,
                    upper: None,
                }))
            }
            _ => {}
        }
        let rest = s.strip_prefix("age_").ok_or(())?;
        let (lo, hi) = rest.split_once('_').ok_or(())?;
        let lower: u32 = lo.parse().map_err(|_| ())?;
        let upper = match hi {
            "plus" => None,
            hi => {
                let upper: u32 = hi.parse().map_err(|_| ())?;
                if upper < lower {
                    return Err(());
                }
                Some(upper)
            }
        };
        Ok(Group::Age(AgeCohort { lower, upper }))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Total => f.write_str("total"),
            Group::Female => f.write_str("female"),
            Group::Male => f.write_str("male"),
            Group::TouristNational => f.write_str("tourist_national"),
            Group::TouristForeign => f.write_str("tourist_foreign"),
            Group::Age(AgeCohort { lower, upper: None }) => write!(f, "age_{lower}_plus"),
            Group::Age(AgeCohort {
                lower,
                upper: Some(upper),
            }) => write!(f, "age_{lower}_{upper}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitRecord {
    pub cell_id: String,
    pub period_start: NaiveDateTime,
    pub group: Group,
    pub count: u64,
}

/// Validated visit records plus the number of implied zero rows.
#[derive(Debug, Clone, Default)]
pub struct VisitSet {
    pub records: Vec<VisitRecord>,
    /// (cell, period, group) combinations absent from the file, counted as 0.
    pub missing_rows: usize,
}

pub const VISITS_HEADER: [&str; 4] = ["cell_id", "period_start", "group", "count"];

pub fn parse_period(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_local()))
}

pub fn format_period(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| Error::malformed(path.display().to_string(), e))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::malformed(
            path.display().to_string(),
            format!("header must be `{}`", expected.join(",")),
        ));
    }
    Ok(())
}

pub fn load_visits(path: impl AsRef<Path>, grid: &CellGrid) -> Result<VisitSet> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &VISITS_HEADER)?;

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::malformed(path.display().to_string(), e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let cell_id = field(0).to_string();
        if grid.index_of(&cell_id).is_none() {
            return Err(Error::UnknownCell { line, cell_id });
        }
        let period_start = parse_period(field(1)).ok_or_else(|| {
            Error::malformed(
                format!("{}:{line}", path.display()),
                format!("invalid timestamp `{}`", field(1)),
            )
        })?;
        if period_start.hour() % BIN_HOURS != 0
            || period_start.minute() != 0
            || period_start.second() != 0
            || period_start.nanosecond() != 0
        {
            return Err(Error::MisalignedPeriod {
                line,
                period: field(1).to_string(),
            });
        }
        let group: Group = field(2).parse().map_err(|_| Error::UnknownGroup {
            line,
            group: field(2).to_string(),
        })?;
        let count: i64 = field(3).parse().map_err(|_| {
            Error::malformed(
                format!("{}:{line}", path.display()),
                format!("invalid count `{}`", field(3)),
            )
        })?;
        if count < 0 {
            return Err(Error::NegativeCount { line, count });
        }
        if !seen.insert((cell_id.clone(), period_start, group)) {
            return Err(Error::DuplicateRecord {
                line,
                cell_id,
                period: format_period(&period_start),
                group: group.to_string(),
            });
        }
        records.push(VisitRecord {
            cell_id,
            period_start,
            group,
            count: count as u64,
        });
    }

    check_cohorts(&records)?;
    check_subgroups(&records)?;

    let periods: BTreeSet<_> = records.iter().map(|r| r.period_start).collect();
    let groups: BTreeSet<_> = records.iter().map(|r| r.group).collect();
    let expected = grid.len() * periods.len() * groups.len();
    let missing_rows = expected - records.len();
    if missing_rows > 0 {
        log::warn!(
            "{}: {missing_rows} (cell, period, group) rows missing; treated as count 0",
            path.display()
        );
    }
    Ok(VisitSet {
        records,
        missing_rows,
    })
}

fn check_cohorts(records: &[VisitRecord]) -> Result<()> {
    let cohorts: BTreeSet<AgeCohort> = records
        .iter()
        .filter_map(|r| match r.group {
            Group::Age(c) => Some(c),
            _ => None,
        })
        .collect();
    let cohorts: Vec<_> = cohorts.into_iter().collect();
    for (i, a) in cohorts.iter().enumerate() {
        for b in &cohorts[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::OverlappingCohorts {
                    a: Group::Age(*a).to_string(),
                    b: Group::Age(*b).to_string(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Default)]
struct BinTotals {
    total: u64,
    female: u64,
    male: u64,
    age: u64,
    tourist: u64,
    max_single: (u64, Option<Group>),
}

fn check_subgroups(records: &[VisitRecord]) -> Result<()> {
    let mut bins: BTreeMap<(&str, NaiveDateTime), BinTotals> = BTreeMap::new();
    for r in records {
        let b = bins.entry((r.cell_id.as_str(), r.period_start)).or_default();
        match r.group {
            Group::Total => b.total += r.count,
            Group::Female => b.female += r.count,
            Group::Male => b.male += r.count,
            Group::Age(_) => b.age += r.count,
            Group::TouristNational | Group::TouristForeign => b.tourist += r.count,
        }
        if r.group != Group::Total && r.count > b.max_single.0 {
            b.max_single = (r.count, Some(r.group));
        }
    }
    for ((cell, period), b) in &bins {
        let fail = |detail: String| Error::SubgroupExceedsTotal {
            cell_id: cell.to_string(),
            period: format_period(period),
            detail,
        };
        if let (n, Some(g)) = b.max_single {
            if n > b.total {
                return Err(fail(format!("{g} count {n} exceeds total {}", b.total)));
            }
        }
        if b.female + b.male > b.total {
            return Err(fail(format!(
                "female + male = {} exceeds total {}",
                b.female + b.male,
                b.total
            )));
        }
        if b.age > b.total {
            return Err(fail(format!("age cohorts sum {} exceeds total {}", b.age, b.total)));
        }
        if b.tourist > b.total {
            return Err(fail(format!("tourists sum {} exceeds total {}", b.tourist, b.total)));
        }
    }
    Ok(())
}

pub fn write_visits(path: impl AsRef<Path>, records: &[VisitRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path.display().to_string(), e))?;
    let wrap = |e: csv::Error| Error::malformed(path.display().to_string(), e);
    w.write_record(VISITS_HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.cell_id.clone(),
            format_period(&r.period_start),
            r.group.to_string(),
            r.count.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Neighborhoods

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodIncome {
    pub name: String,
    pub polygon: MultiPolygon<f64>,
    /// Income index with the city mean normalized to 100.
    pub income_index: f64,
}

pub fn load_neighborhoods(path: impl AsRef<Path>) -> Result<Vec<NeighborhoodIncome>> {
    let path = path.as_ref();
    let fc = read_feature_collection(path)?;
    crs_of(&fc)?;
    let mut out = Vec::with_capacity(fc.features.len());
    for (i, feature) in fc.features.iter().enumerate() {
        let label = feature_label(i, feature, "name");
        let props = feature.properties.as_ref();
        let name = match props.and_then(|p| p.get("name")) {
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(Error::MissingProperty {
                    feature: label,
                    property: "name".into(),
                })
            }
        };
        let income_index = match props.and_then(|p| p.get("income_index")).and_then(Value::as_f64) {
            Some(v) if v > 0.0 && v.is_finite() => v,
            _ => {
                return Err(Error::MissingProperty {
                    feature: label,
                    property: "income_index".into(),
                })
            }
        };
        let polygon = feature_polygons(&label, feature)?;
        out.push(NeighborhoodIncome {
            name,
            polygon,
            income_index,
        });
    }
    Ok(out)
}

pub fn write_neighborhoods(
    path: impl AsRef<Path>,
    neighborhoods: &[NeighborhoodIncome],
    crs: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let features = neighborhoods
        .iter()
        .map(|n| {
            let mut props = JsonObject::new();
            props.insert("name".into(), Value::from(n.name.clone()));
            props.insert("income_index".into(), Value::from(n.income_index));
            let geometry = if n.polygon.0.len() == 1 {
                polygon_value(&n.polygon.0[0])
            } else {
                GeometryValue::from(&n.polygon)
            };
            Feature {
                geometry: Some(geometry.into()),
                properties: Some(props),
                ..Default::default()
            }
        })
        .collect::<Vec<_>>();
    let mut fc = FeatureCollection::new(features);
    if let Some(crs) = crs {
        let mut fm = JsonObject::new();
        fm.insert("crs".into(), crs_member(crs));
        fc.foreign_members = Some(fm);
    }
    let text = serde_json::to_string_pretty(&fc).map_err(|e| Error::malformed(path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Points of interest

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    PublicTransport,
    ShopsServices,
    Food,
    Leisure,
    Nightlife,
    Accommodation,
    Education,
    Health,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 8] = [
        PoiCategory::PublicTransport,
        PoiCategory::ShopsServices,
        PoiCategory::Food,
        PoiCategory::Leisure,
        PoiCategory::Nightlife,
        PoiCategory::Accommodation,
        PoiCategory::Education,
        PoiCategory::Health,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::PublicTransport => "public_transport",
            PoiCategory::ShopsServices => "shops_services",
            PoiCategory::Food => "food",
            PoiCategory::Leisure => "leisure",
            PoiCategory::Nightlife => "nightlife",
            PoiCategory::Accommodation => "accommodation",
            PoiCategory::Education => "education",
            PoiCategory::Health => "health",
        }
    }
}

impl FromStr for PoiCategory {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        PoiCategory::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiRecord {
    pub location: Point<f64>,
    pub category: PoiCategory,
}

pub const POIS_HEADER: [&str; 3] = ["x", "y", "category"];

/// Reads POIs from `x,y,category` CSV, or from GeoJSON points when the file
/// starts with a JSON object.
pub fn load_pois(path: impl AsRef<Path>) -> Result<Vec<PoiRecord>> {
    let path = path.as_ref();
    let head = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_json = head.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{');
    if is_json {
        load_pois_geojson(path)
    } else {
        load_pois_csv(path)
    }
}

fn load_pois_csv(path: &Path) -> Result<Vec<PoiRecord>> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &POIS_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::malformed(path.display().to_string(), e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let coord = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::malformed(
                        format!("{}:{line}", path.display()),
                        format!("invalid coordinate `{}`", row.get(i).unwrap_or("")),
                    )
                })
        };
        let (x, y) = (coord(0)?, coord(1)?);
        let raw = row.get(2).unwrap_or("");
        let category = raw.parse().map_err(|_| Error::UnknownCategory {
            line,
            category: raw.to_string(),
        })?;
        out.push(PoiRecord {
            location: Point::new(x, y),
            category,
        });
    }
    Ok(out)
}

fn load_pois_geojson(path: &Path) -> Result<Vec<PoiRecord>> {
    let fc = read_feature_collection(path)?;
    crs_of(&fc)?;
    let mut out = Vec::with_capacity(fc.features.len());
    for (i, feature) in fc.features.iter().enumerate() {
        let line = i as u64 + 1;
        let raw = match feature.properties.as_ref().and_then(|p| p.get("category")) {
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(Error::MissingProperty {
                    feature: format!("#{i}"),
                    property: "category".into(),
                })
            }
        };
        let location = match feature.geometry.as_ref().map(|g| &g.value) {
            Some(v @ GeometryValue::Point { .. }) => {
                Point::try_from(v).map_err(|e| Error::malformed(format!("{}#{i}", path.display()), e))?
            }
            _ => {
                return Err(Error::malformed(
                    format!("{}#{i}", path.display()),
                    "POI geometry must be a Point",
                ))
            }
        };
        let category = raw.parse().map_err(|_| Error::UnknownCategory {
            line,
            category: raw.clone(),
        })?;
        out.push(PoiRecord { location, category });
    }
    Ok(out)
}

pub fn write_pois(path: impl AsRef<Path>, pois: &[PoiRecord]) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| Error::malformed(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(POIS_HEADER).map_err(wrap)?;
    for p in pois {
        w.write_record([
            p.location.x().to_string(),
            p.location.y().to_string(),
            p.category.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Axis-aligned rectangle polygon, counter-clockwise.
pub fn rect_polygon(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon<f64> {
    Polygon::new(
        LineString::from(vec![
            Coord { x: x0, y: y0 },
            Coord { x: x1, y: y0 },
            Coord { x: x1, y: y1 },
            Coord { x: x0, y: y1 },
            Coord { x: x0, y: y0 },
        ]),
        vec![],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn grid_fixture(rows: usize, cols: usize) -> CellGrid {
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
        CellGrid::new(cells, Some("EPSG:25831".into())).unwrap()
    }

    fn temp_file(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn grid_roundtrip() {
        let grid = grid_fixture(3, 3);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_grid(f.path(), &grid).unwrap();
        let back = load_grid(f.path()).unwrap();
        assert_eq!(back.len(), 9);
        assert!(back.cells().iter().all(|c| c.scale_factor == 1));
        assert_eq!(back, grid);
    }

    #[test]
    fn scale_factor_passthrough() {
        let mut grid = grid_fixture(1, 2);
        let mut cells = grid.cells().to_vec();
        cells[1].scale_factor = 4;
        grid = CellGrid::new(cells, None).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_grid(f.path(), &grid).unwrap();
        let back = load_grid(f.path()).unwrap();
        assert_eq!(back.get("c2").unwrap().scale_factor, 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let cells = vec![
            Cell {
                cell_id: "a".into(),
                polygon: rect_polygon(0.0, 0.0, 1.0, 1.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "a".into(),
                polygon: rect_polygon(1.0, 0.0, 2.0, 1.0),
                scale_factor: 1,
            },
        ];
        assert!(matches!(CellGrid::new(cells, None), Err(Error::DuplicateCellId(id)) if id == "a"));
    }

    #[test]
    fn overlapping_cells_rejected() {
        let cells = vec![
            Cell {
                cell_id: "a".into(),
                polygon: rect_polygon(0.0, 0.0, 1.0, 1.0),
                scale_factor: 1,
            },
            Cell {
                cell_id: "b".into(),
                polygon: rect_polygon(0.5, 0.0, 1.5, 1.0),
                scale_factor: 1,
            },
        ];
        match CellGrid::new(cells, None) {
            Err(Error::OverlappingCells { a, b, area }) => {
                assert_eq!((a.as_str(), b.as_str()), ("a", "b"));
                assert!((area - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn geographic_crs_rejected() {
        let text = r#"{"type":"FeatureCollection","crs":{"type":"name","properties":{"name":"urn:ogc:def:crs:OGC:1.3:CRS84"}},"features":[]}"#;
        let f = temp_file(text, ".geojson");
        assert!(matches!(load_grid(f.path()), Err(Error::GeographicCrs(_))));
    }

    #[test]
    fn missing_cell_id_rejected() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}}]}"#;
        let f = temp_file(text, ".geojson");
        assert!(matches!(load_grid(f.path()), Err(Error::MissingProperty { property, .. }) if property == "cell_id"));
    }

    #[test]
    fn bowtie_rejected() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"cell_id":"x"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,1],[1,0],[0,1],[0,0]]]}}]}"#;
        let f = temp_file(text, ".geojson");
        assert!(matches!(load_grid(f.path()), Err(Error::InvalidPolygon { feature, .. }) if feature == "x"));
    }

    #[test]
    fn visit_row_parses() {
        let grid = grid_fixture(1, 1);
        let f = temp_file(
            "cell_id,period_start,group,count\nc1,2018-03-01T08:00:00,total,200\nc1,2018-03-01T08:00:00,female,120\n",
            ".csv",
        );
        let set = load_visits(f.path(), &grid).unwrap();
        assert_eq!(set.records.len(), 2);
        let r = &set.records[1];
        assert_eq!(r.cell_id, "c1");
        assert_eq!(r.group, Group::Female);
        assert_eq!(r.count, 120);
        assert_eq!(format_period(&r.period_start), "2018-03-01T08:00:00");
    }

    #[test]
    fn visit_errors() {
        let grid = grid_fixture(1, 1);
        let case = |row: &str| {
            let f = temp_file(&format!("cell_id,period_start,group,count\n{row}\n"), ".csv");
            load_visits(f.path(), &grid).unwrap_err().name()
        };
        assert_eq!(case("c1,2018-03-01T08:00:00,female,-5"), "NegativeCount");
        assert_eq!(case("zz,2018-03-01T08:00:00,female,5"), "UnknownCell");
        assert_eq!(case("c1,2018-03-01T09:00:00,female,5"), "MisalignedPeriod");
        assert_eq!(case("c1,2018-03-01T08:00:00,robots,5"), "UnknownGroup");
        assert_eq!(case("c1,2018-03-01T08:00:00,female,5"), "SubgroupExceedsTotal");
    }

    #[test]
    fn overlapping_cohorts_rejected() {
        let grid = grid_fixture(1, 1);
        let f = temp_file(
            "cell_id,period_start,group,count\nc1,2018-03-01T08:00:00,total,10\nc1,2018-03-01T08:00:00,age_65_74,1\nc1,2018-03-01T08:00:00,elder,1\n",
            ".csv",
        );
        assert_eq!(load_visits(f.path(), &grid).unwrap_err().name(), "OverlappingCohorts");
    }

    #[test]
    fn group_labels_roundtrip() {
        for label in ["total", "female", "male", "age_65_plus", "age_18_24", "tourist_national", "tourist_foreign"] {
            let g: Group = label.parse().unwrap();
            assert_eq!(g.to_string(), label);
        }
        assert_eq!("elder".parse::<Group>().unwrap().to_string(), "age_65_plus");
        assert!("age_30_20".parse::<Group>().is_err());
    }

    #[test]
    fn missing_rows_counted() {
        let grid = grid_fixture(1, 2);
        let f = temp_file(
            "cell_id,period_start,group,count\nc1,2018-03-01T08:00:00,total,10\nc1,2018-03-01T08:00:00,female,4\nc2,2018-03-01T08:00:00,total,10\n",
            ".csv",
        );
        assert_eq!(load_visits(f.path(), &grid).unwrap().missing_rows, 1);
    }

    #[test]
    fn neighborhood_loads() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"name":"Gracia","income_index":100},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}}]}"#;
        let f = temp_file(text, ".geojson");
        let n = load_neighborhoods(f.path()).unwrap();
        assert_eq!(n[0].name, "Gracia");
        assert_eq!(n[0].income_index, 100.0);
    }

    #[test]
    fn poi_csv_and_unknown_category() {
        let f = temp_file("x,y,category\n2.17,41.38,food\n", ".csv");
        let pois = load_pois(f.path()).unwrap();
        assert_eq!(pois[0].category, PoiCategory::Food);
        assert_eq!(pois[0].location, Point::new(2.17, 41.38));

        let f = temp_file("x,y,category\n2.17,41.38,casino\n", ".csv");
        assert_eq!(load_pois(f.path()).unwrap_err().name(), "UnknownCategory");
    }

    #[test]
    fn poi_geojson() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"category":"health"},"geometry":{"type":"Point","coordinates":[3.5,4.5]}}]}"#;
        let f = temp_file(text, ".geojson");
        let pois = load_pois(f.path()).unwrap();
        assert_eq!(pois[0].category, PoiCategory::Health);
    }
}
