//! Per-cell source feature vectors: POIs, land use, vehicle idling and
//! elevation, concatenated under a named schema.

pub mod elevation;
pub mod idling;
pub mod landuse;
pub mod poi;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridIndex, Region};

pub use elevation::{ElevationRaster, ElevationSample};
pub use idling::{IdlingCellRecord, IdlingIndex};
pub use landuse::{LandUseIndex, LandUsePolygon};
pub use poi::{PoiIndex, PoiRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Poi,
    LandUse,
    Idling,
    Elevation,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::Poi,
        FeatureGroup::LandUse,
        FeatureGroup::Idling,
        FeatureGroup::Elevation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureGroup::Poi => "poi",
            FeatureGroup::LandUse => "land_use",
            FeatureGroup::Idling => "idling",
            FeatureGroup::Elevation => "elevation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature group `{s}`")))
    }

    /// Group of a feature column, from its name prefix.
    pub fn of_column(name: &str) -> Option<Self> {
        match name.split('_').next()? {
            "poi" => Some(FeatureGroup::Poi),
            "landuse" => Some(FeatureGroup::LandUse),
            "idle" => Some(FeatureGroup::Idling),
            "elev" => Some(FeatureGroup::Elevation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub poi_radius_m: f64,
    pub poi_categories: Vec<String>,
    pub poi_keywords: Vec<String>,
    pub landuse_types: Vec<String>,
    pub landuse_cap_m: f64,
    pub elevation_radius_m: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            poi_radius_m: 100.0,
            poi_categories: s(&[
                "car_repair",
                "car_dealer",
                "car_wash",
                "gas_station",
                "parking",
                "moving_company",
                "storage",
                "transit_station",
                "restaurant",
                "cafe",
                "store",
                "supermarket",
                "school",
                "bank",
                "lodging",
                "church",
                "park",
                "hospital",
                "office",
            ]),
            poi_keywords: s(&["trucking", "wheels", "smog", "towing", "intersection", "auto", "tire", "diesel"]),
            landuse_types: s(&["industrial", "commercial", "residential", "retail", "parking", "fuel"]),
            landuse_cap_m: 2000.0,
            elevation_radius_m: 100.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.poi_radius_m > 0.0 && self.landuse_cap_m > 0.0 && self.elevation_radius_m > 0.0) {
            return Err(Error::InvalidParams("feature radii and cap must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.poi_categories.iter().all(|c| seen.insert(c.as_str())) || seen.contains("other") {
            return Err(Error::InvalidParams("POI categories must be unique and exclude `other`".into()));
        }
        Ok(())
    }
}

/// All loaded feature inputs. Empty vectors and a missing raster are valid
/// and handled by the imputation rules.
#[derive(Debug, Clone, Default)]
pub struct FeatureSources {
    pub pois: Vec<PoiRecord>,
    pub landuse: Vec<LandUsePolygon>,
    pub idling: Vec<IdlingCellRecord>,
    pub elevation: Option<ElevationRaster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub entropy_log_base: u32,
    pub poi_radius_m: f64,
    pub landuse_cap_m: f64,
    pub elevation_radius_m: f64,
    /// Imputation events by rule, counted over cells.
    pub imputation_counts: BTreeMap<String, usize>,
    pub schema_hash: String,
}

/// FNV-1a over the ordered feature names and their groups.
pub fn schema_hash(names: &[String], groups: &[FeatureGroup]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (n, g) in names.iter().zip(groups) {
        for b in n.bytes().chain(std::iter::once(0)).chain(g.name().bytes()).chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

impl FeatureManifest {
    /// Errors unless `other` describes the same ordered schema.
    pub fn check_compatible(&self, other: &FeatureManifest) -> Result<()> {
        if self.schema_hash != other.schema_hash || self.names != other.names {
            let first = self
                .names
                .iter()
                .zip(&other.names)
                .position(|(a, b)| a != b)
                .unwrap_or(self.names.len().min(other.names.len()));
            return Err(Error::ManifestMismatch(format!(
                "schemas differ ({} vs {} features, first difference at position {first})",
                self.names.len(),
                other.names.len()
            )));
        }
        Ok(())
    }

    pub fn columns_of(&self, groups: &[FeatureGroup]) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&i| groups.contains(&self.groups[i]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub cells: Vec<GridIndex>,
    pub rows: Vec<Vec<f64>>,
    pub manifest: FeatureManifest,
}

impl FeatureMatrix {
    /// Rows restricted to the columns of the given groups.
    pub fn select(&self, groups: &[FeatureGroup]) -> Vec<Vec<f64>> {
        let cols = self.manifest.columns_of(groups);
        self.rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect()
    }
}

/// Loaded and indexed sources, ready for per-cell extraction.
pub struct FeatureExtractor<'a> {
    config: &'a FeatureConfig,
    region: &'a Region,
    pois: PoiIndex,
    landuse: LandUseIndex,
    idling: IdlingIndex,
    elevation: Option<&'a ElevationRaster>,
    elevation_fallback: f64,
}

/// Per-cell extraction result with imputation events.
pub struct CellFeatures {
    pub poi: Vec<f64>,
    pub landuse: Vec<f64>,
    pub landuse_missing: Vec<bool>,
    pub idling: Vec<f64>,
    pub elevation: ElevationSample,
}

impl CellFeatures {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.poi.clone();
        v.extend(&self.landuse);
        v.extend(&self.idling);
        v.extend([self.elevation.mean, self.elevation.std, self.elevation.concave]);
        v
    }
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(sources: &'a FeatureSources, region: &'a Region, config: &'a FeatureConfig) -> Result<Self> {
        config.validate()?;
        let pois = PoiIndex::new(
            &sources.pois,
            region,
            &config.poi_categories,
            &config.poi_keywords,
            config.poi_radius_m.max(1.0),
        );
        if pois.unknown_categories > 0 {
            log::info!("{} POIs outside the category vocabulary counted as other", pois.unknown_categories);
        }
        let landuse = LandUseIndex::new(&sources.landuse, region, &config.landuse_types);
        if landuse.dropped_invalid > 0 {
            log::warn!("{} invalid land use polygons dropped", landuse.dropped_invalid);
        }
        Ok(Self {
            config,
            region,
            pois,
            landuse,
            idling: IdlingIndex::new(sources.idling.clone()),
            elevation: sources.elevation.as_ref(),
            elevation_fallback: sources.elevation.as_ref().and_then(|r| r.valid_mean()).unwrap_or(0.0),
        })
    }

    pub fn names(&self) -> (Vec<String>, Vec<FeatureGroup>) {
        let c = self.config;
        let parts = [
            (FeatureGroup::Poi, PoiIndex::names(&c.poi_categories, &c.poi_keywords)),
            (FeatureGroup::LandUse, LandUseIndex::names(&c.landuse_types)),
            (FeatureGroup::Idling, IdlingIndex::names()),
            (FeatureGroup::Elevation, elevation::names()),
        ];
        let mut names = Vec::new();
        let mut groups = Vec::new();
        for (g, n) in parts {
            groups.extend(std::iter::repeat_n(g, n.len()));
            names.extend(n);
        }
        (names, groups)
    }

    pub fn poi_features(&self, cell: GridIndex) -> Vec<f64> {
        let (x, y) = self.region.cell_center_xy(cell);
        self.pois.features(x, y, self.config.poi_radius_m)
    }

    pub fn landuse_features(&self, cell: GridIndex) -> (Vec<f64>, Vec<bool>) {
        let (x, y) = self.region.cell_center_xy(cell);
        self.landuse.features(x, y, self.config.landuse_cap_m)
    }

    pub fn idling_features(&self, cell: GridIndex) -> Result<Vec<f64>> {
        let (lat, lon) = self.region.cell_center(cell);
        self.idling.features(lat, lon)
    }

    pub fn elevation_features(&self, cell: GridIndex) -> ElevationSample {
        let (lat, lon) = self.region.cell_center(cell);
        elevation::elevation_features(
            self.elevation,
            self.region,
            lat,
            lon,
            self.config.elevation_radius_m,
            self.elevation_fallback,
        )
    }

    pub fn cell(&self, cell: GridIndex) -> Result<CellFeatures> {
        let (landuse, landuse_missing) = self.landuse_features(cell);
        Ok(CellFeatures {
            poi: self.poi_features(cell),
            landuse,
            landuse_missing,
            idling: self.idling_features(cell)?,
            elevation: self.elevation_features(cell),
        })
    }
}

/// Feature rows for `cells` in the given order, with a manifest.
pub fn build_matrix(
    cells: &[GridIndex],
    region: &Region,
    sources: &FeatureSources,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let ex = FeatureExtractor::new(sources, region, config)?;
    let (names, groups) = ex.names();
    let per_cell: Vec<CellFeatures> = cells
        .par_iter()
        .map(|&c| ex.cell(c))
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut bump = |k: String| *counts.entry(k).or_insert(0) += 1;
    for f in &per_cell {
        for (t, missing) in config.landuse_types.iter().zip(&f.landuse_missing) {
            if *missing {
                bump(format!("landuse_cap_missing_type:{t}"));
            }
        }
        if f.idling.last() == Some(&0.0) {
            bump("idling_absent_zero".into());
        }
        if f.elevation.mean_imputed {
            bump("elevation_region_mean".into());
        }
        if f.elevation.concave_imputed {
            bump("elevation_concave_zero".into());
        }
    }
    let rows: Vec<Vec<f64>> = per_cell.iter().map(CellFeatures::concat).collect();
    if let Some(bad) = rows.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature value {bad}")));
    }
    let manifest = FeatureManifest {
        schema_hash: schema_hash(&names, &groups),
        names,
        groups,
        entropy_log_base: 2,
        poi_radius_m: config.poi_radius_m,
        landuse_cap_m: config.landuse_cap_m,
        elevation_radius_m: config.elevation_radius_m,
        imputation_counts: counts,
    };
    Ok(FeatureMatrix {
        cells: cells.to_vec(),
        rows,
        manifest,
    })
}

/// `cell_col,cell_row,label,<features>`.
pub fn write_features_csv<W: Write>(sink: W, matrix: &FeatureMatrix, labels: &[u8]) -> Result<()> {
    if labels.len() != matrix.rows.len() {
        return Err(Error::InvalidParams("one label per row required".into()));
    }
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["cell_col".to_string(), "cell_row".into(), "label".into()];
    header.extend(matrix.manifest.names.iter().cloned());
    w.write_record(&header)?;
    for ((cell, row), label) in matrix.cells.iter().zip(&matrix.rows).zip(labels) {
        let mut rec = vec![cell.col.to_string(), cell.row.to_string(), label.to_string()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features sink>", e))?;
    Ok(())
}

/// A feature table read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub cells: Vec<GridIndex>,
    pub labels: Vec<u8>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_features_csv(path: &std::path::Path) -> Result<FeatureTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_features_csv(std::io::BufReader::new(f))
}

pub fn parse_features_csv<R: std::io::Read>(src: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "cell_col" || &headers[1] != "cell_row" || &headers[2] != "label" {
        return Err(Error::Schema("feature CSV must start with cell_col,cell_row,label".into()));
    }
    let names: Vec<String> = headers.iter().skip(3).map(String::from).collect();
    let mut t = FeatureTable {
        cells: Vec::new(),
        labels: Vec::new(),
        names,
        rows: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse(format!("feature row {}: bad {what}", i + 2));
        let col: u32 = rec[0].parse().map_err(|_| bad("cell_col"))?;
        let row: u32 = rec[1].parse().map_err(|_| bad("cell_row"))?;
        let label: u8 = rec[2].parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(bad("label"));
        }
        let vals: Vec<f64> = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<_>>()?;
        t.cells.push(GridIndex::new(col, row));
        t.labels.push(label);
        t.rows.push(vals);
    }
    Ok(t)
}
