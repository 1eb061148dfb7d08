//! Local planar projection and uniform city-grid indexing.
//!
//! A [`Region`] anchors an equirectangular projection at the southwest corner
//! of its extent. Cells are half-open squares `[k*l, (k+1)*l)` in projected
//! meters, so a point on a shared edge belongs to the cell to its east/north.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    /// Southwest corner of the extent.
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub extent: BoundingBox,
    /// Offset of local civil time from UTC, used for calendar days and hours.
    pub utc_offset_minutes: i32,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct GridIndex {
    pub col: u32,
    pub row: u32,
}

impl GridIndex {
    pub fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }

    /// Chebyshev distance in cells.
    pub fn chebyshev(&self, other: &GridIndex) -> u32 {
        self.col.abs_diff(other.col).max(self.row.abs_diff(other.row))
    }

    /// True when `other` is this cell or one of its 8 neighbors.
    pub fn touches(&self, other: &GridIndex) -> bool {
        self.chebyshev(other) <= 1
    }
}

impl Region {
    /// Builds a region whose extent starts at `(origin_lat, origin_lon)`.
    pub fn new(
        name: impl Into<String>,
        origin_lat: f64,
        origin_lon: f64,
        max_lat: f64,
        max_lon: f64,
        cell_size_m: f64,
    ) -> Result<Self> {
        let region = Region {
            name: name.into(),
            origin_lat,
            origin_lon,
            cell_size_m,
            extent: BoundingBox {
                min_lat: origin_lat,
                min_lon: origin_lon,
                max_lat,
                max_lon,
            },
            utc_offset_minutes: 0,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn with_utc_offset_minutes(mut self, minutes: i32) -> Self {
        self.utc_offset_minutes = minutes;
        self
    }

    /// Builds a region from its origin and size in meters.
    pub fn from_size_m(
        name: impl Into<String>,
        origin_lat: f64,
        origin_lon: f64,
        width_m: f64,
        height_m: f64,
        cell_size_m: f64,
    ) -> Result<Self> {
        let dlat = (height_m / EARTH_RADIUS_M).to_degrees();
        let dlon = (width_m / (EARTH_RADIUS_M * origin_lat.to_radians().cos())).to_degrees();
        Self::new(
            name,
            origin_lat,
            origin_lon,
            origin_lat + dlat,
            origin_lon + dlon,
            cell_size_m,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.extent;
        if !(self.cell_size_m > 0.0) || !self.cell_size_m.is_finite() {
            return Err(Error::InvalidRegion(format!(
                "cell size must be positive, got {}",
                self.cell_size_m
            )));
        }
        if e.min_lat != self.origin_lat || e.min_lon != self.origin_lon {
            return Err(Error::InvalidRegion(
                "origin must be the southwest corner of the extent".into(),
            ));
        }
        if !(e.max_lat > e.min_lat && e.max_lon > e.min_lon) {
            return Err(Error::InvalidRegion("degenerate extent".into()));
        }
        if e.min_lat < -89.0 || e.max_lat > 89.0 || e.min_lon < -180.0 || e.max_lon > 180.0 {
            return Err(Error::InvalidRegion(
                "extent must stay clear of the poles and the antimeridian".into(),
            ));
        }
        Ok(())
    }

    fn out_of_region(&self, lat: f64, lon: f64) -> Error {
        Error::OutOfRegion {
            region: self.name.clone(),
            lat,
            lon,
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.extent.contains(lat, lon)
    }

    fn lon_scale(&self) -> f64 {
        EARTH_RADIUS_M * self.origin_lat.to_radians().cos()
    }

    /// Projects without the extent check. Used for geometry that may reach
    /// beyond the region, such as land-use polygons.
    pub fn project_unchecked(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = self.lon_scale() * (lon - self.origin_lon).to_radians();
        let y = EARTH_RADIUS_M * (lat - self.origin_lat).to_radians();
        (x, y)
    }

    /// Meters east and north of the origin.
    pub fn project(&self, lat: f64, lon: f64) -> Result<(f64, f64)> {
        if !self.contains(lat, lon) {
            return Err(self.out_of_region(lat, lon));
        }
        Ok(self.project_unchecked(lat, lon))
    }

    /// Inverse of [`Region::project`]; returns `(lat, lon)`.
    pub fn unproject(&self, x_m: f64, y_m: f64) -> (f64, f64) {
        let lat = self.origin_lat + (y_m / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin_lon + (x_m / self.lon_scale()).to_degrees();
        (lat, lon)
    }

    /// Cell of a projected point. Negative coordinates have no cell.
    pub fn cell_of_xy(&self, x_m: f64, y_m: f64) -> Option<GridIndex> {
        let col = (x_m / self.cell_size_m).floor();
        let row = (y_m / self.cell_size_m).floor();
        if col < 0.0 || row < 0.0 || col > u32::MAX as f64 || row > u32::MAX as f64 {
            return None;
        }
        Some(GridIndex::new(col as u32, row as u32))
    }

    pub fn cell_of(&self, lat: f64, lon: f64) -> Result<GridIndex> {
        let (x, y) = self.project(lat, lon)?;
        self.cell_of_xy(x, y).ok_or_else(|| self.out_of_region(lat, lon))
    }

    /// Cell center in projected meters.
    pub fn cell_center_xy(&self, cell: GridIndex) -> (f64, f64) {
        (
            (cell.col as f64 + 0.5) * self.cell_size_m,
            (cell.row as f64 + 0.5) * self.cell_size_m,
        )
    }

    /// Cell center as `(lat, lon)`.
    pub fn cell_center(&self, cell: GridIndex) -> (f64, f64) {
        let (x, y) = self.cell_center_xy(cell);
        self.unproject(x, y)
    }

    /// Closed ring of `(lon, lat)` corners, counter-clockwise from southwest.
    pub fn cell_ring(&self, cell: GridIndex) -> [(f64, f64); 5] {
        let l = self.cell_size_m;
        let x0 = cell.col as f64 * l;
        let y0 = cell.row as f64 * l;
        let corner = |x: f64, y: f64| {
            let (lat, lon) = self.unproject(x, y);
            (lon, lat)
        };
        let sw = corner(x0, y0);
        [sw, corner(x0 + l, y0), corner(x0 + l, y0 + l), corner(x0, y0 + l), sw]
    }

    /// Euclidean distance in the projected plane.
    pub fn distance_m(&self, p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
        let (x1, y1) = self.project(p1.0, p1.1)?;
        let (x2, y2) = self.project(p2.0, p2.1)?;
        Ok((x1 - x2).hypot(y1 - y2))
    }

    /// Number of columns and rows covering the extent.
    pub fn dimensions(&self) -> (u32, u32) {
        let (x, y) = self.project_unchecked(self.extent.max_lat, self.extent.max_lon);
        (
            (x / self.cell_size_m).floor() as u32 + 1,
            (y / self.cell_size_m).floor() as u32 + 1,
        )
    }
}
