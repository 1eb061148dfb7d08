//! Elevation raster (ESRI ASCII grid): local mean, spread and concave index.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Region;

/// Regular lon/lat raster, row 0 at the north edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationRaster {
    pub ncols: usize,
    pub nrows: usize,
    /// Lower-left corner of the lower-left sample, degrees.
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: Option<f64>,
    pub values: Vec<f64>,
}

impl ElevationRaster {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.ncols + col];
        match self.nodata {
            Some(nd) if v == nd => None,
            _ if !v.is_finite() => None,
            _ => Some(v),
        }
    }

    /// `(lat, lon)` of a sample center.
    pub fn sample_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.yll + (self.nrows - row) as f64 * self.cellsize - 0.5 * self.cellsize,
            self.xll + (col as f64 + 0.5) * self.cellsize,
        )
    }

    /// Sample whose footprint is nearest to the point, clamped to the raster.
    pub fn nearest_sample(&self, lat: f64, lon: f64) -> (usize, usize) {
        let col = ((lon - self.xll) / self.cellsize).floor().clamp(0.0, (self.ncols - 1) as f64) as usize;
        let from_top = ((self.yll + self.nrows as f64 * self.cellsize - lat) / self.cellsize).floor();
        let row = from_top.clamp(0.0, (self.nrows - 1) as f64) as usize;
        (row, col)
    }

    /// Laplacian response `sum(4 neighbours) - 4 * center`; positive in pits.
    /// `None` at the border or next to nodata.
    pub fn concave_index(&self, row: usize, col: usize) -> Option<f64> {
        if row == 0 || col == 0 || row + 1 >= self.nrows || col + 1 >= self.ncols {
            return None;
        }
        let c = self.get(row, col)?;
        let n = self.get(row - 1, col)?;
        let s = self.get(row + 1, col)?;
        let w = self.get(row, col - 1)?;
        let e = self.get(row, col + 1)?;
        Some(n + s + w + e - 4.0 * c)
    }

    pub fn valid_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                if let Some(v) = self.get(r, c) {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next()) {
        (Some(k), Some(v)) if k.eq_ignore_ascii_case(key) => Ok(v),
        _ => Err(Error::Parse(format!("expected `{key}` in ESRI grid header, got `{line}`"))),
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad {what} `{s}` in ESRI grid")))
}

pub fn parse_esri_ascii<R: BufRead>(src: R) -> Result<ElevationRaster> {
    let mut lines = src.lines();
    let mut next_line = || -> Result<Option<String>> {
        for l in lines.by_ref() {
            let l = l.map_err(|e| Error::io("<esri grid>", e))?;
            if !l.trim().is_empty() {
                return Ok(Some(l));
            }
        }
        Ok(None)
    };
    let mut need = |key: &str| -> Result<String> {
        let l = next_line()?.ok_or_else(|| Error::Parse("truncated ESRI grid header".into()))?;
        header_value(&l, key).map(str::to_string)
    };
    let ncols: usize = num(&need("ncols")?, "ncols")?;
    let nrows: usize = num(&need("nrows")?, "nrows")?;
    let xl = next_line()?.ok_or_else(|| Error::Parse("truncated ESRI grid header".into()))?;
    let yl = next_line()?.ok_or_else(|| Error::Parse("truncated ESRI grid header".into()))?;
    let cs = next_line()?.ok_or_else(|| Error::Parse("truncated ESRI grid header".into()))?;
    let cellsize: f64 = num(header_value(&cs, "cellsize")?, "cellsize")?;
    let corner = |line: &str, axis: &str| -> Result<f64> {
        if let Ok(v) = header_value(line, &format!("{axis}llcorner")) {
            num(v, "corner")
        } else {
            let v: f64 = num(header_value(line, &format!("{axis}llcenter"))?, "center")?;
            Ok(v - 0.5 * cellsize)
        }
    };
    let xll = corner(&xl, "x")?;
    let yll = corner(&yl, "y")?;
    if ncols == 0 || nrows == 0 || !(cellsize > 0.0) {
        return Err(Error::Parse("ESRI grid has empty shape".into()));
    }
    let mut nodata = None;
    let mut values = Vec::with_capacity(ncols * nrows);
    while let Some(l) = next_line()? {
        let t = l.trim_start();
        if t.len() >= 12 && t[..12].eq_ignore_ascii_case("nodata_value") {
            nodata = Some(num(header_value(&l, "nodata_value")?, "nodata_value")?);
            continue;
        }
        for tok in l.split_whitespace() {
            values.push(num::<f64>(tok, "value")?);
        }
    }
    if values.len() != ncols * nrows {
        return Err(Error::Parse(format!(
            "ESRI grid has {} values, expected {}",
            values.len(),
            ncols * nrows
        )));
    }
    Ok(ElevationRaster {
        ncols,
        nrows,
        xll,
        yll,
        cellsize,
        nodata,
        values,
    })
}

pub fn read_esri_ascii(path: &Path) -> Result<ElevationRaster> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_esri_ascii(std::io::BufReader::new(f))
}

pub fn write_esri_ascii<W: Write>(mut sink: W, r: &ElevationRaster) -> Result<()> {
    let io = |e| Error::io("<esri sink>", e);
    writeln!(sink, "ncols {}", r.ncols).map_err(io)?;
    writeln!(sink, "nrows {}", r.nrows).map_err(io)?;
    writeln!(sink, "xllcorner {:.10}", r.xll).map_err(io)?;
    writeln!(sink, "yllcorner {:.10}", r.yll).map_err(io)?;
    writeln!(sink, "cellsize {:.10}", r.cellsize).map_err(io)?;
    if let Some(nd) = r.nodata {
        writeln!(sink, "NODATA_value {nd}").map_err(io)?;
    }
    for row in r.values.chunks(r.ncols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        writeln!(sink, "{}", line.join(" ")).map_err(io)?;
    }
    Ok(())
}

/// Elevation features at a point plus imputation flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationSample {
    pub mean: f64,
    pub std: f64,
    pub concave: f64,
    /// No valid sample near the point; mean is the raster-wide mean.
    pub mean_imputed: bool,
    /// Laplacian not computable; concave index set to 0.
    pub concave_imputed: bool,
}

pub fn names() -> Vec<String> {
    ["elev_mean", "elev_std", "elev_concave"].map(String::from).to_vec()
}

/// Mean and population std of valid samples whose centers lie within
/// `radius_m` (the nearest sample alone when none does), and the concave
/// index at the nearest sample.
pub fn elevation_features(
    raster: Option<&ElevationRaster>,
    region: &Region,
    lat: f64,
    lon: f64,
    radius_m: f64,
    fallback_mean: f64,
) -> ElevationSample {
    let Some(r) = raster else {
        return ElevationSample {
            mean: fallback_mean,
            std: 0.0,
            concave: 0.0,
            mean_imputed: true,
            concave_imputed: true,
        };
    };
    let (x0, y0) = region.project_unchecked(lat, lon);
    let (r0, c0) = r.nearest_sample(lat, lon);
    let (slat, slon) = r.sample_center(r0, c0);
    let (sx, sy) = region.project_unchecked(slat, slon);
    // Degree span of one sample in meters, to bound the search window.
    let (ex, ey) = region.project_unchecked(slat + r.cellsize, slon + r.cellsize);
    let step = (ex - sx).abs().min((ey - sy).abs()).max(1e-9);
    let reach = (radius_m / step).ceil() as isize + 1;
    let mut vals = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (row, col) = (r0 as isize + dr, c0 as isize + dc);
            if row < 0 || col < 0 || row as usize >= r.nrows || col as usize >= r.ncols {
                continue;
            }
            let (row, col) = (row as usize, col as usize);
            let (plat, plon) = r.sample_center(row, col);
            let (px, py) = region.project_unchecked(plat, plon);
            if (px - x0).hypot(py - y0) <= radius_m {
                if let Some(v) = r.get(row, col) {
                    vals.push(v);
                }
            }
        }
    }
    if vals.is_empty() {
        if let Some(v) = r.get(r0, c0) {
            vals.push(v);
        }
    }
    let concave = r.concave_index(r0, c0);
    let (mean, std, mean_imputed) = match crate::stats::mean(&vals) {
        Some(m) => (m, crate::stats::std_dev(&vals).unwrap_or(0.0), false),
        None => (fallback_mean, 0.0, true),
    };
    ElevationSample {
        mean,
        std,
        concave: concave.unwrap_or(0.0),
        mean_imputed,
        concave_imputed: concave.is_none(),
    }
}
