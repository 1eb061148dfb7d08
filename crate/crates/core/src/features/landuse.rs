//! Land-use polygons and capped distance to the nearest polygon of a type.

use std::io::Read;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::Region;

/// A typed polygon in geographic coordinates. The first ring is the outer
/// boundary, any further rings are holes. Vertices are `(lon, lat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandUsePolygon {
    pub kind: String,
    pub rings: Vec<Vec<(f64, f64)>>,
}

fn parse_ring(v: &Value) -> Result<Vec<(f64, f64)>> {
    let pts = v
        .as_array()
        .ok_or_else(|| Error::Parse("polygon ring is not an array".into()))?;
    pts.iter()
        .map(|p| {
            let lon = p.get(0).and_then(Value::as_f64);
            let lat = p.get(1).and_then(Value::as_f64);
            match (lon, lat) {
                (Some(lon), Some(lat)) if lon.is_finite() && lat.is_finite() => Ok((lon, lat)),
                _ => Err(Error::Parse("bad polygon vertex".into())),
            }
        })
        .collect()
}

fn parse_polygon(coords: &Value) -> Result<Vec<Vec<(f64, f64)>>> {
    coords
        .as_array()
        .ok_or_else(|| Error::Parse("polygon coordinates are not an array".into()))?
        .iter()
        .map(parse_ring)
        .collect()
}

/// Reads a GeoJSON FeatureCollection of Polygon / MultiPolygon features
/// carrying a `landuse` property. Features without the property or with
/// other geometry types are skipped.
pub fn parse_landuse<R: Read>(src: R) -> Result<Vec<LandUsePolygon>> {
    let doc: Value = serde_json::from_reader(src)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("land use GeoJSON must be a FeatureCollection".into()))?;
    let mut out = Vec::new();
    for f in features {
        let Some(kind) = f.pointer("/properties/landuse").and_then(Value::as_str) else {
            continue;
        };
        let Some(geom) = f.get("geometry") else {
            continue;
        };
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => out.push(LandUsePolygon {
                kind: kind.to_string(),
                rings: parse_polygon(coords)?,
            }),
            Some("MultiPolygon") => {
                for poly in coords
                    .as_array()
                    .ok_or_else(|| Error::Parse("multipolygon coordinates are not an array".into()))?
                {
                    out.push(LandUsePolygon {
                        kind: kind.to_string(),
                        rings: parse_polygon(poly)?,
                    });
                }
            }
            _ => continue,
        }
    }
    Ok(out)
}

pub fn read_landuse(path: &Path) -> Result<Vec<LandUsePolygon>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_landuse(std::io::BufReader::new(f))
}

pub fn landuse_geojson(polygons: &[LandUsePolygon]) -> Value {
    let features: Vec<Value> = polygons
        .iter()
        .map(|p| {
            let rings: Vec<Vec<[f64; 2]>> = p
                .rings
                .iter()
                .map(|r| {
                    let mut ring: Vec<[f64; 2]> = r.iter().map(|&(lon, lat)| [lon, lat]).collect();
                    if ring.first() != ring.last() {
                        ring.push(ring[0]);
                    }
                    ring
                })
                .collect();
            json!({
                "type": "Feature",
                "properties": { "landuse": p.kind },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Drops repeated consecutive vertices and the closing vertex.
fn clean_ring(ring: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(ring.len());
    for &p in ring {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True when two non-adjacent edges of the ring properly cross.
pub fn ring_self_intersects(ring: &[(f64, f64)]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).hypot(p.1 - cy)
}

/// Even-odd containment over all rings.
pub fn point_in_rings(p: (f64, f64), rings: &[Vec<(f64, f64)>]) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = ring[i];
            let (xj, yj) = ring[j];
            if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}

struct Projected {
    kind: usize,
    rings: Vec<Vec<(f64, f64)>>,
    bbox: (f64, f64, f64, f64),
}

/// Polygons projected into the region frame, grouped by configured type.
pub struct LandUseIndex {
    types: Vec<String>,
    polygons: Vec<Projected>,
    /// Polygons dropped because a ring had fewer than three vertices or
    /// crossed itself.
    pub dropped_invalid: usize,
    /// Polygons whose type is not configured.
    pub unknown_types: usize,
}

impl LandUseIndex {
    pub fn new(polygons: &[LandUsePolygon], region: &Region, types: &[String]) -> Self {
        let mut out = Vec::new();
        let mut dropped = 0;
        let mut unknown = 0;
        for p in polygons {
            let Some(kind) = types.iter().position(|t| *t == p.kind) else {
                unknown += 1;
                continue;
            };
            let rings: Vec<Vec<(f64, f64)>> = p
                .rings
                .iter()
                .map(|r| {
                    let r: Vec<(f64, f64)> = r
                        .iter()
                        .map(|&(lon, lat)| region.project_unchecked(lat, lon))
                        .collect();
                    clean_ring(&r)
                })
                .collect();
            if rings.is_empty() || rings.iter().any(|r| r.len() < 3 || ring_self_intersects(r)) {
                log::warn!("dropping invalid {} polygon", p.kind);
                dropped += 1;
                continue;
            }
            let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &(x, y) in &rings[0] {
                bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
            }
            out.push(Projected { kind, rings, bbox });
        }
        Self {
            types: types.to_vec(),
            polygons: out,
            dropped_invalid: dropped,
            unknown_types: unknown,
        }
    }

    pub fn names(types: &[String]) -> Vec<String> {
        types.iter().map(|t| format!("landuse_dist_{t}")).collect()
    }

    /// Distance per type from `(x, y)` to the nearest polygon of that type,
    /// zero inside, capped at `cap_m`. The second vector flags types that
    /// have no polygon at all (imputed with the cap).
    pub fn features(&self, x: f64, y: f64, cap_m: f64) -> (Vec<f64>, Vec<bool>) {
        let mut best = vec![f64::INFINITY; self.types.len()];
        for p in &self.polygons {
            if best[p.kind] == 0.0 {
                continue;
            }
            // Box lower bound lets far polygons be skipped.
            let dx = (p.bbox.0 - x).max(x - p.bbox.2).max(0.0);
            let dy = (p.bbox.1 - y).max(y - p.bbox.3).max(0.0);
            if dx.hypot(dy) >= best[p.kind].min(cap_m) {
                continue;
            }
            let d = if point_in_rings((x, y), &p.rings) {
                0.0
            } else {
                let mut d = f64::INFINITY;
                for ring in &p.rings {
                    for i in 0..ring.len() {
                        d = d.min(point_segment_distance((x, y), ring[i], ring[(i + 1) % ring.len()]));
                    }
                }
                d
            };
            best[p.kind] = best[p.kind].min(d);
        }
        let missing: Vec<bool> = (0..self.types.len())
            .map(|k| !self.polygons.iter().any(|p| p.kind == k))
            .collect();
        (best.into_iter().map(|d| d.min(cap_m)).collect(), missing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region() -> Region {
        Region::from_size_m("t", 37.0, -122.0, 2000.0, 2000.0, 50.0).unwrap()
    }

    fn square(region: &Region, kind: &str, x0: f64, y0: f64, side: f64) -> LandUsePolygon {
        let pts = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side), (x0, y0)];
        LandUsePolygon {
            kind: kind.into(),
            rings: vec![pts
                .iter()
                .map(|&(x, y)| {
                    let (lat, lon) = region.unproject(x, y);
                    (lon, lat)
                })
                .collect()],
        }
    }

    fn types() -> Vec<String> {
        ["industrial", "residential"].map(String::from).to_vec()
    }

    #[test]
    fn inside_is_zero_and_missing_is_capped() {
        let r = region();
        let idx = LandUseIndex::new(&[square(&r, "industrial", 100.0, 100.0, 200.0)], &r, &types());
        let (d, missing) = idx.features(150.0, 150.0, 2000.0);
        assert_eq!(d, vec![0.0, 2000.0]);
        assert_eq!(missing, vec![false, true]);
        let (d, _) = idx.features(400.0, 200.0, 2000.0);
        assert_abs_diff_eq!(d[0], 100.0, epsilon = 1e-6);
        let (d, _) = idx.features(400.0, 200.0, 50.0);
        assert_eq!(d[0], 50.0);
    }

    #[test]
    fn hole_is_outside() {
        let r = region();
        let mut poly = square(&r, "industrial", 0.0, 0.0, 300.0);
        poly.rings.push(square(&r, "x", 100.0, 100.0, 100.0).rings.remove(0));
        let idx = LandUseIndex::new(&[poly], &r, &types());
        let (d, _) = idx.features(150.0, 150.0, 2000.0);
        assert_abs_diff_eq!(d[0], 50.0, epsilon = 1e-6);
    }

    #[test]
    fn bowtie_dropped() {
        let r = region();
        let mut poly = square(&r, "industrial", 0.0, 0.0, 100.0);
        poly.rings[0].swap(1, 2);
        let idx = LandUseIndex::new(&[poly], &r, &types());
        assert_eq!(idx.dropped_invalid, 1);
    }

    #[test]
    fn matches_brute_force_edge_oracle() {
        let r = region();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut polys = Vec::new();
        for _ in 0..12 {
            let kind = if rng.random_bool(0.5) { "industrial" } else { "residential" };
            let side = rng.random_range(20.0..300.0);
            polys.push(square(&r, kind, rng.random_range(0.0..1700.0), rng.random_range(0.0..1700.0), side));
        }
        let idx = LandUseIndex::new(&polys, &r, &types());
        for _ in 0..500 {
            let (x, y) = (rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0));
            let (d, _) = idx.features(x, y, 1e9);
            for (k, t) in types().iter().enumerate() {
                let mut oracle = f64::INFINITY;
                for p in polys.iter().filter(|p| &p.kind == t) {
                    let ring: Vec<(f64, f64)> = p.rings[0]
                        .iter()
                        .map(|&(lon, lat)| r.project_unchecked(lat, lon))
                        .collect();
                    let (xs, ys): (Vec<f64>, Vec<f64>) = ring.iter().copied().unzip();
                    let inside = x >= xs.iter().cloned().fold(f64::INFINITY, f64::min)
                        && x <= xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        && y >= ys.iter().cloned().fold(f64::INFINITY, f64::min)
                        && y <= ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if inside {
                        oracle = 0.0;
                    }
                    for w in ring.windows(2) {
                        oracle = oracle.min(point_segment_distance((x, y), w[0], w[1]));
                    }
                }
                assert!((d[k] - oracle).abs() < 1e-6, "{} vs {}", d[k], oracle);
            }
        }
    }

    #[test]
    fn geojson_round_trip() {
        let r = region();
        let polys = vec![square(&r, "industrial", 10.0, 10.0, 50.0)];
        let text = landuse_geojson(&polys).to_string();
        let back = parse_landuse(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].kind, "industrial");
        assert_eq!(back[0].rings[0], polys[0].rings[0]);
        assert!(parse_landuse("{}".as_bytes()).is_err());
    }
}
