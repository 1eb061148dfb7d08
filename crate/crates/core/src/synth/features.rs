//! Synthetic POI, land use, idling and elevation inputs that carry the
//! context of the planted sources.
//!
//! Each persistent source gets the context of its kind: a cluster of
//! car-related businesses, an industrial parcel, a high-idling box or a
//! terrain depression. Every kind also appears at a few decoy locations away
//! from any source, and a neutral background covers the whole region, so no
//! single feature family separates the hotspots on its own.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ScenarioConfig, SourceKind};
use crate::features::elevation::ElevationRaster;
use crate::features::idling::IdlingCellRecord;
use crate::features::landuse::LandUsePolygon;
use crate::features::poi::PoiRecord;
use crate::features::FeatureSources;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSynthConfig {
    pub background_pois: usize,
    /// Decoy sites per source kind.
    pub decoys_per_kind: usize,
    pub idling_box_m: f64,
    pub elevation_step_m: f64,
    pub pit_depth_m: f64,
    pub pit_sigma_m: f64,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        FeatureSynthConfig {
            background_pois: 300,
            decoys_per_kind: 2,
            idling_box_m: 153.0,
            elevation_step_m: 30.0,
            pit_depth_m: 15.0,
            pit_sigma_m: 120.0,
        }
    }
}

const CAR_CATEGORIES: [&str; 4] = ["car_repair", "car_dealer", "car_wash", "gas_station"];
const CAR_NAMES: [&str; 8] = [
    "Auto Repair",
    "Tire Center",
    "Smog Check",
    "Towing",
    "Diesel Service",
    "Wheels and Rims",
    "Trucking Depot",
    "Auto Body",
];
const PLAIN_CATEGORIES: [&str; 14] = [
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
    "transit_station",
    "storage",
    "parking",
];
const PLAIN_NAMES: [&str; 10] = [
    "Corner", "Harbor", "Oak", "Sunset", "Union", "Mission", "Pacific", "Golden", "Bayview", "Hillside",
];

struct Site {
    x: f64,
    y: f64,
    kind: SourceKind,
}

/// Persistent source sites plus decoy sites on the road network at least
/// 300 m from every source.
fn sites(cfg: &ScenarioConfig, fc: &FeatureSynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Site>, Vec<Site>) {
    let real: Vec<Site> = cfg
        .sources
        .iter()
        .filter_map(|s| s.kind.map(|kind| Site { x: s.x_m, y: s.y_m, kind }))
        .collect();
    let lat = cfg.lattice();
    let mut decoys: Vec<Site> = Vec::new();
    for kind in SourceKind::ALL {
        let mut placed = 0;
        let mut attempts = 0;
        while placed < fc.decoys_per_kind && attempts < 10_000 {
            attempts += 1;
            let (x, y) = lat.xy((rng.random_range(1..lat.nx - 1), rng.random_range(1..lat.ny - 1)));
            let clear = cfg.sources.iter().all(|s| (s.x_m - x).hypot(s.y_m - y) >= 300.0)
                && decoys.iter().all(|d| (d.x - x).hypot(d.y - y) >= 200.0);
            if clear {
                decoys.push(Site { x, y, kind });
                placed += 1;
            }
        }
    }
    (real, decoys)
}

fn poi(cfg: &ScenarioConfig, x: f64, y: f64, name: String, category: &str) -> PoiRecord {
    let (lat, lon) = cfg.region.unproject(x, y);
    PoiRecord {
        lat,
        lon,
        name,
        category: category.to_string(),
    }
}

fn square(cfg: &ScenarioConfig, kind: &str, cx: f64, cy: f64, half_w: f64, half_h: f64) -> LandUsePolygon {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let ring = corners
        .iter()
        .map(|(sx, sy)| {
            let (lat, lon) = cfg.region.unproject(cx + sx * half_w, cy + sy * half_h);
            (lon, lat)
        })
        .collect();
    LandUsePolygon {
        kind: kind.to_string(),
        rings: vec![ring],
    }
}

pub fn synthesize_features(cfg: &ScenarioConfig, fc: &FeatureSynthConfig) -> FeatureSources {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xFEA7_0000_0000_0001);
    let (w, h) = cfg.extent_m();
    let (real, decoys) = sites(cfg, fc, &mut rng);
    let all_sites: Vec<&Site> = real.iter().chain(&decoys).collect();

    let mut pois = Vec::new();
    for i in 0..fc.background_pois {
        let (x, y) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let cat = *PLAIN_CATEGORIES.choose(&mut rng).expect("nonempty");
        let name = format!("{} {} {i}", PLAIN_NAMES.choose(&mut rng).expect("nonempty"), cat.replace('_', " "));
        pois.push(poi(cfg, x, y, name, cat));
    }
    for s in all_sites.iter().filter(|s| s.kind == SourceKind::CarBusiness) {
        for i in 0..rng.random_range(5..9) {
            let (dx, dy) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let cat = *CAR_CATEGORIES.choose(&mut rng).expect("nonempty");
            let name = format!("{} {} {i}", PLAIN_NAMES.choose(&mut rng).expect("nonempty"), CAR_NAMES.choose(&mut rng).expect("nonempty"));
            pois.push(poi(cfg, s.x + dx, s.y + dy, name, cat));
        }
    }

    let mut landuse = Vec::new();
    let block = 500.0;
    let mut by = 0.0;
    while by < h {
        let mut bx = 0.0;
        while bx < w {
            let u: f64 = rng.random();
            let kind = if u < 0.6 {
                "residential"
            } else if u < 0.85 {
                "commercial"
            } else {
                "retail"
            };
            landuse.push(square(cfg, kind, bx + block / 2.0, by + block / 2.0, block / 2.0 - 30.0, block / 2.0 - 30.0));
            bx += block;
        }
        by += block;
    }
    for _ in 0..10 {
        let kind = if rng.random_bool(0.5) { "parking" } else { "fuel" };
        landuse.push(square(cfg, kind, rng.random_range(0.0..w), rng.random_range(0.0..h), 25.0, 25.0));
    }
    for s in all_sites.iter().filter(|s| s.kind == SourceKind::Industrial) {
        let (cx, cy) = (s.x + rng.random_range(-20.0..20.0), s.y + rng.random_range(-20.0..20.0));
        landuse.push(square(cfg, "industrial", cx, cy, rng.random_range(70.0..110.0), rng.random_range(70.0..110.0)));
    }

    let idling = idling_boxes(cfg, fc, &all_sites, &mut rng);
    let elevation = Some(elevation_raster(cfg, fc, &all_sites, &mut rng));
    FeatureSources {
        pois,
        landuse,
        idling,
        elevation,
    }
}

fn idling_stats(hot: bool, rng: &mut ChaCha8Rng) -> [f64; 17] {
    let mut s = [0.0; 17];
    let scale: f64 = if hot { rng.random_range(6.0..10.0) } else { rng.random_range(0.5..1.5) };
    s[0] = 1_500.0 * scale;
    s[1] = 40.0 * scale.sqrt() + rng.random_range(0.0..10.0);
    s[2] = s[1] * rng.random_range(1.1..1.5);
    let heavy = if hot { rng.random_range(0.2..0.35) } else { rng.random_range(0.02..0.08) };
    let mut fr = [rng.random_range(0.4..0.6), 0.1, 0.1, 0.05, heavy, 0.03];
    let total: f64 = fr.iter().sum();
    for v in &mut fr {
        *v /= total;
    }
    s[3..9].copy_from_slice(&fr);
    let mean = s[2];
    for (i, m) in s[9..15].iter_mut().enumerate() {
        *m = mean * (0.8 + 0.1 * i as f64);
    }
    let diesel = (heavy * 2.0).min(0.9);
    s[15] = 1.0 - diesel;
    s[16] = diesel;
    s
}

fn idling_boxes(cfg: &ScenarioConfig, fc: &FeatureSynthConfig, sites: &[&Site], rng: &mut ChaCha8Rng) -> Vec<IdlingCellRecord> {
    let (w, h) = cfg.extent_m();
    let (lat0, lon0) = cfg.region.unproject(0.0, 0.0);
    let (lat1, lon1) = cfg.region.unproject(fc.idling_box_m, fc.idling_box_m);
    let (dlat, dlon) = (lat1 - lat0, lon1 - lon0);
    let nx = (w / fc.idling_box_m).ceil() as usize;
    let ny = (h / fc.idling_box_m).ceil() as usize;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let lat_min = lat0 + j as f64 * dlat;
            let lon_min = lon0 + i as f64 * dlon;
            // Hot when the box comes within 60 m of an idling site.
            let (x0, y0) = (i as f64 * fc.idling_box_m, j as f64 * fc.idling_box_m);
            let hot = sites.iter().filter(|s| s.kind == SourceKind::Idling).any(|s| {
                let dx = (x0 - s.x).max(s.x - x0 - fc.idling_box_m).max(0.0);
                let dy = (y0 - s.y).max(s.y - y0 - fc.idling_box_m).max(0.0);
                dx.hypot(dy) <= 60.0
            });
            // Coverage has gaps, as real fleet data does.
            if !hot && rng.random_bool(0.15) {
                continue;
            }
            out.push(IdlingCellRecord {
                lat_min,
                lat_max: lat0 + (j + 1) as f64 * dlat,
                lon_min,
                lon_max: lon0 + (i + 1) as f64 * dlon,
                stats: idling_stats(hot, rng),
            });
        }
    }
    out
}

fn elevation_raster(cfg: &ScenarioConfig, fc: &FeatureSynthConfig, sites: &[&Site], rng: &mut ChaCha8Rng) -> ElevationRaster {
    let (w, h) = cfg.extent_m();
    let margin = 300.0;
    let (lat_lo, lon_lo) = cfg.region.unproject(-margin, -margin);
    let (lat_hi, _) = cfg.region.unproject(0.0, fc.elevation_step_m);
    let (lat_base, _) = cfg.region.unproject(0.0, 0.0);
    let cellsize = lat_hi - lat_base;
    let (lat_top, lon_right) = cfg.region.unproject(w + margin, h + margin);
    let ncols = ((lon_right - lon_lo) / cellsize).ceil() as usize;
    let nrows = ((lat_top - lat_lo) / cellsize).ceil() as usize;
    let hills: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h), rng.random_range(-3.0..3.0)))
        .collect();
    let tilt = (rng.random_range(-0.002..0.002), rng.random_range(-0.002..0.002));
    let pits: Vec<(f64, f64)> = sites
        .iter()
        .filter(|s| s.kind == SourceKind::LowElevation)
        .map(|s| (s.x, s.y))
        .collect();
    let mut r = ElevationRaster {
        ncols,
        nrows,
        xll: lon_lo,
        yll: lat_lo,
        cellsize,
        nodata: Some(-9999.0),
        values: vec![0.0; ncols * nrows],
    };
    for row in 0..nrows {
        for col in 0..ncols {
            let (lat, lon) = r.sample_center(row, col);
            let (x, y) = cfg.region.project_unchecked(lat, lon);
            let mut z = 20.0 + tilt.0 * x + tilt.1 * y;
            for &(hx, hy, a) in &hills {
                z += a * (-((x - hx).powi(2) + (y - hy).powi(2)) / (2.0 * 400.0f64.powi(2))).exp();
            }
            for &(px, py) in &pits {
                z -= fc.pit_depth_m * (-((x - px).powi(2) + (y - py).powi(2)) / (2.0 * fc.pit_sigma_m.powi(2))).exp();
            }
            r.values[row * ncols + col] = (z * 100.0).round() / 100.0;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_matrix, FeatureConfig};

    #[test]
    fn deterministic_and_valid() {
        let cfg = ScenarioConfig::preset_small(4);
        let fc = FeatureSynthConfig::default();
        let a = synthesize_features(&cfg, &fc);
        let b = synthesize_features(&cfg, &fc);
        assert_eq!(a.pois, b.pois);
        assert_eq!(a.idling, b.idling);
        assert!(a.idling.iter().all(|r| r.validate().is_ok()));
        assert_eq!(a.elevation, b.elevation);
    }

    #[test]
    fn source_context_shows_up_in_features() {
        let cfg = ScenarioConfig::preset_default(1);
        let src = synthesize_features(&cfg, &FeatureSynthConfig::default());
        let fcfg = FeatureConfig::default();
        for s in cfg.sources.iter().filter(|s| s.kind.is_some()) {
            let cell = cfg.region.cell_of_xy(s.x_m, s.y_m).unwrap();
            let m = build_matrix(&[cell], &cfg.region, &src, &fcfg).unwrap();
            let row = &m.rows[0];
            let col = |name: &str| m.manifest.names.iter().position(|n| n == name).unwrap();
            match s.kind.unwrap() {
                SourceKind::CarBusiness => {
                    let car: f64 = ["car_repair", "car_dealer", "car_wash", "gas_station"]
                        .iter()
                        .map(|c| row[col(&format!("poi_cat_{c}"))])
                        .sum();
                    assert!(car >= 3.0, "{car}");
                }
                SourceKind::Industrial => assert_eq!(row[col("landuse_dist_industrial")], 0.0),
                SourceKind::Idling => assert!(row[col("idle_cumulative_s")] > 5_000.0),
                SourceKind::LowElevation => assert!(row[col("elev_concave")] > 0.0),
            }
        }
    }
}
