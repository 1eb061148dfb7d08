//! Synthetic mobile sensing campaigns with planted pollution sources.
//!
//! Vehicles random-walk a rectangular road lattice (a few arterials, many
//! local streets) and sample every second. Concentration at a sample is
//!
//! ```text
//! background * day_factor * (1 + sum_s strength_s * exp(-d_s^2 / 2 sigma_s^2) * active_s(t))
//!            * lognormal_noise * (1 + exhaust_plume(t))
//! ```
//!
//! where exhaust plumes are short random encounters with other vehicles'
//! exhaust. Routing preference for arterials and stops at intersections make
//! the sampling strongly uneven across cells.

pub mod features;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridIndex, Region};
use crate::hotspot::{HotspotLabeling, HourSet};
use crate::ingest::{ObservationRecord, PollutantSchema};

/// 2020-03-02, a Monday, in days since 1970-01-01.
pub const DEFAULT_START_DAY: i32 = 18_323;

/// What kind of urban context a planted source comes with. Drives the
/// synthetic feature sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CarBusiness,
    Industrial,
    Idling,
    LowElevation,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::CarBusiness,
        SourceKind::Industrial,
        SourceKind::Idling,
        SourceKind::LowElevation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub x_m: f64,
    pub y_m: f64,
    /// Relative elevation over background, per pollutant.
    pub strength: Vec<f64>,
    pub sigma_m: f64,
    pub active_hours: HourSet,
    /// Campaign day offsets (0-based) on which the source emits.
    pub active_days: BTreeSet<u32>,
    pub kind: Option<SourceKind>,
}

impl Source {
    pub fn active(&self, day: u32, hour: u8) -> bool {
        self.active_hours.contains(hour) && self.active_days.contains(&day)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub region: Region,
    pub road_spacing_m: f64,
    /// Position of the first road line from the region origin.
    pub road_offset_m: f64,
    /// Every n-th road line is an arterial.
    pub arterial_every: usize,
    pub n_vehicles: usize,
    pub days: u32,
    pub start_day: i32,
    pub trips_per_day: usize,
    pub trip_duration_s: u32,
    pub daytime: HourSet,
    pub speed_arterial_mps: f64,
    pub speed_local_mps: f64,
    /// Relative preference for turning onto an arterial.
    pub arterial_preference: f64,
    /// Relative preference for turning onto a residential street, one line
    /// per block between arterials. Most traffic avoids them.
    pub residential_preference: f64,
    /// Probability of stopping at an intersection, and the stop length range.
    pub stop_probability: f64,
    pub stop_s: (u32, u32),
    pub sources: Vec<Source>,
    /// Background level per pollutant.
    pub background: Vec<f64>,
    /// Log-sd of the day-to-day background factor.
    pub day_variation: f64,
    /// Log-sd of the multiplicative per-sample noise.
    pub noise_sigma: f64,
    /// Exhaust plume encounters per second of driving.
    pub plume_rate_per_s: f64,
    pub plume_amplitude: (f64, f64),
    pub plume_duration_s: (u32, u32),
    /// Instrument response lag range in seconds, drawn per vehicle-day: a
    /// reading reflects the air at the position `lag` seconds earlier.
    pub sensor_lag_s: (u32, u32),
    /// Standard deviation of the GPS position error per axis.
    pub gps_sigma_m: f64,
    pub seed: u64,
}

/// Cells that contain planted sources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub persistent_source_cells: BTreeSet<GridIndex>,
    pub transient_source_cells: BTreeSet<GridIndex>,
}

/// A source is persistent when it is active in at least 70% of the daytime
/// hours on at least 70% of the campaign days.
pub const PERSISTENCE_FRACTION: f64 = 0.7;

pub fn is_persistent(source: &Source, daytime: HourSet, days: u32) -> bool {
    let hours = HourSet(source.active_hours.0 & daytime.0).len() as f64 / daytime.len().max(1) as f64;
    let active_days = source.active_days.iter().filter(|&&d| d < days).count() as f64;
    hours >= PERSISTENCE_FRACTION && active_days / days.max(1) as f64 >= PERSISTENCE_FRACTION
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        let q = self.background.len();
        if q == 0 || self.background.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidParams("backgrounds must be positive".into()));
        }
        if !(self.road_spacing_m > 0.0) || self.arterial_every == 0 {
            return Err(Error::InvalidParams("bad road lattice".into()));
        }
        if !(self.speed_arterial_mps > 0.0 && self.speed_local_mps > 0.0) {
            return Err(Error::InvalidParams("speeds must be positive".into()));
        }
        if !(self.arterial_preference > 0.0 && self.residential_preference > 0.0) {
            return Err(Error::InvalidParams("turn preferences must be positive".into()));
        }
        if self.days == 0 || self.n_vehicles == 0 || self.trips_per_day == 0 {
            return Err(Error::InvalidParams("empty campaign".into()));
        }
        let slot = self.daytime.len() as u64 * 3600 / self.trips_per_day as u64;
        if self.trip_duration_s as u64 > slot {
            return Err(Error::InvalidParams("trips do not fit in the daytime slots".into()));
        }
        if self.sensor_lag_s.0 > self.sensor_lag_s.1
            || self.stop_s.0 > self.stop_s.1
            || self.plume_duration_s.0 > self.plume_duration_s.1
            || !(self.plume_amplitude.0 <= self.plume_amplitude.1)
        {
            return Err(Error::InvalidParams("empty range".into()));
        }
        if self.noise_sigma < 0.0
            || self.day_variation < 0.0
            || self.plume_rate_per_s < 0.0
            || self.gps_sigma_m < 0.0
            || !(0.0..=1.0).contains(&self.stop_probability)
        {
            return Err(Error::InvalidParams("noise levels must be >= 0".into()));
        }
        let (w, h) = self.extent_m();
        if self.lattice().nx < 2 || self.lattice().ny < 2 || self.road_offset_m >= w.min(h) {
            return Err(Error::InvalidParams("region too small for the lattice".into()));
        }
        for s in &self.sources {
            if !(s.sigma_m > 0.0) {
                return Err(Error::InvalidParams("source sigma must be positive".into()));
            }
            if s.strength.len() != q || s.strength.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidParams("source strengths must be >= 0, one per pollutant".into()));
            }
            if s.active_hours.0 & !self.daytime.0 != 0 {
                return Err(Error::InvalidParams("source hours outside daytime".into()));
            }
            if !(0.0..=w).contains(&s.x_m) || !(0.0..=h).contains(&s.y_m) {
                return Err(Error::InvalidParams("source outside region".into()));
            }
        }
        Ok(())
    }

    pub fn extent_m(&self) -> (f64, f64) {
        self.region
            .project_unchecked(self.region.extent.max_lat, self.region.extent.max_lon)
    }

    fn lattice(&self) -> Lattice {
        let (w, h) = self.extent_m();
        Lattice {
            nx: ((w - self.road_offset_m) / self.road_spacing_m).floor() as usize + 1,
            ny: ((h - self.road_offset_m) / self.road_spacing_m).floor() as usize + 1,
            spacing: self.road_spacing_m,
            offset: self.road_offset_m,
            arterial_every: self.arterial_every,
        }
    }

    /// Ground truth recomputed from the source list and schedules.
    pub fn ground_truth(&self) -> GroundTruth {
        let mut truth = GroundTruth::default();
        for s in &self.sources {
            let Some(cell) = self.region.cell_of_xy(s.x_m, s.y_m) else {
                continue;
            };
            if is_persistent(s, self.daytime, self.days) {
                truth.persistent_source_cells.insert(cell);
            } else {
                truth.transient_source_cells.insert(cell);
            }
        }
        let persistent = truth.persistent_source_cells.clone();
        truth.transient_source_cells.retain(|c| !persistent.contains(c));
        truth
    }

    pub fn schema(&self) -> PollutantSchema {
        if self.background.len() == 3 {
            PollutantSchema::default_bc_no_no2()
        } else {
            let names: Vec<String> = (0..self.background.len()).map(|i| format!("P{}", i + 1)).collect();
            let units = vec!["au".to_string(); names.len()];
            PollutantSchema::new(names, units).expect("generated names are unique")
        }
    }

    /// Clean concentration field at a position, without noise or plumes.
    pub fn field(&self, x: f64, y: f64, day: u32, hour: u8, pollutant: usize, day_factor: f64) -> f64 {
        let mut excess = 0.0;
        for s in &self.sources {
            if s.active(day, hour) {
                let d2 = (x - s.x_m) * (x - s.x_m) + (y - s.y_m) * (y - s.y_m);
                excess += s.strength[pollutant] * (-d2 / (2.0 * s.sigma_m * s.sigma_m)).exp();
            }
        }
        self.background[pollutant] * day_factor * (1.0 + excess)
    }

    /// The reference scenario: a 2.5 km square lattice, six vehicles over
    /// twenty days (about 5e5 samples), ten persistent and five single-hour
    /// transient sources on arterials.
    pub fn preset_default(seed: u64) -> Self {
        let region = Region::from_size_m("synthetic", 37.80, -122.30, 2_500.0, 2_500.0, 50.0)
            .expect("static region")
            .with_utc_offset_minutes(-480);
        let mut cfg = ScenarioConfig {
            region,
            road_spacing_m: 100.0,
            road_offset_m: 25.0,
            arterial_every: 5,
            n_vehicles: 6,
            days: 20,
            start_day: DEFAULT_START_DAY,
            trips_per_day: 4,
            trip_duration_s: 1_050,
            daytime: HourSet::default(),
            speed_arterial_mps: 10.0,
            speed_local_mps: 6.0,
            arterial_preference: 5.0,
            residential_preference: 0.05,
            stop_probability: 0.25,
            stop_s: (5, 30),
            sources: Vec::new(),
            background: vec![1.0, 10.0, 20.0],
            day_variation: 0.2,
            noise_sigma: 0.15,
            plume_rate_per_s: 0.003,
            plume_amplitude: (0.5, 3.0),
            plume_duration_s: (3, 12),
            sensor_lag_s: (2, 5),
            gps_sigma_m: 3.0,
            seed,
        };
        cfg.sources = plant_sources(&cfg, 10, 5, seed);
        cfg
    }

    /// A reduced scenario for quick tests: same lattice, fewer vehicle-days.
    pub fn preset_small(seed: u64) -> Self {
        let mut cfg = Self::preset_default(seed);
        cfg.n_vehicles = 4;
        cfg.days = 10;
        cfg.sources = plant_sources(&cfg, 4, 2, seed);
        cfg
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "default" => Ok(Self::preset_default(seed)),
            "small" => Ok(Self::preset_small(seed)),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

struct Lattice {
    nx: usize,
    ny: usize,
    spacing: f64,
    offset: f64,
    arterial_every: usize,
}

impl Lattice {
    fn xy(&self, node: (usize, usize)) -> (f64, f64) {
        (
            self.offset + node.0 as f64 * self.spacing,
            self.offset + node.1 as f64 * self.spacing,
        )
    }

    fn is_arterial_line(&self, k: usize) -> bool {
        k % self.arterial_every == self.arterial_every / 2
    }

    fn is_residential_line(&self, k: usize) -> bool {
        k % self.arterial_every == 0 && !self.is_arterial_line(k)
    }

    fn edge_line(a: (usize, usize), b: (usize, usize)) -> usize {
        if a.1 == b.1 {
            a.1
        } else {
            a.0
        }
    }

    fn edge_is_arterial(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        self.is_arterial_line(Self::edge_line(a, b))
    }

    fn edge_is_residential(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        self.is_residential_line(Self::edge_line(a, b))
    }

    fn neighbors(&self, n: (usize, usize)) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(4);
        if n.0 > 0 {
            v.push((n.0 - 1, n.1));
        }
        if n.0 + 1 < self.nx {
            v.push((n.0 + 1, n.1));
        }
        if n.1 > 0 {
            v.push((n.0, n.1 - 1));
        }
        if n.1 + 1 < self.ny {
            v.push((n.0, n.1 + 1));
        }
        v
    }

    fn arterial_nodes(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for i in 0..self.nx {
            for j in 0..self.ny {
                if self.is_arterial_line(i) || self.is_arterial_line(j) {
                    v.push((i, j));
                }
            }
        }
        v
    }
}

/// Places persistent and single-hour transient sources at random points on
/// arterials, keeping them apart from each other and from the border.
pub fn plant_sources(cfg: &ScenarioConfig, n_persistent: usize, n_transient: usize, seed: u64) -> Vec<Source> {
    let lat = cfg.lattice();
    let (w, h) = cfg.extent_m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_50C3);
    let q = cfg.background.len();
    let hours: Vec<u8> = (0..24).filter(|h| cfg.daytime.contains(*h)).collect();
    let mut sources: Vec<Source> = Vec::new();
    let min_sep = 350.0;
    let margin = 300.0;
    let mut attempts = 0;
    while sources.len() < n_persistent + n_transient && attempts < 100_000 {
        attempts += 1;
        let horizontal = rng.random_bool(0.5);
        let lines: Vec<usize> = if horizontal {
            (0..lat.ny).filter(|&k| lat.is_arterial_line(k)).collect()
        } else {
            (0..lat.nx).filter(|&k| lat.is_arterial_line(k)).collect()
        };
        let line = lines[rng.random_range(0..lines.len())];
        let along = rng.random_range(margin..(if horizontal { w } else { h }) - margin);
        let fixed = lat.offset + line as f64 * lat.spacing;
        let (x, y) = if horizontal { (along, fixed) } else { (fixed, along) };
        if x < margin || y < margin || x > w - margin || y > h - margin {
            continue;
        }
        if sources
            .iter()
            .any(|s| (s.x_m - x).hypot(s.y_m - y) < min_sep)
        {
            continue;
        }
        let persistent = sources.len() < n_persistent;
        let (active_hours, active_days, strength, kind) = if persistent {
            let idx = sources.len();
            (
                cfg.daytime,
                (0..cfg.days).collect(),
                (0..q).map(|_| rng.random_range(1.8..3.6)).collect(),
                Some(SourceKind::ALL[idx % SourceKind::ALL.len()]),
            )
        } else {
            let hour = hours[rng.random_range(0..hours.len())];
            (
                HourSet(1 << hour),
                [rng.random_range(0..cfg.days)].into_iter().collect(),
                (0..q).map(|_| rng.random_range(2.0..4.0)).collect(),
                None,
            )
        };
        sources.push(Source {
            x_m: x,
            y_m: y,
            strength,
            sigma_m: rng.random_range(20.0..30.0),
            active_hours,
            active_days,
            kind,
        });
    }
    sources
}

fn unit_seed(seed: u64, vehicle: usize, day: u32) -> u64 {
    // splitmix64 over the unit coordinates
    let mut z = seed
        .wrapping_add((vehicle as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((day as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub schema: PollutantSchema,
    pub records: Vec<ObservationRecord>,
    pub truth: GroundTruth,
}

struct Walker {
    from: (usize, usize),
    to: (usize, usize),
    progress: f64,
    speed: f64,
    stop_left: u32,
}

fn pick_next(lat: &Lattice, cfg: &ScenarioConfig, w: &Walker, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let options: Vec<(usize, usize)> = lat
        .neighbors(w.to)
        .into_iter()
        .filter(|n| *n != w.from)
        .collect();
    if options.is_empty() {
        return w.from;
    }
    let weights: Vec<f64> = options
        .iter()
        .map(|&n| {
            if lat.edge_is_arterial(w.to, n) {
                cfg.arterial_preference
            } else if lat.edge_is_residential(w.to, n) {
                cfg.residential_preference
            } else {
                1.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (o, wt) in options.iter().zip(&weights) {
        if u < *wt {
            return *o;
        }
        u -= wt;
    }
    *options.last().expect("non-empty")
}

fn edge_speed(lat: &Lattice, cfg: &ScenarioConfig, a: (usize, usize), b: (usize, usize), rng: &mut ChaCha8Rng) -> f64 {
    let base = if lat.edge_is_arterial(a, b) {
        cfg.speed_arterial_mps
    } else {
        cfg.speed_local_mps
    };
    base * rng.random_range(0.85..1.15)
}

fn simulate_vehicle_day(cfg: &ScenarioConfig, vehicle: usize, day: u32, car_id: &Arc<str>) -> Vec<ObservationRecord> {
    let lat = cfg.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(unit_seed(cfg.seed, vehicle, day));
    let q = cfg.background.len();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let day_factor: Vec<f64> = (0..q)
        .map(|_| (cfg.day_variation * std_normal.sample(&mut rng)).exp())
        .collect();
    let starts = lat.arterial_nodes();
    let start = starts[rng.random_range(0..starts.len())];
    let first = {
        let n = lat.neighbors(start);
        n[rng.random_range(0..n.len())]
    };
    let mut walker = Walker {
        from: start,
        to: first,
        progress: 0.0,
        speed: 0.0,
        stop_left: 0,
    };
    walker.speed = edge_speed(&lat, cfg, walker.from, walker.to, &mut rng);

    let first_hour = (0..24u8).find(|h| cfg.daytime.contains(*h)).unwrap_or(8) as i64;
    let window_s = cfg.daytime.len() as i64 * 3600;
    let slot = window_s / cfg.trips_per_day as i64;
    let offset_s = cfg.region.utc_offset_minutes as i64 * 60;
    let day_index = cfg.start_day as i64 + day as i64;
    let mut out = Vec::with_capacity(cfg.trips_per_day * cfg.trip_duration_s as usize);
    let mut plume_left = 0u32;
    let mut plume_amp = vec![0.0; q];

    let lag = rng.random_range(cfg.sensor_lag_s.0..=cfg.sensor_lag_s.1) as usize;
    for trip in 0..cfg.trips_per_day as i64 {
        let latest = (slot - cfg.trip_duration_s as i64).max(0);
        let begin = first_hour * 3600 + trip * slot + rng.random_range(0..=latest);
        let mut path: Vec<(f64, f64)> = Vec::with_capacity(cfg.trip_duration_s as usize);
        for k in 0..cfg.trip_duration_s as i64 {
            let local_s = begin + k;
            let hour = (local_s / 3600) as u8;
            let (ax, ay) = lat.xy(walker.from);
            let (bx, by) = lat.xy(walker.to);
            let f = walker.progress / lat.spacing;
            path.push((ax + (bx - ax) * f, ay + (by - ay) * f));
            let (sx, sy) = path[path.len().saturating_sub(lag + 1)];

            if plume_left == 0 && cfg.plume_rate_per_s > 0.0 && rng.random_bool(cfg.plume_rate_per_s.min(1.0)) {
                plume_left = rng.random_range(cfg.plume_duration_s.0..=cfg.plume_duration_s.1);
                let a = rng.random_range(cfg.plume_amplitude.0..=cfg.plume_amplitude.1);
                for v in plume_amp.iter_mut() {
                    *v = a * rng.random_range(0.6..1.0);
                }
            }
            let in_plume = plume_left > 0;
            plume_left = plume_left.saturating_sub(1);

            let concentrations = (0..q)
                .map(|p| {
                    let mut c = cfg.field(sx, sy, day, hour, p, day_factor[p]);
                    if cfg.noise_sigma > 0.0 {
                        c *= (cfg.noise_sigma * std_normal.sample(&mut rng)).exp();
                    }
                    if in_plume {
                        c *= 1.0 + plume_amp[p];
                    }
                    Some(c)
                })
                .collect();
            let (mut x, mut y) = path[path.len() - 1];
            if cfg.gps_sigma_m > 0.0 {
                x += cfg.gps_sigma_m * std_normal.sample(&mut rng);
                y += cfg.gps_sigma_m * std_normal.sample(&mut rng);
            }
            let (plat, plon) = cfg.region.unproject(x, y);
            let utc_s = day_index * 86_400 + local_s - offset_s;
            out.push(ObservationRecord {
                car_id: car_id.clone(),
                time_ms: utc_s * 1000,
                lat: plat,
                lon: plon,
                concentrations,
            });

            if walker.stop_left > 0 {
                walker.stop_left -= 1;
                continue;
            }
            walker.progress += walker.speed;
            while walker.progress >= lat.spacing {
                walker.progress -= lat.spacing;
                let next = pick_next(&lat, cfg, &walker, &mut rng);
                walker.from = walker.to;
                walker.to = next;
                walker.speed = edge_speed(&lat, cfg, walker.from, walker.to, &mut rng);
                if rng.random_bool(cfg.stop_probability) {
                    walker.stop_left = rng.random_range(cfg.stop_s.0..=cfg.stop_s.1);
                    walker.progress = 0.0;
                }
            }
        }
    }
    out
}

/// Simulates the campaign. Deterministic for a given configuration,
/// independent of the number of worker threads.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let cars: Vec<Arc<str>> = (0..cfg.n_vehicles)
        .map(|v| Arc::from(format!("car{v:02}").as_str()))
        .collect();
    let units: Vec<(usize, u32)> = (0..cfg.n_vehicles)
        .flat_map(|v| (0..cfg.days).map(move |d| (v, d)))
        .collect();
    let parts: Vec<Vec<ObservationRecord>> = units
        .par_iter()
        .map(|&(v, d)| simulate_vehicle_day(cfg, v, d, &cars[v]))
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        schema: cfg.schema(),
        records: parts.into_iter().flatten().collect(),
        truth: cfg.ground_truth(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Predicted cells next to a transient source and not next to any
    /// persistent one.
    pub transient_hits: usize,
}

/// Cell-level agreement of a labeling with the planted persistent sources
/// using 8-neighbor adjacency.
pub fn score_against_truth(labeling: &HotspotLabeling, truth: &GroundTruth) -> TruthScore {
    let near = |c: &GridIndex, set: &BTreeSet<GridIndex>| set.iter().any(|p| p.touches(c));
    let mut tp = 0;
    let mut transient_hits = 0;
    for c in labeling.cells.keys() {
        if near(c, &truth.persistent_source_cells) {
            tp += 1;
        } else if near(c, &truth.transient_source_cells) {
            transient_hits += 1;
        }
    }
    let predicted = labeling.k();
    let fp = predicted - tp;
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let found = truth
        .persistent_source_cells
        .iter()
        .filter(|p| labeling.cells.keys().any(|c| c.touches(p)))
        .count();
    let recall = if truth.persistent_source_cells.is_empty() {
        0.0
    } else {
        found as f64 / truth.persistent_source_cells.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    TruthScore {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        transient_hits,
    }
}
