//! Grid aggregation of spikes, the weighted mean shift clustering step and
//! the two baselines it is compared against.

pub mod meanshift;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{GridIndex, Region};
use crate::ingest::{build_trajectories, DayTrajectory, ObservationRecord, PollutantSchema};
use crate::spike::{detect_all, LocalSpike, SpikeParams, SpikeSet};
use crate::stats::lower_median;

use meanshift::{find_modes, ShiftSettings, WeightedPoint};

/// A set of local hours of day stored as a 24-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HourSet(pub u32);

impl HourSet {
    /// Hours `first..=last`.
    pub fn range(first: u8, last: u8) -> Result<Self> {
        if first > last || last > 23 {
            return Err(Error::InvalidParams(format!("bad hour range {first}-{last}")));
        }
        Ok(HourSet((first..=last).fold(0, |m, h| m | 1 << h)))
    }

    pub fn contains(&self, hour: u8) -> bool {
        hour < 24 && self.0 & (1 << hour) != 0
    }

    pub fn len(&self) -> u32 {
        (self.0 & 0x00FF_FFFF).count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for HourSet {
    /// 8 am to 6 pm: ten daytime hours.
    fn default() -> Self {
        HourSet::range(8, 17).expect("static range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub cell: GridIndex,
    /// Spikes of all pollutants whose midpoint falls in the cell.
    pub spike_count: u32,
    pub spike_hours: HourSet,
    pub observation_hours: HourSet,
    /// Temporal hit rate in `[0, 1]`.
    pub thr: f64,
    pub n_obs: u64,
    pub median_concentrations: Vec<Option<f64>>,
}

impl GridStats {
    /// Sample weight used by the clustering step.
    pub fn weight(&self) -> f64 {
        self.spike_count as f64 * self.thr
    }
}

/// Temporal hit rate: daytime hours with both a spike and an observation,
/// over the number of daytime hours.
pub fn temporal_hit_rate(spike_hours: HourSet, observation_hours: HourSet, daytime: HourSet) -> f64 {
    if daytime.is_empty() {
        return 0.0;
    }
    (spike_hours.0 & observation_hours.0 & daytime.0).count_ones() as f64 / daytime.len() as f64
}

/// Aggregates spikes and observations onto the grid. One entry per cell with
/// at least one observation, sorted by cell.
pub fn aggregate<'a>(
    spikes: impl IntoIterator<Item = &'a LocalSpike>,
    observations: &[ObservationRecord],
    region: &Region,
    daytime: HourSet,
) -> Result<Vec<GridStats>> {
    let q = observations
        .first()
        .map(|o| o.concentrations.len())
        .unwrap_or(0);
    struct Acc {
        n: u64,
        hours: u32,
        values: Vec<Vec<f64>>,
        spikes: u32,
        spike_hours: u32,
    }
    let mut cells: BTreeMap<GridIndex, Acc> = BTreeMap::new();
    let offset = region.utc_offset_minutes;
    for o in observations {
        let cell = region.cell_of(o.lat, o.lon)?;
        let acc = cells.entry(cell).or_insert_with(|| Acc {
            n: 0,
            hours: 0,
            values: vec![Vec::new(); q],
            spikes: 0,
            spike_hours: 0,
        });
        acc.n += 1;
        acc.hours |= 1 << o.local_hour(offset);
        for (i, v) in o.concentrations.iter().enumerate() {
            if let Some(v) = v {
                acc.values[i].push(*v);
            }
        }
    }
    for s in spikes {
        let cell = region.cell_of(s.mid_lat, s.mid_lon)?;
        // The midpoint is itself an observation, so the cell exists unless
        // the caller mixed campaigns.
        let Some(acc) = cells.get_mut(&cell) else {
            return Err(Error::InvalidParams(format!(
                "spike midpoint cell {cell:?} has no observations"
            )));
        };
        acc.spikes += 1;
        acc.spike_hours |= 1 << s.hour;
    }
    Ok(cells
        .into_iter()
        .map(|(cell, mut acc)| {
            let spike_hours = HourSet(acc.spike_hours);
            let observation_hours = HourSet(acc.hours);
            GridStats {
                cell,
                spike_count: acc.spikes,
                spike_hours,
                observation_hours,
                thr: temporal_hit_rate(spike_hours, observation_hours, daytime),
                n_obs: acc.n,
                median_concentrations: acc.values.iter_mut().map(|v| lower_median(v)).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineMode {
    /// Spikes of all pollutants feed one clustering.
    Joint,
    /// Each pollutant is clustered on its own; hotspot sets are united.
    PerPollutant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_spike_count: u32,
    pub bandwidth_m: f64,
    pub max_iter: usize,
    pub shift_tol_m: f64,
    /// Defaults to half the bandwidth.
    pub merge_radius_m: Option<f64>,
    pub min_cluster_cells: usize,
    pub combine: CombineMode,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_spike_count: 10,
            bandwidth_m: 100.0,
            max_iter: 200,
            shift_tol_m: 0.01,
            merge_radius_m: None,
            min_cluster_cells: 2,
            combine: CombineMode::Joint,
        }
    }
}

impl ClusterParams {
    pub fn merge_radius(&self) -> f64 {
        self.merge_radius_m.unwrap_or(self.bandwidth_m / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_m > 0.0) || !self.bandwidth_m.is_finite() {
            return Err(Error::InvalidParams("bandwidth must be positive".into()));
        }
        if self.min_spike_count < 1 {
            return Err(Error::InvalidParams("min spike count must be >= 1".into()));
        }
        if self.max_iter == 0 || !(self.shift_tol_m > 0.0) {
            return Err(Error::InvalidParams("bad convergence settings".into()));
        }
        if !(self.merge_radius() >= 0.0) {
            return Err(Error::InvalidParams("merge radius must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMode {
    pub id: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub members: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HotspotLabeling {
    /// Hotspot cells and their cluster id.
    pub cells: BTreeMap<GridIndex, usize>,
    pub modes: Vec<ClusterMode>,
}

impl HotspotLabeling {
    pub fn k(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_set(&self) -> BTreeSet<GridIndex> {
        self.cells.keys().copied().collect()
    }

    fn from_cells(cells: impl IntoIterator<Item = GridIndex>) -> Self {
        HotspotLabeling {
            cells: cells.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
            modes: Vec::new(),
        }
    }
}

/// Clusters the cells with at least `min_spike_count` spikes. Every eligible
/// cell center seeds a mean shift over the eligible centers weighted by
/// `S_g * THR_g`; cells whose mode gathers at least `min_cluster_cells` seeds
/// are hotspots.
pub fn weighted_mean_shift(
    stats: &[GridStats],
    params: &ClusterParams,
    region: &Region,
) -> Result<HotspotLabeling> {
    params.validate()?;
    let eligible: Vec<&GridStats> = stats
        .iter()
        .filter(|s| s.spike_count >= params.min_spike_count)
        .collect();
    if eligible.is_empty() {
        return Ok(HotspotLabeling::default());
    }
    let points: Vec<WeightedPoint> = eligible
        .iter()
        .map(|s| {
            let (x, y) = region.cell_center_xy(s.cell);
            WeightedPoint {
                x,
                y,
                weight: s.weight(),
            }
        })
        .collect();
    if points.iter().all(|p| p.weight == 0.0) {
        log::warn!("all {} eligible cells have zero weight; no hotspots", points.len());
        return Ok(HotspotLabeling::default());
    }
    let seeds: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    let settings = ShiftSettings {
        bandwidth_m: params.bandwidth_m,
        max_iter: params.max_iter,
        tol_m: params.shift_tol_m,
    };
    let assignment = find_modes(&points, &seeds, &settings, params.merge_radius());
    let mut cluster_of_mode: Vec<Option<usize>> = vec![None; assignment.modes.len()];
    let mut modes = Vec::new();
    for (m, &(x, y)) in assignment.modes.iter().enumerate() {
        if assignment.members[m] >= params.min_cluster_cells {
            cluster_of_mode[m] = Some(modes.len());
            modes.push(ClusterMode {
                id: modes.len(),
                x_m: x,
                y_m: y,
                members: assignment.members[m],
            });
        }
    }
    let cells = eligible
        .iter()
        .zip(&assignment.mode_of_seed)
        .filter_map(|(s, &m)| cluster_of_mode[m].map(|c| (s.cell, c)))
        .collect();
    Ok(HotspotLabeling { cells, modes })
}

/// Spike-detection-only baseline: every cell with a spike is a hotspot.
pub fn baseline_sdo<'a>(
    spikes: impl IntoIterator<Item = &'a LocalSpike>,
    region: &Region,
) -> Result<HotspotLabeling> {
    let mut cells = BTreeSet::new();
    for s in spikes {
        cells.insert(region.cell_of(s.mid_lat, s.mid_lon)?);
    }
    Ok(HotspotLabeling::from_cells(cells))
}

/// Threshold-on-aggregated-spikes baseline.
pub fn baseline_tnas(stats: &[GridStats], threshold: u32) -> Result<HotspotLabeling> {
    if threshold < 1 {
        return Err(Error::InvalidParams("TNAS threshold must be >= 1".into()));
    }
    Ok(HotspotLabeling::from_cells(
        stats
            .iter()
            .filter(|s| s.spike_count >= threshold)
            .map(|s| s.cell),
    ))
}

/// Observations of one region organized into car-day trajectories.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub schema: PollutantSchema,
    pub region: Region,
    pub records: Vec<ObservationRecord>,
    pub trajectories: Vec<DayTrajectory>,
    pub max_gap_s: f64,
}

impl Campaign {
    /// Records outside the region extent are dropped.
    pub fn new(
        records: Vec<ObservationRecord>,
        schema: PollutantSchema,
        region: Region,
        max_gap_s: f64,
    ) -> Result<Self> {
        if records.iter().any(|r| r.concentrations.len() != schema.len()) {
            return Err(Error::Schema("record width differs from the pollutant schema".into()));
        }
        let records: Vec<ObservationRecord> = records
            .into_iter()
            .filter(|r| region.contains(r.lat, r.lon))
            .collect();
        let trajectories = build_trajectories(&records, region.utc_offset_minutes, max_gap_s);
        Ok(Self {
            schema,
            region,
            records,
            trajectories,
            max_gap_s,
        })
    }

    /// Distinct (car, local day) driving days in sorted order.
    pub fn driving_days(&self) -> Vec<(Arc<str>, i32)> {
        self.trajectories
            .iter()
            .map(|t| (t.car_id.clone(), t.day))
            .collect()
    }

    /// The campaign restricted to the given driving days.
    pub fn subset(&self, days: &BTreeSet<(Arc<str>, i32)>) -> Campaign {
        let offset = self.region.utc_offset_minutes;
        let records: Vec<ObservationRecord> = self
            .records
            .iter()
            .filter(|r| days.contains(&(r.car_id.clone(), r.local_day(offset))))
            .cloned()
            .collect();
        let trajectories = self
            .trajectories
            .iter()
            .filter(|t| days.contains(&(t.car_id.clone(), t.day)))
            .cloned()
            .collect();
        Campaign {
            schema: self.schema.clone(),
            region: self.region.clone(),
            records,
            trajectories,
            max_gap_s: self.max_gap_s,
        }
    }

    /// Multiplies every concentration by `factor`.
    pub fn scaled(&self, factor: f64) -> Campaign {
        let scale = |r: &ObservationRecord| ObservationRecord {
            concentrations: r.concentrations.iter().map(|c| c.map(|v| v * factor)).collect(),
            ..r.clone()
        };
        Campaign {
            schema: self.schema.clone(),
            region: self.region.clone(),
            records: self.records.iter().map(scale).collect(),
            trajectories: self
                .trajectories
                .iter()
                .map(|t| DayTrajectory {
                    points: t.points.iter().map(scale).collect(),
                    ..t.clone()
                })
                .collect(),
            max_gap_s: self.max_gap_s,
        }
    }
}

/// Everything needed to run the detector on a campaign.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub spike: SpikeParams,
    pub cluster: ClusterParams,
    pub daytime: HourSet,
}

/// Spikes and grid statistics of a campaign: everything that does not depend
/// on the clustering parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spikes: SpikeSet,
    pub stats: Vec<GridStats>,
    /// Per-pollutant grid statistics, filled only for per-pollutant clustering.
    pub per_pollutant_stats: Vec<Vec<GridStats>>,
}

pub fn prepare(
    campaign: &Campaign,
    spike_params: &SpikeParams,
    daytime: HourSet,
    per_pollutant: bool,
) -> Result<Prepared> {
    let spikes = detect_all(
        &campaign.trajectories,
        &campaign.schema,
        spike_params,
        &campaign.region,
    )?;
    let stats = aggregate(spikes.iter(), &campaign.records, &campaign.region, daytime)?;
    let per_pollutant_stats = if per_pollutant {
        spikes
            .by_pollutant
            .iter()
            .map(|list| aggregate(list, &campaign.records, &campaign.region, daytime))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(Prepared {
        spikes,
        stats,
        per_pollutant_stats,
    })
}

/// Runs the clustering step on prepared statistics.
pub fn cluster_prepared(
    prepared: &Prepared,
    params: &ClusterParams,
    region: &Region,
) -> Result<HotspotLabeling> {
    match params.combine {
        CombineMode::Joint => weighted_mean_shift(&prepared.stats, params, region),
        CombineMode::PerPollutant => {
            let mut out = HotspotLabeling::default();
            for stats in &prepared.per_pollutant_stats {
                let l = weighted_mean_shift(stats, params, region)?;
                let offset = out.modes.len();
                for (cell, c) in l.cells {
                    out.cells.entry(cell).or_insert(c + offset);
                }
                out.modes.extend(l.modes.into_iter().map(|m| ClusterMode {
                    id: m.id + offset,
                    ..m
                }));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub spikes: SpikeSet,
    pub stats: Vec<GridStats>,
    pub labeling: HotspotLabeling,
    /// Hotspot cells over cells with observations.
    pub hotspot_pct: f64,
}

pub fn hotspot_fraction(labeling: &HotspotLabeling, stats: &[GridStats]) -> f64 {
    if stats.is_empty() {
        0.0
    } else {
        labeling.k() as f64 / stats.len() as f64
    }
}

/// Full two-step pipeline: spikes, aggregation, filtering and clustering.
pub fn detect_hotspots(
    campaign: &Campaign,
    spike_params: &SpikeParams,
    cluster_params: &ClusterParams,
    daytime: HourSet,
) -> Result<Detection> {
    cluster_params.validate()?;
    let per = cluster_params.combine == CombineMode::PerPollutant;
    let prepared = prepare(campaign, spike_params, daytime, per)?;
    let labeling = cluster_prepared(&prepared, cluster_params, &campaign.region)?;
    Ok(Detection {
        hotspot_pct: hotspot_fraction(&labeling, &prepared.stats),
        spikes: prepared.spikes,
        stats: prepared.stats,
        labeling,
    })
}

/// Grid statistics CSV with hotspot membership columns.
pub fn write_grid_stats_csv<W: Write>(
    sink: W,
    schema: &PollutantSchema,
    region: &Region,
    stats: &[GridStats],
    labeling: &HotspotLabeling,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = [
        "col", "row", "center_lat", "center_lon", "S_g", "THR_g", "weight", "n_obs",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(schema.names.iter().map(|n| format!("median_{n}")));
    header.push("hotspot".into());
    header.push("cluster_id".into());
    w.write_record(&header)?;
    for s in stats {
        let (lat, lon) = region.cell_center(s.cell);
        let mut row = vec![
            s.cell.col.to_string(),
            s.cell.row.to_string(),
            format!("{lat:.8}"),
            format!("{lon:.8}"),
            s.spike_count.to_string(),
            s.thr.to_string(),
            s.weight().to_string(),
            s.n_obs.to_string(),
        ];
        row.extend(
            s.median_concentrations
                .iter()
                .map(|m| m.map(|v| v.to_string()).unwrap_or_default()),
        );
        let cluster = labeling.cells.get(&s.cell);
        row.push(u8::from(cluster.is_some()).to_string());
        row.push(cluster.map(|c| c.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// Hotspot cells as polygons plus one point per cluster mode.
pub fn hotspots_geojson(labeling: &HotspotLabeling, stats: &[GridStats], region: &Region) -> Value {
    let by_cell: BTreeMap<GridIndex, &GridStats> = stats.iter().map(|s| (s.cell, s)).collect();
    let mut features: Vec<Value> = Vec::new();
    for (cell, cluster) in &labeling.cells {
        let ring: Vec<[f64; 2]> = region
            .cell_ring(*cell)
            .iter()
            .map(|&(lon, lat)| [lon, lat])
            .collect();
        let (s_g, thr, weight) = by_cell
            .get(cell)
            .map(|s| (s.spike_count, s.thr, s.weight()))
            .unwrap_or((0, 0.0, 0.0));
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {
                "col": cell.col,
                "row": cell.row,
                "cluster_id": cluster,
                "S_g": s_g,
                "THR_g": thr,
                "weight": weight,
            }
        }));
    }
    for m in &labeling.modes {
        let (lat, lon) = region.unproject(m.x_m, m.y_m);
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {"cluster_id": m.id, "mode": true, "members": m.members}
        }));
    }
    json!({"type": "FeatureCollection", "features": features})
}
