//! Local spike detection on car-day trajectories.
//!
//! A segment `M` of a trajectory is a local spike for one pollutant when its
//! median level is at least the day's background and at least `r` times the
//! medians of the equally sized windows immediately before and after it, and
//! its start-to-end distance matches the window size. Window sizes are
//! scanned in ascending order; accepted segments claim their points so later
//! (larger) windows cannot overlap them.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Region;
use crate::ingest::{day_to_date, format_timestamp, DayTrajectory, PollutantSchema};
use crate::stats::lower_median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Background {
    /// Lower median of the day's valid values for the pollutant.
    DailyMedian,
    /// A fixed level, e.g. a regulatory limit.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    /// Minimum ratio of the segment median to its neighbors.
    pub ratio: f64,
    /// Spatial window sizes in meters, strictly ascending.
    pub window_sizes_m: Vec<f64>,
    pub background: Background,
    pub min_points_per_window: usize,
    /// Accepted deviation of a window's start-to-end distance from its size.
    pub tolerance_m: f64,
}

impl Default for SpikeParams {
    fn default() -> Self {
        Self {
            ratio: 1.5,
            window_sizes_m: vec![50.0, 60.0, 70.0, 80.0, 90.0, 100.0],
            background: Background::DailyMedian,
            min_points_per_window: 5,
            tolerance_m: 5.0,
        }
    }
}

impl SpikeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 1.0) || !self.ratio.is_finite() {
            return Err(Error::InvalidParams(format!("ratio must be >= 1, got {}", self.ratio)));
        }
        if self.window_sizes_m.is_empty() {
            return Err(Error::InvalidParams("no window sizes".into()));
        }
        if self.window_sizes_m.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams("window sizes must be positive".into()));
        }
        if self.window_sizes_m.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParams("window sizes must be strictly ascending".into()));
        }
        if self.min_points_per_window == 0 {
            return Err(Error::InvalidParams("min_points_per_window must be >= 1".into()));
        }
        if !(self.tolerance_m >= 0.0) {
            return Err(Error::InvalidParams("tolerance must be >= 0".into()));
        }
        if let Background::Fixed(v) = self.background {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams("fixed background must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// A detected segment with its levels and the context it was accepted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSpike {
    pub car_id: Arc<str>,
    pub day: i32,
    pub pollutant: usize,
    pub window_m: f64,
    /// Inclusive point indices of the segment within its trajectory.
    pub start: usize,
    pub end: usize,
    /// First point of the left neighbor window and last of the right one.
    pub left_start: usize,
    pub right_end: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub n_points: usize,
    /// Segment median (a_M).
    pub level: f64,
    /// Background (a_D).
    pub background: f64,
    pub left_level: f64,
    pub right_level: f64,
    pub mid_lat: f64,
    pub mid_lon: f64,
    /// Local hour of the segment midpoint.
    pub hour: u8,
}

/// Background level of a day: lower median of the valid values.
/// `None` when the day holds no value for the pollutant.
pub fn daily_background(points: &[crate::ingest::ObservationRecord], pollutant: usize) -> Option<f64> {
    let mut v: Vec<f64> = points.iter().filter_map(|p| p.value(pollutant)).collect();
    lower_median(&mut v)
}

/// Last index of the window starting at `from`: the first point whose
/// distance from `from` reaches `w - tol`, if that distance is also `<= w + tol`.
pub(crate) fn forward_window(
    xy: &[(f64, f64)],
    from: usize,
    limit: usize,
    w: f64,
    tol: f64,
) -> Option<usize> {
    let (x0, y0) = xy[from];
    let lo = (w - tol) * (w - tol);
    let hi = (w + tol) * (w + tol);
    for (j, &(x, y)) in xy.iter().enumerate().take(limit).skip(from + 1) {
        let d2 = (x - x0) * (x - x0) + (y - y0) * (y - y0);
        if d2 >= lo {
            return (d2 <= hi).then_some(j);
        }
    }
    None
}

/// Mirror of [`forward_window`]: first index of the window ending at `to`.
pub(crate) fn backward_window(
    xy: &[(f64, f64)],
    to: usize,
    floor: usize,
    w: f64,
    tol: f64,
) -> Option<usize> {
    let (x0, y0) = xy[to];
    let lo = (w - tol) * (w - tol);
    let hi = (w + tol) * (w + tol);
    for j in (floor..to).rev() {
        let (x, y) = xy[j];
        let d2 = (x - x0) * (x - x0) + (y - y0) * (y - y0);
        if d2 >= lo {
            return (d2 <= hi).then_some(j);
        }
    }
    None
}

fn window_median(
    values: &[Option<f64>],
    from: usize,
    to: usize,
    min_points: usize,
    scratch: &mut Vec<f64>,
) -> Option<f64> {
    scratch.clear();
    scratch.extend(values[from..=to].iter().flatten());
    if scratch.len() < min_points {
        return None;
    }
    lower_median(scratch)
}

fn background_for(traj: &DayTrajectory, pollutant: usize, params: &SpikeParams) -> Option<f64> {
    match params.background {
        Background::DailyMedian => daily_background(&traj.points, pollutant),
        Background::Fixed(v) => Some(v),
    }
}

fn project_points(traj: &DayTrajectory, region: &Region) -> Result<Vec<(f64, f64)>> {
    traj.points
        .iter()
        .map(|p| region.project(p.lat, p.lon))
        .collect()
}

/// Detects local spikes of one pollutant on one car-day trajectory.
pub fn detect_spikes(
    traj: &DayTrajectory,
    pollutant: usize,
    params: &SpikeParams,
    region: &Region,
) -> Result<Vec<LocalSpike>> {
    params.validate()?;
    let Some(a_d) = background_for(traj, pollutant, params) else {
        return Ok(Vec::new());
    };
    let xy = project_points(traj, region)?;
    let values: Vec<Option<f64>> = traj.points.iter().map(|p| p.value(pollutant)).collect();
    let n = traj.points.len();
    let min_pts = params.min_points_per_window;
    let tol = params.tolerance_m;
    let mut claimed = vec![false; n];
    let mut scratch = Vec::new();
    let mut spikes = Vec::new();

    for &w in &params.window_sizes_m {
        for seg in &traj.segments {
            let mut m = seg.start;
            while m < seg.end {
                if claimed[m] || m == seg.start {
                    m += 1;
                    continue;
                }
                let Some(e) = forward_window(&xy, m, seg.end, w, tol) else {
                    m += 1;
                    continue;
                };
                if e + 1 >= seg.end || claimed[m..=e].iter().any(|&c| c) {
                    m += 1;
                    continue;
                }
                let a_m = match window_median(&values, m, e, min_pts, &mut scratch) {
                    Some(v) if v >= a_d => v,
                    _ => {
                        m += 1;
                        continue;
                    }
                };
                let neighbors = backward_window(&xy, m - 1, seg.start, w, tol).and_then(|l| {
                    let q = forward_window(&xy, e + 1, seg.end, w, tol)?;
                    let a_l = window_median(&values, l, m - 1, min_pts, &mut scratch)?;
                    let a_r = window_median(&values, e + 1, q, min_pts, &mut scratch)?;
                    Some((l, q, a_l, a_r))
                });
                let Some((l, q, a_l, a_r)) = neighbors else {
                    m += 1;
                    continue;
                };
                if a_m >= params.ratio * a_l.max(a_r) {
                    claimed[m..=e].iter_mut().for_each(|c| *c = true);
                    let mid = &traj.points[(m + e) / 2];
                    spikes.push(LocalSpike {
                        car_id: traj.car_id.clone(),
                        day: traj.day,
                        pollutant,
                        window_m: w,
                        start: m,
                        end: e,
                        left_start: l,
                        right_end: q,
                        start_ms: traj.points[m].time_ms,
                        end_ms: traj.points[e].time_ms,
                        n_points: e - m + 1,
                        level: a_m,
                        background: a_d,
                        left_level: a_l,
                        right_level: a_r,
                        mid_lat: mid.lat,
                        mid_lon: mid.lon,
                        hour: mid.local_hour(region.utc_offset_minutes),
                    });
                    m = q + 1;
                } else {
                    m += 1;
                }
            }
        }
    }
    spikes.sort_by_key(|s| (s.start_ms, s.start));
    Ok(spikes)
}

/// Re-evaluates the acceptance constraints of a stored spike against its
/// trajectory. True when every constraint still holds.
pub fn replay_spike(
    traj: &DayTrajectory,
    spike: &LocalSpike,
    params: &SpikeParams,
    region: &Region,
) -> bool {
    let p = &traj.points;
    if spike.left_start >= spike.start || spike.end >= spike.right_end || spike.right_end >= p.len()
    {
        return false;
    }
    let Some(seg) = traj
        .segments
        .iter()
        .find(|s| s.contains(&spike.left_start))
    else {
        return false;
    };
    if !seg.contains(&spike.right_end) {
        return false;
    }
    let Ok(xy) = project_points(traj, region) else {
        return false;
    };
    let dist = |a: usize, b: usize| (xy[a].0 - xy[b].0).hypot(xy[a].1 - xy[b].1);
    let w = spike.window_m;
    let in_range = |d: f64| (d - w).abs() <= params.tolerance_m + 1e-9;
    if !(in_range(dist(spike.start, spike.end))
        && in_range(dist(spike.left_start, spike.start - 1))
        && in_range(dist(spike.end + 1, spike.right_end)))
    {
        return false;
    }
    let values: Vec<Option<f64>> = p.iter().map(|o| o.value(spike.pollutant)).collect();
    let mut scratch = Vec::new();
    let min_pts = params.min_points_per_window;
    let a_m = window_median(&values, spike.start, spike.end, min_pts, &mut scratch);
    let a_l = window_median(&values, spike.left_start, spike.start - 1, min_pts, &mut scratch);
    let a_r = window_median(&values, spike.end + 1, spike.right_end, min_pts, &mut scratch);
    let a_d = background_for(traj, spike.pollutant, params);
    match (a_m, a_l, a_r, a_d) {
        (Some(a_m), Some(a_l), Some(a_r), Some(a_d)) => {
            a_m == spike.level
                && a_l == spike.left_level
                && a_r == spike.right_level
                && a_d == spike.background
                && a_m >= a_d
                && a_m >= params.ratio * a_l.max(a_r)
        }
        _ => false,
    }
}

/// Spikes of a whole campaign, grouped by pollutant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpikeSet {
    pub by_pollutant: Vec<Vec<LocalSpike>>,
    /// Per pollutant, the number of car-days without any valid value.
    pub skipped_days: Vec<usize>,
}

impl SpikeSet {
    pub fn len(&self) -> usize {
        self.by_pollutant.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalSpike> {
        self.by_pollutant.iter().flatten()
    }
}

/// Runs [`detect_spikes`] on every (car-day, pollutant) unit. The result is
/// independent of the number of worker threads.
pub fn detect_all(
    trajectories: &[DayTrajectory],
    schema: &PollutantSchema,
    params: &SpikeParams,
    region: &Region,
) -> Result<SpikeSet> {
    params.validate()?;
    let q = schema.len();
    let units: Vec<(usize, usize)> = (0..trajectories.len())
        .flat_map(|t| (0..q).map(move |p| (t, p)))
        .collect();
    let results: Vec<(usize, bool, Vec<LocalSpike>)> = units
        .par_iter()
        .map(|&(t, p)| {
            let traj = &trajectories[t];
            let skipped = background_for(traj, p, params).is_none();
            detect_spikes(traj, p, params, region).map(|s| (p, skipped, s))
        })
        .collect::<Result<_>>()?;
    let mut set = SpikeSet {
        by_pollutant: vec![Vec::new(); q],
        skipped_days: vec![0; q],
    };
    for (p, skipped, spikes) in results {
        if skipped {
            set.skipped_days[p] += 1;
        }
        set.by_pollutant[p].extend(spikes);
    }
    for list in &mut set.by_pollutant {
        list.sort_by(|a, b| {
            (&a.car_id, a.day, a.start_ms, a.start).cmp(&(&b.car_id, b.day, b.start_ms, b.start))
        });
    }
    Ok(set)
}

/// Writes the spike dump CSV.
pub fn write_spikes_csv<W: Write>(sink: W, schema: &PollutantSchema, spikes: &SpikeSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "car_id", "date", "pollutant", "start_ts", "end_ts", "n_points", "a_M", "a_D", "a_L",
        "a_R", "mid_lat", "mid_lon", "hour",
    ])?;
    for s in spikes.iter() {
        w.write_record([
            s.car_id.to_string(),
            day_to_date(s.day).to_string(),
            schema.names[s.pollutant].clone(),
            format_timestamp(s.start_ms),
            format_timestamp(s.end_ms),
            s.n_points.to_string(),
            s.level.to_string(),
            s.background.to_string(),
            s.left_level.to_string(),
            s.right_level.to_string(),
            format!("{:.8}", s.mid_lat),
            format!("{:.8}", s.mid_lon),
            s.hour.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ObservationRecord;

    fn region() -> Region {
        Region::new("t", 37.8, -122.3, 37.9, -122.2, 50.0).unwrap()
    }

    /// Straight eastbound drive at `step_m` per second along y = 500 m.
    fn straight(values: &[f64], step_m: f64) -> DayTrajectory {
        let r = region();
        let points: Vec<ObservationRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lat, lon) = r.unproject(100.0 + i as f64 * step_m, 500.0);
                ObservationRecord {
                    car_id: Arc::from("car"),
                    time_ms: (1_583_136_000 + i as i64) * 1000,
                    lat,
                    lon,
                    concentrations: vec![Some(v)],
                }
            })
            .collect();
        let n = points.len();
        DayTrajectory {
            car_id: Arc::from("car"),
            day: points[0].local_day(0),
            points,
            segments: vec![0..n],
        }
    }

    #[test]
    fn median_conventions() {
        let t = straight(&[1.0, 2.0, 3.0], 10.0);
        assert_eq!(daily_background(&t.points, 0), Some(2.0));
        let t = straight(&[1.0, 2.0, 3.0, 4.0], 10.0);
        assert_eq!(daily_background(&t.points, 0), Some(2.0));
    }

    #[test]
    fn flat_signal_has_no_spikes() {
        let t = straight(&vec![7.5; 300], 10.0);
        assert!(detect_spikes(&t, 0, &SpikeParams::default(), &region())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn boundary_equality_qualifies() {
        let mut v = vec![2.0; 6];
        v.extend([3.0; 6]);
        v.extend([2.0; 6]);
        let t = straight(&v, 10.0);
        let params = SpikeParams {
            window_sizes_m: vec![50.0],
            background: Background::Fixed(1.0),
            ..SpikeParams::default()
        };
        let s = detect_spikes(&t, 0, &params, &region()).unwrap();
        assert_eq!(s.len(), 1);
        let s = &s[0];
        assert_eq!((s.start, s.end, s.left_start, s.right_end), (6, 11, 0, 17));
        assert_eq!((s.level, s.left_level, s.right_level), (3.0, 2.0, 2.0));
        assert!(replay_spike(&t, s, &params, &region()));
        // Just below the boundary the segment fails.
        let mut v2 = v.clone();
        v2[6..12].iter_mut().for_each(|x| *x = 2.999);
        let t2 = straight(&v2, 10.0);
        assert!(detect_spikes(&t2, 0, &params, &region()).unwrap().is_empty());
    }

    #[test]
    fn missing_values_do_not_count() {
        let mut t = straight(&[1.0; 40], 10.0);
        for p in &mut t.points[15..21] {
            p.concentrations[0] = Some(5.0);
        }
        let params = SpikeParams {
            window_sizes_m: vec![50.0],
            ..SpikeParams::default()
        };
        assert_eq!(detect_spikes(&t, 0, &params, &region()).unwrap().len(), 1);
        // Knock out every other elevated value: no window keeps 5 valid
        // values and an elevated median at once.
        for i in [16, 18, 20] {
            t.points[i].concentrations[0] = None;
        }
        assert!(detect_spikes(&t, 0, &params, &region()).unwrap().is_empty());
    }

    #[test]
    fn no_values_means_no_background() {
        let mut t = straight(&[1.0; 10], 10.0);
        t.points.iter_mut().for_each(|p| p.concentrations[0] = None);
        assert_eq!(daily_background(&t.points, 0), None);
        assert!(detect_spikes(&t, 0, &SpikeParams::default(), &region())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn windows_do_not_cross_segments() {
        let mut v = vec![1.0; 12];
        v.extend([4.0; 6]);
        v.extend([1.0; 12]);
        let mut t = straight(&v, 10.0);
        let params = SpikeParams {
            window_sizes_m: vec![50.0],
            ..SpikeParams::default()
        };
        assert_eq!(detect_spikes(&t, 0, &params, &region()).unwrap().len(), 1);
        t.segments = vec![0..15, 15..30];
        assert!(detect_spikes(&t, 0, &params, &region()).unwrap().is_empty());
    }

    #[test]
    fn invalid_params() {
        let bad = SpikeParams {
            window_sizes_m: vec![60.0, 50.0],
            ..SpikeParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpikeParams {
            ratio: 0.9,
            ..SpikeParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
