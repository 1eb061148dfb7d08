//! Parsing, validation and per-car, per-day organization of raw mobile
//! sensing observations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridIndex, Region};
use crate::stats::ecdf;

pub const REASON_FIELD_COUNT: &str = "wrong field count";
pub const REASON_CAR_ID: &str = "missing car id";
pub const REASON_TIMESTAMP: &str = "unparseable timestamp";
pub const REASON_COORD_NUMERIC: &str = "non-numeric coordinate";
pub const REASON_COORD_RANGE: &str = "coordinate out of range";
pub const REASON_CONC_NUMERIC: &str = "non-numeric concentration";
pub const REASON_CONC_NEGATIVE: &str = "negative concentration";
pub const REASON_UTF8: &str = "invalid utf-8";
pub const REASON_OUTSIDE_REGION: &str = "outside region";

/// Default gap that splits a day trajectory into separate segments.
pub const DEFAULT_MAX_GAP_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantSchema {
    pub names: Vec<String>,
    pub units: Vec<String>,
}

impl PollutantSchema {
    pub fn new(names: Vec<String>, units: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("at least one pollutant is required".into()));
        }
        if units.len() != names.len() {
            return Err(Error::Schema(format!(
                "{} pollutants but {} units",
                names.len(),
                units.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::Schema("empty pollutant name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate pollutant `{n}`")));
            }
        }
        Ok(Self { names, units })
    }

    /// Black carbon, nitric oxide and nitrogen dioxide.
    pub fn default_bc_no_no2() -> Self {
        Self::new(
            vec!["BC".into(), "NO".into(), "NO2".into()],
            vec!["ug/m3".into(), "ppb".into(), "ppb".into()],
        )
        .expect("static schema is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["car_id", "timestamp", "lat", "lon"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.names.iter().cloned());
        h
    }
}

/// One timestamped, geolocated multi-pollutant reading from one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub car_id: Arc<str>,
    /// Milliseconds since the Unix epoch, UTC.
    pub time_ms: i64,
    pub lat: f64,
    pub lon: f64,
    /// One entry per schema pollutant; `None` marks a missing channel.
    pub concentrations: Vec<Option<f64>>,
}

impl ObservationRecord {
    fn local_seconds(&self, utc_offset_minutes: i32) -> i64 {
        self.time_ms.div_euclid(1000) + utc_offset_minutes as i64 * 60
    }

    /// Local calendar day as days since 1970-01-01.
    pub fn local_day(&self, utc_offset_minutes: i32) -> i32 {
        self.local_seconds(utc_offset_minutes).div_euclid(86_400) as i32
    }

    /// Local hour of day in `0..24`.
    pub fn local_hour(&self, utc_offset_minutes: i32) -> u8 {
        (self.local_seconds(utc_offset_minutes).rem_euclid(86_400) / 3_600) as u8
    }

    pub fn value(&self, pollutant: usize) -> Option<f64> {
        self.concentrations.get(pollutant).copied().flatten()
    }
}

pub fn day_to_date(day: i32) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt(day + 719_163).expect("day within chrono range")
}

pub fn format_timestamp(time_ms: i64) -> String {
    let dt = DateTime::<Utc>::from_timestamp_millis(time_ms).expect("timestamp within range");
    if time_ms.rem_euclid(1000) == 0 {
        dt.to_rfc3339_opts(SecondsFormat::Secs, true)
    } else {
        dt.to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

/// Counts of rejected rows per reason. Accepted plus rejected always equals
/// the number of data rows read.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rows: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
    /// Rows sharing a car and timestamp with an earlier row. They are kept.
    pub duplicate_timestamps: usize,
}

impl RejectionReport {
    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_insert(0) += 1;
    }
}

fn parse_row(
    fields: &csv::StringRecord,
    q: usize,
    cars: &mut HashMap<String, Arc<str>>,
) -> std::result::Result<ObservationRecord, &'static str> {
    if fields.len() != 4 + q {
        return Err(REASON_FIELD_COUNT);
    }
    let car = fields[0].trim();
    if car.is_empty() {
        return Err(REASON_CAR_ID);
    }
    let time_ms = DateTime::parse_from_rfc3339(fields[1].trim())
        .map_err(|_| REASON_TIMESTAMP)?
        .timestamp_millis();
    let coord = |s: &str| -> std::result::Result<f64, &'static str> {
        let v: f64 = s.trim().parse().map_err(|_| REASON_COORD_NUMERIC)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(REASON_COORD_NUMERIC)
        }
    };
    let lat = coord(&fields[2])?;
    let lon = coord(&fields[3])?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(REASON_COORD_RANGE);
    }
    let mut concentrations = Vec::with_capacity(q);
    for f in fields.iter().skip(4) {
        let f = f.trim();
        if f.is_empty() {
            concentrations.push(None);
            continue;
        }
        let v: f64 = f.parse().map_err(|_| REASON_CONC_NUMERIC)?;
        if !v.is_finite() {
            return Err(REASON_CONC_NUMERIC);
        }
        if v < 0.0 {
            return Err(REASON_CONC_NEGATIVE);
        }
        concentrations.push(Some(v));
    }
    let car_id = match cars.get(car) {
        Some(c) => c.clone(),
        None => {
            let c: Arc<str> = Arc::from(car);
            cars.insert(car.to_string(), c.clone());
            c
        }
    };
    Ok(ObservationRecord {
        car_id,
        time_ms,
        lat,
        lon,
        concentrations,
    })
}

/// Parses the observation CSV. Invalid rows are counted per reason.
pub fn parse_observations<R: Read>(
    source: R,
    schema: &PollutantSchema,
) -> Result<(Vec<ObservationRecord>, RejectionReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let expected = schema.header();
    if header != expected {
        return Err(Error::Schema(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            header.join(",")
        )));
    }
    let q = schema.len();
    let mut records = Vec::new();
    let mut report = RejectionReport::default();
    let mut cars: HashMap<String, Arc<str>> = HashMap::new();
    let mut seen: HashSet<(Arc<str>, i64)> = HashSet::new();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                report.rows += 1;
                match parse_row(&row, q, &mut cars) {
                    Ok(rec) => {
                        if !seen.insert((rec.car_id.clone(), rec.time_ms)) {
                            report.duplicate_timestamps += 1;
                        }
                        records.push(rec);
                    }
                    Err(reason) => report.reject(reason),
                }
            }
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                report.rows += 1;
                report.reject(REASON_UTF8);
            }
            Err(e) => return Err(e.into()),
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

pub fn read_observations(
    path: &Path,
    schema: &PollutantSchema,
) -> Result<(Vec<ObservationRecord>, RejectionReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_observations(std::io::BufReader::new(file), schema)
}

/// Moves records outside the region extent into the report.
pub fn filter_region(
    records: Vec<ObservationRecord>,
    region: &Region,
    report: &mut RejectionReport,
) -> Vec<ObservationRecord> {
    let before = records.len();
    let kept: Vec<ObservationRecord> = records
        .into_iter()
        .filter(|r| region.contains(r.lat, r.lon))
        .collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        *report
            .rejected
            .entry(REASON_OUTSIDE_REGION.to_string())
            .or_insert(0) += dropped;
        report.accepted -= dropped;
    }
    kept
}

/// Writes records in the ingest CSV format.
pub fn write_observations<W: Write>(
    sink: W,
    schema: &PollutantSchema,
    records: &[ObservationRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(schema.header())?;
    let mut fields: Vec<String> = Vec::with_capacity(4 + schema.len());
    for r in records {
        fields.clear();
        fields.push(r.car_id.to_string());
        fields.push(format_timestamp(r.time_ms));
        fields.push(format!("{:.8}", r.lat));
        fields.push(format!("{:.8}", r.lon));
        for c in &r.concentrations {
            fields.push(c.map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// A car's time-ordered observations on one local calendar day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTrajectory {
    pub car_id: Arc<str>,
    /// Local day as days since 1970-01-01.
    pub day: i32,
    pub points: Vec<ObservationRecord>,
    /// Index ranges of gap-free segments; windows never cross them.
    pub segments: Vec<Range<usize>>,
}

impl DayTrajectory {
    pub fn date(&self) -> NaiveDate {
        day_to_date(self.day)
    }
}

/// Partitions records by car and local date, orders them by time and splits
/// each day wherever consecutive points are more than `max_gap_s` apart.
pub fn build_trajectories(
    records: &[ObservationRecord],
    utc_offset_minutes: i32,
    max_gap_s: f64,
) -> Vec<DayTrajectory> {
    let mut groups: BTreeMap<(Arc<str>, i32), Vec<ObservationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.car_id.clone(), r.local_day(utc_offset_minutes)))
            .or_default()
            .push(r.clone());
    }
    let max_gap_ms = (max_gap_s * 1000.0).round() as i64;
    groups
        .into_iter()
        .map(|((car_id, day), mut points)| {
            // Stable: duplicates stay in arrival order.
            points.sort_by_key(|p| p.time_ms);
            let mut segments = Vec::new();
            let mut start = 0;
            for i in 1..points.len() {
                if points[i].time_ms - points[i - 1].time_ms > max_gap_ms {
                    segments.push(start..i);
                    start = i;
                }
            }
            if !points.is_empty() {
                segments.push(start..points.len());
            }
            DayTrajectory {
                car_id,
                day,
                points,
                segments,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSampling {
    pub n_observations: u64,
    pub n_unique_hours: u32,
}

/// Per-cell sampling intensity and its empirical distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    pub cells: BTreeMap<GridIndex, CellSampling>,
    pub observations_cdf: Vec<(u64, f64)>,
    pub unique_hours_cdf: Vec<(u64, f64)>,
}

/// Tabulates repeated observations and distinct local hours per cell.
/// Records outside the region are ignored.
pub fn sampling_profile(records: &[ObservationRecord], region: &Region) -> SamplingProfile {
    let mut acc: BTreeMap<GridIndex, (u64, u32)> = BTreeMap::new();
    for r in records {
        let Ok(cell) = region.cell_of(r.lat, r.lon) else {
            continue;
        };
        let e = acc.entry(cell).or_insert((0, 0));
        e.0 += 1;
        e.1 |= 1 << r.local_hour(region.utc_offset_minutes);
    }
    let cells: BTreeMap<GridIndex, CellSampling> = acc
        .into_iter()
        .map(|(c, (n, mask))| {
            (
                c,
                CellSampling {
                    n_observations: n,
                    n_unique_hours: mask.count_ones(),
                },
            )
        })
        .collect();
    let obs: Vec<u64> = cells.values().map(|c| c.n_observations).collect();
    let hours: Vec<u64> = cells.values().map(|c| c.n_unique_hours as u64).collect();
    SamplingProfile {
        observations_cdf: ecdf(&obs),
        unique_hours_cdf: ecdf(&hours),
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn schema() -> PollutantSchema {
        PollutantSchema::default_bc_no_no2()
    }

    const HEADER: &str = "car_id,timestamp,lat,lon,BC,NO,NO2\n";

    #[test]
    fn empty_file_with_header() {
        let (recs, rep) = parse_observations(HEADER.as_bytes(), &schema()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep, RejectionReport::default());
    }

    #[test]
    fn header_mismatch_is_schema_error() {
        let src = "car_id,timestamp,lat,lon,BC,NO2,NO\n";
        assert!(matches!(
            parse_observations(src.as_bytes(), &schema()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn latitude_out_of_range() {
        let src = format!("{HEADER}car1,2020-01-01T08:00:00Z,91.0,-122.0,1,2,3\n");
        let (recs, rep) = parse_observations(src.as_bytes(), &schema()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep.rejected.get(REASON_COORD_RANGE), Some(&1));
    }

    #[test]
    fn missing_values_and_duplicates() {
        let src = format!(
            "{HEADER}a,2020-01-01T08:00:00Z,37.8,-122.2,1,,3\na,2020-01-01T08:00:00Z,37.8,-122.2,1,2,3\n"
        );
        let (recs, rep) = parse_observations(src.as_bytes(), &schema()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].concentrations, vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(rep.duplicate_timestamps, 1);
    }

    /// Independent classifier for the corrupted-row oracle.
    fn oracle_reason(line: &str) -> Option<&'static str> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Some(REASON_FIELD_COUNT);
        }
        if f[0].is_empty() {
            return Some(REASON_CAR_ID);
        }
        if !f[1].starts_with("2020-") || f[1].len() != 20 {
            return Some(REASON_TIMESTAMP);
        }
        let lat: f64 = match f[2].parse() {
            Ok(v) => v,
            Err(_) => return Some(REASON_COORD_NUMERIC),
        };
        if lat.abs() > 90.0 {
            return Some(REASON_COORD_RANGE);
        }
        for c in &f[4..] {
            if c.is_empty() {
                continue;
            }
            match c.parse::<f64>() {
                Err(_) => return Some(REASON_CONC_NUMERIC),
                Ok(v) if v < 0.0 => return Some(REASON_CONC_NEGATIVE),
                _ => {}
            }
        }
        None
    }

    #[test]
    fn corrupted_rows_match_line_classifier() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut corrupt: Vec<usize> = Vec::new();
        while corrupt.len() < 37 {
            let i = rng.random_range(0..1000);
            if !corrupt.contains(&i) {
                corrupt.push(i);
            }
        }
        let mut lines = Vec::new();
        for i in 0..1000 {
            let ts = format!("2020-03-02T{:02}:{:02}:{:02}Z", 8 + i / 3600, (i / 60) % 60, i % 60);
            let mut line = format!("car{},{ts},37.81,-122.25,1.5,20,30", i % 3);
            if corrupt.contains(&i) {
                line = match i % 6 {
                    0 => format!("car1,{ts},95.0,-122.25,1,2,3"),
                    1 => format!("car1,not-a-time,37.8,-122.25,1,2,3"),
                    2 => format!("car1,{ts},37.8,-122.25,-1,2,3"),
                    3 => format!("car1,{ts},37.8,-122.25,abc,2,3"),
                    4 => format!("car1,{ts},37.8,-122.25,1,2"),
                    _ => format!(",{ts},37.8,-122.25,1,2,3"),
                };
            }
            lines.push(line);
        }
        let src = format!("{HEADER}{}\n", lines.join("\n"));
        let (recs, rep) = parse_observations(src.as_bytes(), &schema()).unwrap();
        let mut expected: BTreeMap<String, usize> = BTreeMap::new();
        for l in &lines {
            if let Some(r) = oracle_reason(l) {
                *expected.entry(r.to_string()).or_insert(0) += 1;
            }
        }
        assert_eq!(recs.len(), 963);
        assert_eq!(rep.rejected, expected);
        assert_eq!(rep.accepted + rep.total_rejected(), rep.rows);
    }

    fn rec(car: &str, t_s: i64) -> ObservationRecord {
        ObservationRecord {
            car_id: Arc::from(car),
            time_ms: t_s * 1000,
            lat: 37.81,
            lon: -122.25,
            concentrations: vec![Some(1.0)],
        }
    }

    #[test]
    fn one_car_one_day() {
        let base = 1_583_136_000; // 2020-03-02T08:00:00Z
        let recs: Vec<_> = (0..100).map(|i| rec("a", base + i)).collect();
        let t = build_trajectories(&recs, 0, 300.0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].points.len(), 100);
        assert_eq!(t[0].segments, vec![0..100]);
        assert_eq!(t[0].date(), NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
    }

    #[test]
    fn two_dates_two_trajectories() {
        let base = 1_583_136_000;
        let recs = vec![rec("a", base), rec("a", base + 86_400)];
        assert_eq!(build_trajectories(&recs, 0, 300.0).len(), 2);
    }

    #[test]
    fn local_offset_moves_day_boundary() {
        // 2020-03-03T05:00Z is still 2020-03-02 at UTC-8.
        let r = rec("a", 1_583_211_600);
        assert_eq!(day_to_date(r.local_day(-480)), NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
        assert_eq!(r.local_hour(-480), 21);
    }

    #[test]
    fn gap_split_matches_linear_scan() {
        let base = 1_583_136_000;
        let mut times: Vec<i64> = (0..600).map(|i| base + i).collect();
        times.extend((0..600).map(|i| base + 600 + 600 + i));
        // Shuffle arrival order.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut recs: Vec<_> = times.iter().map(|&t| rec("a", t)).collect();
        for i in (1..recs.len()).rev() {
            let j = rng.random_range(0..=i);
            recs.swap(i, j);
        }
        let t = build_trajectories(&recs, 0, 300.0);
        assert_eq!(t.len(), 1);
        // Oracle: scan sorted times for jumps above the limit.
        let mut sorted = times.clone();
        sorted.sort();
        let cuts: Vec<usize> = (1..sorted.len())
            .filter(|&i| sorted[i] - sorted[i - 1] > 300)
            .collect();
        assert_eq!(cuts, vec![600]);
        assert_eq!(t[0].segments, vec![0..600, 600..1200]);
    }

    #[test]
    fn sampling_profile_basics() {
        let region = Region::new("r", 37.8, -122.3, 37.9, -122.2, 50.0).unwrap();
        let one = vec![rec("a", 1_583_136_000)];
        let p = sampling_profile(&one, &region);
        assert_eq!(p.cells.len(), 1);
        let c = p.cells.values().next().unwrap();
        assert_eq!((c.n_observations, c.n_unique_hours), (1, 1));

        let same_hour: Vec<_> = (0..50)
            .map(|i| {
                let mut r = rec("a", 1_583_136_000 + i * 60);
                r.lat = 37.8 + 0.0005 * i as f64;
                r
            })
            .collect();
        let p = sampling_profile(&same_hour, &region);
        assert!(p.cells.values().all(|c| c.n_unique_hours == 1));
    }

    #[test]
    fn sampling_profile_matches_flat_tabulation() {
        let region = Region::new("r", 37.8, -122.3, 37.82, -122.28, 50.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut recs = Vec::new();
        for _ in 0..5000 {
            // Skewed positions: most samples near the origin.
            let u: f64 = rng.random::<f64>().powi(4);
            let v: f64 = rng.random::<f64>().powi(2);
            let mut r = rec("a", 1_583_136_000 + rng.random_range(0..36_000));
            r.lat = 37.8 + 0.02 * u;
            r.lon = -122.3 + 0.02 * v;
            recs.push(r);
        }
        let p = sampling_profile(&recs, &region);
        // Oracle: flat hash over (cell, hour) pairs.
        let mut counts: HashMap<GridIndex, u64> = HashMap::new();
        let mut pairs: HashSet<(GridIndex, u8)> = HashSet::new();
        for r in &recs {
            let c = region.cell_of(r.lat, r.lon).unwrap();
            *counts.entry(c).or_default() += 1;
            pairs.insert((c, r.local_hour(0)));
        }
        let mut oc: Vec<u64> = counts.values().copied().collect();
        let mut hc: Vec<u64> = counts
            .keys()
            .map(|c| pairs.iter().filter(|(pc, _)| pc == c).count() as u64)
            .collect();
        oc.sort();
        hc.sort();
        assert_eq!(p.observations_cdf, ecdf(&oc));
        assert_eq!(p.unique_hours_cdf, ecdf(&hc));
        // Row-order invariance.
        recs.reverse();
        assert_eq!(sampling_profile(&recs, &region), p);
    }
}
