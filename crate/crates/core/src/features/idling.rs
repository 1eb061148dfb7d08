//! Vehicle idling statistics on a grid of boxes, looked up at cell centers.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Statistic columns after the four box bounds, in file and feature order.
pub const IDLING_STATS: [&str; 17] = [
    "cumulative_s",
    "median_s",
    "mean_s",
    "frac_car",
    "frac_mpv",
    "frac_ldt",
    "frac_mdt",
    "frac_hdt",
    "frac_other",
    "mean_car_s",
    "mean_mpv_s",
    "mean_ldt_s",
    "mean_mdt_s",
    "mean_hdt_s",
    "mean_other_s",
    "frac_gas",
    "frac_diesel",
];

const VEHICLE_FRACTIONS: std::ops::Range<usize> = 3..9;
const FUEL_FRACTIONS: std::ops::Range<usize> = 15..17;

#[derive(Debug, Clone, PartialEq)]
pub struct IdlingCellRecord {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub stats: [f64; 17],
}

impl IdlingCellRecord {
    /// Half-open containment, `[min, max)` on both axes.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat < self.lat_max && lon >= self.lon_min && lon < self.lon_max
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(Error::Schema("idling box has empty extent".into()));
        }
        if self.stats.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Schema("idling statistics must be finite and >= 0".into()));
        }
        for group in [VEHICLE_FRACTIONS, FUEL_FRACTIONS] {
            let fr = &self.stats[group];
            if fr.iter().any(|v| *v > 1.0) {
                return Err(Error::Schema("idling fraction above 1".into()));
            }
            let s: f64 = fr.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Schema(format!("idling fractions sum to {s}, not 1")));
            }
        }
        Ok(())
    }
}

pub fn parse_idling<R: Read>(src: R) -> Result<Vec<IdlingCellRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let headers = rdr.headers()?.clone();
    let expected: Vec<&str> = ["lat_min", "lat_max", "lon_min", "lon_max"]
        .into_iter()
        .chain(IDLING_STATS)
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "idling header must be `{}`",
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("idling row {}: {e}", line + 2)))?;
        let mut stats = [0.0; 17];
        stats.copy_from_slice(&vals[4..]);
        let r = IdlingCellRecord {
            lat_min: vals[0],
            lat_max: vals[1],
            lon_min: vals[2],
            lon_max: vals[3],
            stats,
        };
        r.validate()
            .map_err(|e| Error::Schema(format!("idling row {}: {e}", line + 2)))?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_idling(path: &Path) -> Result<Vec<IdlingCellRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_idling(std::io::BufReader::new(f))
}

pub fn write_idling<W: Write>(sink: W, records: &[IdlingCellRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let header: Vec<&str> = ["lat_min", "lat_max", "lon_min", "lon_max"]
        .into_iter()
        .chain(IDLING_STATS)
        .collect();
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            format!("{:.8}", r.lat_min),
            format!("{:.8}", r.lat_max),
            format!("{:.8}", r.lon_min),
            format!("{:.8}", r.lon_max),
        ];
        row.extend(r.stats.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<idling sink>", e))?;
    Ok(())
}

/// Bucketed box index.
pub struct IdlingIndex {
    records: Vec<IdlingCellRecord>,
    bucket_deg: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl IdlingIndex {
    pub fn new(records: Vec<IdlingCellRecord>) -> Self {
        let mut sizes: Vec<f64> = records
            .iter()
            .map(|r| (r.lat_max - r.lat_min).max(r.lon_max - r.lon_min))
            .collect();
        let bucket_deg = crate::stats::lower_median(&mut sizes).unwrap_or(0.01).max(1e-6);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let (a0, a1) = ((r.lat_min / bucket_deg).floor() as i64, (r.lat_max / bucket_deg).floor() as i64);
            let (b0, b1) = ((r.lon_min / bucket_deg).floor() as i64, (r.lon_max / bucket_deg).floor() as i64);
            for a in a0..=a1 {
                for b in b0..=b1 {
                    buckets.entry((a, b)).or_default().push(i);
                }
            }
        }
        Self {
            records,
            bucket_deg,
            buckets,
        }
    }

    pub fn records(&self) -> &[IdlingCellRecord] {
        &self.records
    }

    /// The record whose box contains the point, if any.
    pub fn lookup(&self, lat: f64, lon: f64) -> Result<Option<&IdlingCellRecord>> {
        let key = ((lat / self.bucket_deg).floor() as i64, (lon / self.bucket_deg).floor() as i64);
        let Some(ids) = self.buckets.get(&key) else {
            return Ok(None);
        };
        let hits: Vec<usize> = ids.iter().copied().filter(|&i| self.records[i].contains(lat, lon)).collect();
        match hits.len() {
            0 => Ok(None),
            1 => Ok(Some(&self.records[hits[0]])),
            count => Err(Error::AmbiguousCoverage { lat, lon, count }),
        }
    }

    pub fn names() -> Vec<String> {
        IDLING_STATS
            .iter()
            .map(|s| format!("idle_{s}"))
            .chain(std::iter::once("idle_present".to_string()))
            .collect()
    }

    /// Statistics of the containing box plus a presence flag; all zeros when
    /// no box covers the point.
    pub fn features(&self, lat: f64, lon: f64) -> Result<Vec<f64>> {
        Ok(match self.lookup(lat, lon)? {
            Some(r) => r.stats.iter().copied().chain(std::iter::once(1.0)).collect(),
            None => vec![0.0; IDLING_STATS.len() + 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(lat0: f64, lon0: f64, size: f64, cumulative: f64) -> IdlingCellRecord {
        let mut stats = [0.0; 17];
        stats[0] = cumulative;
        stats[1] = 30.0;
        stats[2] = 40.0;
        stats[3] = 0.5;
        stats[7] = 0.5;
        stats[15] = 0.25;
        stats[16] = 0.75;
        IdlingCellRecord {
            lat_min: lat0,
            lat_max: lat0 + size,
            lon_min: lon0,
            lon_max: lon0 + size,
            stats,
        }
    }

    #[test]
    fn verbatim_and_absent() {
        let idx = IdlingIndex::new(vec![record(37.0, -122.0, 0.001, 900.0)]);
        let f = idx.features(37.0005, -121.9995).unwrap();
        assert_eq!(f.len(), 18);
        assert_eq!(f[0], 900.0);
        assert_eq!(f[17], 1.0);
        let f = idx.features(37.5, -121.9995).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
        // Upper edges are open.
        assert!(idx.lookup(37.001, -121.9995).unwrap().is_none());
    }

    #[test]
    fn overlap_is_ambiguous() {
        let idx = IdlingIndex::new(vec![record(37.0, -122.0, 0.002, 1.0), record(37.001, -121.999, 0.002, 2.0)]);
        assert!(matches!(
            idx.lookup(37.0015, -121.9985),
            Err(Error::AmbiguousCoverage { count: 2, .. })
        ));
        assert!(idx.lookup(37.0005, -121.9995).unwrap().is_some());
    }

    #[test]
    fn lookup_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let size = 0.0014;
        let mut recs = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                if rng.random_bool(0.7) {
                    recs.push(record(37.0 + i as f64 * size, -122.0 + j as f64 * size, size, (i * 20 + j) as f64));
                }
            }
        }
        let idx = IdlingIndex::new(recs.clone());
        for _ in 0..2000 {
            let lat = rng.random_range(36.99..37.03);
            let lon = rng.random_range(-122.01..-121.97);
            let scan: Vec<&IdlingCellRecord> = recs.iter().filter(|r| r.contains(lat, lon)).collect();
            let got = idx.lookup(lat, lon).unwrap();
            assert_eq!(got, scan.first().copied());
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let mut thirds = record(37.0, -121.99, 0.001, 7.0);
        thirds.stats[3..9].copy_from_slice(&[1.0 / 3.0, 1.0 / 7.0, 1.0 / 11.0, 0.0, 0.0, 0.0]);
        thirds.stats[8] = 1.0 - thirds.stats[3..8].iter().sum::<f64>();
        let recs = vec![record(37.0, -122.0, 0.001, 12.5), thirds];
        let mut buf = Vec::new();
        write_idling(&mut buf, &recs).unwrap();
        let back = parse_idling(buf.as_slice()).unwrap();
        assert_eq!(back[0].stats, recs[0].stats);
        assert_eq!(back[1].stats, recs[1].stats);
        let bad = String::from_utf8(buf).unwrap().replace(",0.75\n", ",0.9\n");
        assert!(parse_idling(bad.as_bytes()).is_err());
    }
}
