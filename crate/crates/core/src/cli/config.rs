//! Run configuration: a flat `key = value` file.
//!
//! Grammar: one assignment per line, `#` starts a comment, blank lines are
//! ignored, keys are case-sensitive and may appear once. Lists are comma
//! separated. Relative paths resolve against the directory of the file.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::BackgroundReference;
use crate::features::{FeatureConfig, FeatureGroup};
use crate::grid::Region;
use crate::hotspot::{ClusterParams, CombineMode, DetectorConfig, HourSet};
use crate::ingest::{PollutantSchema, DEFAULT_MAX_GAP_S};
use crate::inference::{MmdConfig, MmdEstimator, Strategy, TrainConfig};
use crate::spike::{Background, SpikeParams};

/// Every accepted key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed (default 0)"),
    ("input", "observation CSV"),
    ("out_dir", "output directory (default `out`)"),
    ("region.name", "region label"),
    ("region.origin_lat", "south edge, degrees"),
    ("region.origin_lon", "west edge, degrees"),
    ("region.max_lat", "north edge, degrees"),
    ("region.max_lon", "east edge, degrees"),
    ("region.cell_m", "grid cell size in meters (default 50)"),
    ("region.utc_offset_minutes", "local time offset (default 0)"),
    ("pollutants", "pollutant column names (default BC,NO,NO2)"),
    ("units", "pollutant units, same length as pollutants"),
    ("max_gap_s", "gap that splits a trajectory (default 300)"),
    ("spike.ratio", "spike ratio r (default 1.5)"),
    ("spike.windows_m", "window sizes in meters (default 50,60,...,100)"),
    ("spike.min_points", "valid points per window (default 5)"),
    ("spike.tolerance_m", "window length tolerance (default 5)"),
    ("spike.background", "`daily_median` or a fixed level"),
    ("daytime", "daytime hours as `first-last` (default 8-17)"),
    ("min_S_g", "minimum spikes per seed cell (default 10)"),
    ("b", "mean shift bandwidth in meters (default 100)"),
    ("cluster.max_iter", "mean shift iterations (default 200)"),
    ("cluster.tol_m", "mean shift stopping distance (default 0.01)"),
    ("cluster.merge_radius_m", "mode merge distance (default b/2)"),
    ("cluster.min_cells", "cells per retained cluster (default 2)"),
    ("cluster.combine", "`joint` or `per_pollutant`"),
    ("eval.reference", "`campaign_median` or `mean_of_daily_medians`"),
    ("eval.split_seed", "seed of the driving-day split (default seed)"),
    ("features.pois", "POI CSV"),
    ("features.landuse", "land use GeoJSON"),
    ("features.idling", "idling CSV"),
    ("features.elevation", "elevation ESRI ASCII grid"),
    ("features.poi_radius_m", "POI search radius (default 100)"),
    ("features.landuse_cap_m", "land use distance cap (default 2000)"),
    ("features.elevation_radius_m", "elevation radius (default 100)"),
    ("features.poi_keywords", "POI name keywords"),
    ("infer.features", "labeled feature CSV to train on (default <out_dir>/features.csv)"),
    ("infer.target", "feature CSV of the transfer target"),
    ("infer.groups", "feature groups to use (default all)"),
    ("infer.strategy", "`none`, `weight-balance` or `resample`"),
    ("infer.lambda", "L2 strength (default 1)"),
    ("infer.oversample", "minority / majority after SMOTE (default 0.5)"),
    ("infer.undersample", "minority / majority after undersampling (default 1)"),
    ("infer.smote_k", "SMOTE neighbors (default 5)"),
    ("infer.folds", "cross-validation folds (default 5)"),
    ("shift.widths", "kernel parameters (default 0.001,0.01,0.1,1)"),
    ("shift.alpha", "test level (default 0.05)"),
    ("shift.permutations", "permutation replicates (default 1000)"),
    ("shift.estimator", "`unbiased` or `literal`"),
    ("coral.lambda", "CORAL regularization (default 1)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePaths {
    pub pois: Option<PathBuf>,
    pub landuse: Option<PathBuf>,
    pub idling: Option<PathBuf>,
    pub elevation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub region: Option<Region>,
    pub schema: PollutantSchema,
    pub max_gap_s: f64,
    pub detector: DetectorConfig,
    pub reference: BackgroundReference,
    pub split_seed: u64,
    pub feature_paths: FeaturePaths,
    pub features: FeatureConfig,
    pub infer_features: Option<PathBuf>,
    pub infer_target: Option<PathBuf>,
    pub groups: Vec<FeatureGroup>,
    pub train: TrainConfig,
    pub folds: usize,
    pub mmd: MmdConfig,
    pub coral_lambda: f64,
}

/// Parses `key = value` lines into a map, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        check_key(k)?;
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: `{k}` set twice", n + 1)));
        }
    }
    Ok(out)
}

fn check_key(k: &str) -> Result<()> {
    if KEYS.iter().any(|(name, _)| *name == k) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key `{k}`")))
    }
}

/// Applies `key=value` overrides on top of parsed pairs.
pub fn apply_overrides(pairs: &mut BTreeMap<String, String>, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let k = k.trim();
        check_key(k)?;
        pairs.insert(k.to_string(), v.trim().to_string());
    }
    Ok(())
}

struct Reader<'a> {
    pairs: &'a BTreeMap<String, String>,
    base: &'a Path,
}

impl Reader<'_> {
    fn raw(&self, k: &str) -> Option<&str> {
        self.pairs.get(k).map(String::as_str)
    }

    fn num<T: std::str::FromStr>(&self, k: &str, default: T) -> Result<T> {
        match self.raw(k) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`"))),
        }
    }

    fn opt_num(&self, k: &str) -> Result<Option<f64>> {
        self.raw(k).map(|_| self.num(k, 0.0)).transpose()
    }

    fn list(&self, k: &str) -> Option<Vec<String>> {
        self.raw(k)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    fn num_list(&self, k: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.list(k) {
            None => Ok(default.to_vec()),
            Some(items) => items
                .iter()
                .map(|s| s.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{s}`"))))
                .collect(),
        }
    }

    fn path(&self, k: &str) -> Option<PathBuf> {
        self.raw(k).map(|v| self.base.join(v))
    }

    /// A path that must exist when set.
    fn existing(&self, k: &str) -> Result<Option<PathBuf>> {
        match self.path(k) {
            Some(p) if !p.exists() => Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("`{k}` does not exist")),
            )),
            other => Ok(other),
        }
    }
}

pub fn parse_daytime(v: &str) -> Result<HourSet> {
    let (a, b) = v
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("daytime `{v}` is not `first-last`")))?;
    let parse = |s: &str| s.trim().parse::<u8>().map_err(|_| Error::Config(format!("bad hour `{s}`")));
    HourSet::range(parse(a)?, parse(b)?).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfig {
    /// Builds the configuration from pairs. `base` anchors relative paths.
    pub fn from_pairs(pairs: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let r = Reader { pairs, base };
        let seed: u64 = r.num("seed", 0)?;

        let region_keys = ["region.origin_lat", "region.origin_lon", "region.max_lat", "region.max_lon"];
        let region = if region_keys.iter().any(|k| r.raw(k).is_some()) {
            let get = |k: &str| -> Result<f64> {
                r.opt_num(k)?
                    .ok_or_else(|| Error::Config(format!("`{k}` is required when a region is given")))
            };
            let region = Region::new(
                r.raw("region.name").unwrap_or("region"),
                get("region.origin_lat")?,
                get("region.origin_lon")?,
                get("region.max_lat")?,
                get("region.max_lon")?,
                r.num("region.cell_m", 50.0)?,
            )
            .map_err(|e| Error::Config(e.to_string()))?
            .with_utc_offset_minutes(r.num("region.utc_offset_minutes", 0)?);
            Some(region)
        } else {
            None
        };

        let schema = match r.list("pollutants") {
            None => PollutantSchema::default_bc_no_no2(),
            Some(names) => {
                let units = r.list("units").unwrap_or_else(|| vec![String::new(); names.len()]);
                PollutantSchema::new(names, units).map_err(|e| Error::Config(e.to_string()))?
            }
        };

        let defaults = SpikeParams::default();
        let background = match r.raw("spike.background") {
            None | Some("daily_median") => Background::DailyMedian,
            Some(v) => Background::Fixed(
                v.parse()
                    .map_err(|_| Error::Config(format!("`spike.background`: cannot parse `{v}`")))?,
            ),
        };
        let spike = SpikeParams {
            ratio: r.num("spike.ratio", defaults.ratio)?,
            window_sizes_m: r.num_list("spike.windows_m", &defaults.window_sizes_m)?,
            background,
            min_points_per_window: r.num("spike.min_points", defaults.min_points_per_window)?,
            tolerance_m: r.num("spike.tolerance_m", defaults.tolerance_m)?,
        };
        let cd = ClusterParams::default();
        let cluster = ClusterParams {
            min_spike_count: r.num("min_S_g", cd.min_spike_count)?,
            bandwidth_m: r.num("b", cd.bandwidth_m)?,
            max_iter: r.num("cluster.max_iter", cd.max_iter)?,
            shift_tol_m: r.num("cluster.tol_m", cd.shift_tol_m)?,
            merge_radius_m: r.opt_num("cluster.merge_radius_m")?,
            min_cluster_cells: r.num("cluster.min_cells", cd.min_cluster_cells)?,
            combine: match r.raw("cluster.combine") {
                None | Some("joint") => CombineMode::Joint,
                Some("per_pollutant") => CombineMode::PerPollutant,
                Some(v) => return Err(Error::Config(format!("`cluster.combine`: unknown mode `{v}`"))),
            },
        };
        let daytime = match r.raw("daytime") {
            None => HourSet::default(),
            Some(v) => parse_daytime(v)?,
        };
        let detector = DetectorConfig { spike, cluster, daytime };
        detector.spike.validate().map_err(|e| Error::Config(e.to_string()))?;
        detector.cluster.validate().map_err(|e| Error::Config(e.to_string()))?;

        let reference = match r.raw("eval.reference") {
            None | Some("campaign_median") => BackgroundReference::CampaignMedian,
            Some("mean_of_daily_medians") => BackgroundReference::MeanOfDailyMedians,
            Some(v) => return Err(Error::Config(format!("`eval.reference`: unknown `{v}`"))),
        };

        let mut features = FeatureConfig {
            poi_radius_m: r.num("features.poi_radius_m", 100.0)?,
            landuse_cap_m: r.num("features.landuse_cap_m", 2000.0)?,
            elevation_radius_m: r.num("features.elevation_radius_m", 100.0)?,
            ..FeatureConfig::default()
        };
        if let Some(k) = r.list("features.poi_keywords") {
            features.poi_keywords = k;
        }
        features.validate().map_err(|e| Error::Config(e.to_string()))?;

        let groups = match r.list("infer.groups") {
            None => FeatureGroup::ALL.to_vec(),
            Some(g) => g.iter().map(|s| FeatureGroup::parse(s)).collect::<Result<_>>()?,
        };
        let strategy = match Strategy::parse(r.raw("infer.strategy").unwrap_or("none"))? {
            Strategy::Resample { .. } => Strategy::Resample {
                oversample: r.num("infer.oversample", 0.5)?,
                undersample: r.num("infer.undersample", 1.0)?,
            },
            s => s,
        };
        let train = TrainConfig {
            strategy,
            lambda: r.num("infer.lambda", 1.0)?,
            smote_k: r.num("infer.smote_k", 5)?,
            seed,
            ..TrainConfig::default()
        };
        train.validate().map_err(|e| Error::Config(e.to_string()))?;
        let folds: usize = r.num("infer.folds", 5)?;
        if folds < 2 {
            return Err(Error::Config("`infer.folds` must be >= 2".into()));
        }
        let mmd = MmdConfig {
            widths: r.num_list("shift.widths", &crate::inference::mmd::DEFAULT_WIDTHS)?,
            alpha: r.num("shift.alpha", 0.05)?,
            n_permutations: r.num("shift.permutations", 1000)?,
            seed,
            estimator: match r.raw("shift.estimator") {
                None | Some("unbiased") => MmdEstimator::Unbiased,
                Some("literal") => MmdEstimator::Literal,
                Some(v) => return Err(Error::Config(format!("`shift.estimator`: unknown `{v}`"))),
            },
        };

        Ok(RunConfig {
            seed,
            input: r.existing("input")?,
            out_dir: r.path("out_dir").unwrap_or_else(|| base.join("out")),
            region,
            schema,
            max_gap_s: r.num("max_gap_s", DEFAULT_MAX_GAP_S)?,
            detector,
            reference,
            split_seed: r.num("eval.split_seed", seed)?,
            feature_paths: FeaturePaths {
                pois: r.existing("features.pois")?,
                landuse: r.existing("features.landuse")?,
                idling: r.existing("features.idling")?,
                elevation: r.existing("features.elevation")?,
            },
            features,
            infer_features: r.existing("infer.features")?,
            infer_target: r.existing("infer.target")?,
            groups,
            train,
            folds,
            mmd,
            coral_lambda: r.num("coral.lambda", 1.0)?,
        })
    }

    /// Reads a configuration file and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (mut pairs, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse_pairs(&text)?, base)
            }
            None => (BTreeMap::new(), PathBuf::new()),
        };
        apply_overrides(&mut pairs, overrides)?;
        Self::from_pairs(&pairs, &base)
    }

    pub fn require_region(&self) -> Result<&Region> {
        self.region
            .as_ref()
            .ok_or_else(|| Error::Config("the command needs region.* keys".into()))
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("the command needs `input`".into()))
    }
}

/// Renders pairs back into the file grammar, keys in documentation order.
pub fn render(pairs: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, _) in KEYS {
        if let Some(v) = pairs.get(*k) {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let p = parse_pairs("# comment\n\nseed = 7  # trailing\nmin_S_g=12\n").unwrap();
        assert_eq!(p["seed"], "7");
        assert_eq!(p["min_S_g"], "12");
        assert!(parse_pairs("nonsense = 1").is_err());
        assert!(parse_pairs("seed").is_err());
        assert!(parse_pairs("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::load(None, &["b=200".into(), "infer.strategy=resample".into()]).unwrap();
        assert_eq!(c.detector.cluster.bandwidth_m, 200.0);
        assert_eq!(c.detector.cluster.min_spike_count, 10);
        assert_eq!(c.train.strategy, Strategy::DEFAULT_RESAMPLE);
        assert!(c.region.is_none());
        assert!(RunConfig::load(None, &["nope=1".into()]).is_err());
        assert!(RunConfig::load(None, &["b=-1".into()]).is_err());
    }

    #[test]
    fn missing_paths_rejected() {
        let err = RunConfig::load(None, &["input=/definitely/not/here.csv".into()]).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn region_needs_all_edges() {
        assert!(RunConfig::load(None, &["region.origin_lat=37".into()]).is_err());
        let c = RunConfig::load(
            None,
            &[
                "region.origin_lat=37".into(),
                "region.origin_lon=-122".into(),
                "region.max_lat=37.01".into(),
                "region.max_lon=-121.99".into(),
                "daytime=9-16".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.detector.daytime, HourSet::range(9, 16).unwrap());
        assert_eq!(c.require_region().unwrap().cell_size_m, 50.0);
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut seen = std::collections::BTreeSet::new();
        assert!(KEYS.iter().all(|(k, _)| seen.insert(*k)));
    }
}
