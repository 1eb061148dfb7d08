//! Command line front end: subcommands over the library with a run
//! configuration file, atomic output writes and stable exit codes.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{compare_methods, sensitivity_sweep, write_sweep_csv, Method};
use crate::features::elevation::{read_esri_ascii, write_esri_ascii};
use crate::features::idling::{read_idling, write_idling};
use crate::features::landuse::{landuse_geojson, read_landuse};
use crate::features::poi::{read_pois, write_pois};
use crate::features::{build_matrix, read_features_csv, write_features_csv, FeatureGroup, FeatureSources, FeatureTable};
use crate::hotspot::{detect_hotspots, hotspots_geojson, write_grid_stats_csv, Campaign};
use crate::inference::{
    cross_validate, evaluate, grid_search_resample, mkmmd_test, train, transfer_infer, write_predictions_csv,
    Adaptation, LabeledDataset, TransferConfig,
};
use crate::ingest::{filter_region, read_observations, write_observations};
use crate::spike::write_spikes_csv;
use crate::synth::features::{synthesize_features, FeatureSynthConfig};
use crate::synth::{generate, ScenarioConfig};
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "airspot", version, about = "Air pollution hotspot detection from mobile sensing campaigns")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the summary as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Exit with status 4 when the result is empty.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic campaign with planted sources and feature inputs.
    Synth {
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect spikes and hotspots.
    Detect(Common),
    /// Compare methods on a driving-day split, or sweep parameters.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Methods to report: sdo, tnas, ours (default all).
        #[arg(long = "baseline")]
        methods: Vec<String>,
        #[arg(long)]
        split_seed: Option<u64>,
        /// `min_S_g=2..64` or `b=50..400` (doubling) or explicit lists.
        #[arg(long)]
        sweep: Vec<String>,
    },
    /// Extract source features for observed cells, labeled by detection.
    Features(Common),
    /// Train, cross-validate or transfer the hotspot classifier.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Stratified k-fold cross-validation.
        #[arg(long)]
        cv: Option<usize>,
        /// Grid search over resampling ratios.
        #[arg(long)]
        grid: bool,
        /// Train on the configured features and score a target region.
        #[arg(long)]
        transfer: bool,
        /// Domain adaptation for --transfer: none or coral.
        #[arg(long, default_value = "none")]
        adapt: String,
        /// Target feature CSV (overrides infer.target).
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Two-sample shift test between two feature tables.
    Shift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
}

/// Files produced by a command, written together once it has succeeded.
#[derive(Default)]
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Writes each file to a temporary sibling and renames it into place.
    fn commit(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

enum Outcome {
    Done(String),
    /// Success with an empty result; exit status depends on `--strict`.
    Empty(String),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) | Error::InvalidRegion(_) | Error::ManifestMismatch(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Parse(_) | Error::Schema(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let strict = match &cli.command {
        Command::Detect(c) | Command::Features(c) => c.strict,
        Command::Eval { common, .. } | Command::Infer { common, .. } | Command::Shift { common, .. } => common.strict,
        Command::Synth { .. } => false,
    };
    let result = match cli.command {
        Command::Synth { preset, seed, out } => cmd_synth(&preset, seed, &out, cli.json),
        Command::Detect(c) => load(&c).and_then(|cfg| cmd_detect(&cfg, cli.json)),
        Command::Eval {
            common,
            methods,
            split_seed,
            sweep,
        } => load(&common).and_then(|cfg| cmd_eval(&cfg, &methods, split_seed, &sweep, cli.json)),
        Command::Features(c) => load(&c).and_then(|cfg| cmd_features(&cfg, cli.json)),
        Command::Infer {
            common,
            cv,
            grid,
            transfer,
            adapt,
            target,
        } => load(&common).and_then(|cfg| {
            let mode = match (cv, grid, transfer) {
                (Some(k), false, false) => InferMode::Cv(k),
                (None, true, false) => InferMode::Grid,
                (None, false, true) => InferMode::Transfer(Adaptation::parse(&adapt)?, target),
                (None, false, false) => InferMode::Fit,
                _ => return Err(Error::Config("--cv, --grid and --transfer are exclusive".into())),
            };
            cmd_infer(&cfg, mode, cli.json)
        }),
        Command::Shift { common, source, target } => {
            load(&common).and_then(|cfg| cmd_shift(&cfg, &source, &target, cli.json))
        }
    };
    match result {
        Ok(Outcome::Done(line)) => {
            println!("{line}");
            EXIT_OK
        }
        Ok(Outcome::Empty(line)) => {
            println!("{line}");
            if strict {
                eprintln!("warning: empty result");
                EXIT_EMPTY
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(c: &Common) -> Result<RunConfig> {
    RunConfig::load(c.config.as_deref(), &c.params)
}

fn summary(json_mode: bool, text: String, value: serde_json::Value) -> String {
    if json_mode {
        value.to_string()
    } else {
        text
    }
}

fn load_campaign(cfg: &RunConfig) -> Result<Campaign> {
    let region = cfg.require_region()?;
    let input = cfg.require_input()?;
    let (records, mut report) = read_observations(input, &cfg.schema)?;
    let records = filter_region(records, region, &mut report);
    if report.total_rejected() > 0 {
        log::warn!("rejected {} of {} rows: {:?}", report.total_rejected(), report.rows, report.rejected);
    }
    Campaign::new(records, cfg.schema.clone(), region.clone(), cfg.max_gap_s)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_detect(cfg: &RunConfig, json_mode: bool) -> Result<Outcome> {
    let campaign = load_campaign(cfg)?;
    let d = &cfg.detector;
    let det = detect_hotspots(&campaign, &d.spike, &d.cluster, d.daytime)?;
    let region = &campaign.region;
    let mut out = Outputs::new(&cfg.out_dir);
    out.add_json("hotspots.geojson", &hotspots_geojson(&det.labeling, &det.stats, region))?;
    out.add(
        "grid_stats.csv",
        csv_bytes(|b| write_grid_stats_csv(b, &campaign.schema, region, &det.stats, &det.labeling))?,
    );
    out.add("spikes.csv", csv_bytes(|b| write_spikes_csv(b, &campaign.schema, &det.spikes))?);
    out.commit()?;
    let (k, n, pct) = (det.labeling.k(), det.stats.len(), 100.0 * det.hotspot_pct);
    let line = summary(
        json_mode,
        format!("hotspots={k} cells={n} pct={pct:.2}"),
        json!({"hotspots": k, "cells": n, "pct": pct, "spikes": det.spikes.len()}),
    );
    Ok(if k == 0 { Outcome::Empty(line) } else { Outcome::Done(line) })
}

/// `2..64` doubles from the lower to the upper bound; `a,b,c` is explicit.
pub fn parse_sweep_values(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad sweep range `{spec}`"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo) {
            return Err(bad());
        }
        let mut v = Vec::new();
        let mut x = lo;
        while x <= hi * (1.0 + 1e-12) {
            v.push(x);
            x *= 2.0;
        }
        Ok(v)
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
    }
}

fn cmd_eval(
    cfg: &RunConfig,
    methods: &[String],
    split_seed: Option<u64>,
    sweep: &[String],
    json_mode: bool,
) -> Result<Outcome> {
    let campaign = load_campaign(cfg)?;
    let split_seed = split_seed.unwrap_or(cfg.split_seed);
    let mut out = Outputs::new(&cfg.out_dir);
    if !sweep.is_empty() {
        let mut mins = vec![cfg.detector.cluster.min_spike_count];
        let mut bs = vec![cfg.detector.cluster.bandwidth_m];
        for s in sweep {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sweep `{s}` is not key=range")))?;
            let values = parse_sweep_values(v)?;
            match k.trim() {
                "min_S_g" => {
                    mins = values
                        .iter()
                        .map(|x| if x.fract() == 0.0 && *x >= 1.0 { Ok(*x as u32) } else { Err(Error::Config(format!("min_S_g value {x} is not a positive integer"))) })
                        .collect::<Result<_>>()?
                }
                "b" => bs = values,
                other => return Err(Error::Config(format!("cannot sweep `{other}`"))),
            }
        }
        let rows = sensitivity_sweep(&campaign, &cfg.detector, &mins, &bs, split_seed, cfg.reference)?;
        out.add("sweep.csv", csv_bytes(|b| write_sweep_csv(b, &rows))?);
        out.commit()?;
        let text = rows
            .iter()
            .map(|r| format!("min_S_g={} b={} n_hotspots={} mean_THR={:.3}", r.min_spike_count, r.bandwidth_m, r.n_hotspots, r.mean_thr))
            .collect::<Vec<_>>()
            .join("\n");
        return Ok(Outcome::Done(summary(json_mode, text, serde_json::to_value(&rows)?)));
    }
    let methods: Vec<Method> = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?
    };
    let reports = compare_methods(&campaign, &cfg.detector, &methods, split_seed, cfg.reference)?;
    out.add_json("eval.json", &reports)?;
    out.commit()?;
    let mut text = String::from("method,EA,RI,THR,n_hotspots");
    for r in &reports {
        text.push('\n');
        text.push_str(&r.table_row());
    }
    let line = summary(json_mode, text, serde_json::to_value(&reports)?);
    Ok(if reports.iter().all(|r| r.n_hotspots == 0) {
        Outcome::Empty(line)
    } else {
        Outcome::Done(line)
    })
}

fn load_sources(cfg: &RunConfig) -> Result<FeatureSources> {
    let p = &cfg.feature_paths;
    Ok(FeatureSources {
        pois: p.pois.as_deref().map(read_pois).transpose()?.unwrap_or_default(),
        landuse: p.landuse.as_deref().map(read_landuse).transpose()?.unwrap_or_default(),
        idling: p.idling.as_deref().map(read_idling).transpose()?.unwrap_or_default(),
        elevation: p.elevation.as_deref().map(read_esri_ascii).transpose()?,
    })
}

fn cmd_features(cfg: &RunConfig, json_mode: bool) -> Result<Outcome> {
    let campaign = load_campaign(cfg)?;
    let d = &cfg.detector;
    let det = detect_hotspots(&campaign, &d.spike, &d.cluster, d.daytime)?;
    let sources = load_sources(cfg)?;
    let cells: Vec<_> = det.stats.iter().map(|s| s.cell).collect();
    let matrix = build_matrix(&cells, &campaign.region, &sources, &cfg.features)?;
    let labels: Vec<u8> = cells.iter().map(|c| det.labeling.cells.contains_key(c) as u8).collect();
    let mut out = Outputs::new(&cfg.out_dir);
    out.add("features.csv", csv_bytes(|b| write_features_csv(b, &matrix, &labels))?);
    out.add_json("features_manifest.json", &matrix.manifest)?;
    out.commit()?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let d = matrix.manifest.names.len();
    let line = summary(
        json_mode,
        format!("cells={} features={d} positives={pos}", cells.len()),
        json!({"cells": cells.len(), "features": d, "positives": pos}),
    );
    Ok(if cells.is_empty() { Outcome::Empty(line) } else { Outcome::Done(line) })
}

enum InferMode {
    Fit,
    Cv(usize),
    Grid,
    Transfer(Adaptation, Option<PathBuf>),
}

/// Keeps the columns of the configured feature groups.
fn select_groups(t: &FeatureTable, groups: &[FeatureGroup]) -> Result<LabeledDataset> {
    let cols: Vec<usize> = t
        .names
        .iter()
        .enumerate()
        .filter(|(_, n)| FeatureGroup::of_column(n).is_some_and(|g| groups.contains(&g)))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::Config("no feature columns in the selected groups".into()));
    }
    Ok(LabeledDataset::from_table(t)?.columns(&cols))
}

fn cmd_infer(cfg: &RunConfig, mode: InferMode, json_mode: bool) -> Result<Outcome> {
    let path = cfg
        .infer_features
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("features.csv"));
    let table = read_features_csv(&path)?;
    let data = select_groups(&table, &cfg.groups)?;
    let mut out = Outputs::new(&cfg.out_dir);
    let line = match mode {
        InferMode::Fit => {
            let model = train(&data, &cfg.train)?;
            let metrics = evaluate(&model, &data)?;
            let scores = model.predict_proba(&data.rows)?;
            out.add_json("model.json", &model)?;
            out.add_json("metrics.json", &metrics)?;
            out.add("predictions.csv", csv_bytes(|b| write_predictions_csv(b, &table.cells, &scores))?);
            summary(
                json_mode,
                format!("f1={:.3} auc={}", metrics.f1, fmt_opt(metrics.auc)),
                serde_json::to_value(metrics)?,
            )
        }
        InferMode::Cv(k) => {
            let report = cross_validate(&data, k, &cfg.train, cfg.seed)?;
            out.add_json("cv.json", &report)?;
            summary(
                json_mode,
                format!(
                    "f1={:.3}±{:.3} auc={}±{}",
                    report.f1_mean,
                    report.f1_std,
                    fmt_opt(report.auc_mean),
                    fmt_opt(report.auc_std)
                ),
                serde_json::to_value(&report)?,
            )
        }
        InferMode::Grid => {
            let (points, best) = grid_search_resample(
                &data,
                &[0.25, 0.5, 0.75, 1.0],
                &[0.5, 0.75, 1.0],
                cfg.folds,
                &cfg.train,
                cfg.seed,
            )?;
            out.add_json("grid.json", &json!({"points": points, "best": best}))?;
            let b = &points[best];
            summary(
                json_mode,
                format!("best oversample={} undersample={} f1={:.3}", b.oversample, b.undersample, b.cv.f1_mean),
                json!({"oversample": b.oversample, "undersample": b.undersample, "f1": b.cv.f1_mean}),
            )
        }
        InferMode::Transfer(adaptation, target) => {
            let tpath = target
                .or_else(|| cfg.infer_target.clone())
                .ok_or_else(|| Error::Config("--transfer needs --target or infer.target".into()))?;
            let ttable = read_features_csv(&tpath)?;
            let tdata = select_groups(&ttable, &cfg.groups)?;
            let tc = TransferConfig {
                adaptation,
                train: cfg.train.clone(),
                coral_lambda: cfg.coral_lambda,
                mmd: cfg.mmd.clone(),
            };
            let report = transfer_infer(&data, &tdata.names, &tdata.rows, Some(&tdata.labels), &tc)?;
            out.add(
                "predictions.csv",
                csv_bytes(|b| write_predictions_csv(b, &ttable.cells, &report.scores))?,
            );
            out.add_json(
                "transfer.json",
                &json!({"adaptation": report.adaptation, "metrics": report.metrics, "shift": report.shift}),
            )?;
            let m = report.metrics.expect("labels given");
            let shift = report.shift.as_ref().map_or("n/a".to_string(), |s| format!("{s} reject={}", s.reject));
            summary(
                json_mode,
                format!("adapt={adaptation:?} f1={:.3} auc={} shift={shift}", m.f1, fmt_opt(m.auc)).to_lowercase(),
                json!({"adaptation": adaptation, "metrics": m, "shift": report.shift}),
            )
        }
    };
    out.commit()?;
    Ok(Outcome::Done(line))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.3}"))
}

fn cmd_shift(cfg: &RunConfig, source: &Path, target: &Path, json_mode: bool) -> Result<Outcome> {
    let s = select_groups(&read_features_csv(source)?, &cfg.groups)?;
    let t = select_groups(&read_features_csv(target)?, &cfg.groups)?;
    if s.names != t.names {
        return Err(Error::ManifestMismatch("source and target feature columns differ".into()));
    }
    let report = mkmmd_test(&s.rows, &t.rows, &cfg.mmd)?;
    let mut out = Outputs::new(&cfg.out_dir);
    out.add_json("shift.json", &report)?;
    out.commit()?;
    Ok(Outcome::Done(summary(
        json_mode,
        format!("{report} reject={}", report.reject),
        serde_json::to_value(&report)?,
    )))
}

fn cmd_synth(preset: &str, seed: u64, out_dir: &Path, json_mode: bool) -> Result<Outcome> {
    let cfg = ScenarioConfig::preset(preset, seed)?;
    let scenario = generate(&cfg)?;
    let sources = synthesize_features(&cfg, &FeatureSynthConfig::default());
    let mut out = Outputs::new(out_dir);
    out.add(
        "observations.csv",
        csv_bytes(|b| write_observations(b, &scenario.schema, &scenario.records))?,
    );
    out.add_json(
        "truth.json",
        &json!({
            "sources": cfg.sources,
            "persistent_source_cells": scenario.truth.persistent_source_cells,
            "transient_source_cells": scenario.truth.transient_source_cells,
        }),
    )?;
    out.add("pois.csv", csv_bytes(|b| write_pois(b, &sources.pois))?);
    out.add_json("landuse.geojson", &landuse_geojson(&sources.landuse))?;
    out.add("idling.csv", csv_bytes(|b| write_idling(b, &sources.idling))?);
    if let Some(r) = &sources.elevation {
        out.add("elevation.asc", csv_bytes(|b| write_esri_ascii(b, r))?);
    }
    out.add("run.cfg", run_cfg_for(&cfg, &scenario.schema).into_bytes());
    out.commit()?;
    let n = scenario.records.len();
    Ok(Outcome::Done(summary(
        json_mode,
        format!("observations={n} sources={} out={}", cfg.sources.len(), out_dir.display()),
        json!({"observations": n, "sources": cfg.sources.len()}),
    )))
}

/// Run configuration pointing at the files written by `synth`.
fn run_cfg_for(cfg: &ScenarioConfig, schema: &crate::ingest::PollutantSchema) -> String {
    let r = &cfg.region;
    let mut p = BTreeMap::new();
    let mut set = |k: &str, v: String| {
        p.insert(k.to_string(), v);
    };
    set("seed", cfg.seed.to_string());
    set("input", "observations.csv".into());
    set("out_dir", "out".into());
    set("region.name", r.name.clone());
    set("region.origin_lat", format!("{}", r.origin_lat));
    set("region.origin_lon", format!("{}", r.origin_lon));
    set("region.max_lat", format!("{}", r.extent.max_lat));
    set("region.max_lon", format!("{}", r.extent.max_lon));
    set("region.cell_m", format!("{}", r.cell_size_m));
    set("region.utc_offset_minutes", r.utc_offset_minutes.to_string());
    set("pollutants", schema.names.join(","));
    set("units", schema.units.join(","));
    set("features.pois", "pois.csv".into());
    set("features.landuse", "landuse.geojson".into());
    set("features.idling", "idling.csv".into());
    set("features.elevation", "elevation.asc".into());
    format!("# generated by `airspot synth`\n{}", config::render(&p))
}
