//! Detection quality metrics and the half-split robustness harness.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridIndex, Region};
use crate::hotspot::{
    baseline_sdo, baseline_tnas, cluster_prepared, hotspot_fraction, prepare, Campaign,
    CombineMode, DetectorConfig, GridStats, HotspotLabeling, Prepared,
};
use crate::spike::daily_background;
use crate::stats::{lower_median, lower_median_of};

/// Reference level per pollutant for the elevated-level metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundReference {
    /// Median of every observation of the pollutant in the campaign.
    #[default]
    CampaignMedian,
    /// Mean over car-days of the daily background.
    MeanOfDailyMedians,
}

pub fn pollutant_backgrounds(campaign: &Campaign, reference: BackgroundReference) -> Vec<Option<f64>> {
    (0..campaign.schema.len())
        .map(|p| match reference {
            BackgroundReference::CampaignMedian => {
                lower_median_of(campaign.records.iter().filter_map(|r| r.value(p)))
            }
            BackgroundReference::MeanOfDailyMedians => {
                let days: Vec<f64> = campaign
                    .trajectories
                    .iter()
                    .filter_map(|t| daily_background(&t.points, p))
                    .collect();
                crate::stats::mean(&days)
            }
        })
        .collect()
}

/// Mean elevated level: per hotspot cell the mean over pollutants of the
/// cell median divided by the pollutant background, averaged over cells.
/// Pollutants a cell has no value for are left out of that cell's mean.
pub fn elevated_level<'a>(
    hotspot_cells: impl IntoIterator<Item = &'a GridIndex>,
    stats: &[GridStats],
    backgrounds: &[Option<f64>],
) -> Result<f64> {
    for (i, b) in backgrounds.iter().enumerate() {
        match b {
            Some(v) if *v > 0.0 => {}
            _ => {
                return Err(Error::UndefinedMetric(format!(
                    "background of pollutant {i} is zero or missing"
                )))
            }
        }
    }
    let by_cell: std::collections::HashMap<GridIndex, &GridStats> =
        stats.iter().map(|s| (s.cell, s)).collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for cell in hotspot_cells {
        let Some(s) = by_cell.get(cell) else { continue };
        let ratios: Vec<f64> = s
            .median_concentrations
            .iter()
            .zip(backgrounds)
            .filter_map(|(m, b)| Some(m.as_ref()? / b.as_ref()?))
            .collect();
        if ratios.is_empty() {
            continue;
        }
        total += ratios.iter().sum::<f64>() / ratios.len() as f64;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mean temporal hit rate over the hotspot cells; zero without hotspots.
pub fn mean_thr<'a>(hotspot_cells: impl IntoIterator<Item = &'a GridIndex>, stats: &[GridStats]) -> f64 {
    let cells: BTreeSet<&GridIndex> = hotspot_cells.into_iter().collect();
    let thrs: Vec<f64> = stats
        .iter()
        .filter(|s| cells.contains(&s.cell))
        .map(|s| s.thr)
        .collect();
    crate::stats::mean(&thrs).unwrap_or(0.0)
}

/// Jaccard index; zero when both sets are empty.
pub fn jaccard(a: &BTreeSet<GridIndex>, b: &BTreeSet<GridIndex>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Every cell with a spike.
    Sdo,
    /// Cells whose spike count reaches the clustering threshold.
    Tnas,
    /// Weighted mean shift clustering.
    Ours,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sdo, Method::Tnas, Method::Ours];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sdo => "SDO",
            Method::Tnas => "TNAS",
            Method::Ours => "ours",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdo" => Ok(Method::Sdo),
            "tnas" => Ok(Method::Tnas),
            "ours" => Ok(Method::Ours),
            other => Err(Error::InvalidParams(format!("unknown method `{other}`"))),
        }
    }
}

/// Labels prepared statistics with one method.
pub fn label(
    method: Method,
    prepared: &Prepared,
    config: &DetectorConfig,
    region: &Region,
) -> Result<HotspotLabeling> {
    match method {
        Method::Sdo => baseline_sdo(prepared.spikes.iter(), region),
        Method::Tnas => baseline_tnas(&prepared.stats, config.cluster.min_spike_count),
        Method::Ours => cluster_prepared(prepared, &config.cluster, region),
    }
}

/// Splits driving days into two halves with a seeded shuffle.
pub fn split_days(campaign: &Campaign, seed: u64) -> Result<(Campaign, Campaign)> {
    let mut days = campaign.driving_days();
    if days.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "robustness split needs at least 2 driving days, found {}",
            days.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    days.shuffle(&mut rng);
    let half = days.len() / 2;
    let first: BTreeSet<_> = days[..half].iter().cloned().collect();
    let second: BTreeSet<_> = days[half..].iter().cloned().collect();
    Ok((campaign.subset(&first), campaign.subset(&second)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub jaccard: f64,
    /// Mean hotspot percentage of the two halves.
    pub hr: f64,
    pub ri: f64,
    pub k1: usize,
    pub k2: usize,
}

/// Robustness index from the two halves' labelings and cell counts.
pub fn robustness_from(
    first: &HotspotLabeling,
    first_cells: usize,
    second: &HotspotLabeling,
    second_cells: usize,
) -> Robustness {
    let a = first.cell_set();
    let b = second.cell_set();
    let frac = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let hr = (frac(a.len(), first_cells) + frac(b.len(), second_cells)) / 2.0;
    let j = jaccard(&a, &b);
    let ri = if a.is_empty() && b.is_empty() {
        log::warn!("both halves produced empty hotspot sets; RI reported as 0");
        0.0
    } else if hr > 0.0 {
        j / hr
    } else {
        0.0
    };
    Robustness {
        jaccard: j,
        hr,
        ri,
        k1: a.len(),
        k2: b.len(),
    }
}

/// Spikes and statistics of a campaign and of its two halves.
pub struct SplitPrepared {
    pub full: Prepared,
    pub halves: [Prepared; 2],
    pub backgrounds: Vec<Option<f64>>,
}

impl SplitPrepared {
    pub fn new(
        campaign: &Campaign,
        config: &DetectorConfig,
        split_seed: u64,
        reference: BackgroundReference,
    ) -> Result<Self> {
        let per = config.cluster.combine == CombineMode::PerPollutant;
        let full = prepare(campaign, &config.spike, config.daytime, per)?;
        let (a, b) = split_days(campaign, split_seed)?;
        let halves = [
            prepare(&a, &config.spike, config.daytime, per)?,
            prepare(&b, &config.spike, config.daytime, per)?,
        ];
        Ok(Self {
            full,
            halves,
            backgrounds: pollutant_backgrounds(campaign, reference),
        })
    }

    pub fn robustness(&self, method: Method, config: &DetectorConfig, region: &Region) -> Result<Robustness> {
        let l1 = label(method, &self.halves[0], config, region)?;
        let l2 = label(method, &self.halves[1], config, region)?;
        Ok(robustness_from(
            &l1,
            self.halves[0].stats.len(),
            &l2,
            self.halves[1].stats.len(),
        ))
    }

    pub fn report(&self, method: Method, config: &DetectorConfig, region: &Region) -> Result<DetectionReport> {
        let labeling = label(method, &self.full, config, region)?;
        let rob = self.robustness(method, config, region)?;
        Ok(DetectionReport {
            method: method.name().to_string(),
            ea: elevated_level(labeling.cells.keys(), &self.full.stats, &self.backgrounds)?,
            ri: rob.ri,
            mean_thr: mean_thr(labeling.cells.keys(), &self.full.stats),
            n_hotspots: labeling.k(),
            hr: hotspot_fraction(&labeling, &self.full.stats),
            jaccard: rob.jaccard,
        })
    }
}

/// Robustness index of one method on a campaign.
pub fn robustness_index(
    campaign: &Campaign,
    config: &DetectorConfig,
    method: Method,
    split_seed: u64,
) -> Result<Robustness> {
    let per = config.cluster.combine == CombineMode::PerPollutant;
    let (a, b) = split_days(campaign, split_seed)?;
    let pa = prepare(&a, &config.spike, config.daytime, per)?;
    let pb = prepare(&b, &config.spike, config.daytime, per)?;
    let la = label(method, &pa, config, &campaign.region)?;
    let lb = label(method, &pb, config, &campaign.region)?;
    Ok(robustness_from(&la, pa.stats.len(), &lb, pb.stats.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    #[serde(rename = "EA")]
    pub ea: f64,
    #[serde(rename = "RI")]
    pub ri: f64,
    #[serde(rename = "mean_THR")]
    pub mean_thr: f64,
    pub n_hotspots: usize,
    pub hr: f64,
    pub jaccard: f64,
}

impl DetectionReport {
    /// `method,EA,RI,THR,n_hotspots`
    pub fn table_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3},{}",
            self.method, self.ea, self.ri, self.mean_thr, self.n_hotspots
        )
    }
}

/// Reports for several methods on one campaign and split.
pub fn compare_methods(
    campaign: &Campaign,
    config: &DetectorConfig,
    methods: &[Method],
    split_seed: u64,
    reference: BackgroundReference,
) -> Result<Vec<DetectionReport>> {
    let prepared = SplitPrepared::new(campaign, config, split_seed, reference)?;
    methods
        .iter()
        .map(|m| prepared.report(*m, config, &campaign.region))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub min_spike_count: u32,
    pub bandwidth_m: f64,
    pub n_hotspots: usize,
    pub mean_thr: f64,
    pub ea: f64,
    pub jaccard: f64,
    pub hr: f64,
    pub ri: f64,
}

/// One detector run per (min spike count, bandwidth) pair, rows ordered
/// by min spike count then bandwidth.
pub fn sensitivity_sweep(
    campaign: &Campaign,
    config: &DetectorConfig,
    min_spike_counts: &[u32],
    bandwidths_m: &[f64],
    split_seed: u64,
    reference: BackgroundReference,
) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    let prepared = SplitPrepared::new(campaign, config, split_seed, reference)?;
    let grid: Vec<(u32, f64)> = min_spike_counts
        .iter()
        .flat_map(|&s| bandwidths_m.iter().map(move |&b| (s, b)))
        .collect();
    grid.par_iter()
        .map(|&(s, b)| {
            let mut cfg = config.clone();
            cfg.cluster.min_spike_count = s;
            cfg.cluster.bandwidth_m = b;
            let r = prepared.report(Method::Ours, &cfg, &campaign.region)?;
            Ok(SweepRow {
                min_spike_count: s,
                bandwidth_m: b,
                n_hotspots: r.n_hotspots,
                mean_thr: r.mean_thr,
                ea: r.ea,
                jaccard: r.jaccard,
                hr: r.hr,
                ri: r.ri,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(sink: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["min_S_g", "b_m", "n_hotspots", "mean_THR", "EA", "jaccard", "hr", "RI"])?;
    for r in rows {
        w.write_record([
            r.min_spike_count.to_string(),
            r.bandwidth_m.to_string(),
            r.n_hotspots.to_string(),
            r.mean_thr.to_string(),
            r.ea.to_string(),
            r.jaccard.to_string(),
            r.hr.to_string(),
            r.ri.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// Median of the cell medians; used by reports that need one campaign level.
pub fn median_of_cells(stats: &[GridStats], pollutant: usize) -> Option<f64> {
    let mut v: Vec<f64> = stats
        .iter()
        .filter_map(|s| s.median_concentrations.get(pollutant).copied().flatten())
        .collect();
    lower_median(&mut v)
}
