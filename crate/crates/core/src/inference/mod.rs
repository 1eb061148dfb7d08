//! Hotspot inference from cell features: a regularized logistic classifier
//! with class-imbalance strategies, cross-validation, a multi-kernel MMD
//! shift test and CORAL alignment for transfer between regions.

pub mod coral;
pub mod logistic;
pub mod metrics;
pub mod mmd;
pub mod smote;

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{schema_hash, FeatureTable};
use crate::grid::GridIndex;
pub use coral::{coral_align, CoralTransform};
pub use metrics::{auc, evaluate_scores, Metrics};
pub use mmd::{mkmmd_test, MmdConfig, MmdEstimator, ShiftReport};
pub use smote::smote;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidParams(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidParams(format!("label {bad} is not 0 or 1")));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::Schema(format!("row has {} values for {} features", r.len(), names.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature value".into()));
        }
        Ok(LabeledDataset { names, rows, labels })
    }

    pub fn from_table(t: &FeatureTable) -> Result<Self> {
        Self::new(t.names.clone(), t.rows.clone(), t.labels.clone())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        [self.len() - pos, pos]
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Keeps only the given columns.
    pub fn columns(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Column means and population standard deviations. A zero deviation is
/// replaced by 1 when applied, and the raw value is kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(skip)]
    pub raw_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let raw_std: Vec<f64> = (0..d)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let std = raw_std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std, raw_std }
    }

    pub fn apply_row(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    None,
    WeightBalance,
    /// SMOTE the minority class up to `oversample` times the majority count,
    /// then drop random majority rows until minority / majority reaches
    /// `undersample`.
    Resample { oversample: f64, undersample: f64 },
}

impl Strategy {
    pub const DEFAULT_RESAMPLE: Strategy = Strategy::Resample {
        oversample: 0.5,
        undersample: 1.0,
    };

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "weight-balance" => Ok(Strategy::WeightBalance),
            "resample" => Ok(Strategy::DEFAULT_RESAMPLE),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected none, weight-balance or resample)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::WeightBalance => "weight-balance",
            Strategy::Resample { .. } => "resample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub smote_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::None,
            lambda: 1.0,
            tol: 1e-6,
            max_iter: 20_000,
            smote_k: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.tol > 0.0) || self.max_iter == 0 || self.smote_k == 0 {
            return Err(Error::InvalidParams(
                "need lambda >= 0, tol > 0, max_iter >= 1 and smote_k >= 1".into(),
            ));
        }
        if let Strategy::Resample { oversample, undersample } = self.strategy {
            if !(oversample > 0.0 && oversample <= 1.0) || !(undersample > 0.0 && undersample <= 1.0) {
                return Err(Error::InvalidParams("resampling ratios must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub names: Vec<String>,
    pub schema_hash: String,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub standardizer: Standardizer,
    pub strategy: Strategy,
    pub lambda: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
}

impl ClassifierModel {
    /// Probability of the hotspot class for each row.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.weights.len() {
                    return Err(Error::Schema(format!(
                        "row has {} values, model expects {}",
                        r.len(),
                        self.weights.len()
                    )));
                }
                let z = self.standardizer.apply_row(r);
                let s = self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
                Ok(logistic::sigmoid(s))
            })
            .collect()
    }

    pub fn check_schema(&self, names: &[String]) -> Result<()> {
        if names != self.names.as_slice() {
            return Err(Error::ManifestMismatch(format!(
                "model has {} features ({}), data has {}",
                self.names.len(),
                self.schema_hash,
                names.len()
            )));
        }
        Ok(())
    }
}

fn hash_names(names: &[String]) -> String {
    schema_hash(names, &[])
}

/// Index of the minority label (1 on ties).
fn minority_label(counts: [usize; 2]) -> u8 {
    if counts[0] < counts[1] {
        0
    } else {
        1
    }
}

/// Applies SMOTE then random undersampling to standardized rows.
pub fn resample(
    rows: &[Vec<f64>],
    labels: &[u8],
    oversample: f64,
    undersample: f64,
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let counts = [labels.len() - pos, pos];
    let min_label = minority_label(counts);
    let minority: Vec<Vec<f64>> = rows
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == min_label)
        .map(|(r, _)| r.clone())
        .collect();
    let majority_idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] != min_label).collect();
    let n_maj = majority_idx.len();

    let want_min = (oversample * n_maj as f64).ceil() as usize;
    let synthetic = if want_min > minority.len() {
        smote::smote(&minority, k, want_min - minority.len(), &mut rng)?
    } else {
        Vec::new()
    };
    let n_min = minority.len() + synthetic.len();
    let want_maj = ((n_min as f64 / undersample).floor() as usize).clamp(1, n_maj);
    let mut keep: Vec<usize> = index::sample(&mut rng, n_maj, want_maj).into_iter().map(|i| majority_idx[i]).collect();
    keep.sort_unstable();

    let mut out_rows = Vec::with_capacity(n_min + keep.len());
    let mut out_labels = Vec::with_capacity(n_min + keep.len());
    for (i, (r, &y)) in rows.iter().zip(labels).enumerate() {
        if y == min_label || keep.binary_search(&i).is_ok() {
            out_rows.push(r.clone());
            out_labels.push(y);
        }
    }
    for s in synthetic {
        out_rows.push(s.row);
        out_labels.push(min_label);
    }
    Ok((out_rows, out_labels))
}

pub fn train(data: &LabeledDataset, config: &TrainConfig) -> Result<ClassifierModel> {
    config.validate()?;
    let counts = data.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::DegenerateTraining(format!(
            "training data needs both classes, got {} negatives and {} positives",
            counts[0], counts[1]
        )));
    }
    let standardizer = Standardizer::fit(&data.rows);
    let z = standardizer.apply(&data.rows);
    let (x, y, w) = match config.strategy {
        Strategy::None => {
            let n = z.len();
            (z, data.labels.clone(), vec![1.0; n])
        }
        Strategy::WeightBalance => {
            let n = data.len() as f64;
            let w = data.labels.iter().map(|&y| n / (2.0 * counts[y as usize] as f64)).collect();
            (z, data.labels.clone(), w)
        }
        Strategy::Resample { oversample, undersample } => {
            let (x, y) = resample(&z, &data.labels, oversample, undersample, config.smote_k, config.seed)?;
            let n = x.len();
            (x, y, vec![1.0; n])
        }
    };
    let fit = logistic::fit(&x, &y, &w, config.lambda, config.tol, config.max_iter);
    if !fit.converged {
        log::warn!(
            "logistic fit stopped after {} iterations with gradient norm {:.3e}",
            fit.iterations,
            fit.grad_norm
        );
    }
    if fit.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("model weights".into()));
    }
    Ok(ClassifierModel {
        names: data.names.clone(),
        schema_hash: hash_names(&data.names),
        bias: fit.beta[0],
        weights: fit.beta[1..].to_vec(),
        standardizer,
        strategy: config.strategy,
        lambda: config.lambda,
        seed: config.seed,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

pub fn evaluate(model: &ClassifierModel, data: &LabeledDataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let scores = model.predict_proba(&data.rows)?;
    Ok(evaluate_scores(&scores, &data.labels))
}

/// Validation index sets of a stratified k-fold split. Each class is shuffled
/// with its own seeded generator and dealt round-robin across folds.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParams("cross-validation needs at least 2 folds".into()));
    }
    let mut folds = vec![Vec::new(); k];
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} rows, too few to stratify into {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64)));
        for (pos, i) in idx.into_iter().enumerate() {
            folds[pos % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Metrics>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Stratified k-fold cross-validation. Any resampling happens inside the
/// training part of each fold; validation rows are never resampled.
pub fn cross_validate(data: &LabeledDataset, k: usize, config: &TrainConfig, seed: u64) -> Result<CvReport> {
    let folds = stratified_folds(&data.labels, k, seed)?;
    let per_fold: Vec<Result<Metrics>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, val)| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|i| val.binary_search(i).is_err()).collect();
            let fold_cfg = TrainConfig {
                seed: config.seed.wrapping_add(f as u64),
                ..config.clone()
            };
            let model = train(&data.subset(&train_idx), &fold_cfg)?;
            evaluate(&model, &data.subset(val))
        })
        .collect();
    let folds: Vec<Metrics> = per_fold.into_iter().collect::<Result<_>>()?;
    let f1: Vec<f64> = folds.iter().map(|m| m.f1).collect();
    let (f1_mean, f1_std) = mean_std(&f1);
    let aucs: Option<Vec<f64>> = folds.iter().map(|m| m.auc).collect();
    let (auc_mean, auc_std) = match aucs {
        Some(a) => {
            let (m, s) = mean_std(&a);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(CvReport {
        folds,
        f1_mean,
        f1_std,
        auc_mean,
        auc_std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub oversample: f64,
    pub undersample: f64,
    pub cv: CvReport,
}

/// Cross-validates every pair of resampling ratios. Returns all points and
/// the index of the best mean F1 (earliest on ties).
pub fn grid_search_resample(
    data: &LabeledDataset,
    oversample: &[f64],
    undersample: &[f64],
    k: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Vec<GridPoint>, usize)> {
    if oversample.is_empty() || undersample.is_empty() {
        return Err(Error::InvalidParams("empty resampling grid".into()));
    }
    let pairs: Vec<(f64, f64)> = oversample
        .iter()
        .flat_map(|&o| undersample.iter().map(move |&u| (o, u)))
        .collect();
    let points: Vec<GridPoint> = pairs
        .par_iter()
        .map(|&(o, u)| {
            let cfg = TrainConfig {
                strategy: Strategy::Resample {
                    oversample: o,
                    undersample: u,
                },
                ..config.clone()
            };
            Ok(GridPoint {
                oversample: o,
                undersample: u,
                cv: cross_validate(data, k, &cfg, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.cv.f1_mean > points[best].cv.f1_mean {
            best = i;
        }
    }
    Ok((points, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    None,
    Coral,
}

impl Adaptation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Adaptation::None),
            "coral" => Ok(Adaptation::Coral),
            other => Err(Error::Config(format!("unknown adaptation `{other}` (expected none or coral)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub adaptation: Adaptation,
    pub train: TrainConfig,
    pub coral_lambda: f64,
    pub mmd: MmdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub adaptation: Adaptation,
    pub scores: Vec<f64>,
    pub metrics: Option<Metrics>,
    /// Missing when a sample is too small for the shift test.
    pub shift: Option<ShiftReport>,
}

/// Trains on the source region and scores the target region.
///
/// Without adaptation the source model is applied to raw target features.
/// With CORAL each domain is standardized on its own statistics, the source
/// is re-colored to the target covariance, and the model trained on it
/// scores the standardized target.
pub fn transfer_infer(
    source: &LabeledDataset,
    target_names: &[String],
    target_rows: &[Vec<f64>],
    target_labels: Option<&[u8]>,
    config: &TransferConfig,
) -> Result<TransferReport> {
    if target_names != source.names.as_slice() {
        return Err(Error::ManifestMismatch("source and target feature schemas differ".into()));
    }
    if let Some(l) = target_labels {
        if l.len() != target_rows.len() {
            return Err(Error::InvalidParams("one target label per row required".into()));
        }
    }
    let shift = match mkmmd_test(&source.rows, target_rows, &config.mmd) {
        Ok(r) => Some(r),
        Err(Error::InsufficientData(msg)) => {
            log::warn!("skipping shift test: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let scores = match config.adaptation {
        Adaptation::None => train(source, &config.train)?.predict_proba(target_rows)?,
        Adaptation::Coral => {
            let zs = Standardizer::fit(&source.rows).apply(&source.rows);
            let zt = Standardizer::fit(target_rows).apply(target_rows);
            let aligned = coral_align(&zs, &zt, config.coral_lambda)?;
            let adapted = LabeledDataset {
                names: source.names.clone(),
                rows: aligned,
                labels: source.labels.clone(),
            };
            train(&adapted, &config.train)?.predict_proba(&zt)?
        }
    };
    let metrics = target_labels.map(|l| evaluate_scores(&scores, l));
    Ok(TransferReport {
        adaptation: config.adaptation,
        scores,
        metrics,
        shift,
    })
}

pub fn write_predictions_csv<W: Write>(sink: W, cells: &[GridIndex], scores: &[f64]) -> Result<()> {
    if cells.len() != scores.len() {
        return Err(Error::InvalidParams("one score per cell required".into()));
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["cell_col", "cell_row", "score", "label_pred"])?;
    for (c, s) in cells.iter().zip(scores) {
        w.write_record([
            c.col.to_string(),
            c.row.to_string(),
            format!("{s}"),
            ((*s >= 0.5) as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<predictions sink>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(seed: u64, n: usize, pos_rate: f64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random_bool(pos_rate) as u8;
            let shift = if y == 1 { 1.5 } else { 0.0 };
            rows.push(vec![rng.random_range(-1.0..1.0) + shift, rng.random_range(-1.0..1.0), 100.0 + 10.0 * shift]);
            labels.push(y);
        }
        LabeledDataset::new(vec!["a".into(), "b".into(), "c".into()], rows, labels).unwrap()
    }

    #[test]
    fn untrained_model_predicts_half() {
        let m = ClassifierModel {
            names: vec!["x".into()],
            schema_hash: String::new(),
            bias: 0.0,
            weights: vec![0.0],
            standardizer: Standardizer::fit(&[vec![3.0], vec![5.0]]),
            strategy: Strategy::None,
            lambda: 1.0,
            seed: 0,
            iterations: 0,
            converged: false,
        };
        assert_eq!(m.predict_proba(&[vec![-1e9], vec![7.0]]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn single_class_is_degenerate() {
        let d = LabeledDataset::new(vec!["x".into()], vec![vec![1.0], vec![2.0]], vec![0, 0]).unwrap();
        assert!(matches!(train(&d, &TrainConfig::default()), Err(Error::DegenerateTraining(_))));
        assert!(LabeledDataset::new(vec!["x".into()], vec![vec![1.0]], vec![2]).is_err());
    }

    #[test]
    fn separable_training_accuracy() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..30).map(|i| (i >= 15) as u8).collect();
        let d = LabeledDataset::new(vec!["x".into()], rows, labels).unwrap();
        let cfg = TrainConfig {
            lambda: 1e-3,
            ..TrainConfig::default()
        };
        let m = train(&d, &cfg).unwrap();
        let p = m.predict_proba(&d.rows).unwrap();
        for (s, y) in p.iter().zip(&d.labels) {
            assert_eq!((*s >= 0.5) as u8, *y);
        }
    }

    #[test]
    fn folds_partition_and_stratify() {
        let d = toy(1, 103, 0.2);
        let folds = stratified_folds(&d.labels, 5, 9).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        for f in &folds {
            assert!(f.iter().any(|&i| d.labels[i] == 1));
        }
        assert!(stratified_folds(&[0, 0, 0, 1], 2, 0).is_err());
    }

    #[test]
    fn resample_hits_ratios() {
        let d = toy(2, 300, 0.1);
        let z = Standardizer::fit(&d.rows).apply(&d.rows);
        let [neg, pos] = d.class_counts();
        let (x, y) = resample(&z, &d.labels, 0.5, 1.0, 5, 3).unwrap();
        let new_pos = y.iter().filter(|&&v| v == 1).count();
        let new_neg = y.len() - new_pos;
        assert_eq!(new_pos, (0.5 * neg as f64).ceil() as usize);
        assert_eq!(new_neg, new_pos);
        assert!(new_pos > pos);
        assert_eq!(x.len(), y.len());
    }

    #[test]
    fn strategies_improve_minority_recall() {
        let d = toy(3, 400, 0.08);
        let folds = 4;
        let base = cross_validate(&d, folds, &TrainConfig::default(), 1).unwrap();
        let wb = cross_validate(
            &d,
            folds,
            &TrainConfig {
                strategy: Strategy::WeightBalance,
                ..TrainConfig::default()
            },
            1,
        )
        .unwrap();
        let recall = |r: &CvReport| r.folds.iter().map(|m| m.recall).sum::<f64>();
        assert!(recall(&wb) >= recall(&base));
    }

    #[test]
    fn cv_is_deterministic() {
        let d = toy(4, 120, 0.3);
        let cfg = TrainConfig {
            strategy: Strategy::DEFAULT_RESAMPLE,
            ..TrainConfig::default()
        };
        assert_eq!(cross_validate(&d, 5, &cfg, 2).unwrap(), cross_validate(&d, 5, &cfg, 2).unwrap());
        let (pts, best) = grid_search_resample(&d, &[0.5, 1.0], &[1.0], 3, &cfg, 2).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.cv.f1_mean <= pts[best].cv.f1_mean));
    }

    #[test]
    fn transfer_onto_itself_matches_training() {
        let d = toy(5, 150, 0.3);
        let cfg = TransferConfig {
            adaptation: Adaptation::None,
            train: TrainConfig::default(),
            coral_lambda: 1.0,
            mmd: MmdConfig {
                n_permutations: 50,
                ..MmdConfig::default()
            },
        };
        let r = transfer_infer(&d, &d.names, &d.rows, Some(&d.labels), &cfg).unwrap();
        let m = evaluate(&train(&d, &cfg.train).unwrap(), &d).unwrap();
        assert_eq!(r.metrics.unwrap(), m);
        assert!(!r.shift.unwrap().reject);
        let coral = TransferConfig {
            adaptation: Adaptation::Coral,
            ..cfg.clone()
        };
        let rc = transfer_infer(&d, &d.names, &d.rows, Some(&d.labels), &coral).unwrap();
        assert!((rc.metrics.unwrap().f1 - m.f1).abs() < 1e-9);
        assert!(transfer_infer(&d, &["z".to_string()], &d.rows, None, &cfg).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let d = toy(6, 60, 0.4);
        let m = train(&d, &TrainConfig::default()).unwrap();
        let back: ClassifierModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.predict_proba(&d.rows).unwrap(), m.predict_proba(&d.rows).unwrap());
        m.check_schema(&d.names).unwrap();
        assert!(m.check_schema(&d.names[..2]).is_err());
    }

    #[test]
    fn predictions_csv() {
        let mut out = Vec::new();
        write_predictions_csv(&mut out, &[GridIndex { col: 1, row: 2 }], &[0.75]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "cell_col,cell_row,score,label_pred\n1,2,0.75,1\n");
    }
}
