//! Multi-kernel maximum mean discrepancy two-sample test.
//!
//! Both samples are standardized with pooled statistics and split in half.
//! The first half chooses convex weights over the Gaussian kernels that
//! maximize the ratio of the linear-time MMD estimate to its standard
//! deviation. The second half yields the unbiased squared MMD under the
//! combined kernel, and the threshold is a permutation quantile of that
//! statistic on the same half.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Standardizer;
use crate::error::{Error, Result};

pub const DEFAULT_WIDTHS: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const MIN_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// Unbiased squared MMD.
    #[default]
    Unbiased,
    /// The cross-sum `k(x_i,x_i) + k(y_j,y_j) - k(x_i,y_j)` averaged over all
    /// pairs, kept for comparison with the printed formula.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdConfig {
    /// Kernel parameters `g` in `exp(-g * |x - y|^2)`.
    pub widths: Vec<f64>,
    pub alpha: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub estimator: MmdEstimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            widths: DEFAULT_WIDTHS.to_vec(),
            alpha: 0.05,
            n_permutations: 1000,
            seed: 0,
            estimator: MmdEstimator::Unbiased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub widths: Vec<f64>,
    pub alpha: f64,
    pub kernel_weights: Vec<f64>,
    pub estimator: MmdEstimator,
    pub dropped_columns: Vec<usize>,
}

impl fmt::Display for ShiftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ({:.3})", self.statistic, self.threshold)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn combined(d2: f64, widths: &[f64], beta: &[f64]) -> f64 {
    widths.iter().zip(beta).map(|(g, b)| b * (-g * d2).exp()).sum()
}

/// Convex kernel weights maximizing `eta'b / sqrt(b'Qb)`, found by solving
/// the equivalent quadratic program over every support subset.
pub fn select_weights(eta: &[f64], q: &[Vec<f64>]) -> Vec<f64> {
    let k = eta.len();
    let uniform = vec![1.0 / k as f64; k];
    if eta.iter().all(|&e| e <= 0.0) {
        return uniform;
    }
    let scale = (0..k).map(|i| q[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let ridge = 1e-8 * scale;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let m = idx.len();
        let qs = nalgebra::DMatrix::from_fn(m, m, |a, b| q[idx[a]][idx[b]] + if a == b { ridge } else { 0.0 });
        let es = nalgebra::DVector::from_fn(m, |a, _| eta[idx[a]]);
        let Some(chol) = qs.cholesky() else { continue };
        let z = chol.solve(&es);
        let denom = es.dot(&z);
        if denom <= 0.0 || z.iter().any(|&v| v < 0.0) {
            continue;
        }
        // Minimizing b'Qb under eta'b = 1 has value 1 / denom.
        let objective = 1.0 / denom;
        if best.as_ref().is_none_or(|(o, _)| objective < *o) {
            let mut beta = vec![0.0; k];
            for (a, &i) in idx.iter().enumerate() {
                beta[i] = z[a];
            }
            best = Some((objective, beta));
        }
    }
    match best {
        Some((_, beta)) => {
            let s: f64 = beta.iter().sum();
            beta.into_iter().map(|b| b / s).collect()
        }
        None => uniform,
    }
}

/// Per-kernel mean and covariance of the linear-time MMD h-statistic over
/// consecutive pairs.
pub fn linear_time_moments(x: &[Vec<f64>], y: &[Vec<f64>], widths: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let pairs = x.len().min(y.len()) / 2;
    let k = widths.len();
    let h: Vec<Vec<f64>> = (0..pairs)
        .map(|p| {
            let (x1, x2, y1, y2) = (&x[2 * p], &x[2 * p + 1], &y[2 * p], &y[2 * p + 1]);
            let (dxx, dyy, dxy, dyx) = (sq_dist(x1, x2), sq_dist(y1, y2), sq_dist(x1, y2), sq_dist(x2, y1));
            widths
                .iter()
                .map(|g| (-g * dxx).exp() + (-g * dyy).exp() - (-g * dxy).exp() - (-g * dyx).exp())
                .collect()
        })
        .collect();
    let n = pairs.max(1) as f64;
    let eta: Vec<f64> = (0..k).map(|u| h.iter().map(|r| r[u]).sum::<f64>() / n).collect();
    let denom = (pairs.max(2) - 1) as f64;
    let q = (0..k)
        .map(|u| {
            (0..k)
                .map(|v| h.iter().map(|r| (r[u] - eta[u]) * (r[v] - eta[v])).sum::<f64>() / denom)
                .collect()
        })
        .collect();
    (eta, q)
}

/// Pooled combined-kernel matrix with precomputed row layout for fast
/// permutation statistics.
struct PooledKernel {
    n: usize,
    k: Vec<f64>,
    off_diag_total: f64,
}

impl PooledKernel {
    fn new(pooled: &[&Vec<f64>], widths: &[f64], beta: &[f64]) -> Self {
        let n = pooled.len();
        let k: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|ij| combined(sq_dist(pooled[ij / n], pooled[ij % n]), widths, beta))
            .collect();
        let total: f64 = k.iter().sum();
        let diag: f64 = (0..n).map(|i| k[i * n + i]).sum();
        PooledKernel {
            n,
            k,
            off_diag_total: total - diag,
        }
    }

    /// Statistic with the first `nx` entries of `order` forming sample X.
    fn statistic(&self, order: &[usize], nx: usize, estimator: MmdEstimator) -> f64 {
        let n = self.n;
        let ny = n - nx;
        let (xs, ys) = order.split_at(nx);
        let block = |a: &[usize], b: &[usize], skip_diag: bool| -> f64 {
            let mut s = 0.0;
            for &i in a {
                let row = &self.k[i * n..(i + 1) * n];
                for &j in b {
                    if !(skip_diag && i == j) {
                        s += row[j];
                    }
                }
            }
            s
        };
        match estimator {
            MmdEstimator::Unbiased => {
                let sxx = block(xs, xs, true);
                let syy = block(ys, ys, true);
                let sxy = (self.off_diag_total - sxx - syy) / 2.0;
                sxx / (nx * (nx - 1)) as f64 + syy / (ny * (ny - 1)) as f64 - 2.0 * sxy / (nx * ny) as f64
            }
            MmdEstimator::Literal => {
                let sxy = block(xs, ys, false);
                let dx: f64 = xs.iter().map(|&i| self.k[i * n + i]).sum();
                let dy: f64 = ys.iter().map(|&j| self.k[j * n + j]).sum();
                (ny as f64 * dx + nx as f64 * dy - sxy) / (nx * ny) as f64
            }
        }
    }
}

/// Unbiased squared MMD under one combined kernel, computed directly.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>], widths: &[f64], beta: &[f64]) -> f64 {
    let kk = |a: &[f64], b: &[f64]| combined(sq_dist(a, b), widths, beta);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut sxx = 0.0;
    for (i, a) in x.iter().enumerate() {
        for (j, b) in x.iter().enumerate() {
            if i != j {
                sxx += kk(a, b);
            }
        }
    }
    let mut syy = 0.0;
    for (i, a) in y.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            if i != j {
                syy += kk(a, b);
            }
        }
    }
    let sxy: f64 = x.iter().flat_map(|a| y.iter().map(move |b| kk(a, b))).sum();
    sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n)
}

fn check_rows(name: &str, rows: &[Vec<f64>], d: usize) -> Result<()> {
    if rows.len() < MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "{name} sample has {} rows, the test needs at least {MIN_ROWS}",
            rows.len()
        )));
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::Schema(format!("{name} row has {} columns, expected {d}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} sample")));
        }
    }
    Ok(())
}

pub fn mkmmd_test(source: &[Vec<f64>], target: &[Vec<f64>], config: &MmdConfig) -> Result<ShiftReport> {
    if config.widths.is_empty() || config.widths.len() > 16 || config.widths.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::InvalidParams("kernel widths must be 1..=16 positive values".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) || config.n_permutations == 0 {
        return Err(Error::InvalidParams("need 0 < alpha < 1 and at least one permutation".into()));
    }
    let d = source.first().map_or(0, Vec::len);
    check_rows("source", source, d)?;
    check_rows("target", target, d)?;

    let pooled: Vec<Vec<f64>> = source.iter().chain(target).cloned().collect();
    let stdz = Standardizer::fit(&pooled);
    let dropped: Vec<usize> = (0..d).filter(|&j| stdz.raw_std[j] == 0.0).collect();
    if !dropped.is_empty() {
        log::warn!("dropping {} zero-variance column(s) before the MMD test: {dropped:?}", dropped.len());
    }
    let keep: Vec<usize> = (0..d).filter(|j| !dropped.contains(j)).collect();
    let prep = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let z = stdz.apply_row(r);
                keep.iter().map(|&j| z[j]).collect()
            })
            .collect()
    };
    let mut xs = prep(source);
    let mut ys = prep(target);
    let widths = config.widths.clone();
    if keep.is_empty() {
        return Ok(ShiftReport {
            statistic: 0.0,
            threshold: 0.0,
            reject: false,
            kernel_weights: vec![1.0 / widths.len() as f64; widths.len()],
            widths,
            alpha: config.alpha,
            estimator: config.estimator,
            dropped_columns: dropped,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    xs.shuffle(&mut rng);
    ys.shuffle(&mut rng);
    let (x_sel, x_test) = xs.split_at(xs.len() / 2);
    let (y_sel, y_test) = ys.split_at(ys.len() / 2);

    let (eta, q) = linear_time_moments(x_sel, y_sel, &widths);
    let beta = select_weights(&eta, &q);

    let pooled_test: Vec<&Vec<f64>> = x_test.iter().chain(y_test).collect();
    let kernel = PooledKernel::new(&pooled_test, &widths, &beta);
    let nx = x_test.len();
    let identity: Vec<usize> = (0..kernel.n).collect();
    let statistic = kernel.statistic(&identity, nx, config.estimator);

    let mut null: Vec<f64> = (0..config.n_permutations)
        .into_par_iter()
        .map(|p| {
            let mut prng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
            prng.set_stream(p as u64 + 1);
            let mut order = identity.clone();
            order.shuffle(&mut prng);
            kernel.statistic(&order, nx, config.estimator)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let threshold = empirical_quantile(&null, 1.0 - config.alpha);
    Ok(ShiftReport {
        statistic,
        threshold,
        reject: statistic > threshold,
        widths,
        alpha: config.alpha,
        kernel_weights: beta,
        estimator: config.estimator,
        dropped_columns: dropped,
    })
}

/// Smallest sorted value with at least fraction `p` of the sample at or below
/// it.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect()
    }

    fn cfg(seed: u64, perms: usize) -> MmdConfig {
        MmdConfig {
            n_permutations: perms,
            seed,
            ..MmdConfig::default()
        }
    }

    #[test]
    fn fast_statistic_matches_direct_sum() {
        let x = gaussian(15, 3, 0.0, 1);
        let y = gaussian(11, 3, 0.5, 2);
        let widths = [0.1, 1.0];
        let beta = [0.3, 0.7];
        let pooled: Vec<&Vec<f64>> = x.iter().chain(&y).collect();
        let k = PooledKernel::new(&pooled, &widths, &beta);
        let order: Vec<usize> = (0..26).collect();
        let fast = k.statistic(&order, 15, MmdEstimator::Unbiased);
        assert!((fast - mmd2_unbiased(&x, &y, &widths, &beta)).abs() < 1e-12);
        // k(x, x) = 1 for every Gaussian kernel, so the literal form is 2 minus
        // the mean cross kernel.
        let lit = k.statistic(&order, 15, MmdEstimator::Literal);
        let cross: f64 = x
            .iter()
            .flat_map(|a| y.iter().map(move |b| combined(sq_dist(a, b), &widths, &beta)))
            .sum::<f64>()
            / (15.0 * 11.0);
        assert!((lit - (2.0 - cross)).abs() < 1e-12);
    }

    #[test]
    fn weights_are_convex() {
        for seed in 0..5 {
            let x = gaussian(60, 2, 0.0, seed);
            let y = gaussian(60, 2, 0.7, seed + 100);
            let (eta, q) = linear_time_moments(&x, &y, &DEFAULT_WIDTHS);
            let b = select_weights(&eta, &q);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(select_weights(&[-1.0, -2.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.5, 0.5]);
    }

    #[test]
    fn single_kernel_weight_is_one() {
        let (eta, q) = (vec![0.3], vec![vec![0.04]]);
        assert_eq!(select_weights(&eta, &q), vec![1.0]);
    }

    #[test]
    fn quantile_rule() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.95), 19.0);
        assert_eq!(empirical_quantile(&s, 1.0), 20.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
    }

    #[test]
    fn shifted_means_rejected_copy_not() {
        let x = gaussian(200, 2, 0.0, 7);
        let y = gaussian(200, 2, 3.0, 8);
        let r = mkmmd_test(&x, &y, &cfg(1, 200)).unwrap();
        assert!(r.reject, "{r}");
        let r = mkmmd_test(&x, &x.clone(), &cfg(1, 200)).unwrap();
        assert!(!r.reject, "{r}");
        assert_eq!(r.reject, r.statistic > r.threshold);
    }

    #[test]
    fn constant_columns_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![1.0, rng.random()]).collect();
        let y: Vec<Vec<f64>> = (0..30).map(|_| vec![1.0, rng.random()]).collect();
        let r = mkmmd_test(&x, &y, &cfg(2, 50)).unwrap();
        assert_eq!(r.dropped_columns, vec![0]);
        let x: Vec<Vec<f64>> = vec![vec![2.0]; 25];
        let r = mkmmd_test(&x, &x, &cfg(2, 50)).unwrap();
        assert_eq!((r.statistic, r.threshold, r.reject), (0.0, 0.0, false));
    }

    #[test]
    fn too_few_rows() {
        let x = gaussian(19, 2, 0.0, 1);
        let y = gaussian(40, 2, 0.0, 2);
        assert!(matches!(mkmmd_test(&x, &y, &cfg(0, 10)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn display_shape() {
        let r = ShiftReport {
            statistic: 6.8468,
            threshold: 0.0703,
            reject: true,
            widths: vec![1.0],
            alpha: 0.05,
            kernel_weights: vec![1.0],
            estimator: MmdEstimator::Unbiased,
            dropped_columns: vec![],
        };
        assert_eq!(r.to_string(), "6.847 (0.070)");
    }

    #[test]
    fn deterministic() {
        let x = gaussian(40, 3, 0.0, 11);
        let y = gaussian(40, 3, 0.3, 12);
        assert_eq!(mkmmd_test(&x, &y, &cfg(9, 100)).unwrap(), mkmmd_test(&x, &y, &cfg(9, 100)).unwrap());
    }
}
