//! Independent reference implementations used by the integration and
//! acceptance tests. They favor obviousness over speed.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use airspot::grid::{GridIndex, Region};
use airspot::hotspot::meanshift::WeightedPoint;
use airspot::hotspot::HourSet;
use airspot::ingest::{DayTrajectory, ObservationRecord};
use airspot::spike::{Background, SpikeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn sorted_lower_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[(v.len() - 1) / 2])
}

/// A spike as the brute-force search reports it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpike {
    pub window_m: f64,
    pub left_start: usize,
    pub start: usize,
    pub end: usize,
    pub right_end: usize,
    pub level: f64,
    pub left_level: f64,
    pub right_level: f64,
}

fn median_in(values: &[Option<f64>], from: usize, to: usize, min_pts: usize) -> Option<f64> {
    let v: Vec<f64> = values[from..=to].iter().flatten().copied().collect();
    if v.len() < min_pts {
        None
    } else {
        sorted_lower_median(v)
    }
}

/// Every window start and end in a segment, found from the full pairwise
/// distance table: the end of the window starting at `i` is the first later
/// point at least `w - tol` away, kept only if it is at most `w + tol` away.
fn window_ends(dist: &[Vec<f64>], seg: &std::ops::Range<usize>, w: f64, tol: f64) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = dist.len();
    let mut fwd = vec![None; n];
    let mut bwd = vec![None; n];
    for i in seg.clone() {
        let reach: Vec<usize> = seg.clone().filter(|&j| j > i && dist[i][j] >= w - tol).collect();
        fwd[i] = reach.first().copied().filter(|&j| dist[i][j] <= w + tol);
        let back: Vec<usize> = seg.clone().filter(|&j| j < i && dist[i][j] >= w - tol).collect();
        bwd[i] = back.last().copied().filter(|&j| dist[i][j] <= w + tol);
    }
    (fwd, bwd)
}

/// Brute-force spike search: lists every qualifying window for every size,
/// then applies the greedy claim order (sizes ascending, segments in order,
/// starts ascending; an accepted window claims its points and the scan
/// resumes after its right neighbor).
pub fn oracle_spikes(traj: &DayTrajectory, pollutant: usize, params: &SpikeParams, region: &Region) -> Vec<OracleSpike> {
    let values: Vec<Option<f64>> = traj.points.iter().map(|p| p.concentrations[pollutant]).collect();
    let a_d = match params.background {
        Background::DailyMedian => match sorted_lower_median(values.iter().flatten().copied().collect()) {
            Some(v) => v,
            None => return Vec::new(),
        },
        Background::Fixed(v) => v,
    };
    let xy: Vec<(f64, f64)> = traj.points.iter().map(|p| region.project(p.lat, p.lon).unwrap()).collect();
    let n = xy.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (xy[i].0 - xy[j].0).hypot(xy[i].1 - xy[j].1)).collect())
        .collect();
    let (tol, k) = (params.tolerance_m, params.min_points_per_window);
    let mut claimed = vec![false; n];
    let mut out = Vec::new();
    for &w in &params.window_sizes_m {
        for seg in &traj.segments {
            let (fwd, bwd) = window_ends(&dist, seg, w, tol);
            // Candidates independent of any claim.
            let mut cand: BTreeMap<usize, OracleSpike> = BTreeMap::new();
            for m in seg.start + 1..seg.end {
                let Some(e) = fwd[m] else { continue };
                if e + 1 >= seg.end {
                    continue;
                }
                let (Some(l), Some(q)) = (bwd[m - 1], fwd[e + 1]) else { continue };
                let (Some(am), Some(al), Some(ar)) =
                    (median_in(&values, m, e, k), median_in(&values, l, m - 1, k), median_in(&values, e + 1, q, k))
                else {
                    continue;
                };
                if am >= a_d && am >= params.ratio * al.max(ar) {
                    cand.insert(
                        m,
                        OracleSpike { window_m: w, left_start: l, start: m, end: e, right_end: q, level: am, left_level: al, right_level: ar },
                    );
                }
            }
            let mut next = seg.start;
            for (m, c) in cand {
                if m < next || claimed[c.start..=c.end].iter().any(|&x| x) {
                    continue;
                }
                claimed[c.start..=c.end].iter_mut().for_each(|x| *x = true);
                next = c.right_end + 1;
                out.push(c);
            }
        }
    }
    out.sort_by_key(|s| (traj.points[s.start].time_ms, s.start));
    out
}

/// Shadow density of the windowed mean shift, written out directly.
pub fn shadow_kde(points: &[WeightedPoint], x: f64, y: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for p in points {
        let d = (p.x - x).hypot(p.y - y);
        if d <= b {
            total += p.weight * ((-(d * d) / (2.0 * b * b)).exp() - (-0.5f64).exp());
        }
    }
    total
}

/// Strict local maxima of the shadow density on a square lattice covering
/// the points plus a margin of `b`.
pub fn lattice_local_maxima(points: &[WeightedPoint], b: f64, step: f64) -> Vec<(f64, f64, f64)> {
    let x0 = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - b;
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - b;
    let x1 = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + b;
    let y1 = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + b;
    let nx = ((x1 - x0) / step).ceil() as usize + 1;
    let ny = ((y1 - y0) / step).ceil() as usize + 1;
    let grid: Vec<Vec<f64>> = (0..nx)
        .map(|i| (0..ny).map(|j| shadow_kde(points, x0 + i as f64 * step, y0 + j as f64 * step, b)).collect())
        .collect();
    let mut maxima = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let v = grid[i][j];
            if v <= 0.0 {
                continue;
            }
            let top = (-1i64..=1)
                .flat_map(|di| (-1i64..=1).map(move |dj| (di, dj)))
                .filter(|&d| d != (0, 0))
                .all(|(di, dj)| grid[(i as i64 + di) as usize][(j as i64 + dj) as usize] <= v);
            if top {
                maxima.push((x0 + i as f64 * step, y0 + j as f64 * step, v));
            }
        }
    }
    maxima
}

fn window_set(points: &[WeightedPoint], x: f64, y: f64, b: f64) -> Vec<bool> {
    points.iter().map(|p| (p.x - x).hypot(p.y - y) <= b).collect()
}

/// The hard window splits the density into smooth pieces, one per set of
/// in-window points, separated by creases. Returns the argmax of the density
/// over the lattice points (anchored at `center`, spacing `step`, within `b`
/// of it) that see the same in-window set as `center`.
pub fn piece_argmax(points: &[WeightedPoint], center: (f64, f64), b: f64, step: f64) -> (f64, f64, f64) {
    let own = window_set(points, center.0, center.1, b);
    let n = (b / step).ceil() as i64;
    let mut best = (center.0, center.1, shadow_kde(points, center.0, center.1, b));
    for i in -n..=n {
        for j in -n..=n {
            let (x, y) = (center.0 + i as f64 * step, center.1 + j as f64 * step);
            if (x - center.0).hypot(y - center.1) > b || window_set(points, x, y, b) != own {
                continue;
            }
            let v = shadow_kde(points, x, y, b);
            if v > best.2 {
                best = (x, y, v);
            }
        }
    }
    best
}

/// Temporal hit rate by a 24-slot tally.
pub fn thr_oracle(obs_hours: &[u8], spike_hours: &[u8], daytime: &[u8]) -> f64 {
    let mut seen = [false; 24];
    let mut hit = [false; 24];
    for &h in obs_hours {
        seen[h as usize] = true;
    }
    for &h in spike_hours {
        hit[h as usize] = true;
    }
    let mut count = 0u32;
    for &h in daytime {
        if seen[h as usize] && hit[h as usize] {
            count += 1;
        }
    }
    if daytime.is_empty() {
        0.0
    } else {
        count as f64 / daytime.len() as f64
    }
}

pub fn hours_of(set: HourSet) -> Vec<u8> {
    (0..24).filter(|h| set.contains(*h)).collect()
}

/// Elevated level: mean over cells of the mean over available pollutants of
/// the cell median over the pollutant background.
pub fn ea_oracle(cells: &[GridIndex], medians: &BTreeMap<GridIndex, Vec<Option<f64>>>, backgrounds: &[f64]) -> f64 {
    let mut per_cell = Vec::new();
    for c in cells {
        let Some(m) = medians.get(c) else { continue };
        let mut ratios = Vec::new();
        for (p, v) in m.iter().enumerate() {
            if let Some(v) = v {
                ratios.push(v / backgrounds[p]);
            }
        }
        if !ratios.is_empty() {
            per_cell.push(ratios.iter().sum::<f64>() / ratios.len() as f64);
        }
    }
    if per_cell.is_empty() {
        0.0
    } else {
        per_cell.iter().sum::<f64>() / per_cell.len() as f64
    }
}

/// Jaccard by counting memberships over the union.
pub fn jaccard_oracle(a: &[GridIndex], b: &[GridIndex]) -> f64 {
    let all: BTreeSet<GridIndex> = a.iter().chain(b).copied().collect();
    let both = all.iter().filter(|c| a.contains(c) && b.contains(c)).count();
    if all.is_empty() {
        0.0
    } else {
        both as f64 / all.len() as f64
    }
}

pub fn ri_oracle(a: &[GridIndex], na: usize, b: &[GridIndex], nb: usize) -> f64 {
    let ka: BTreeSet<_> = a.iter().collect();
    let kb: BTreeSet<_> = b.iter().collect();
    let fa = if na == 0 { 0.0 } else { ka.len() as f64 / na as f64 };
    let fb = if nb == 0 { 0.0 } else { kb.len() as f64 / nb as f64 };
    let hr = (fa + fb) / 2.0;
    if hr > 0.0 {
        jaccard_oracle(a, b) / hr
    } else {
        0.0
    }
}

/// AUC as the fraction of positive-negative pairs ranked correctly, ties
/// counting one half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (twice as f64 / 2.0) / (p * n) as f64
}

/// The `k` nearest rows by a full sort of all distances, ties by index.
pub fn knn_brute(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = Vec::new();
    for (j, r) in rows.iter().enumerate() {
        if j != i {
            d.push((r.iter().zip(&rows[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), j));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().take(k).map(|x| x.1).collect()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

/// Two domains that share a labeling rule on a latent vector `z`. The source
/// observes `z`; the target observes `z M + offset` with a symmetric positive
/// definite `M` built from random rotations and scales whose spread grows
/// with `shift`.
pub fn covariance_shifted_domains(
    n_source: usize,
    n_target: usize,
    d: usize,
    shift: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>, Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w: Vec<f64> = w.iter().map(|v| v / norm).collect();
    let label = |z: &[f64], rng: &mut ChaCha8Rng| -> u8 {
        let s: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
        let e: f64 = StandardNormal.sample(rng);
        (s + 0.3 * e > 0.8) as u8
    };
    let a = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let q = a.qr().q();
    let scales = nalgebra::DVector::from_fn(d, |_, _| (shift * rng.random_range(-1.0..1.0f64)).exp());
    let m: nalgebra::DMatrix<f64> = &q * nalgebra::DMatrix::from_diagonal(&scales) * q.transpose();
    let offset: Vec<f64> = (0..d).map(|_| shift * rng.random_range(-1.0..1.0)).collect();
    let zs = gaussian_rows(&mut rng, n_source, d);
    let ys: Vec<u8> = zs.iter().map(|z| label(z, &mut rng)).collect();
    let zt = gaussian_rows(&mut rng, n_target, d);
    let yt: Vec<u8> = zt.iter().map(|z| label(z, &mut rng)).collect();
    let xt: Vec<Vec<f64>> = zt
        .iter()
        .map(|z| {
            (0..d)
                .map(|j| (0..d).map(|i| z[i] * m[(i, j)]).sum::<f64>() + offset[j])
                .collect()
        })
        .collect();
    (zs, ys, xt, yt)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// A hand-built car-day on a straight road, one point per second.
pub fn straight_day(region: &Region, values: &[Option<f64>], step_m: f64, t0_s: i64) -> DayTrajectory {
    let points: Vec<ObservationRecord> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (lat, lon) = region.unproject(60.0 + i as f64 * step_m, 300.0);
            ObservationRecord {
                car_id: "car".into(),
                time_ms: (t0_s + i as i64) * 1000,
                lat,
                lon,
                concentrations: vec![*v],
            }
        })
        .collect();
    let n = points.len();
    DayTrajectory { car_id: "car".into(), day: points[0].local_day(region.utc_offset_minutes), points, segments: vec![0..n] }
}
