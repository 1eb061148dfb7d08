//! Sample-weighted mean shift with a Gaussian kernel over a radius-b window.
//!
//! Data points carry weights; each seed is moved to the kernel-weighted mean
//! of the data points within distance b until the step falls below a
//! tolerance. Seeds that end up close to each other share a mode.
//!
//! Weighting the window by `exp(-d^2 / 2b^2)` makes every step an ascent step
//! on the density with the shadow profile `exp(-d^2 / 2b^2) - exp(-1/2)`,
//! clipped at zero beyond b. That density is what [`weighted_kde`] returns.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSettings {
    pub bandwidth_m: f64,
    pub max_iter: usize,
    pub tol_m: f64,
}

/// Unnormalized weighted density at `(x, y)` that the shift steps climb.
pub fn weighted_kde(points: &[WeightedPoint], x: f64, y: f64, bandwidth: f64) -> f64 {
    let b2 = bandwidth * bandwidth;
    let floor = (-0.5f64).exp();
    points
        .iter()
        .map(|p| {
            let d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
            if d2 <= b2 {
                p.weight * ((-d2 / (2.0 * b2)).exp() - floor)
            } else {
                0.0
            }
        })
        .sum()
}

/// One mean shift step. `None` when no weighted point lies in the window.
pub fn shift_step(points: &[WeightedPoint], x: f64, y: f64, bandwidth: f64) -> Option<(f64, f64)> {
    let b2 = bandwidth * bandwidth;
    let inv = 1.0 / (2.0 * b2);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sw = 0.0;
    for p in points {
        let d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
        if d2 > b2 {
            continue;
        }
        let k = p.weight * (-d2 * inv).exp();
        sx += k * p.x;
        sy += k * p.y;
        sw += k;
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

/// Iterates a seed to convergence and returns every iterate, seed first.
pub fn trace(points: &[WeightedPoint], seed: (f64, f64), s: &ShiftSettings) -> Vec<(f64, f64)> {
    let mut path = vec![seed];
    let (mut x, mut y) = seed;
    for _ in 0..s.max_iter {
        let Some((nx, ny)) = shift_step(points, x, y, s.bandwidth_m) else {
            break;
        };
        let moved = (nx - x).hypot(ny - y);
        x = nx;
        y = ny;
        path.push((x, y));
        if moved < s.tol_m {
            break;
        }
    }
    path
}

pub fn converge(points: &[WeightedPoint], seed: (f64, f64), s: &ShiftSettings) -> (f64, f64) {
    let (mut x, mut y) = seed;
    for _ in 0..s.max_iter {
        let Some((nx, ny)) = shift_step(points, x, y, s.bandwidth_m) else {
            break;
        };
        let moved = (nx - x).hypot(ny - y);
        x = nx;
        y = ny;
        if moved < s.tol_m {
            break;
        }
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeAssignment {
    /// Converged position of every seed.
    pub converged: Vec<(f64, f64)>,
    /// Mode index of every seed.
    pub mode_of_seed: Vec<usize>,
    /// Mode positions in order of first appearance.
    pub modes: Vec<(f64, f64)>,
    pub members: Vec<usize>,
}

/// Converges all seeds (in parallel) and merges converged positions that lie
/// within `merge_radius_m` of an earlier mode, scanning seeds in order.
pub fn find_modes(
    points: &[WeightedPoint],
    seeds: &[(f64, f64)],
    s: &ShiftSettings,
    merge_radius_m: f64,
) -> ModeAssignment {
    let converged: Vec<(f64, f64)> = seeds.par_iter().map(|&seed| converge(points, seed, s)).collect();
    let mut modes: Vec<(f64, f64)> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut mode_of_seed = Vec::with_capacity(seeds.len());
    for &(x, y) in &converged {
        let found = modes
            .iter()
            .position(|&(mx, my)| (mx - x).hypot(my - y) <= merge_radius_m);
        let id = match found {
            Some(id) => id,
            None => {
                modes.push((x, y));
                members.push(0);
                modes.len() - 1
            }
        };
        members[id] += 1;
        mode_of_seed.push(id);
    }
    ModeAssignment {
        converged,
        mode_of_seed,
        modes,
        members,
    }
}
