//! SMOTE oversampling: synthetic minority rows on segments between a
//! minority row and one of its nearest minority neighbors.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub base: usize,
    pub neighbor: usize,
    pub u: f64,
    pub row: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows to row `i` (itself excluded), ties broken
/// by index.
pub fn nearest_neighbors(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, r)| (dist2(&rows[i], r), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Generates `n_synthetic` rows. Bases are drawn uniformly from the minority
/// rows, the neighbor uniformly among the base's `k` nearest, and the
/// position uniformly on the segment.
pub fn smote<R: Rng>(minority: &[Vec<f64>], k: usize, n_synthetic: usize, rng: &mut R) -> Result<Vec<Synthetic>> {
    if minority.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "SMOTE needs at least 2 minority rows, got {}",
            minority.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParams("SMOTE k must be >= 1".into()));
    }
    let k = k.min(minority.len() - 1);
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| nearest_neighbors(minority, i, k))
        .collect();
    let mut out = Vec::with_capacity(n_synthetic);
    for _ in 0..n_synthetic {
        let base = rng.random_range(0..minority.len());
        let neighbor = neighbors[base][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let row = minority[base]
            .iter()
            .zip(&minority[neighbor])
            .map(|(a, b)| a + u * (b - a))
            .collect();
        out.push(Synthetic { base, neighbor, u, row });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_points() {
        let m = vec![vec![1.5, -2.0]; 4];
        let s = smote(&m, 5, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.iter().all(|x| x.row == vec![1.5, -2.0]));
    }

    #[test]
    fn diagonal_segment() {
        let m = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let s = smote(&m, 1, 50, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for x in &s {
            assert_eq!(x.row[0], x.row[1]);
            assert!((0.0..=1.0).contains(&x.row[0]));
        }
    }

    #[test]
    fn deterministic_and_errors() {
        let m: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let a = smote(&m, 3, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = smote(&m, 3, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(smote(&m[..1], 3, 10, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }
}
