//! L2-regularized, sample-weighted logistic loss and a gradient descent
//! solver with Armijo backtracking.

/// Parameters are laid out as `[bias, w_1, ..., w_d]`; the bias is not
/// regularized.
pub fn loss_and_grad(beta: &[f64], x: &[Vec<f64>], y: &[u8], sample_w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let n = x.len().max(1) as f64;
    let mut grad = vec![0.0; beta.len()];
    let mut loss = 0.0;
    for ((row, &label), &s) in x.iter().zip(y).zip(sample_w) {
        let z = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        // softplus(z) - y z, computed without overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += s * (softplus - label as f64 * z);
        let r = s * (sigmoid(z) - label as f64);
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(row) {
            *g += r * v;
        }
    }
    let reg: f64 = beta[1..].iter().map(|b| b * b).sum();
    loss = (loss + 0.5 * lambda * reg) / n;
    grad[0] /= n;
    for (g, b) in grad[1..].iter_mut().zip(&beta[1..]) {
        *g = (*g + lambda * b) / n;
    }
    (loss, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after every accepted step, starting from the initial point.
    pub loss_trace: Vec<f64>,
}

/// Gradient descent from zero. The trial step is the Barzilai-Borwein step
/// (1 on the first iteration), halved until the Armijo condition holds.
pub fn fit(x: &[Vec<f64>], y: &[u8], sample_w: &[f64], lambda: f64, tol: f64, max_iter: usize) -> FitResult {
    let d = x.first().map_or(0, Vec::len);
    let mut beta = vec![0.0; d + 1];
    let (mut loss, mut grad) = loss_and_grad(&beta, x, y, sample_w, lambda);
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = norm(&grad) < tol;
    while !converged && iterations < max_iter {
        iterations += 1;
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - t * g).collect();
            let (l, g) = loss_and_grad(&cand, x, y, sample_w, lambda);
            if l <= loss - 1e-4 * t * g2 {
                accepted = Some((cand, l, g));
                break;
            }
            t *= 0.5;
        }
        let Some((next, l, g)) = accepted else {
            // No representable descent left.
            converged = norm(&grad) < tol.sqrt();
            break;
        };
        let s: Vec<f64> = next.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        beta = next;
        loss = l;
        grad = g;
        trace.push(loss);
        converged = norm(&grad) < tol;
    }
    FitResult {
        grad_norm: norm(&grad),
        beta,
        loss,
        iterations,
        converged,
        loss_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        (x, y, w)
    }

    #[test]
    fn zero_parameters_give_half() {
        let (x, y, w) = batch(1, 10, 3);
        let (loss, _) = loss_and_grad(&[0.0; 4], &x, &y, &w, 1.0);
        let mean_w: f64 = w.iter().sum::<f64>() / 10.0;
        assert!((loss - mean_w * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn extreme_margins_stay_finite() {
        let x = vec![vec![1e6], vec![-1e6]];
        let (loss, g) = loss_and_grad(&[0.0, 1.0], &x, &[0, 1], &[1.0, 1.0], 0.0);
        assert!(loss.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!((loss - 1e6).abs() < 1e-3);
    }

    #[test]
    fn loss_decreases_monotonically() {
        let (x, y, w) = batch(2, 80, 4);
        let r = fit(&x, &y, &w, 1.0, 1e-6, 1000);
        assert!(r.converged, "{}", r.grad_norm);
        for pair in r.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn separable_one_dimensional() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let y: Vec<u8> = (0..20).map(|i| (i >= 10) as u8).collect();
        let r = fit(&x, &y, &[1.0; 20], 1e-3, 1e-6, 5000);
        for (row, label) in x.iter().zip(&y) {
            let p = sigmoid(r.beta[0] + r.beta[1] * row[0]);
            assert_eq!((p >= 0.5) as u8, *label);
        }
    }
}
