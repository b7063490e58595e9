//! Oracles shared by the integration tests. Nothing here calls into the
//! estimator or simulator code paths being checked.
#![allow(dead_code)]

use std::path::PathBuf;

use dspg::experiment::ExperimentConfig;
use nalgebra::DMatrix;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `xᵀAx` by explicit double loop.
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for r in 0..d {
        for c in 0..d {
            s += x[r] * a[(r, c)] * x[c];
        }
    }
    s
}

/// `(A + Aᵀ)x` by explicit loops.
pub fn quad_gradient(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|k| (0..d).map(|j| (a[(k, j)] + a[(j, k)]) * x[j]).sum()).collect()
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Exact mean and population variance of `[f(x + cΔ) − f(x − cΔ)] / (2cΔ(k))`
/// over every sign vector, built recursively.
pub fn brute_force_moments(f: &dyn Fn(&[f64]) -> f64, x: &[f64], c: f64, k: usize) -> (f64, f64) {
    fn signs(d: usize) -> Vec<Vec<f64>> {
        if d == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for tail in signs(d - 1) {
            for s in [1.0, -1.0] {
                let mut v = vec![s];
                v.extend(&tail);
                out.push(v);
            }
        }
        out
    }
    let values: Vec<f64> = signs(x.len())
        .into_iter()
        .map(|delta| {
            let plus: Vec<f64> = x.iter().zip(&delta).map(|(a, s)| a + c * s).collect();
            let minus: Vec<f64> = x.iter().zip(&delta).map(|(a, s)| a - c * s).collect();
            (f(&plus) - f(&minus)) / (2.0 * c * delta[k])
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Geometric staleness moments for delivery probability `p`: `(E τ, E τ²)`.
pub fn geometric_moments(p: f64) -> (f64, f64) {
    ((1.0 - p) / p, (1.0 - p) * (2.0 - p) / (p * p))
}
