//! Simultaneous-perturbation gradient estimators.
//!
//! All estimators here share one primitive: two evaluations of a local
//! objective at `view ± c·Δ`, divided by `2c·Δ(k)` for whichever coordinate
//! `k` is wanted. The DSPG agent keeps only its own coordinate; the classic
//! centralized step and the consensus shares keep all of them.
//!
//! [`enumerate_diagnostics`] computes the exact mean and variance of the
//! estimate by summing over all `2^d` sign patterns, which is the ground
//! truth the Monte-Carlo paths are tested against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::{euclidean_norm, Estimate, LocalObjective, ObjectiveSet};

/// Largest dimension [`enumerate_diagnostics`] will enumerate.
pub const ENUMERATION_LIMIT: usize = 20;

/// A Rademacher direction `Δ ∈ {−1, +1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationVector(Vec<f64>);

impl PerturbationVector {
    pub fn from_signs(signs: Vec<f64>) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(bad) = signs.iter().find(|&&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("entries must be exactly -1 or +1, got {bad}"),
            });
        }
        Ok(Self(signs))
    }

    /// Sign pattern number `mask`: bit `k` set means `Δ(k) = −1`.
    pub fn from_mask(d: usize, mask: u64) -> Self {
        Self((0..d).map(|k| if mask >> k & 1 == 1 { -1.0 } else { 1.0 }).collect())
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn signs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Redraws every entry in place; consumes exactly `len()` draws.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for s in &mut self.0 {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
}

/// Draws `d` independent symmetric Bernoulli signs.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<PerturbationVector> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut delta = PerturbationVector::ones(d);
    delta.resample(rng);
    Ok(delta)
}

/// The perturbation radius `c`; strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SensitivityParam(f64);

impl SensitivityParam {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: format!("sensitivity must be positive and finite, got {c}"),
            });
        }
        Ok(Self(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `F(view + cΔ) − F(view − cΔ)` using `scratch` for the perturbed points.
/// Exactly two objective evaluations.
pub(crate) fn perturbed_difference(
    f: &dyn LocalObjective,
    view: &[f64],
    delta: &[f64],
    c: f64,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    scratch.clear();
    scratch.extend(view.iter().zip(delta).map(|(v, s)| v + c * s));
    let plus = f.value(scratch);
    if !plus.is_finite() {
        return Err(Error::NumericalOverflow { point: scratch.clone() });
    }
    scratch.clear();
    scratch.extend(view.iter().zip(delta).map(|(v, s)| v - c * s));
    let minus = f.value(scratch);
    if !minus.is_finite() {
        return Err(Error::NumericalOverflow { point: scratch.clone() });
    }
    let diff = plus - minus;
    if !diff.is_finite() {
        return Err(Error::NumericalOverflow { point: view.to_vec() });
    }
    Ok(diff)
}

fn check_view(obj: &ObjectiveSet, view: &[f64], delta: &PerturbationVector) -> Result<()> {
    let d = obj.dim();
    if view.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: view.len() });
    }
    if delta.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: delta.len() });
    }
    Ok(())
}

/// Agent `i`'s estimate of `∂F_i/∂x(i)` at a (possibly stale) view:
/// `[F_i(view + cΔ) − F_i(view − cΔ)] / (2c·Δ(i))`.
pub fn dspg_estimate(
    obj: &ObjectiveSet,
    i: usize,
    view: &[f64],
    delta: &PerturbationVector,
    c: SensitivityParam,
) -> Result<f64> {
    let f = obj.function(i)?;
    check_view(obj, view, delta)?;
    let mut scratch = Vec::with_capacity(view.len());
    let diff = perturbed_difference(f, view, delta.signs(), c.get(), &mut scratch)?;
    Ok(diff / (2.0 * c.get() * delta.signs()[i]))
}

/// One centralized SPSA step on a single objective with a shared perturbation:
/// `x'(k) = x(k) − γ_n [f(x + c_nΔ) − f(x − c_nΔ)] / (2c_nΔ(k))`.
pub fn spsa_classic_step<R: Rng + ?Sized>(
    x: &Estimate,
    f: &dyn LocalObjective,
    gamma_n: f64,
    c_n: f64,
    rng: &mut R,
) -> Result<Estimate> {
    if !(gamma_n >= 0.0) {
        return Err(Error::InvalidParameter { name: "gamma_n", reason: format!("must be >= 0, got {gamma_n}") });
    }
    let c = SensitivityParam::new(c_n)?.get();
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), actual: x.len() });
    }
    let delta = sample_perturbation(rng, x.len())?;
    let mut scratch = Vec::with_capacity(x.len());
    let diff = perturbed_difference(f, x, delta.signs(), c, &mut scratch)?;
    let next = x
        .iter()
        .zip(delta.signs())
        .map(|(xk, s)| xk - gamma_n * diff / (2.0 * c * s))
        .collect();
    Ok(Estimate::new(next))
}

/// Exact first and second moments of the per-coordinate estimate
/// `[F_i(x + cΔ) − F_i(x − cΔ)] / (2cΔ(k))`, one entry per coordinate `k`.
/// Entry `i` is the DSPG estimate of agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorDiagnostics {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub true_gradient: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.comp
    }
}

/// Exact per-coordinate mean and variance of the estimate of a single
/// objective over all `2^d` sign patterns.
pub fn enumerate_moments(f: &dyn LocalObjective, x: &[f64], c: SensitivityParam) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = f.dim();
    if d > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { dim: d, limit: ENUMERATION_LIMIT });
    }
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
    }
    let c = c.get();
    let patterns = 1u64 << d;
    let mut scratch = Vec::with_capacity(d);
    let mut diffs = Vec::with_capacity(patterns as usize);
    for mask in 0..patterns {
        let delta = PerturbationVector::from_mask(d, mask);
        diffs.push(perturbed_difference(f, x, delta.signs(), c, &mut scratch)?);
    }
    let estimate = |mask: usize, k: usize, diff: f64| {
        let sign = if mask >> k & 1 == 1 { -1.0 } else { 1.0 };
        diff / (2.0 * c * sign)
    };
    let n = patterns as f64;
    let mut mean = vec![Neumaier::default(); d];
    for (mask, &diff) in diffs.iter().enumerate() {
        for (k, acc) in mean.iter_mut().enumerate() {
            acc.add(estimate(mask, k, diff));
        }
    }
    let mean: Vec<f64> = mean.into_iter().map(|m| m.total() / n).collect();
    let mut var = vec![Neumaier::default(); d];
    for (mask, &diff) in diffs.iter().enumerate() {
        for (k, acc) in var.iter_mut().enumerate() {
            let dev = estimate(mask, k, diff) - mean[k];
            acc.add(dev * dev);
        }
    }
    let variance = var.into_iter().map(|v| v.total() / n).collect();
    Ok((mean, variance))
}

/// Enumerates all `2^d` equiprobable sign patterns to get the exact mean and
/// variance of the estimator at `x`.
pub fn enumerate_diagnostics(
    obj: &ObjectiveSet,
    i: usize,
    x: &[f64],
    c: SensitivityParam,
) -> Result<EstimatorDiagnostics> {
    let f = obj.function(i)?;
    let d = obj.dim();
    if d > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { dim: d, limit: ENUMERATION_LIMIT });
    }
    let true_gradient = obj.analytic_gradient(i, x)?;
    let (mean, variance) = enumerate_moments(f, x, c)?;
    let bias = mean.iter().zip(&true_gradient).map(|(m, g)| m - g).collect();
    Ok(EstimatorDiagnostics { mean, variance, true_gradient, bias })
}

/// Monte-Carlo counterpart of [`enumerate_diagnostics`] for coordinate `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledDiagnostics {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Sample mean, variance and standard error of agent `i`'s DSPG estimate over
/// `samples` independent perturbations.
pub fn sample_diagnostics<R: Rng + ?Sized>(
    obj: &ObjectiveSet,
    i: usize,
    x: &[f64],
    c: SensitivityParam,
    samples: usize,
    rng: &mut R,
) -> Result<SampledDiagnostics> {
    if samples < 2 {
        return Err(Error::InvalidParameter { name: "samples", reason: format!("need at least 2, got {samples}") });
    }
    let f = obj.function(i)?;
    let d = obj.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
    }
    let mut delta = PerturbationVector::ones(d);
    let mut scratch = Vec::with_capacity(d);
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=samples {
        delta.resample(rng);
        let diff = perturbed_difference(f, x, delta.signs(), c.get(), &mut scratch)?;
        let g = diff / (2.0 * c.get() * delta.signs()[i]);
        let step = g - mean;
        mean += step / n as f64;
        m2 += step * (g - mean);
    }
    let variance = m2 / (samples - 1) as f64;
    Ok(SampledDiagnostics { mean, variance, std_error: (variance / samples as f64).sqrt(), samples })
}

/// Variance of coordinate `k`'s estimate when the objective is quadratic:
/// `Σ_{j≠k} (∂F/∂x(j))²`.
pub fn quadratic_variance(gradient: &[f64], k: usize) -> f64 {
    gradient
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .fold(0.0, |acc, (_, g)| acc + g * g)
}

/// Leading-order variance bound `4 Σ_{j≠k} (∂F/∂x(j))²`.
pub fn variance_bound(gradient: &[f64], k: usize) -> f64 {
    4.0 * quadratic_variance(gradient, k)
}

/// Estimator field `x ↦ (ĝ(x)(1), …, ĝ(x)(d))`, each agent using the same
/// fixed perturbation.
pub fn estimator_field(obj: &ObjectiveSet, x: &[f64], delta: &PerturbationVector, c: SensitivityParam) -> Result<Vec<f64>> {
    (0..obj.dim()).map(|i| dspg_estimate(obj, i, x, delta, c)).collect()
}

/// Largest observed `‖ĝ(x) − ĝ(y)‖ / ‖x − y‖` over `probes` random pairs drawn
/// uniformly from the box `[−radius, radius]^d`, with `delta` held fixed.
pub fn estimator_lipschitz_check<R: Rng + ?Sized>(
    obj: &ObjectiveSet,
    c: SensitivityParam,
    delta: &PerturbationVector,
    probes: usize,
    radius: f64,
    rng: &mut R,
) -> Result<f64> {
    let d = obj.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let gap: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist = euclidean_norm(&gap);
        if dist == 0.0 {
            continue;
        }
        let gx = estimator_field(obj, &x, delta, c)?;
        let gy = estimator_field(obj, &y, delta, c)?;
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        worst = worst.max(euclidean_norm(&dg) / dist);
    }
    Ok(worst)
}

/// `√d·L / c` when the objective set carries a Lipschitz hint `L`.
pub fn estimator_lipschitz_bound(obj: &ObjectiveSet, c: SensitivityParam) -> Option<f64> {
    obj.lipschitz_hint().map(|l| (obj.dim() as f64).sqrt() * l / c.get())
}
