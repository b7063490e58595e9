//! Objective functions held locally by each agent.
//!
//! Every agent `i` owns one scalar function `F_i : R^d -> R` of the full
//! decision vector. Gradient oracles are optional; they exist so tests and
//! diagnostics can compare the zeroth-order estimators against ground truth.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Ridge added to `MᵀM` so every generated matrix is strictly positive definite.
pub const PD_RIDGE: f64 = 0.1;

/// A point in `R^d`, one coordinate per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate(Vec<f64>);

impl Estimate {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.0)
    }
}

impl Deref for Estimate {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Estimate {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A scalar function of the full decision vector, held by one agent.
pub trait LocalObjective: Send + Sync + fmt::Debug {
    /// Length of the argument vector.
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Analytic gradient, if the function exposes one.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `(x - x*)ᵀ A (x - x*)`, evaluated literally (no algebraic shortcuts) so
/// that finite-precision behaviour matches a black-box objective.
#[derive(Debug, Clone)]
pub struct Quadratic {
    matrix: DMatrix<f64>,
    center: Option<Vec<f64>>,
}

impl Quadratic {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidParameter {
                name: "matrix",
                reason: format!("expected a non-empty square matrix, got {}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        Ok(Self { matrix, center: None })
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        if center.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                actual: center.len(),
            });
        }
        self.center = Some(center);
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    #[inline]
    fn shifted(&self, x: &[f64], j: usize) -> f64 {
        match &self.center {
            Some(c) => x[j] - c[j],
            None => x[j],
        }
    }
}

impl LocalObjective for Quadratic {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let a = self.matrix.as_slice();
        let mut total = 0.0;
        // column-major storage; A is symmetric so column j doubles as row j
        for j in 0..d {
            let col = &a[j * d..(j + 1) * d];
            let mut row_dot = 0.0;
            for (k, akj) in col.iter().enumerate() {
                row_dot += akj * self.shifted(x, k);
            }
            total += self.shifted(x, j) * row_dot;
        }
        total
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        let y: Vec<f64> = (0..d).map(|j| self.shifted(x, j)).collect();
        let sym = &self.matrix + self.matrix.transpose();
        Some((0..d).map(|r| (0..d).map(|k| sym[(r, k)] * y[k]).sum()).collect())
    }
}

/// `f(x) = x⁴` on the real line. Its central difference has bias exactly `4xc²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quartic1d;

impl LocalObjective for Quartic1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        x[0].powi(4)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![4.0 * x[0].powi(3)])
    }
}

/// A constant function; every finite-difference estimate of it is zero.
#[derive(Debug, Clone, Copy)]
pub struct Constant {
    pub dim: usize,
    pub value: f64,
}

impl LocalObjective for Constant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Closure-backed objective, mostly for tests and ad-hoc experiments.
pub struct FnObjective {
    dim: usize,
    f: Box<ValueFn>,
    grad: Option<Box<GradFn>>,
}

impl FnObjective {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { dim, f: Box::new(f), grad: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(g));
        self
    }
}

impl fmt::Debug for FnObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObjective")
            .field("dim", &self.dim)
            .field("has_gradient", &self.grad.is_some())
            .finish()
    }
}

impl LocalObjective for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x))
    }
}

/// The `d` local objectives of a `d`-agent system.
#[derive(Debug, Clone)]
pub struct ObjectiveSet {
    functions: Vec<Arc<dyn LocalObjective>>,
    lipschitz_hint: Option<f64>,
}

impl ObjectiveSet {
    /// Builds a set from one function per agent; each must take a vector of
    /// length equal to the number of functions.
    pub fn new(functions: Vec<Arc<dyn LocalObjective>>) -> Result<Self> {
        let d = functions.len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(bad) = functions.iter().find(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: bad.dim() });
        }
        Ok(Self { functions, lipschitz_hint: None })
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Result<Self> {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lipschitz_hint",
                reason: format!("must be a finite nonnegative number, got {l}"),
            });
        }
        self.lipschitz_hint = Some(l);
        Ok(self)
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    /// Number of agents, which is also the length of the decision vector.
    pub fn dim(&self) -> usize {
        self.functions.len()
    }

    pub fn function(&self, i: usize) -> Result<&dyn LocalObjective> {
        self.functions
            .get(i)
            .map(|f| f.as_ref())
            .ok_or(Error::InvalidAgent { index: i, agents: self.dim() })
    }

    /// `F_i(x)`. Pure; repeated calls return bit-identical values.
    pub fn evaluate(&self, i: usize, x: &[f64]) -> Result<f64> {
        let f = self.function(i)?;
        self.check_len(x)?;
        Ok(f.value(x))
    }

    pub fn analytic_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.function(i)?;
        self.check_len(x)?;
        f.gradient(x).ok_or(Error::Unsupported("objective has no gradient oracle"))
    }

    pub fn has_gradients(&self) -> bool {
        let probe = vec![0.0; self.dim()];
        self.functions.iter().all(|f| f.gradient(&probe).is_some())
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        Ok(())
    }
}

/// `d` random symmetric positive-definite matrices, one per agent.
#[derive(Debug, Clone)]
pub struct QuadraticSpec {
    pub matrices: Vec<DMatrix<f64>>,
    pub generation_seed: u64,
}

/// Draws `d` matrices `A = MᵀM + 0.1·I` with `M` standard normal, from one
/// generator seeded with `seed`.
pub fn make_quadratic_set(d: usize, seed: u64) -> Result<QuadraticSpec> {
    make_scaled_quadratic_set(d, seed, 1.0)
}

/// As [`make_quadratic_set`] with the entries of `M` drawn from `N(0, entry_std²)`.
pub fn make_scaled_quadratic_set(d: usize, seed: u64, entry_std: f64) -> Result<QuadraticSpec> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if !(entry_std > 0.0 && entry_std.is_finite()) {
        return Err(Error::InvalidParameter { name: "entry_std", reason: format!("must be positive and finite, got {entry_std}") });
    }
    let mut rng = rng_from_seed(seed);
    let matrices = (0..d)
        .map(|_| {
            let m = DMatrix::<f64>::from_fn(d, d, |_, _| entry_std * rng.sample::<f64, _>(StandardNormal));
            let gram = m.tr_mul(&m);
            let sym = (&gram + gram.transpose()) * 0.5;
            sym + DMatrix::identity(d, d) * PD_RIDGE
        })
        .collect();
    Ok(QuadraticSpec { matrices, generation_seed: seed })
}

impl QuadraticSpec {
    pub fn dim(&self) -> usize {
        self.matrices.len()
    }

    /// Objectives `xᵀA_i x`, all minimized at the origin.
    pub fn objective_set(&self) -> ObjectiveSet {
        self.build(None).expect("generated matrices are square with matching size")
    }

    /// Objectives `(x - x*)ᵀ A_i (x - x*)` sharing the minimizer `x*`.
    pub fn translated(&self, minimizer: &[f64]) -> Result<ObjectiveSet> {
        self.build(Some(minimizer))
    }

    /// Objectives `(x - b_i)ᵀ A_i (x - b_i)`, one center per function. The sum
    /// is minimized at [`QuadraticSpec::summed_minimizer`].
    pub fn with_centers(&self, centers: &[Vec<f64>]) -> Result<ObjectiveSet> {
        if centers.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: centers.len() });
        }
        let functions = self
            .matrices
            .iter()
            .zip(centers)
            .map(|(a, b)| Ok(Arc::new(Quadratic::new(a.clone())?.with_center(b.clone())?) as Arc<dyn LocalObjective>))
            .collect::<Result<Vec<_>>>()?;
        ObjectiveSet::new(functions)
    }

    /// Solves `(Σ A_i) x = Σ A_i b_i`.
    pub fn summed_minimizer(&self, centers: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.dim();
        if centers.len() != d || centers.iter().any(|b| b.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: centers.len() });
        }
        let mut lhs = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for (a, b) in self.matrices.iter().zip(centers) {
            lhs += a;
            rhs += a * DVector::from_column_slice(b);
        }
        let x = lhs
            .cholesky()
            .ok_or(Error::Unsupported("summed matrix is not positive definite"))?
            .solve(&rhs);
        Ok(x.iter().copied().collect())
    }

    fn build(&self, center: Option<&[f64]>) -> Result<ObjectiveSet> {
        let functions = self
            .matrices
            .iter()
            .map(|a| {
                let q = Quadratic::new(a.clone())?;
                let q = match center {
                    Some(c) => q.with_center(c.to_vec())?,
                    None => q,
                };
                Ok(Arc::new(q) as Arc<dyn LocalObjective>)
            })
            .collect::<Result<Vec<_>>>()?;
        ObjectiveSet::new(functions)
    }

    /// Matrix whose row `i` is row `i` of `2A_i`: the linearization of the
    /// coordinate-wise descent field `x ↦ (∂F_1/∂x(1), …, ∂F_d/∂x(d))`.
    pub fn mean_field_jacobian(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| 2.0 * self.matrices[i][(i, j)])
    }

    /// Smallest real part over the mean-field Jacobian's eigenvalues. Positive
    /// means the origin is a globally stable equilibrium of the descent flow.
    pub fn stability_margin(&self) -> f64 {
        self.mean_field_jacobian()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue of `Σ 2A_i`, the Lipschitz constant of the summed
    /// objective's gradient.
    pub fn summed_hessian_max_eigenvalue(&self) -> f64 {
        self.summed_hessian()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ 2A_i`, the Hessian of `Σ F_i`.
    pub fn summed_hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.matrices.iter().fold(DMatrix::zeros(d, d), |acc, a| acc + a * 2.0)
    }
}

/// The single-agent quartic `x⁴` with its gradient oracle.
pub fn make_quartic_1d() -> ObjectiveSet {
    ObjectiveSet::new(vec![Arc::new(Quartic1d)]).expect("one function of dimension one")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    fn set_from(matrices: Vec<DMatrix<f64>>) -> ObjectiveSet {
        let fs = matrices
            .into_iter()
            .map(|m| Arc::new(Quadratic::new(m).unwrap()) as Arc<dyn LocalObjective>)
            .collect();
        ObjectiveSet::new(fs).unwrap()
    }

    #[test]
    fn zero_agents_rejected() {
        assert!(matches!(make_quadratic_set(0, 1), Err(Error::InvalidDimension(0))));
        assert!(matches!(ObjectiveSet::new(vec![]), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn one_dimensional_quadratic_is_positive_scalar() {
        for seed in [0, 1, 99] {
            let spec = make_quadratic_set(1, seed).unwrap();
            let a = spec.matrices[0][(0, 0)];
            assert!(a > 0.0);
            let obj = spec.objective_set();
            assert_eq!(obj.evaluate(0, &[0.0]).unwrap(), 0.0);
            assert!(close(obj.evaluate(0, &[3.0]).unwrap(), 9.0 * a, 1e-14));
        }
    }

    #[test]
    fn seed_42_pair_is_positive_definite() {
        let spec = make_quadratic_set(2, 42).unwrap();
        assert_eq!(spec.dim(), 2);
        for a in &spec.matrices {
            assert_eq!(a, &a.transpose());
            let eig = a.clone().symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > 0.0), "eigenvalues {eig:?}");
        }
    }

    #[test]
    fn four_agent_set_vanishes_at_origin() {
        let obj = make_quadratic_set(4, 3).unwrap().objective_set();
        for i in 0..4 {
            assert_eq!(obj.evaluate(i, &[0.0; 4]).unwrap(), 0.0);
            assert_eq!(obj.analytic_gradient(i, &[0.0; 4]).unwrap(), vec![0.0; 4]);
        }
    }

    #[test]
    fn identity_and_coupled_quadratics() {
        let obj = set_from(vec![
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        ]);
        assert_eq!(obj.evaluate(0, &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(obj.evaluate(1, &[1.0, 1.0]).unwrap(), 6.0);
        assert_eq!(obj.analytic_gradient(0, &[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(obj.analytic_gradient(1, &[1.0, 1.0]).unwrap(), vec![6.0, 6.0]);
    }

    #[test]
    fn bad_agent_index() {
        let obj = make_quadratic_set(2, 5).unwrap().objective_set();
        assert!(matches!(obj.evaluate(2, &[0.0, 0.0]), Err(Error::InvalidAgent { index: 2, agents: 2 })));
    }

    #[test]
    fn missing_gradient_is_unsupported() {
        let obj = ObjectiveSet::new(vec![Arc::new(FnObjective::new(1, |x| x[0].abs()))]).unwrap();
        assert!(matches!(obj.analytic_gradient(0, &[1.0]), Err(Error::Unsupported(_))));
        assert!(!obj.has_gradients());
    }

    #[test]
    fn quartic_values() {
        let q = make_quartic_1d();
        for (x, f, g) in [(0.0, 0.0, 0.0), (1.0, 1.0, 4.0), (2.0, 16.0, 32.0)] {
            assert_eq!(q.evaluate(0, &[x]).unwrap(), f);
            assert_eq!(q.analytic_gradient(0, &[x]).unwrap(), vec![g]);
        }
    }

    #[test]
    fn translated_set_moves_minimizer() {
        let spec = make_quadratic_set(3, 11).unwrap();
        let star = [1.0, -2.0, 0.5];
        let obj = spec.translated(&star).unwrap();
        for i in 0..3 {
            assert_eq!(obj.evaluate(i, &star).unwrap(), 0.0);
            assert!(obj.evaluate(i, &[0.0; 3]).unwrap() > 0.0);
        }
        assert!(spec.translated(&[1.0]).is_err());
    }

    #[test]
    fn diagonal_jacobian_margin() {
        let spec = QuadraticSpec {
            matrices: vec![
                DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 5.0]),
            ],
            generation_seed: 0,
        };
        // rows: 2·(3, 0) and 2·(0, 5)
        assert!(close(spec.stability_margin(), 6.0, 1e-12));
        assert!(close(spec.summed_hessian_max_eigenvalue(), 12.0, 1e-12));
    }
}
