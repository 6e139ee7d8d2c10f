//! Regularized Gram factorizations and the quantities derived from them: ridge
//! coefficients, posterior variance, log-determinants, realized information gain and
//! the one-point information amount `zeta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{gram_unchecked, KernelSpec};

/// Diagonal jitter ladder tried, in order, when `K + rho I` fails to factor.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Support points together with the lower Cholesky factor `L` of `K + rho I`.
#[derive(Debug, Clone)]
pub struct GramFactor {
    spec: KernelSpec,
    support: Vec<Vec<f64>>,
    ridge: f64,
    jitter: f64,
    lower: DMatrix<f64>,
}

impl GramFactor {
    /// Factor `K + ridge * I` over `support`. An empty support is valid and behaves as
    /// "no data".
    pub fn new(spec: &KernelSpec, support: Vec<Vec<f64>>, ridge: f64) -> Result<Self> {
        spec.validate()?;
        if !(ridge.is_finite() && ridge > 0.0) {
            return Err(Error::input(format!("ridge must be positive, got {ridge}")));
        }
        for z in &support {
            spec.check_point(z)?;
        }
        let n = support.len();
        if n == 0 {
            return Ok(GramFactor {
                spec: spec.clone(),
                support,
                ridge,
                jitter: 0.0,
                lower: DMatrix::zeros(0, 0),
            });
        }
        let mut a = gram_unchecked(spec, &support);
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        let (lower, jitter) = cholesky_with_jitter(&a).ok_or_else(|| {
            // Gershgorin bound on the largest eigenvalue over the ridge floor on the smallest.
            let row_max = (0..n)
                .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            Error::Factorization {
                ridge,
                condition: row_max / ridge,
            }
        })?;
        Ok(GramFactor {
            spec: spec.clone(),
            support,
            ridge,
            jitter,
            lower,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Extra diagonal added by the jitter ladder (0 when the first attempt succeeded).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `(k(z_1, z), ..., k(z_n, z))` over the support.
    pub fn kernel_vector(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.spec.check_point(z)?;
        Ok(self.kernel_vector_unchecked(z))
    }

    pub(crate) fn kernel_vector_unchecked(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.support.len(),
            self.support.iter().map(|p| self.spec.k(p, z)),
        )
    }

    /// Solve `(K + rho I) alpha = y`.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.len() {
            return Err(Error::input(format!(
                "response has length {}, support has {} points",
                y.len(),
                self.len()
            )));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let rhs = DVector::from_column_slice(y);
        let w = self.forward(&rhs);
        let alpha = self
            .lower
            .tr_solve_lower_triangular(&w)
            .expect("cholesky factor has a positive diagonal");
        Ok(alpha.as_slice().to_vec())
    }

    fn forward(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(rhs)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `k(z, z) - k_z^T (K + rho I)^{-1} k_z`, clamped below at zero.
    pub fn posterior_variance(&self, z: &[f64]) -> Result<f64> {
        self.spec.check_point(z)?;
        Ok(self.posterior_variance_unchecked(z))
    }

    pub(crate) fn posterior_variance_unchecked(&self, z: &[f64]) -> f64 {
        let prior = self.spec.k(z, z);
        if self.is_empty() {
            return prior.max(0.0);
        }
        let w = self.forward(&self.kernel_vector_unchecked(z));
        (prior - w.norm_squared()).max(0.0)
    }

    /// Mean `k_z^T coefficients` together with the posterior variance at `z`, sharing a
    /// single kernel-vector evaluation.
    pub(crate) fn mean_and_variance_unchecked(
        &self,
        coefficients: &[f64],
        z: &[f64],
    ) -> (f64, f64) {
        let prior = self.spec.k(z, z);
        if self.is_empty() {
            return (0.0, prior.max(0.0));
        }
        let kz = self.kernel_vector_unchecked(z);
        let mean = kz.iter().zip(coefficients).map(|(a, b)| a * b).sum();
        let w = self.forward(&kz);
        (mean, (prior - w.norm_squared()).max(0.0))
    }

    pub(crate) fn mean_unchecked(&self, coefficients: &[f64], z: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(coefficients)
            .map(|(p, c)| self.spec.k(p, z) * c)
            .sum()
    }

    /// `log det(K + rho I)` as twice the sum of log-diagonal entries of `L`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn cholesky_with_jitter(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let attempt = |extra: f64| {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += extra;
        }
        nalgebra::linalg::Cholesky::new(m).map(|c| c.unpack())
    };
    if let Some(l) = attempt(0.0) {
        return Some((l, 0.0));
    }
    JITTER_LADDER
        .iter()
        .find_map(|&j| attempt(j).map(|l| (l, j)))
}

/// `log det(I + K_Z / lambda)` through the Cholesky factor of `I + K_Z / lambda`.
pub fn log_det_unit_ridge(spec: &KernelSpec, points: &[Vec<f64>], lambda: f64) -> Result<f64> {
    spec.validate()?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::input(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    for z in points {
        spec.check_point(z)?;
    }
    let n = points.len();
    let mut a = gram_unchecked(spec, points) / lambda;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let (lower, _) = cholesky_with_jitter(&a).ok_or(Error::Factorization {
        ridge: lambda,
        condition: f64::INFINITY,
    })?;
    Ok(2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Realized information gain `(1/2) log det(I + K_Z / lambda)` of a concrete point set.
pub fn information_gain(spec: &KernelSpec, points: &[Vec<f64>], lambda: f64) -> Result<f64> {
    Ok(0.5 * log_det_unit_ridge(spec, points, lambda)?.max(0.0))
}

/// Information amount of one extra point:
/// `2 [log det(I + K_{Z+z} / lambda) - log det(I + K_Z / lambda)]`.
pub fn zeta_information_amount(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    z: &[f64],
    lambda: f64,
) -> Result<f64> {
    spec.check_point(z)?;
    let base = log_det_unit_ridge(spec, points, lambda)?;
    let mut extended = Vec::with_capacity(points.len() + 1);
    extended.extend_from_slice(points);
    extended.push(z.to_vec());
    let grown = log_det_unit_ridge(spec, &extended, lambda)?;
    Ok((2.0 * (grown - base)).max(0.0))
}
