//! Positive-definite kernels on state-action inputs `z = (s, a)` embedded in `R^m`.
//!
//! Three families are supported: squared-exponential, Matérn with half-integer
//! smoothness, and explicit polynomial features (degree 1 to 3). All of them satisfy
//! `k(z, z) <= 1`; for the explicit family this holds for inputs inside the box
//! `[-input_bound, input_bound]^m`, because features are divided by the square root of
//! the monomial count.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternSmoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternSmoothness {
    pub fn value(self) -> f64 {
        match self {
            MaternSmoothness::Half => 0.5,
            MaternSmoothness::ThreeHalves => 1.5,
            MaternSmoothness::FiveHalves => 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelFamily {
    SquaredExponential {
        lengthscale: f64,
    },
    Matern {
        smoothness: MaternSmoothness,
        lengthscale: f64,
    },
    /// Normalized monomial features of total degree `<= degree` (`phi_lin`, `phi_quad`,
    /// `phi_cub`). Inputs are divided by `input_bound` first.
    ExplicitFeatures {
        degree: u8,
        #[serde(default = "default_input_bound")]
        input_bound: f64,
    },
}

fn default_input_bound() -> f64 {
    1.0
}

/// Eigenvalue-decay regime of the kernel's integral operator. Metadata only: it selects
/// which closed-form bound a diagnostic reports, never what an algorithm computes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "d", rename_all = "kebab-case")]
pub enum DecayClass {
    FiniteSpectrum(f64),
    Exponential(f64),
    Polynomial(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub ambient_dim: usize,
    pub decay_class: DecayClass,
}

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64, ambient_dim: usize) -> Self {
        KernelSpec {
            family: KernelFamily::SquaredExponential { lengthscale },
            ambient_dim,
            decay_class: DecayClass::Exponential(1.0 / ambient_dim.max(1) as f64),
        }
    }

    pub fn matern(smoothness: MaternSmoothness, lengthscale: f64, ambient_dim: usize) -> Self {
        let m = ambient_dim.max(1) as f64;
        KernelSpec {
            family: KernelFamily::Matern {
                smoothness,
                lengthscale,
            },
            ambient_dim,
            decay_class: DecayClass::Polynomial((2.0 * smoothness.value() + m) / m),
        }
    }

    pub fn explicit_features(degree: u8, ambient_dim: usize) -> Self {
        let mut spec = KernelSpec {
            family: KernelFamily::ExplicitFeatures {
                degree,
                input_bound: 1.0,
            },
            ambient_dim,
            decay_class: DecayClass::FiniteSpectrum(0.0),
        };
        spec.decay_class = DecayClass::FiniteSpectrum(spec.feature_dim().unwrap_or(0) as f64);
        spec
    }

    pub fn with_input_bound(mut self, bound: f64) -> Self {
        if let KernelFamily::ExplicitFeatures { input_bound, .. } = &mut self.family {
            *input_bound = bound;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 {
            return Err(Error::input("kernel ambient_dim must be positive"));
        }
        match self.family {
            KernelFamily::SquaredExponential { lengthscale }
            | KernelFamily::Matern { lengthscale, .. } => {
                if !(lengthscale.is_finite() && lengthscale > 0.0) {
                    return Err(Error::input(format!(
                        "kernel lengthscale must be positive, got {lengthscale}"
                    )));
                }
            }
            KernelFamily::ExplicitFeatures {
                degree,
                input_bound,
            } => {
                if !(1..=3).contains(&degree) {
                    return Err(Error::input(format!(
                        "explicit feature degree must be 1, 2 or 3, got {degree}"
                    )));
                }
                if !(input_bound.is_finite() && input_bound > 0.0) {
                    return Err(Error::input(format!(
                        "explicit feature input_bound must be positive, got {input_bound}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dimension of the explicit feature map, `None` for the infinite-dimensional families.
    pub fn feature_dim(&self) -> Option<usize> {
        match self.family {
            KernelFamily::ExplicitFeatures { degree, .. } => {
                Some(monomial_count(self.ambient_dim, degree as usize))
            }
            _ => None,
        }
    }

    pub fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.ambient_dim {
            return Err(Error::input(format!(
                "point has {} coordinates, kernel expects {}",
                z.len(),
                self.ambient_dim
            )));
        }
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite coordinate {bad}")));
        }
        Ok(())
    }

    /// `k(z, z')` with dimension and finiteness checks.
    pub fn eval(&self, z: &[f64], z2: &[f64]) -> Result<f64> {
        self.check_point(z)?;
        self.check_point(z2)?;
        Ok(self.k(z, z2))
    }

    /// Unchecked evaluation; callers have validated both points.
    pub(crate) fn k(&self, z: &[f64], z2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential { lengthscale } => {
                let d2 = squared_distance(z, z2);
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            } => {
                let r = squared_distance(z, z2).sqrt() / lengthscale;
                match smoothness {
                    MaternSmoothness::Half => (-r).exp(),
                    MaternSmoothness::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternSmoothness::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + s * s / 3.0) * (-s).exp()
                    }
                }
            }
            KernelFamily::ExplicitFeatures {
                degree,
                input_bound,
            } => {
                let scale = |p: &[f64]| p.iter().map(|v| v / input_bound).collect::<Vec<_>>();
                let a = raw_monomials(&scale(z), degree as usize);
                let b = raw_monomials(&scale(z2), degree as usize);
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                dot / a.len() as f64
            }
        }
    }

    /// The normalized explicit feature vector `phi(z)`, or `None` for SE/Matérn kernels.
    pub fn feature_map(&self, z: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_point(z)?;
        Ok(match self.family {
            KernelFamily::ExplicitFeatures { .. } => Some(self.features_unchecked(z)),
            _ => None,
        })
    }

    fn features_unchecked(&self, z: &[f64]) -> Vec<f64> {
        let KernelFamily::ExplicitFeatures {
            degree,
            input_bound,
        } = self.family
        else {
            unreachable!("features requested from a non-explicit kernel")
        };
        let x: Vec<f64> = z.iter().map(|v| v / input_bound).collect();
        let mut out = raw_monomials(&x, degree as usize);
        let norm = (out.len() as f64).sqrt();
        for v in &mut out {
            *v /= norm;
        }
        out
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All monomials of total degree `<= degree` in `x`, constant first, then degree 1,
/// 2, 3 in lexicographic index order (`x_i x_j` with `i <= j`, and so on).
pub fn raw_monomials(x: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    // Each degree-p block is built from the degree-(p-1) block, tracking the smallest
    // allowed next index so that every multiset of indices appears exactly once.
    let mut prev: Vec<(f64, usize)> = vec![(1.0, 0)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for &(value, start) in &prev {
            for (i, xi) in x.iter().enumerate().skip(start) {
                next.push((value * xi, i));
            }
        }
        out.extend(next.iter().map(|(v, _)| *v));
        prev = next;
    }
    out
}

/// Number of monomials of total degree `<= degree` in `m` variables: `C(m + degree, degree)`.
pub fn monomial_count(m: usize, degree: usize) -> usize {
    (1..=degree).fold(1usize, |acc, j| acc * (m + j) / j)
}

/// Gram matrix `[K]_ij = k(z_i, z_j)`, filled on the upper triangle and mirrored so the
/// result is exactly symmetric.
pub fn gram_matrix(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::input("gram matrix of an empty point set"));
    }
    for z in points {
        spec.check_point(z)?;
    }
    Ok(gram_unchecked(spec, points))
}

pub(crate) fn gram_unchecked(spec: &KernelSpec, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.k(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
