//! Reward learning from the labeled episodes and pessimistic relabeling of unlabeled ones.
//!
//! For each step `h` a kernel ridge regression with ridge `nu` is fit on the labeled
//! `(z, r)` pairs. The confidence radius is
//!
//! ```text
//! beta_h = sqrt(nu) * S + sqrt(log det(nu I + K_h) + 2 log(1 / delta))
//! ```
//!
//! and an unlabeled transition receives the lower confidence value
//! `max(mean - beta_h * nu^{-1/2} * sqrt(var), 0)`, where `var` is the ridge posterior
//! variance at `z` (the Gram-side form of `||phi(z)||` in the `Lambda^{-1}` norm).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::InputScaling;
use crate::error::{Error, Result};
use crate::gram::GramFactor;
use crate::kernel::{DecayClass, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Ridge `nu` of the reward regression.
    pub nu: f64,
    /// Bound `S` on the RKHS norm of the true reward parameter.
    pub norm_bound: f64,
    /// Confidence level `delta` of the radius.
    pub delta: f64,
}

impl RewardParams {
    /// `nu = 1 + 1/N1`, `S = 1`, `delta = 0.1`.
    pub fn defaults_for(n1: usize) -> Self {
        RewardParams {
            nu: 1.0 + 1.0 / n1.max(1) as f64,
            norm_bound: 1.0,
            delta: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::input(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !(self.norm_bound.is_finite() && self.norm_bound >= 0.0) {
            return Err(Error::input(format!(
                "norm bound S must be nonnegative, got {}",
                self.norm_bound
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::input(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct StepModel {
    factor: GramFactor,
    alpha: Vec<f64>,
    beta: f64,
}

/// Per-step reward regressions plus their confidence radii.
#[derive(Debug, Clone)]
pub struct RewardModel {
    spec: KernelSpec,
    scaling: InputScaling,
    params: RewardParams,
    steps: Vec<StepModel>,
}

/// Fit one ridge regression per step on the labeled dataset. An empty dataset is allowed
/// and yields the "no information" model whose pessimistic rewards are all zero.
pub fn fit_reward(
    d1: &Dataset,
    spec: &KernelSpec,
    scaling: &InputScaling,
    params: RewardParams,
) -> Result<RewardModel> {
    if !d1.labeled() {
        return Err(Error::input("reward model needs a labeled dataset"));
    }
    params.validate()?;
    spec.validate()?;
    check_embedding(spec, scaling)?;
    let steps = (1..=d1.horizon())
        .into_par_iter()
        .map(|h| {
            let (support, y): (Vec<_>, Vec<_>) = d1
                .step(h)
                .map(|t| (scaling.embed(&t.s, t.a), t.r.expect("labeled")))
                .unzip();
            fit_step(spec, support, &y, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardModel {
        spec: spec.clone(),
        scaling: scaling.clone(),
        params,
        steps,
    })
}

fn fit_step(
    spec: &KernelSpec,
    support: Vec<Vec<f64>>,
    y: &[f64],
    params: &RewardParams,
) -> Result<StepModel> {
    let factor = GramFactor::new(spec, support, params.nu)?;
    let alpha = factor.solve(y)?;
    let beta = radius(&factor, params);
    Ok(StepModel {
        factor,
        alpha,
        beta,
    })
}

fn radius(factor: &GramFactor, params: &RewardParams) -> f64 {
    let log_det = if factor.is_empty() {
        0.0
    } else {
        factor.log_det()
    };
    let inner = log_det + 2.0 * (1.0 / params.delta).ln();
    params.nu.sqrt() * params.norm_bound + inner.max(0.0).sqrt()
}

pub(crate) fn check_embedding(spec: &KernelSpec, scaling: &InputScaling) -> Result<()> {
    if spec.ambient_dim != scaling.dim() {
        return Err(Error::input(format!(
            "kernel ambient_dim {} does not match the (s, a) embedding dimension {}",
            spec.ambient_dim,
            scaling.dim()
        )));
    }
    Ok(())
}

impl RewardModel {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn params(&self) -> RewardParams {
        self.params
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    fn step_model(&self, h: usize) -> Result<&StepModel> {
        if h == 0 || h > self.steps.len() {
            return Err(Error::input(format!(
                "step {h} outside 1..={}",
                self.steps.len()
            )));
        }
        Ok(&self.steps[h - 1])
    }

    pub fn factor(&self, h: usize) -> Result<&GramFactor> {
        Ok(&self.step_model(h)?.factor)
    }

    pub fn coefficients(&self, h: usize) -> Result<&[f64]> {
        Ok(&self.step_model(h)?.alpha)
    }

    pub fn beta_radius(&self, h: usize) -> Result<f64> {
        Ok(self.step_model(h)?.beta)
    }

    /// Ridge prediction `k_h(z)^T alpha_h`, unclipped.
    pub fn predict_mean(&self, h: usize, z: &[f64]) -> Result<f64> {
        let m = self.step_model(h)?;
        self.spec.check_point(z)?;
        Ok(m.factor.mean_unchecked(&m.alpha, z))
    }

    /// Width of the confidence band at `z`: `beta_h * nu^{-1/2} * sqrt(var_h(z))`.
    pub fn penalty(&self, h: usize, z: &[f64]) -> Result<f64> {
        let m = self.step_model(h)?;
        let v = m.factor.posterior_variance(z)?;
        Ok(m.beta * v.sqrt() / self.params.nu.sqrt())
    }

    /// `max(mean - penalty, 0)`.
    pub fn pessimistic_reward(&self, h: usize, z: &[f64]) -> Result<f64> {
        let m = self.step_model(h)?;
        self.spec.check_point(z)?;
        let (mean, var) = m.factor.mean_and_variance_unchecked(&m.alpha, z);
        let penalty = m.beta * var.sqrt() / self.params.nu.sqrt();
        Ok((mean - penalty).max(0.0))
    }

    /// Annotate every transition of an unlabeled dataset with its pessimistic reward.
    pub fn relabel(&self, d2: &Dataset) -> Result<Dataset> {
        if d2.labeled() {
            return Err(Error::input("relabel expects an unlabeled dataset"));
        }
        if d2.horizon() != self.horizon() {
            return Err(Error::input(format!(
                "dataset horizon {} differs from reward model horizon {}",
                d2.horizon(),
                self.horizon()
            )));
        }
        let mut failure = None;
        let out = d2.with_rewards(|t| {
            let z = self.scaling.embed(&t.s, t.a);
            self.pessimistic_reward(t.h, &z).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                0.0
            })
        })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Closed-form radius bounds for the kernel's decay class, with the unspecified
    /// absolute constant set to `c1`. Diagnostic only.
    pub fn beta_decay_bound(&self, c1: f64) -> f64 {
        let n1 = self
            .steps
            .first()
            .map(|s| s.factor.len())
            .unwrap_or(0)
            .max(2) as f64;
        let p = &self.params;
        let log_term = (1.0 / (p.delta * p.delta)).ln();
        let growth = match self.spec.decay_class {
            DecayClass::FiniteSpectrum(d) => d * n1.ln(),
            DecayClass::Exponential(d) => n1.ln().powf(1.0 + 1.0 / d),
            DecayClass::Polynomial(d) => {
                let m = self.spec.ambient_dim as f64;
                n1.powf((m + 1.0) / (d + m)) * n1.ln()
            }
        };
        (1.0 + 1.0 / n1).sqrt() * p.norm_bound + (c1 * growth + log_term).max(0.0).sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let archive = RewardArchive {
            kernel: self.spec.clone(),
            scaling: self.scaling.clone(),
            params: self.params,
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepArchive {
                    h: i + 1,
                    support: s.factor.support().to_vec(),
                    alpha: s.alpha.clone(),
                    beta: s.beta,
                })
                .collect(),
        };
        crate::archive::write_json(path, &archive)
    }

    /// Reload a saved model. Factors are recomputed from the stored support, which is
    /// deterministic, and the stored coefficients and radii are used as-is.
    pub fn load(path: &Path) -> Result<Self> {
        let archive: RewardArchive = crate::archive::read_json(path)?;
        check_embedding(&archive.kernel, &archive.scaling)?;
        archive.params.validate()?;
        let steps = archive
            .steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.h != i + 1 || s.alpha.len() != s.support.len() {
                    return Err(Error::input(format!(
                        "malformed reward archive at step {}",
                        s.h
                    )));
                }
                Ok(StepModel {
                    factor: GramFactor::new(&archive.kernel, s.support, archive.params.nu)?,
                    alpha: s.alpha,
                    beta: s.beta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RewardModel {
            spec: archive.kernel,
            scaling: archive.scaling,
            params: archive.params,
            steps,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardArchive {
    kernel: KernelSpec,
    scaling: InputScaling,
    params: RewardParams,
    steps: Vec<StepArchive>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepArchive {
    h: usize,
    support: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    beta: f64,
}
