//! Pessimistic value iteration with kernel function approximation and H-fold splitting.
//!
//! Episodes are split into `H` disjoint, equally sized folds. Working backward from
//! `h = H`, fold `h` supplies the regression targets `y = r_h + V_{h+1}(s_{h+1})`, and
//!
//! ```text
//! Q_h(z) = clip(k_h(z)^T w_h - B * lambda^{-1/2} * sqrt(var_h(z)), 0, H - h + 1)
//! ```
//!
//! with `w_h = (K_h + lambda I)^{-1} y`. The policy is greedy in `Q_h`, ties going to the
//! smallest action index.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::InputScaling;
use crate::error::{Error, Result};
use crate::gram::{information_gain, GramFactor};
use crate::kernel::{DecayClass, KernelSpec};
use crate::policy::Policy;
use crate::reward::check_embedding;
use crate::rng::{derived_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FoldScheme {
    Contiguous,
    Shuffled { seed: u64 },
}

impl Default for FoldScheme {
    fn default() -> Self {
        FoldScheme::Shuffled { seed: 0 }
    }
}

/// Assignment of episode positions (0-based, in dataset order) to the `H` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub scheme: Option<FoldScheme>,
    pub episode_count: usize,
    pub folds: Vec<Vec<usize>>,
    /// Episodes left out so that every fold has `floor(N / H)` members.
    pub truncated: usize,
    /// The shuffled episode order the folds were cut from.
    pub permutation: Option<Vec<usize>>,
}

pub fn split_folds(n: usize, horizon: usize, scheme: FoldScheme) -> Result<FoldPlan> {
    if horizon == 0 {
        return Err(Error::input("horizon must be at least 1"));
    }
    if n < horizon {
        return Err(Error::input(format!(
            "insufficient episodes for H folds: N = {n} < H = {horizon}"
        )));
    }
    let size = n / horizon;
    let order: Vec<usize> = match scheme {
        FoldScheme::Contiguous => (0..n).collect(),
        FoldScheme::Shuffled { seed } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut derived_rng(seed, &[0x666f_6c64]));
            order
        }
    };
    let folds = order
        .chunks(size)
        .take(horizon)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(FoldPlan {
        scheme: Some(scheme),
        episode_count: n,
        folds,
        truncated: n - size * horizon,
        permutation: matches!(scheme, FoldScheme::Shuffled { .. }).then_some(order),
    })
}

impl FoldPlan {
    /// A plan with caller-chosen folds, which must be disjoint positions below `episode_count`.
    pub fn from_folds(episode_count: usize, folds: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; episode_count];
        for &i in folds.iter().flatten() {
            if i >= episode_count || seen[i] {
                return Err(Error::input(format!(
                    "fold member {i} is out of range or assigned twice"
                )));
            }
            seen[i] = true;
        }
        let used = seen.iter().filter(|&&b| b).count();
        Ok(FoldPlan {
            scheme: None,
            episode_count,
            folds,
            truncated: episode_count - used,
            permutation: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.folds.len()
    }

    pub fn fold(&self, h: usize) -> &[usize] {
        &self.folds[h - 1]
    }

    fn check(&self, d: &Dataset) -> Result<()> {
        if self.folds.len() != d.horizon() {
            return Err(Error::input(format!(
                "fold plan has {} folds but the horizon is {}",
                self.folds.len(),
                d.horizon()
            )));
        }
        if self.episode_count != d.len() {
            return Err(Error::input(format!(
                "fold plan covers {} episodes but the dataset has {}",
                self.episode_count,
                d.len()
            )));
        }
        Ok(())
    }
}

fn fold_support(d: &Dataset, scaling: &InputScaling, plan: &FoldPlan, h: usize) -> Vec<Vec<f64>> {
    plan.fold(h)
        .iter()
        .map(|&i| {
            let t = &d.episodes()[i][h - 1];
            scaling.embed(&t.s, t.a)
        })
        .collect()
}

/// `c_B * H * sqrt(2 lambda R_Q^2 + 8 G + 2/H + 8 log(H/delta))`.
pub fn bonus_scale_from_gain(
    horizon: usize,
    lambda: f64,
    delta: f64,
    r_q: f64,
    c_b: f64,
    gain: f64,
) -> f64 {
    let hf = horizon as f64;
    c_b * hf * (2.0 * lambda * r_q * r_q + 8.0 * gain + 2.0 / hf + 8.0 * (hf / delta).ln()).sqrt()
}

/// Realized information gain `1/2 log det(I + K_h / lambda)` of every fold.
pub fn fold_information_gains(
    d: &Dataset,
    spec: &KernelSpec,
    scaling: &InputScaling,
    lambda: f64,
    plan: &FoldPlan,
) -> Result<Vec<f64>> {
    plan.check(d)?;
    check_embedding(spec, scaling)?;
    (1..=plan.horizon())
        .into_par_iter()
        .map(|h| information_gain(spec, &fold_support(d, scaling, plan, h), lambda))
        .collect()
}

/// Bonus scale with the realized information gain of the largest-gain fold.
#[allow(clippy::too_many_arguments)]
pub fn default_bonus_scale(
    d: &Dataset,
    spec: &KernelSpec,
    scaling: &InputScaling,
    lambda: f64,
    delta: f64,
    r_q: f64,
    c_b: f64,
    plan: &FoldPlan,
) -> Result<f64> {
    let gain = fold_information_gains(d, spec, scaling, lambda, plan)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(bonus_scale_from_gain(
        plan.horizon(),
        lambda,
        delta,
        r_q,
        c_b,
        gain,
    ))
}

/// Closed-form bonus scales for the kernel's decay class with the unspecified constant set
/// to `c2`. The polynomial class has two exponent variants in circulation; both are
/// returned. Diagnostic only.
pub fn theoretical_bonus_scales(
    spec: &KernelSpec,
    n: usize,
    horizon: usize,
    delta: f64,
    c2: f64,
) -> Vec<(&'static str, f64)> {
    let nf = n.max(2) as f64;
    let hf = horizon as f64;
    let log_term = (nf / delta).ln();
    match spec.decay_class {
        DecayClass::FiniteSpectrum(d) => {
            vec![("finite-spectrum", c2 * hf * (d * log_term).sqrt())]
        }
        DecayClass::Exponential(d) => {
            vec![("exponential", c2 * hf * log_term.powf(1.0 + 1.0 / d).sqrt())]
        }
        DecayClass::Polynomial(d) => {
            let m = spec.ambient_dim as f64;
            let form = |kappa: f64| c2 * nf.powf(kappa) * hf.powf(1.0 - kappa) * log_term.sqrt();
            vec![
                (
                    "polynomial (m+1)/(2(d+m))",
                    form((m + 1.0) / (2.0 * (d + m))),
                ),
                (
                    "polynomial (d+1)/(2(d+m))",
                    form((d + 1.0) / (2.0 * (d + m))),
                ),
            ]
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    factor: GramFactor,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    horizon: usize,
    action_count: usize,
    lambda: f64,
    bonus_scale: f64,
}

impl Shape {
    fn q(&self, scaling: &InputScaling, level: &Level, h: usize, s: &[f64], a: usize) -> f64 {
        let z = scaling.embed(s, a);
        let (mean, var) = level.factor.mean_and_variance_unchecked(&level.weights, &z);
        let bonus = self.bonus_scale * var.sqrt() / self.lambda.sqrt();
        (mean - bonus).clamp(0.0, (self.horizon - h + 1) as f64)
    }

    fn greedy(&self, scaling: &InputScaling, level: &Level, h: usize, s: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..self.action_count {
            let q = self.q(scaling, level, h, s, a);
            if q > best.1 {
                best = (a, q);
            }
        }
        best
    }
}

/// The greedy policy produced by backward induction.
#[derive(Debug, Clone)]
pub struct PeviPolicy {
    spec: KernelSpec,
    scaling: InputScaling,
    shape: Shape,
    plan: FoldPlan,
    levels: Vec<Level>,
    fingerprint: Option<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn backward_induction(
    d: &Dataset,
    spec: &KernelSpec,
    scaling: &InputScaling,
    action_count: usize,
    lambda: f64,
    bonus_scale: f64,
    plan: &FoldPlan,
) -> Result<PeviPolicy> {
    if !d.labeled() {
        return Err(Error::input("value iteration needs a labeled dataset"));
    }
    if d.len() < d.horizon() {
        return Err(Error::input(format!(
            "insufficient episodes for H folds: N = {} < H = {}",
            d.len(),
            d.horizon()
        )));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::input(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(bonus_scale.is_finite() && bonus_scale >= 0.0) {
        return Err(Error::input(format!(
            "bonus scale must be nonnegative, got {bonus_scale}"
        )));
    }
    if action_count == 0 {
        return Err(Error::input("action count must be positive"));
    }
    spec.validate()?;
    check_embedding(spec, scaling)?;
    plan.check(d)?;

    let horizon = d.horizon();
    let shape = Shape {
        horizon,
        action_count,
        lambda,
        bonus_scale,
    };
    let mut levels: Vec<Level> = Vec::with_capacity(horizon);
    for h in (1..=horizon).rev() {
        let next = levels.last();
        let (support, y): (Vec<_>, Vec<_>) = plan
            .fold(h)
            .par_iter()
            .map(|&i| {
                let t = &d.episodes()[i][h - 1];
                let tail = match next {
                    Some(level) => shape.greedy(scaling, level, h + 1, &t.s_next).1,
                    None => 0.0,
                };
                (scaling.embed(&t.s, t.a), t.r.expect("labeled") + tail)
            })
            .unzip();
        let factor = GramFactor::new(spec, support, lambda)?;
        let weights = factor.solve(&y)?;
        levels.push(Level { factor, weights });
    }
    levels.reverse();
    Ok(PeviPolicy {
        spec: spec.clone(),
        scaling: scaling.clone(),
        shape,
        plan: plan.clone(),
        levels,
        fingerprint: None,
    })
}

impl PeviPolicy {
    pub fn horizon(&self) -> usize {
        self.shape.horizon
    }

    pub fn action_count(&self) -> usize {
        self.shape.action_count
    }

    pub fn lambda(&self) -> f64 {
        self.shape.lambda
    }

    pub fn bonus_scale(&self) -> f64 {
        self.shape.bonus_scale
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    /// Configuration fingerprint carried through the archive.
    pub fn fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = Some(fingerprint.into());
        self
    }

    fn level(&self, h: usize) -> Result<&Level> {
        if h == 0 || h > self.levels.len() {
            return Err(Error::input(format!(
                "step {h} outside 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[h - 1])
    }

    pub fn factor(&self, h: usize) -> Result<&GramFactor> {
        Ok(&self.level(h)?.factor)
    }

    pub fn weights(&self, h: usize) -> Result<&[f64]> {
        Ok(&self.level(h)?.weights)
    }

    /// `Gamma_h(z) = B * lambda^{-1/2} * sqrt(var_h(z))`.
    pub fn bonus(&self, h: usize, z: &[f64]) -> Result<f64> {
        let v = self.level(h)?.factor.posterior_variance(z)?;
        Ok(self.shape.bonus_scale * v.sqrt() / self.shape.lambda.sqrt())
    }

    /// Unclipped `k_h(z)^T w_h - Gamma_h(z)`.
    pub fn q_bar(&self, h: usize, z: &[f64]) -> Result<f64> {
        let level = self.level(h)?;
        self.spec.check_point(z)?;
        let (mean, var) = level.factor.mean_and_variance_unchecked(&level.weights, z);
        Ok(mean - self.shape.bonus_scale * var.sqrt() / self.shape.lambda.sqrt())
    }

    fn check_query(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.scaling.state.len() || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("state {s:?} does not fit the policy")));
        }
        Ok(())
    }

    pub fn q_hat(&self, h: usize, s: &[f64], a: usize) -> Result<f64> {
        let level = self.level(h)?;
        self.check_query(s)?;
        if a >= self.shape.action_count {
            return Err(Error::input(format!("action {a} out of range")));
        }
        Ok(self.shape.q(&self.scaling, level, h, s, a))
    }

    pub fn v_hat(&self, h: usize, s: &[f64]) -> Result<f64> {
        let level = self.level(h)?;
        self.check_query(s)?;
        Ok(self.shape.greedy(&self.scaling, level, h, s).1)
    }

    /// Smallest-index maximizer of `q_hat(h, s, .)`.
    pub fn act(&self, h: usize, s: &[f64]) -> Result<usize> {
        let level = self.level(h)?;
        self.check_query(s)?;
        Ok(self.shape.greedy(&self.scaling, level, h, s).0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let archive = PolicyArchive {
            kernel: self.spec.clone(),
            scaling: self.scaling.clone(),
            lambda: self.shape.lambda,
            bonus_scale: self.shape.bonus_scale,
            horizon: self.shape.horizon,
            action_count: self.shape.action_count,
            plan: self.plan.clone(),
            fingerprint: self.fingerprint.clone(),
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| LevelArchive {
                    h: i + 1,
                    clip: (self.shape.horizon - i) as f64,
                    support: l.factor.support().to_vec(),
                    weights: l.weights.clone(),
                })
                .collect(),
        };
        crate::archive::write_json(path, &archive)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: PolicyArchive = crate::archive::read_json(path)?;
        check_embedding(&a.kernel, &a.scaling)?;
        if a.levels.len() != a.horizon || a.plan.horizon() != a.horizon {
            return Err(Error::input(
                "policy archive horizon does not match its levels",
            ));
        }
        let levels = a
            .levels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.h != i + 1 || l.weights.len() != l.support.len() {
                    return Err(Error::input(format!(
                        "malformed policy archive at step {}",
                        l.h
                    )));
                }
                Ok(Level {
                    factor: GramFactor::new(&a.kernel, l.support, a.lambda)?,
                    weights: l.weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PeviPolicy {
            spec: a.kernel,
            scaling: a.scaling,
            shape: Shape {
                horizon: a.horizon,
                action_count: a.action_count,
                lambda: a.lambda,
                bonus_scale: a.bonus_scale,
            },
            plan: a.plan,
            levels,
            fingerprint: a.fingerprint,
        })
    }
}

impl Policy for PeviPolicy {
    fn act(&self, h: usize, s: &[f64], _rng: &mut SimRng) -> usize {
        self.shape
            .greedy(&self.scaling, &self.levels[h - 1], h, s)
            .0
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyArchive {
    kernel: KernelSpec,
    scaling: InputScaling,
    lambda: f64,
    bonus_scale: f64,
    horizon: usize,
    action_count: usize,
    plan: FoldPlan,
    #[serde(default)]
    fingerprint: Option<String>,
    levels: Vec<LevelArchive>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelArchive {
    h: usize,
    clip: f64,
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}
