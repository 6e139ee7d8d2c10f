//! Policies: the behavior policies that generate offline data and a few hand-written
//! reference controllers used as comparison points and as `pi*` stand-ins.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::env::{EnvVariant, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// A (possibly stochastic) Markov policy over a finite action set.
pub trait Policy: Sync {
    fn act(&self, h: usize, s: &[f64], rng: &mut SimRng) -> usize;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, h: usize, s: &[f64], rng: &mut SimRng) -> usize {
        (**self).act(h, s, rng)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, h: usize, s: &[f64], rng: &mut SimRng) -> usize {
        (**self).act(h, s, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub action_count: usize,
}

impl Policy for UniformPolicy {
    fn act(&self, _h: usize, _s: &[f64], rng: &mut SimRng) -> usize {
        rng.random_range(0..self.action_count)
    }
}

/// Deterministic hand-written controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferencePolicy {
    Constant {
        action: usize,
    },
    /// Ring: the action whose transition mean `(s + a) mod C` is closest (on the circle)
    /// to the reward peak `C / 2`; ties go to the smaller action.
    RingTowardCenter {
        c: u32,
    },
    /// Cart-pole: push toward the side the pole is falling, `theta + 0.5 theta_dot > 0`.
    CartPoleLean,
}

impl Policy for ReferencePolicy {
    fn act(&self, _h: usize, s: &[f64], _rng: &mut SimRng) -> usize {
        match *self {
            ReferencePolicy::Constant { action } => action,
            ReferencePolicy::RingTowardCenter { c } => {
                let cf = c as f64;
                let target = cf / 2.0;
                let mut best = (f64::INFINITY, 0);
                for a in 0..=c as usize {
                    let mean = (s[0] + a as f64).rem_euclid(cf);
                    let d = (mean - target).abs();
                    let d = d.min(cf - d);
                    if d < best.0 {
                        best = (d, a);
                    }
                }
                best.1
            }
            ReferencePolicy::CartPoleLean => usize::from(s[2] + 0.5 * s[3] > 0.0),
        }
    }
}

/// With probability `epsilon` a uniform action, otherwise the base policy's action.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<P> {
    pub epsilon: f64,
    pub action_count: usize,
    pub base: P,
}

impl<P: Policy> Policy for EpsilonGreedy<P> {
    fn act(&self, h: usize, s: &[f64], rng: &mut SimRng) -> usize {
        if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.action_count)
        } else {
            self.base.act(h, s, rng)
        }
    }
}

/// Configuration-level description of the data-collection policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BehaviorSpec {
    #[default]
    Uniform,
    EpsilonGreedy {
        epsilon: f64,
        reference: ReferencePolicy,
    },
}

impl BehaviorSpec {
    pub fn build(&self, env: &EnvironmentSpec) -> Result<Box<dyn Policy>> {
        let action_count = env.action_count();
        Ok(match self {
            BehaviorSpec::Uniform => Box::new(UniformPolicy { action_count }),
            BehaviorSpec::EpsilonGreedy { epsilon, reference } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(Error::input(format!(
                        "epsilon must lie in [0, 1], got {epsilon}"
                    )));
                }
                check_reference(env, reference)?;
                Box::new(EpsilonGreedy {
                    epsilon: *epsilon,
                    action_count,
                    base: *reference,
                })
            }
        })
    }
}

pub fn check_reference(env: &EnvironmentSpec, reference: &ReferencePolicy) -> Result<()> {
    match (reference, &env.variant) {
        (ReferencePolicy::Constant { action }, _) => env.check_action(*action),
        (ReferencePolicy::RingTowardCenter { c }, EnvVariant::RingGaussian { c: env_c, .. })
            if c == env_c =>
        {
            Ok(())
        }
        (ReferencePolicy::CartPoleLean, EnvVariant::CartPole { .. }) => Ok(()),
        _ => Err(Error::input(format!(
            "reference policy {reference:?} does not fit this environment"
        ))),
    }
}
