//! Finite-horizon environments: the wrapped-Gaussian ring toy problem and cart-pole.
//!
//! Steps are 1-based (`h` in `1..=H`). Stepping is a pure function of the inputs and an
//! explicit generator, so episodes can be generated from independently derived seeds.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Physical constants of the classic cart-pole task. Defaults are the standard
/// control-suite values with explicit Euler integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    /// Pole angle limit in radians (12 degrees).
    pub theta_threshold: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
        }
    }
}

/// State every terminated cart-pole episode is sent to. Its pole angle lies far outside
/// the threshold, so it is never mistaken for a live state.
pub const CART_POLE_ABSORBING: [f64; 4] = [0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvVariant {
    /// States on `[0, C]`, actions `0..=C`; the next state is Gaussian around
    /// `(s + a) mod C` with variance `1 / (2 alpha)`, then wrapped.
    RingGaussian { alpha: f64, c: u32 },
    CartPole {
        #[serde(default)]
        physics: CartPoleParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub variant: EnvVariant,
    pub horizon: usize,
}

impl EnvironmentSpec {
    /// Ring environment with the default horizon `H = C`.
    pub fn ring_gaussian(alpha: f64, c: u32) -> Self {
        EnvironmentSpec {
            variant: EnvVariant::RingGaussian { alpha, c },
            horizon: c as usize,
        }
    }

    pub fn cart_pole(horizon: usize) -> Self {
        EnvironmentSpec {
            variant: EnvVariant::CartPole {
                physics: CartPoleParams::default(),
            },
            horizon,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        match &self.variant {
            EnvVariant::RingGaussian { alpha, c } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::input(format!(
                        "ring alpha must be positive, got {alpha}"
                    )));
                }
                if *c == 0 {
                    return Err(Error::input("ring C must be a positive integer"));
                }
            }
            EnvVariant::CartPole { physics } => {
                let p = physics;
                let positive = [
                    p.gravity,
                    p.mass_cart,
                    p.mass_pole,
                    p.half_length,
                    p.force_mag,
                    p.tau,
                    p.x_threshold,
                    p.theta_threshold,
                ];
                if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::input("cart-pole physics constants must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self.variant {
            EnvVariant::RingGaussian { .. } => 1,
            EnvVariant::CartPole { .. } => 4,
        }
    }

    pub fn action_count(&self) -> usize {
        match self.variant {
            EnvVariant::RingGaussian { c, .. } => c as usize + 1,
            EnvVariant::CartPole { .. } => 2,
        }
    }

    pub fn is_ring(&self) -> bool {
        matches!(self.variant, EnvVariant::RingGaussian { .. })
    }

    /// Draw `s_1` from the initial distribution.
    pub fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        match self.variant {
            EnvVariant::RingGaussian { c, .. } => vec![rng.random_range(0.0..c as f64)],
            EnvVariant::CartPole { .. } => (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect(),
        }
    }

    /// Expected (noise-free) reward `r_h(s, a)`, in `[0, 1]`.
    pub fn true_reward(&self, _h: usize, s: &[f64], _a: usize) -> f64 {
        match &self.variant {
            EnvVariant::RingGaussian { alpha, c } => ring_reward(*alpha, *c, s[0]),
            EnvVariant::CartPole { physics } => {
                if cart_pole_alive(physics, s) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Sample `s_{h+1}` and return it with the true reward of `(s, a)`.
    pub fn step(&self, h: usize, s: &[f64], a: usize, rng: &mut SimRng) -> (Vec<f64>, f64) {
        let r = self.true_reward(h, s, a);
        let next = match &self.variant {
            EnvVariant::RingGaussian { alpha, c } => {
                let g = ring_unwrapped_next(*alpha, *c, s[0], a, rng);
                vec![wrap(g, *c as f64)]
            }
            EnvVariant::CartPole { physics } => cart_pole_step(physics, s, a),
        };
        (next, r)
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.action_count() {
            return Err(Error::input(format!(
                "action {a} out of range for {} actions",
                self.action_count()
            )));
        }
        Ok(())
    }

    /// Per-environment default bounds used to map `(s, a)` into `[-1, 1]^m` kernel inputs.
    pub fn default_scaling(&self) -> InputScaling {
        match self.variant {
            EnvVariant::RingGaussian { c, .. } => InputScaling {
                state: vec![[0.0, c as f64]],
                action: [0.0, c as f64],
            },
            EnvVariant::CartPole { ref physics } => InputScaling {
                state: vec![
                    [-physics.x_threshold, physics.x_threshold],
                    [-3.0, 3.0],
                    [-physics.theta_threshold, physics.theta_threshold],
                    [-3.5, 3.5],
                ],
                action: [0.0, 1.0],
            },
        }
    }
}

pub fn ring_reward(alpha: f64, c: u32, s: f64) -> f64 {
    let d = s - c as f64 / 2.0;
    (-alpha * d * d).exp() / (std::f64::consts::PI / alpha).sqrt()
}

/// The pre-wrap Gaussian draw of the ring transition.
pub fn ring_unwrapped_next(alpha: f64, c: u32, s: f64, a: usize, rng: &mut SimRng) -> f64 {
    let mean = (s + a as f64).rem_euclid(c as f64);
    let sd = (1.0 / (2.0 * alpha)).sqrt();
    Normal::new(mean, sd)
        .expect("finite positive sd")
        .sample(rng)
}

fn wrap(x: f64, c: f64) -> f64 {
    let w = x.rem_euclid(c);
    // rem_euclid of a tiny negative number rounds up to c itself
    if w >= c {
        0.0
    } else {
        w
    }
}

pub fn cart_pole_alive(p: &CartPoleParams, s: &[f64]) -> bool {
    s[0].abs() <= p.x_threshold && s[2].abs() <= p.theta_threshold
}

fn cart_pole_step(p: &CartPoleParams, s: &[f64], a: usize) -> Vec<f64> {
    if !cart_pole_alive(p, s) {
        return CART_POLE_ABSORBING.to_vec();
    }
    let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
    let force = if a == 1 { p.force_mag } else { -p.force_mag };
    let total_mass = p.mass_cart + p.mass_pole;
    let pole_mass_length = p.mass_pole * p.half_length;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.mass_pole * cos * cos / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
    let next = vec![
        x + p.tau * x_dot,
        x_dot + p.tau * x_acc,
        theta + p.tau * theta_dot,
        theta_dot + p.tau * theta_acc,
    ];
    if cart_pole_alive(p, &next) {
        next
    } else {
        CART_POLE_ABSORBING.to_vec()
    }
}

/// Linear map of each state coordinate and the action index from `[lo, hi]` onto
/// `[-1, 1]`, clamped. This is how `z = (s, a)` is formed for every kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputScaling {
    pub state: Vec<[f64; 2]>,
    pub action: [f64; 2],
}

impl InputScaling {
    pub fn dim(&self) -> usize {
        self.state.len() + 1
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.state.len() != state_dim {
            return Err(Error::input(format!(
                "scaling has {} state bounds, environment state has {state_dim} coordinates",
                self.state.len()
            )));
        }
        for [lo, hi] in self.state.iter().chain(std::iter::once(&self.action)) {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::input(format!("invalid rescale bound [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn embed(&self, s: &[f64], a: usize) -> Vec<f64> {
        let map = |v: f64, [lo, hi]: [f64; 2]| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        let mut z: Vec<f64> = s
            .iter()
            .zip(&self.state)
            .map(|(v, b)| map(*v, *b))
            .collect();
        z.push(map(a as f64, self.action));
        z
    }
}
