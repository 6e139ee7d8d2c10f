//! Run configuration: a TOML file with `environment`, `kernel`, `data`, `algorithm` and
//! `evaluation` tables. Unknown keys are rejected.
//!
//! ```toml
//! [environment]
//! variant = "ring-gaussian"
//! alpha = 3.0
//! c = 8
//!
//! [kernel]
//! family = "squared-exponential"
//! lengthscale = 0.25
//!
//! [data]
//! n1 = 10
//! n2 = 500
//! seed = 7
//!
//! [algorithm]
//! delta = 0.1
//! c_b = 0.05
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{CartPoleParams, EnvVariant, EnvironmentSpec, InputScaling};
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, MaternSmoothness};
use crate::pevi::FoldScheme;
use crate::policy::{check_reference, BehaviorSpec, ReferencePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentSection,
    pub kernel: KernelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    RingGaussian,
    CartPole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub variant: EnvKind,
    /// Ring reward/noise sharpness; default 3.
    pub alpha: Option<f64>,
    /// Ring circumference; default 8.
    pub c: Option<u32>,
    /// Defaults to `C` on the ring; required for cart-pole.
    pub horizon: Option<usize>,
    pub physics: Option<CartPoleParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    SquaredExponential,
    Matern,
    ExplicitFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: FamilyKind,
    pub lengthscale: Option<f64>,
    pub smoothness: Option<MaternSmoothness>,
    pub degree: Option<u8>,
    pub input_bound: Option<f64>,
    /// Per-coordinate `[lo, hi]` bounds mapped onto `[-1, 1]`; environment defaults otherwise.
    pub state_bounds: Option<Vec<[f64; 2]>>,
    pub action_bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n1: usize,
    pub n2: usize,
    pub noise_sigma: f64,
    pub behavior: BehaviorSpec,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n1: 10,
            n2: 10,
            noise_sigma: 0.0,
            behavior: BehaviorSpec::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldSchemeKind {
    Contiguous,
    #[default]
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    /// Reward ridge; `1 + 1/N1` when absent.
    pub nu: Option<f64>,
    /// Value ridge; `1 + 1/N` when absent.
    pub lambda: Option<f64>,
    pub norm_bound: f64,
    pub delta: f64,
    /// Fixed bonus scale `B`. When absent it is derived from `c_b` and `r_q`.
    pub bonus_scale: Option<f64>,
    pub c_b: f64,
    pub r_q: f64,
    pub fold_scheme: FoldSchemeKind,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection {
            nu: None,
            lambda: None,
            norm_bound: 1.0,
            delta: 0.1,
            bonus_scale: None,
            c_b: 1.0,
            r_q: 2.0,
            fold_scheme: FoldSchemeKind::Shuffled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub rollouts: usize,
    pub grid_resolution: usize,
    pub n1_grid: Vec<usize>,
    pub n2_grid: Vec<usize>,
    pub seeds: usize,
    pub suboptimality: bool,
    pub zeta_rollouts: usize,
    /// Stand-in for the optimal policy in information diagnostics where no oracle exists.
    pub reference: Option<ReferencePolicy>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            rollouts: 1000,
            grid_resolution: 512,
            n1_grid: vec![10, 20, 50, 100],
            n2_grid: vec![10, 20, 50, 100, 200, 500],
            seeds: 5,
            suboptimality: false,
            zeta_rollouts: 200,
            reference: None,
        }
    }
}

/// A validated configuration with the environment, kernel and embedding built.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub env: EnvironmentSpec,
    pub kernel: KernelSpec,
    pub scaling: InputScaling,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: name.into(),
        message: message.into(),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(field(
            name,
            format!("must be a positive finite number, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|r| text[..r.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let env = self.build_env()?;
        let kernel = self.build_kernel(&env)?;
        let scaling = self.build_scaling(&env)?;
        self.check_data(&env)?;
        self.check_algorithm()?;
        self.check_evaluation()?;
        if let Some(reference) = &self.evaluation.reference {
            check_reference(&env, reference)
                .map_err(|e| field("evaluation.reference", e.to_string()))?;
        }
        Ok(Resolved {
            config: self.clone(),
            env,
            kernel,
            scaling,
        })
    }

    fn build_env(&self) -> Result<EnvironmentSpec> {
        let e = &self.environment;
        let mut env = match e.variant {
            EnvKind::RingGaussian => {
                if e.physics.is_some() {
                    return Err(field("environment.physics", "only applies to cart-pole"));
                }
                let alpha = positive("environment.alpha", e.alpha.unwrap_or(3.0))?;
                let c = e.c.unwrap_or(8);
                if c == 0 {
                    return Err(field("environment.c", "must be a positive integer"));
                }
                EnvironmentSpec::ring_gaussian(alpha, c)
            }
            EnvKind::CartPole => {
                if e.alpha.is_some() {
                    return Err(field("environment.alpha", "only applies to ring-gaussian"));
                }
                if e.c.is_some() {
                    return Err(field("environment.c", "only applies to ring-gaussian"));
                }
                let Some(h) = e.horizon else {
                    return Err(field("environment.horizon", "required for cart-pole"));
                };
                EnvironmentSpec {
                    variant: EnvVariant::CartPole {
                        physics: e.physics.clone().unwrap_or_default(),
                    },
                    horizon: h,
                }
            }
        };
        if let Some(h) = e.horizon {
            if h == 0 {
                return Err(field("environment.horizon", "must be at least 1"));
            }
            env.horizon = h;
        }
        env.validate()
            .map_err(|err| field("environment.physics", err.to_string()))?;
        Ok(env)
    }

    fn build_kernel(&self, env: &EnvironmentSpec) -> Result<KernelSpec> {
        let k = &self.kernel;
        let m = env.state_dim() + 1;
        let unused = |name: &str, present: bool| -> Result<()> {
            if present {
                Err(field(name, "does not apply to this kernel family"))
            } else {
                Ok(())
            }
        };
        let spec = match k.family {
            FamilyKind::SquaredExponential | FamilyKind::Matern => {
                unused("kernel.degree", k.degree.is_some())?;
                unused("kernel.input_bound", k.input_bound.is_some())?;
                let l = positive(
                    "kernel.lengthscale",
                    k.lengthscale
                        .ok_or_else(|| field("kernel.lengthscale", "required"))?,
                )?;
                if k.family == FamilyKind::Matern {
                    let nu = k
                        .smoothness
                        .ok_or_else(|| field("kernel.smoothness", "required for matern"))?;
                    KernelSpec::matern(nu, l, m)
                } else {
                    unused("kernel.smoothness", k.smoothness.is_some())?;
                    KernelSpec::squared_exponential(l, m)
                }
            }
            FamilyKind::ExplicitFeatures => {
                unused("kernel.lengthscale", k.lengthscale.is_some())?;
                unused("kernel.smoothness", k.smoothness.is_some())?;
                let degree = k.degree.unwrap_or(1);
                if !(1..=3).contains(&degree) {
                    return Err(field(
                        "kernel.degree",
                        format!("must be 1, 2 or 3, got {degree}"),
                    ));
                }
                let bound = positive("kernel.input_bound", k.input_bound.unwrap_or(1.0))?;
                KernelSpec::explicit_features(degree, m).with_input_bound(bound)
            }
        };
        spec.validate()
            .map_err(|e| field("kernel", e.to_string()))?;
        Ok(spec)
    }

    fn build_scaling(&self, env: &EnvironmentSpec) -> Result<InputScaling> {
        let mut scaling = env.default_scaling();
        if let Some(b) = &self.kernel.state_bounds {
            scaling.state = b.clone();
        }
        if let Some(b) = self.kernel.action_bounds {
            scaling.action = b;
        }
        scaling
            .validate(env.state_dim())
            .map_err(|e| field("kernel.state_bounds", e.to_string()))?;
        Ok(scaling)
    }

    fn check_data(&self, env: &EnvironmentSpec) -> Result<()> {
        let d = &self.data;
        if !(d.noise_sigma.is_finite() && d.noise_sigma >= 0.0) {
            return Err(field(
                "data.noise_sigma",
                "must be a nonnegative finite number",
            ));
        }
        match &d.behavior {
            BehaviorSpec::Uniform => {}
            BehaviorSpec::EpsilonGreedy { epsilon, reference } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(field("data.behavior.epsilon", "must lie in [0, 1]"));
                }
                check_reference(env, reference)
                    .map_err(|e| field("data.behavior.reference", e.to_string()))?;
            }
        }
        Ok(())
    }

    fn check_algorithm(&self) -> Result<()> {
        let a = &self.algorithm;
        if let Some(nu) = a.nu {
            positive("algorithm.nu", nu)?;
        }
        if let Some(l) = a.lambda {
            positive("algorithm.lambda", l)?;
        }
        if !(a.norm_bound.is_finite() && a.norm_bound >= 0.0) {
            return Err(field("algorithm.norm_bound", "must be nonnegative"));
        }
        if !(a.delta > 0.0 && a.delta < 1.0) {
            return Err(field(
                "algorithm.delta",
                format!("must lie in (0, 1), got {}", a.delta),
            ));
        }
        if let Some(b) = a.bonus_scale {
            if !(b.is_finite() && b >= 0.0) {
                return Err(field("algorithm.bonus_scale", "must be nonnegative"));
            }
        }
        if !(a.c_b.is_finite() && a.c_b >= 0.0) {
            return Err(field("algorithm.c_b", "must be nonnegative"));
        }
        positive("algorithm.r_q", a.r_q)?;
        Ok(())
    }

    fn check_evaluation(&self) -> Result<()> {
        let e = &self.evaluation;
        if e.rollouts == 0 {
            return Err(field("evaluation.rollouts", "must be at least 1"));
        }
        if e.grid_resolution < 2 {
            return Err(field("evaluation.grid_resolution", "must be at least 2"));
        }
        if e.n1_grid.is_empty() || e.n1_grid.contains(&0) {
            return Err(field(
                "evaluation.n1_grid",
                "must be a nonempty list of positive sizes",
            ));
        }
        if e.n2_grid.is_empty() || e.n2_grid.contains(&0) {
            return Err(field(
                "evaluation.n2_grid",
                "must be a nonempty list of positive sizes",
            ));
        }
        if e.seeds == 0 {
            return Err(field("evaluation.seeds", "must be at least 1"));
        }
        if e.zeta_rollouts == 0 {
            return Err(field("evaluation.zeta_rollouts", "must be at least 1"));
        }
        Ok(())
    }
}

impl Resolved {
    /// SHA-256 over the environment, kernel, embedding and algorithm settings. Data sizes,
    /// seeds and evaluation settings are excluded so one fingerprint covers a whole sweep.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            env: &'a EnvironmentSpec,
            kernel: &'a KernelSpec,
            scaling: &'a InputScaling,
            algorithm: &'a AlgorithmSection,
            behavior: &'a BehaviorSpec,
            noise_sigma: f64,
        }
        let key = Key {
            env: &self.env,
            kernel: &self.kernel,
            scaling: &self.scaling,
            algorithm: &self.config.algorithm,
            behavior: &self.config.data.behavior,
            noise_sigma: self.config.data.noise_sigma,
        };
        let bytes = serde_json::to_vec(&key).expect("fingerprint key serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn fold_scheme(&self, seed: u64) -> FoldScheme {
        match self.config.algorithm.fold_scheme {
            FoldSchemeKind::Contiguous => FoldScheme::Contiguous,
            FoldSchemeKind::Shuffled => FoldScheme::Shuffled { seed },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RING: &str = r#"
[environment]
variant = "ring-gaussian"

[kernel]
family = "squared-exponential"
lengthscale = 0.3
"#;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn defaults() {
        let r = parse(RING).unwrap().resolve().unwrap();
        assert_eq!(r.env, EnvironmentSpec::ring_gaussian(3.0, 8));
        assert_eq!(r.kernel, KernelSpec::squared_exponential(0.3, 2));
        let a = &r.config.algorithm;
        assert_eq!((a.delta, a.norm_bound, a.r_q, a.c_b), (0.1, 1.0, 2.0, 1.0));
        assert_eq!(a.nu, None);
        assert_eq!(r.config.evaluation.rollouts, 1000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{RING}\n[algorithm]\ndleta = 0.2\n");
        match parse(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert!(message.contains("dleta"), "{message}");
                assert_eq!(line, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn field_level_errors() {
        let bad = |extra: &str, name: &str| {
            let text = format!("{RING}\n{extra}\n");
            match parse(&text).unwrap().resolve() {
                Err(Error::Config { field, .. }) => assert_eq!(field, name),
                other => panic!("{extra}: {other:?}"),
            }
        };
        bad("[algorithm]\ndelta = 1.5", "algorithm.delta");
        bad("[algorithm]\nnu = 0.0", "algorithm.nu");
        bad("[evaluation]\nrollouts = 0", "evaluation.rollouts");
        bad("[data]\nnoise_sigma = -1.0", "data.noise_sigma");
    }

    #[test]
    fn cart_pole_needs_horizon() {
        let text = r#"
[environment]
variant = "cart-pole"

[kernel]
family = "explicit-features"
degree = 1
"#;
        match parse(text).unwrap().resolve() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "environment.horizon"),
            other => panic!("{other:?}"),
        }
        let with_h = text.replace("cart-pole\"", "cart-pole\"\nhorizon = 20");
        let r = parse(&with_h).unwrap().resolve().unwrap();
        assert_eq!(r.env.horizon, 20);
        assert_eq!(r.kernel.ambient_dim, 5);
    }

    #[test]
    fn fingerprint_tracks_algorithm_not_data() {
        let base = parse(RING).unwrap().resolve().unwrap();
        let more_data = parse(&format!("{RING}\n[data]\nn1 = 99\nseed = 4\n"))
            .unwrap()
            .resolve()
            .unwrap();
        let other_b = parse(&format!("{RING}\n[algorithm]\nc_b = 0.5\n"))
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(base.fingerprint(), more_data.fingerprint());
        assert_ne!(base.fingerprint(), other_b.fingerprint());
        assert_eq!(base.fingerprint().len(), 64);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = parse(&format!("{RING}\n[data]\nn1 = 3\n")).unwrap();
        let back = parse(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }
}
