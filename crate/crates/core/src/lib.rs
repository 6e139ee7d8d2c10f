mod archive;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod experiment;
pub mod gram;
pub mod kernel;
pub mod pevi;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;

pub use config::{Resolved, RunConfig};
pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, Transition};
pub use env::{EnvVariant, EnvironmentSpec, InputScaling};
pub use error::{Error, Result};
pub use gram::{information_gain, zeta_information_amount, GramFactor};
pub use kernel::{gram_matrix, DecayClass, KernelFamily, KernelSpec, MaternSmoothness};
pub use pevi::{
    backward_induction, default_bonus_scale, split_folds, FoldPlan, FoldScheme, PeviPolicy,
};
pub use policy::{BehaviorSpec, Policy, ReferencePolicy};
pub use reward::{fit_reward, RewardModel, RewardParams};
