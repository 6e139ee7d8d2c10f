//! Offline datasets of complete episodes and their line-delimited JSON file format.
//!
//! One record per transition:
//!
//! ```text
//! {"episode":0,"h":1,"s":[3.1],"a":2,"r":0.41,"s_next":[5.0]}
//! ```
//!
//! `r` is `null` throughout an unlabeled file. Records are ordered by `(episode, h)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub episode: usize,
    pub h: usize,
    pub s: Vec<f64>,
    pub a: usize,
    pub r: Option<f64>,
    pub s_next: Vec<f64>,
}

/// Episodes of exactly `H` stitched transitions, all labeled or all unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    episodes: Vec<Vec<Transition>>,
    labeled: bool,
    horizon: usize,
}

impl Dataset {
    pub fn new(episodes: Vec<Vec<Transition>>, labeled: bool, horizon: usize) -> Result<Self> {
        let d = Dataset {
            episodes,
            labeled,
            horizon,
        };
        d.validate()?;
        Ok(d)
    }

    /// A dataset with no episodes (the `N = 0` edge).
    pub fn empty(labeled: bool, horizon: usize) -> Self {
        Dataset {
            episodes: Vec::new(),
            labeled,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::input("dataset horizon must be at least 1"));
        }
        let mut last_id: Option<usize> = None;
        let mut dims: Option<usize> = None;
        for episode in &self.episodes {
            let id = episode.first().map(|t| t.episode).unwrap_or(0);
            let fail = |h: usize, message: String| Error::Validation {
                episode: id,
                h,
                message,
            };
            if episode.len() != self.horizon {
                return Err(fail(
                    0,
                    format!(
                        "episode has {} steps, expected {}",
                        episode.len(),
                        self.horizon
                    ),
                ));
            }
            if let Some(prev) = last_id {
                if id <= prev {
                    return Err(fail(0, format!("episode ids must increase (after {prev})")));
                }
            }
            last_id = Some(id);
            for (i, t) in episode.iter().enumerate() {
                if t.episode != id {
                    return Err(fail(t.h, format!("mixed episode id {}", t.episode)));
                }
                if t.h != i + 1 {
                    return Err(fail(t.h, format!("expected step {}, found {}", i + 1, t.h)));
                }
                if t.r.is_some() != self.labeled {
                    let what = if self.labeled {
                        "missing reward in labeled"
                    } else {
                        "reward in unlabeled"
                    };
                    return Err(fail(t.h, format!("{what} dataset")));
                }
                if let Some(r) = t.r {
                    if !r.is_finite() {
                        return Err(fail(t.h, format!("non-finite reward {r}")));
                    }
                }
                let d = *dims.get_or_insert(t.s.len());
                if t.s.len() != d || t.s_next.len() != d || d == 0 {
                    return Err(fail(t.h, "inconsistent state dimension".into()));
                }
                if t.s.iter().chain(&t.s_next).any(|v| !v.is_finite()) {
                    return Err(fail(t.h, "non-finite state coordinate".into()));
                }
                if let Some(next) = episode.get(i + 1) {
                    if next.s != t.s_next {
                        return Err(fail(t.h, "s_next does not match the next step's s".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn labeled(&self) -> bool {
        self.labeled
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    /// The step-`h` transition of every episode, in episode order.
    pub fn step(&self, h: usize) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().map(move |e| &e[h - 1])
    }

    /// Every action is valid and every state has the environment's dimension.
    pub fn check_env(&self, env: &EnvironmentSpec) -> Result<()> {
        if self.horizon != env.horizon {
            return Err(Error::input(format!(
                "dataset horizon {} differs from environment horizon {}",
                self.horizon, env.horizon
            )));
        }
        for t in self.transitions() {
            if t.a >= env.action_count() || t.s.len() != env.state_dim() {
                return Err(Error::Validation {
                    episode: t.episode,
                    h: t.h,
                    message: "action or state dimension does not fit the environment".into(),
                });
            }
        }
        Ok(())
    }

    /// Replace every reward, keeping episode structure. `reward` sees each transition.
    pub fn with_rewards(&self, mut reward: impl FnMut(&Transition) -> f64) -> Result<Self> {
        let episodes = self
            .episodes
            .iter()
            .map(|e| {
                e.iter()
                    .map(|t| Transition {
                        r: Some(reward(t)),
                        ..t.clone()
                    })
                    .collect()
            })
            .collect();
        Dataset::new(episodes, true, self.horizon)
    }

    /// Concatenate labeled datasets, renumbering episodes `0..N`.
    pub fn merge(parts: &[&Dataset]) -> Result<Self> {
        let horizon = parts.first().map(|d| d.horizon).unwrap_or(1);
        let mut episodes = Vec::new();
        for d in parts {
            if !d.labeled {
                return Err(Error::input("only labeled datasets can be merged"));
            }
            if d.horizon != horizon {
                return Err(Error::input(
                    "cannot merge datasets with different horizons",
                ));
            }
            for e in &d.episodes {
                let id = episodes.len();
                episodes.push(
                    e.iter()
                        .map(|t| Transition {
                            episode: id,
                            ..t.clone()
                        })
                        .collect(),
                );
            }
        }
        Dataset::new(episodes, true, horizon)
    }

    /// Keep only the listed episodes (by position), in the given order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let episodes = positions
            .iter()
            .map(|&p| {
                self.episodes
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::input(format!("episode position {p} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            episodes,
            labeled: self.labeled,
            horizon: self.horizon,
        })
    }
}

/// Roll out `n` episodes of the behavior policy. Episode `i` uses a generator derived
/// from `(seed, i)`, so the result does not depend on generation order.
pub fn generate_dataset(
    env: &EnvironmentSpec,
    behavior: &dyn Policy,
    n: usize,
    labeled: bool,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    env.validate()?;
    if n == 0 {
        return Err(Error::input("dataset needs at least one episode"));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::input(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
    let mut episodes = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = derived_rng(seed, &[i as u64]);
        let mut s = env.sample_initial(&mut rng);
        let mut steps = Vec::with_capacity(env.horizon);
        for h in 1..=env.horizon {
            let a = behavior.act(h, &s, &mut rng);
            let (s_next, r_true) = env.step(h, &s, a, &mut rng);
            let r = labeled.then(|| match &noise {
                Some(dist) => r_true + dist.sample(&mut rng),
                None => r_true,
            });
            steps.push(Transition {
                episode: i,
                h,
                s: std::mem::replace(&mut s, s_next.clone()),
                a,
                r,
                s_next,
            });
        }
        episodes.push(steps);
    }
    Dataset::new(episodes, labeled, env.horizon)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in dataset.transitions() {
        let line = serde_json::to_string(t).expect("transition serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read and validate a dataset file. The horizon is the step count of the first
/// episode; labeled-ness comes from the first record and must hold for all others.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<Transition> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(t);
    }
    let labeled = records.first().map(|t| t.r.is_some()).unwrap_or(false);
    let mut episodes: Vec<Vec<Transition>> = Vec::new();
    for t in records {
        if t.h == 0 {
            return Err(Error::Validation {
                episode: t.episode,
                h: 0,
                message: "step index must be at least 1".into(),
            });
        }
        match episodes.last_mut() {
            Some(e) if e[0].episode == t.episode => e.push(t),
            _ => episodes.push(vec![t]),
        }
    }
    let horizon = episodes.first().map(|e| e.len()).unwrap_or(1);
    Dataset::new(episodes, labeled, horizon)
}

/// Convenience for tests and tools: the uniform-behavior dataset of `env`.
pub fn generate_uniform(
    env: &EnvironmentSpec,
    n: usize,
    labeled: bool,
    seed: u64,
) -> Result<Dataset> {
    let behavior = crate::policy::UniformPolicy {
        action_count: env.action_count(),
    };
    generate_dataset(env, &behavior, n, labeled, 0.0, seed)
}
