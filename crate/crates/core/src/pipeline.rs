//! The end-to-end pipeline: generate `D1` and `D2`, fit the reward model, relabel `D2`
//! pessimistically, merge, split into folds, run value iteration, evaluate.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::Resolved;
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_policy, CellFailure, Evaluation, SweepRow, SweepTable};
use crate::pevi::{
    backward_induction, bonus_scale_from_gain, fold_information_gains, split_folds, FoldPlan,
    PeviPolicy,
};
use crate::reward::{fit_reward, RewardModel, RewardParams};
use crate::rng::derive_seed;

/// Labeled `D1` (with observation noise) and unlabeled `D2`, each from its own stream of
/// `seed`.
pub fn generate_pair(r: &Resolved, n1: usize, n2: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let data = &r.config.data;
    let behavior = data.behavior.build(&r.env)?;
    let gen = |n: usize, labeled: bool, noise: f64, stream: u64| {
        if n == 0 {
            return Ok(Dataset::empty(labeled, r.env.horizon));
        }
        generate_dataset(
            &r.env,
            &*behavior,
            n,
            labeled,
            noise,
            derive_seed(seed, &[stream]),
        )
    };
    Ok((gen(n1, true, data.noise_sigma, 1)?, gen(n2, false, 0.0, 2)?))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub reward: RewardModel,
    pub relabeled: Dataset,
    pub merged: Dataset,
    pub plan: FoldPlan,
    pub lambda: f64,
    pub bonus_scale: f64,
    pub fold_gains: Vec<f64>,
    pub policy: PeviPolicy,
}

pub fn train(r: &Resolved, d1: &Dataset, d2: &Dataset, fold_seed: u64) -> Result<Trained> {
    d1.check_env(&r.env)?;
    d2.check_env(&r.env)?;
    if !d1.labeled() {
        return Err(Error::input("the labeled dataset has no rewards"));
    }
    if d2.labeled() {
        return Err(Error::input(
            "the unlabeled dataset already carries rewards",
        ));
    }
    let h = r.env.horizon;
    if d1.len() + d2.len() < h {
        return Err(Error::input(format!(
            "insufficient episodes for H folds: N1 + N2 = {} < H = {h}",
            d1.len() + d2.len()
        )));
    }
    let alg = &r.config.algorithm;
    let params = RewardParams {
        nu: alg.nu.unwrap_or(1.0 + 1.0 / d1.len().max(1) as f64),
        norm_bound: alg.norm_bound,
        delta: alg.delta,
    };
    let reward = fit_reward(d1, &r.kernel, &r.scaling, params)?;
    let relabeled = reward.relabel(d2)?;
    let merged = Dataset::merge(&[d1, &relabeled])?;
    let n = merged.len();
    let lambda = alg.lambda.unwrap_or(1.0 + 1.0 / n as f64);
    let plan = split_folds(n, h, r.fold_scheme(fold_seed))?;
    let fold_gains = fold_information_gains(&merged, &r.kernel, &r.scaling, lambda, &plan)?;
    let bonus_scale = match alg.bonus_scale {
        Some(b) => b,
        None => {
            let gain = fold_gains.iter().cloned().fold(0.0, f64::max);
            bonus_scale_from_gain(h, lambda, alg.delta, alg.r_q, alg.c_b, gain)
        }
    };
    let policy = backward_induction(
        &merged,
        &r.kernel,
        &r.scaling,
        r.env.action_count(),
        lambda,
        bonus_scale,
        &plan,
    )?
    .with_fingerprint(r.fingerprint());
    Ok(Trained {
        reward,
        relabeled,
        merged,
        plan,
        lambda,
        bonus_scale,
        fold_gains,
        policy,
    })
}

impl Trained {
    /// Plain-text `key=value` summary of the fitted quantities.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let p = self.reward.params();
        let n1 = self.merged.len() - self.relabeled.len();
        let _ = writeln!(out, "n1={n1}");
        let _ = writeln!(out, "n2={}", self.relabeled.len());
        let _ = writeln!(out, "horizon={}", self.plan.horizon());
        let _ = writeln!(out, "nu={}", p.nu);
        let _ = writeln!(out, "delta={}", p.delta);
        let _ = writeln!(out, "norm_bound={}", p.norm_bound);
        let _ = writeln!(out, "lambda={}", self.lambda);
        let _ = writeln!(out, "bonus_scale={}", self.bonus_scale);
        let _ = writeln!(
            out,
            "fold_size={}",
            self.plan.folds.first().map_or(0, Vec::len)
        );
        let _ = writeln!(out, "truncated_episodes={}", self.plan.truncated);
        for h in 1..=self.reward.horizon() {
            let beta = self.reward.beta_radius(h).expect("step in range");
            let _ = writeln!(out, "beta_{h}={beta}");
        }
        for (h, g) in self.fold_gains.iter().enumerate() {
            let _ = writeln!(out, "fold_gain_{}={g}", h + 1);
        }
        let zero = self
            .relabeled
            .transitions()
            .filter(|t| t.r == Some(0.0))
            .count();
        let total = self.relabeled.transitions().count();
        let _ = writeln!(
            out,
            "relabeled_zero_fraction={}",
            zero as f64 / total.max(1) as f64
        );
        out
    }
}

/// One sweep cell: data from `(master, n1, n2, seed)`, train, evaluate.
pub fn run_cell(
    r: &Resolved,
    master: u64,
    n1: usize,
    n2: usize,
    seed: usize,
) -> Result<Evaluation> {
    let cell = derive_seed(master, &[n1 as u64, n2 as u64, seed as u64]);
    let (d1, d2) = generate_pair(r, n1, n2, cell)?;
    let trained = train(r, &d1, &d2, derive_seed(cell, &[3]))?;
    evaluate_policy(
        &r.env,
        &trained.policy,
        r.config.evaluation.rollouts,
        derive_seed(cell, &[4]),
    )
}

/// Every `(N1, N2, seed)` cell of the evaluation grids, master seed `data.seed`. Cells run
/// in parallel on `workers` threads (all cores when `None`); rows come back sorted and
/// are bit-identical for any worker count.
pub fn run_sweep(r: &Resolved, workers: Option<usize>) -> Result<SweepTable> {
    let ev = &r.config.evaluation;
    let master = r.config.data.seed;
    let cells: Vec<(usize, usize, usize)> = ev
        .n1_grid
        .iter()
        .flat_map(|&n1| {
            ev.n2_grid
                .iter()
                .flat_map(move |&n2| (0..ev.seeds).map(move |s| (n1, n2, s)))
        })
        .collect();
    let work = || -> Vec<((usize, usize, usize), Result<Evaluation>)> {
        cells
            .par_iter()
            .map(|&(n1, n2, s)| ((n1, n2, s), run_cell(r, master, n1, n2, s)))
            .collect()
    };
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::input(format!("cannot start {w} workers: {e}")))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for ((n1, n2, seed), res) in results {
        match res {
            Ok(e) => rows.push(SweepRow {
                n1,
                n2,
                seed,
                v_mean: e.mean,
                v_se: e.se,
                m_rollouts: e.rollouts,
            }),
            Err(e) => {
                rows.push(SweepRow {
                    n1,
                    n2,
                    seed,
                    v_mean: f64::NAN,
                    v_se: f64::NAN,
                    m_rollouts: ev.rollouts,
                });
                failures.push(CellFailure {
                    n1,
                    n2,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    rows.sort_by_key(|row| (row.n1, row.n2, row.seed));
    Ok(SweepTable {
        fingerprint: r.fingerprint(),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use std::path::Path;

    fn ring(extra: &str) -> Resolved {
        let text = format!(
            r#"
[environment]
variant = "ring-gaussian"
horizon = 4

[kernel]
family = "squared-exponential"
lengthscale = 0.3

[evaluation]
rollouts = 50
n1_grid = [10, 20]
n2_grid = [10, 20]
seeds = 2
{extra}
"#
        );
        RunConfig::from_toml_str(&text, Path::new("t.toml"))
            .unwrap()
            .resolve()
            .unwrap()
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let r = ring("");
        let a = run_sweep(&r, Some(2)).unwrap();
        let b = run_sweep(&r, Some(3)).unwrap();
        assert_eq!(a.rows.len(), 8);
        assert!(a.failures.is_empty());
        assert_eq!(a, b);
        let mut keys: Vec<_> = a.rows.iter().map(|r| (r.n1, r.n2, r.seed)).collect();
        let sorted = keys.clone();
        keys.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn train_rejects_too_few_episodes() {
        let r = ring("");
        let (d1, d2) = generate_pair(&r, 1, 2, 0).unwrap();
        let err = train(&r, &d1, &d2, 0).unwrap_err();
        assert!(err
            .to_string()
            .contains("insufficient episodes for H folds"));
    }

    #[test]
    fn report_matches_reward_model() {
        let r = ring("");
        let (d1, d2) = generate_pair(&r, 6, 6, 3).unwrap();
        let t = train(&r, &d1, &d2, 0).unwrap();
        let report = t.report();
        let params = RewardParams {
            nu: 1.0 + 1.0 / 6.0,
            norm_bound: 1.0,
            delta: 0.1,
        };
        let again = fit_reward(&d1, &r.kernel, &r.scaling, params).unwrap();
        for h in 1..=4 {
            let line = report
                .lines()
                .find_map(|l| l.strip_prefix(&format!("beta_{h}=")))
                .unwrap();
            let v: f64 = line.parse().unwrap();
            assert!((v - again.beta_radius(h).unwrap()).abs() <= 1e-12);
        }
        assert!(report.contains("truncated_episodes=0"));
        assert_eq!(t.policy.fingerprint(), Some(r.fingerprint().as_str()));
    }
}
