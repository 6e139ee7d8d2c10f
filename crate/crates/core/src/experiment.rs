//! Policy evaluation, the ring-environment optimal-value oracle, sweep tables and the
//! asymptotic regression `V = c0 - c1 N1^{-1/2} - c2 N2^{-1/2}`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{ring_reward, EnvVariant, EnvironmentSpec, InputScaling};
use crate::error::{Error, Result};
use crate::gram::GramFactor;
use crate::kernel::KernelSpec;
use crate::pevi::FoldPlan;
use crate::policy::Policy;
use crate::reward::check_embedding;
use crate::rng::{derived_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(M)`; zero when `M = 1`.
    pub se: f64,
    pub rollouts: usize,
}

impl Evaluation {
    fn from_returns(returns: &[f64]) -> Self {
        let m = returns.len();
        let mean = returns.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Evaluation {
            mean,
            se,
            rollouts: m,
        }
    }
}

fn rollout(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    s1: Option<&[f64]>,
    rng: &mut SimRng,
) -> f64 {
    let mut s = match s1 {
        Some(s) => s.to_vec(),
        None => env.sample_initial(rng),
    };
    let mut total = 0.0;
    for h in 1..=env.horizon {
        let a = policy.act(h, &s, rng);
        let (next, r) = env.step(h, &s, a, rng);
        total += r;
        s = next;
    }
    total
}

/// Monte-Carlo estimate of `V_1^pi` with `s_1 ~ rho`. Rollout `i` uses its own stream
/// derived from `(seed, i)`, so results do not depend on the thread count.
pub fn evaluate_policy(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    rollouts: usize,
    seed: u64,
) -> Result<Evaluation> {
    evaluate_from(env, policy, None, rollouts, seed)
}

/// As [`evaluate_policy`] but every rollout starts from `s1`.
pub fn evaluate_policy_at(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    s1: &[f64],
    rollouts: usize,
    seed: u64,
) -> Result<Evaluation> {
    if s1.len() != env.state_dim() {
        return Err(Error::input("initial state has the wrong dimension"));
    }
    evaluate_from(env, policy, Some(s1), rollouts, seed)
}

fn evaluate_from(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    s1: Option<&[f64]>,
    rollouts: usize,
    seed: u64,
) -> Result<Evaluation> {
    if rollouts == 0 {
        return Err(Error::input("at least one rollout is required"));
    }
    env.validate()?;
    let returns: Vec<f64> = (0..rollouts)
        .into_par_iter()
        .map(|i| rollout(env, policy, s1, &mut derived_rng(seed, &[i as u64])))
        .collect();
    Ok(Evaluation::from_returns(&returns))
}

/// Finite-horizon dynamic program for the ring environment on a uniform grid of cell
/// centers `(i + 1/2) C / n`. Each transition row is the wrapped Gaussian density
/// integrated over every cell with the trapezoid rule, then renormalized.
#[derive(Debug, Clone)]
pub struct DpOracle {
    grid: RingGrid,
    horizon: usize,
    /// `values[h - 1]` holds `V*_h` at the centers; `values[H]` is zero.
    values: Vec<Vec<f64>>,
    actions: Vec<Vec<usize>>,
}

pub const DEFAULT_GRID_RESOLUTION: usize = 512;

#[derive(Debug, Clone)]
struct RingGrid {
    n: usize,
    c: u32,
    alpha: f64,
    sd: f64,
    wraps: i64,
    action_count: usize,
    centers: Vec<f64>,
    reward: Vec<f64>,
}

const PANELS: usize = 4;

impl RingGrid {
    fn new(env: &EnvironmentSpec, resolution: usize) -> Result<Self> {
        let EnvVariant::RingGaussian { alpha, c } = env.variant else {
            return Err(Error::Unsupported(
                "oracle unsupported: the optimal-value oracle exists only for ring-gaussian".into(),
            ));
        };
        env.validate()?;
        if resolution < 2 {
            return Err(Error::input("grid resolution must be at least 2"));
        }
        let cf = c as f64;
        let width = cf / resolution as f64;
        let sd = (1.0 / (2.0 * alpha)).sqrt();
        let centers: Vec<f64> = (0..resolution).map(|i| (i as f64 + 0.5) * width).collect();
        let reward = centers.iter().map(|&x| ring_reward(alpha, c, x)).collect();
        Ok(RingGrid {
            n: resolution,
            c,
            alpha,
            sd,
            wraps: (8.0 * sd / cf).ceil() as i64 + 1,
            action_count: env.action_count(),
            centers,
            reward,
        })
    }

    fn width(&self) -> f64 {
        self.c as f64 / self.n as f64
    }

    fn density(&self, d: f64) -> f64 {
        let cf = self.c as f64;
        (-self.wraps..=self.wraps)
            .map(|k| {
                let u = (d + k as f64 * cf) / self.sd;
                (-0.5 * u * u).exp()
            })
            .sum()
    }

    /// Next-cell distribution when the pre-noise mean is `mu`.
    fn row(&self, mu: f64) -> Vec<f64> {
        let width = self.width();
        let h = width / PANELS as f64;
        let mut out: Vec<f64> = (0..self.n)
            .map(|j| {
                let lo = j as f64 * width;
                let mut acc = 0.5 * (self.density(lo - mu) + self.density(lo + width - mu));
                for p in 1..PANELS {
                    acc += self.density(lo + p as f64 * h - mu);
                }
                acc * h
            })
            .collect();
        let total: f64 = out.iter().sum();
        for v in &mut out {
            *v /= total;
        }
        out
    }

    fn mean(&self, s: f64, a: usize) -> f64 {
        (s + a as f64).rem_euclid(self.c as f64)
    }

    /// `rows[a * n + i]` is the next-cell distribution from center `i` under action `a`.
    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.action_count * self.n)
            .into_par_iter()
            .map(|k| self.row(self.mean(self.centers[k % self.n], k / self.n)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dp_oracle(env: &EnvironmentSpec, resolution: usize) -> Result<DpOracle> {
    let grid = RingGrid::new(env, resolution)?;
    let rows = grid.rows();
    let n = grid.n;
    let mut values = vec![vec![0.0; n]; env.horizon + 1];
    let mut actions = vec![vec![0usize; n]; env.horizon];
    for h in (0..env.horizon).rev() {
        let next = &values[h + 1];
        let step: Vec<(f64, usize)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..grid.action_count {
                    let cont = dot(&rows[a * n + i], next);
                    if cont > best.0 {
                        best = (cont, a);
                    }
                }
                (grid.reward[i] + best.0, best.1)
            })
            .collect();
        for (i, (v, a)) in step.into_iter().enumerate() {
            values[h][i] = v;
            actions[h][i] = a;
        }
    }
    Ok(DpOracle {
        grid,
        horizon: env.horizon,
        values,
        actions,
    })
}

/// Grid policy evaluation of a deterministic Markov policy on the ring, querying the
/// policy at cell centers. Returns `E_{s ~ rho} V^pi_1(s)`.
pub fn dp_policy_value(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    resolution: usize,
) -> Result<f64> {
    let grid = RingGrid::new(env, resolution)?;
    let rows = grid.rows();
    let mut rng = crate::rng::rng_from_seed(0);
    let mut next = vec![0.0; grid.n];
    for h in (1..=env.horizon).rev() {
        let chosen: Vec<usize> = grid
            .centers
            .iter()
            .map(|&x| policy.act(h, &[x], &mut rng))
            .collect();
        next = (0..grid.n)
            .into_par_iter()
            .map(|i| grid.reward[i] + dot(&rows[chosen[i] * grid.n + i], &next))
            .collect();
    }
    Ok(next.iter().sum::<f64>() / grid.n as f64)
}

impl DpOracle {
    pub fn resolution(&self) -> usize {
        self.grid.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid.centers
    }

    /// `V*_h` at the grid centers.
    pub fn values(&self, h: usize) -> &[f64] {
        &self.values[h - 1]
    }

    /// `V*_h(s)` at an arbitrary state by one Bellman backup of the gridded `V*_{h+1}`.
    pub fn value(&self, h: usize, s: f64) -> f64 {
        let next = &self.values[h];
        let cont = (0..self.grid.action_count)
            .map(|a| dot(&self.grid.row(self.grid.mean(s, a)), next))
            .fold(f64::NEG_INFINITY, f64::max);
        ring_reward(self.grid.alpha, self.grid.c, s) + cont
    }

    /// `E_{s ~ rho} V*_1(s)` for the uniform initial distribution (midpoint rule).
    pub fn expected_initial_value(&self) -> f64 {
        self.values[0].iter().sum::<f64>() / self.grid.n as f64
    }

    fn cell(&self, s: f64) -> usize {
        let n = self.grid.n;
        let c = self.grid.c as f64;
        ((s.rem_euclid(c) / c * n as f64) as usize).min(n - 1)
    }
}

/// Greedy optimal policy: the DP action of the cell containing `s`.
impl Policy for DpOracle {
    fn act(&self, h: usize, s: &[f64], _rng: &mut SimRng) -> usize {
        self.actions[h - 1][self.cell(s[0])]
    }
}

/// Largest change of `V*_1` at ten probe states when the resolution is doubled.
pub fn dp_convergence_gap(env: &EnvironmentSpec, resolution: usize) -> Result<f64> {
    let coarse = dp_oracle(env, resolution)?;
    let fine = dp_oracle(env, 2 * resolution)?;
    let c = coarse.grid.c as f64;
    Ok((0..10)
        .map(|i| {
            let s = (i as f64 + 0.37) * c / 10.0;
            (coarse.value(1, s) - fine.value(1, s)).abs()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    pub optimal: f64,
    pub evaluation: Evaluation,
    pub gap: f64,
    /// Set when the gap is below `-3 se`, which only Monte-Carlo noise can explain.
    pub suspicious: bool,
}

/// `E_rho[V*_1] - V_1^pi`, the Monte-Carlo estimate averaged over the initial distribution.
pub fn suboptimality(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    oracle: &DpOracle,
    rollouts: usize,
    seed: u64,
) -> Result<Suboptimality> {
    if oracle.horizon() != env.horizon {
        return Err(Error::input(
            "oracle horizon differs from the environment horizon",
        ));
    }
    let evaluation = evaluate_policy(env, policy, rollouts, seed)?;
    let optimal = oracle.expected_initial_value();
    let gap = optimal - evaluation.mean;
    Ok(Suboptimality {
        optimal,
        evaluation,
        gap,
        suspicious: gap < -3.0 * evaluation.se,
    })
}

/// Monte-Carlo estimate of `E_ref[zeta_h]` per step: the information added by the point
/// `(s_h, a_h)` visited by `reference`, against the fold-`h` support of `dataset`.
/// Uses `zeta = 2 log(1 + var_h(z) / lambda)`.
#[allow(clippy::too_many_arguments)]
pub fn zeta_expected(
    env: &EnvironmentSpec,
    reference: &dyn Policy,
    dataset: &Dataset,
    plan: &FoldPlan,
    spec: &KernelSpec,
    scaling: &InputScaling,
    lambda: f64,
    rollouts: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if plan.horizon() != env.horizon || dataset.horizon() != env.horizon {
        return Err(Error::input(
            "fold plan, dataset and environment horizons differ",
        ));
    }
    let supports = (1..=env.horizon)
        .map(|h| {
            plan.fold(h)
                .iter()
                .map(|&i| {
                    let t = &dataset.episodes()[i][h - 1];
                    scaling.embed(&t.s, t.a)
                })
                .collect()
        })
        .collect::<Vec<_>>();
    zeta_expected_on(
        env, reference, &supports, spec, scaling, lambda, rollouts, seed,
    )
}

/// The step-`h` points of every episode, one support set per step.
pub fn step_supports(dataset: &Dataset, scaling: &InputScaling) -> Vec<Vec<Vec<f64>>> {
    (1..=dataset.horizon())
        .map(|h| dataset.step(h).map(|t| scaling.embed(&t.s, t.a)).collect())
        .collect()
}

/// As [`zeta_expected`] with explicit per-step support sets.
#[allow(clippy::too_many_arguments)]
pub fn zeta_expected_on(
    env: &EnvironmentSpec,
    reference: &dyn Policy,
    supports: &[Vec<Vec<f64>>],
    spec: &KernelSpec,
    scaling: &InputScaling,
    lambda: f64,
    rollouts: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if rollouts == 0 {
        return Err(Error::input("at least one rollout is required"));
    }
    if supports.len() != env.horizon {
        return Err(Error::input("one support set per step is required"));
    }
    check_embedding(spec, scaling)?;
    let factors = supports
        .iter()
        .map(|support| GramFactor::new(spec, support.clone(), lambda))
        .collect::<Result<Vec<_>>>()?;
    let per_rollout: Vec<Vec<f64>> = (0..rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, &[i as u64]);
            let mut s = env.sample_initial(&mut rng);
            let mut out = Vec::with_capacity(env.horizon);
            for (h, factor) in (1..=env.horizon).zip(&factors) {
                let a = reference.act(h, &s, &mut rng);
                let v = factor.posterior_variance_unchecked(&scaling.embed(&s, a));
                out.push(2.0 * (v / lambda).ln_1p());
                s = env.step(h, &s, a, &mut rng).0;
            }
            out
        })
        .collect();
    Ok((0..env.horizon)
        .map(|h| per_rollout.iter().map(|r| r[h]).sum::<f64>() / rollouts as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n1: usize,
    pub n2: usize,
    pub seed: usize,
    pub v_mean: f64,
    pub v_se: f64,
    pub m_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub n1: usize,
    pub n2: usize,
    pub seed: usize,
    pub message: String,
}

/// One row per `(N1, N2, seed)` cell. Failed cells carry `NaN` values and an entry in
/// `failures`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub fingerprint: String,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".fingerprint");
    PathBuf::from(name)
}

impl SweepTable {
    /// Writes the CSV and its `.fingerprint` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::input(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let mut f = File::create(&side).map_err(|e| Error::io(&side, e))?;
        let mut text = format!("fingerprint={}\n", self.fingerprint);
        for c in &self.failures {
            text.push_str(&format!(
                "failed n1={} n2={} seed={}: {}\n",
                c.n1, c.n2, c.seed, c.message
            ));
        }
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(&side, e))
    }

    /// Reads the CSV; the fingerprint comes from the sidecar when one exists.
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (i, rec) in r.deserialize::<SweepRow>().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        let side = sidecar_path(path);
        let fingerprint = match File::open(&side) {
            Ok(f) => BufReader::new(f)
                .lines()
                .map_while(|l| l.ok())
                .find_map(|l| l.strip_prefix("fingerprint=").map(str::to_owned))
                .unwrap_or_default(),
            Err(_) => String::new(),
        };
        Ok(SweepTable {
            fingerprint,
            rows,
            failures: Vec::new(),
        })
    }

    /// Mean of `v_mean` over seeds for every `(N1, N2)` cell, sorted by cell, skipping
    /// failed rows.
    pub fn cell_means(&self) -> Vec<(usize, usize, f64)> {
        let mut sorted: Vec<&SweepRow> =
            self.rows.iter().filter(|r| r.v_mean.is_finite()).collect();
        sorted.sort_by_key(|r| (r.n1, r.n2, r.seed));
        let mut out: Vec<(usize, usize, f64, usize)> = Vec::new();
        for r in sorted {
            match out.last_mut() {
                Some(last) if last.0 == r.n1 && last.1 == r.n2 => {
                    last.2 += r.v_mean;
                    last.3 += 1;
                }
                _ => out.push((r.n1, r.n2, r.v_mean, 1)),
            }
        }
        out.into_iter()
            .map(|(a, b, s, k)| (a, b, s / k as f64))
            .collect()
    }

    pub fn cell_mean(&self, n1: usize, n2: usize) -> Option<f64> {
        self.cell_means()
            .into_iter()
            .find(|c| c.0 == n1 && c.1 == n2)
            .map(|c| c.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub r2: f64,
}

impl AsymptoteFit {
    pub fn predict(&self, n1: f64, n2: f64) -> f64 {
        self.c0 - self.c1 / n1.sqrt() - self.c2 / n2.sqrt()
    }

    pub fn to_text(&self) -> String {
        format!(
            "c0={}\nc1={}\nc2={}\nr2={}\n",
            self.c0, self.c1, self.c2, self.r2
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Least squares of the per-cell mean value on `[1, N1^{-1/2}, N2^{-1/2}]`.
pub fn fit_asymptote(table: &SweepTable) -> Result<AsymptoteFit> {
    fit_asymptote_cells(&table.cell_means())
}

pub fn fit_asymptote_cells(cells: &[(usize, usize, f64)]) -> Result<AsymptoteFit> {
    if cells.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 3 distinct (N1, N2) cells, got {}",
            cells.len()
        )));
    }
    if cells.iter().any(|c| c.0 == 0 || c.1 == 0) {
        return Err(Error::input("N1 and N2 must be positive"));
    }
    let x = DMatrix::from_fn(cells.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => -1.0 / (cells[i].0 as f64).sqrt(),
        _ => -1.0 / (cells[i].1 as f64).sqrt(),
    });
    let y = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.2));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::DegenerateDesign(
            "N1 or N2 takes a single value, so its coefficient is not identifiable".into(),
        ));
    }
    let coef = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::DegenerateDesign(e.to_string()))?;
    let fitted = &x * &coef;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(AsymptoteFit {
        c0: coef[0],
        c1: coef[1],
        c2: coef[2],
        r2,
    })
}

/// Parse the key-value text written by [`AsymptoteFit::write`].
pub fn read_asymptote(path: &Path) -> Result<AsymptoteFit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vals = [None; 4];
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let slot = match k.trim() {
            "c0" => 0,
            "c1" => 1,
            "c2" => 2,
            "r2" => 3,
            _ => continue,
        };
        vals[slot] = Some(v.trim().parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    match vals {
        [Some(c0), Some(c1), Some(c2), Some(r2)] => Ok(AsymptoteFit { c0, c1, c2, r2 }),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "missing one of c0, c1, c2, r2".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ReferencePolicy, UniformPolicy};

    #[test]
    fn evaluation_trivial_cases() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8).with_horizon(1);
        let e = evaluate_policy(&env, &UniformPolicy { action_count: 9 }, 1, 3).unwrap();
        assert_eq!(e.se, 0.0);
        assert!(evaluate_policy(&env, &UniformPolicy { action_count: 9 }, 0, 3).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8);
        let p = UniformPolicy { action_count: 9 };
        let a = evaluate_policy(&env, &p, 200, 11).unwrap();
        let b = evaluate_policy(&env, &p, 200, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_oracle_is_the_reward() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8).with_horizon(1);
        let o = dp_oracle(&env, 64).unwrap();
        for (x, v) in o.grid().iter().zip(o.values(1)) {
            assert_eq!(*v, ring_reward(3.0, 8, *x));
        }
    }

    #[test]
    fn oracle_bounds_and_support() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8);
        let o = dp_oracle(&env, 256).unwrap();
        let bound = 8.0 * (3.0 / std::f64::consts::PI).sqrt();
        assert!(o.values(1).iter().all(|&v| v <= bound && v >= 0.0));
        assert!(matches!(
            dp_oracle(&EnvironmentSpec::cart_pole(10), 64),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn oracle_converges() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8);
        assert!(dp_convergence_gap(&env, 512).unwrap() <= 1e-3);
    }

    #[test]
    fn oracle_policy_is_near_optimal() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8);
        let o = dp_oracle(&env, 512).unwrap();
        let s = suboptimality(&env, &o, &o, 2000, 5).unwrap();
        assert!(s.gap.abs() <= 3.0 * s.evaluation.se, "{s:?}");
        let u = suboptimality(&env, &UniformPolicy { action_count: 9 }, &o, 2000, 5).unwrap();
        assert!(u.gap >= 0.1);
    }

    #[test]
    fn peak_seeking_policy_matches_dp_value() {
        let env = EnvironmentSpec::ring_gaussian(3.0, 8);
        let p = ReferencePolicy::RingTowardCenter { c: 8 };
        let mc = evaluate_policy(&env, &p, 4000, 1).unwrap();
        let dp = dp_policy_value(&env, &p, 512).unwrap();
        assert!((mc.mean - dp).abs() <= 3.0 * mc.se, "{mc:?} vs {dp}");
    }

    #[test]
    fn asymptote_recovers_synthetic_surface() {
        let mut cells = Vec::new();
        for n1 in [10, 20, 50, 100] {
            for n2 in [10, 20, 50, 100, 200, 500] {
                let v = 6.0 - 3.0 / (n1 as f64).sqrt() - 5.0 / (n2 as f64).sqrt();
                cells.push((n1, n2, v));
            }
        }
        let fit = fit_asymptote_cells(&cells).unwrap();
        assert!((fit.c0 - 6.0).abs() < 1e-9);
        assert!((fit.c1 - 3.0).abs() < 1e-9);
        assert!((fit.c2 - 5.0).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);

        let flat: Vec<_> = cells.iter().map(|c| (c.0, c.1, 4.2)).collect();
        let fit = fit_asymptote_cells(&flat).unwrap();
        assert!((fit.c0 - 4.2).abs() < 1e-9);
        assert!(fit.c1.abs() < 1e-9 && fit.c2.abs() < 1e-9);

        let single_n1: Vec<_> = cells.iter().filter(|c| c.0 == 10).cloned().collect();
        assert!(matches!(
            fit_asymptote_cells(&single_n1),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn sweep_table_round_trip() {
        let table = SweepTable {
            fingerprint: "abc".into(),
            rows: vec![
                SweepRow {
                    n1: 10,
                    n2: 20,
                    seed: 0,
                    v_mean: 4.123456789012345,
                    v_se: 0.1,
                    m_rollouts: 1000,
                },
                SweepRow {
                    n1: 10,
                    n2: 20,
                    seed: 1,
                    v_mean: 4.0,
                    v_se: 0.2,
                    m_rollouts: 1000,
                },
            ],
            failures: vec![],
        };
        let path = std::env::temp_dir().join(format!("uds-sweep-{}.csv", std::process::id()));
        table.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n1,n2,seed,v_mean,v_se,m_rollouts\n"));
        let back = SweepTable::read(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(
            back.cell_mean(10, 20),
            Some((4.123456789012345 + 4.0) / 2.0)
        );
    }
}
