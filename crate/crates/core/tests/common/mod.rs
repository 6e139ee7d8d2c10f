//! Brute-force reference implementations: dense inverses, hand-written kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use uds_core::rng::SimRng;
use uds_core::{
    Dataset, FoldPlan, InputScaling, KernelFamily, KernelSpec, MaternSmoothness, Transition,
};

pub fn kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    match spec.family {
        KernelFamily::SquaredExponential { lengthscale } => (-0.5 * d2 / lengthscale.powi(2)).exp(),
        KernelFamily::Matern {
            smoothness,
            lengthscale,
        } => {
            let r = d2.sqrt() / lengthscale;
            match smoothness {
                MaternSmoothness::Half => (-r).exp(),
                MaternSmoothness::ThreeHalves => {
                    (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp()
                }
                MaternSmoothness::FiveHalves => {
                    (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp()
                }
            }
        }
        KernelFamily::ExplicitFeatures {
            degree,
            input_bound,
        } => {
            let fa = monomials(a, degree as usize, input_bound);
            let fb = monomials(b, degree as usize, input_bound);
            fa.iter().zip(&fb).map(|(x, y)| x * y).sum::<f64>() / fa.len() as f64
        }
    }
}

/// Every monomial of total degree at most `degree`, by recursion over the last variable.
fn monomials(x: &[f64], degree: usize, bound: f64) -> Vec<f64> {
    fn rec(x: &[f64], degree: usize, out: &mut Vec<f64>, acc: f64) {
        match x.split_last() {
            None => out.push(acc),
            Some((&last, rest)) => {
                for p in 0..=degree {
                    rec(rest, degree - p, out, acc * last.powi(p as i32));
                }
            }
        }
    }
    let scaled: Vec<f64> = x.iter().map(|v| v / bound).collect();
    let mut out = Vec::new();
    rec(&scaled, degree, &mut out, 1.0);
    out
}

/// Ridge regression through an explicit inverse of `K + ridge I`.
pub struct DenseRidge {
    pub spec: KernelSpec,
    pub points: Vec<Vec<f64>>,
    pub ridge: f64,
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
}

impl DenseRidge {
    pub fn new(spec: &KernelSpec, points: Vec<Vec<f64>>, ridge: f64) -> Self {
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(spec, &points[i], &points[j]));
        let a = k + DMatrix::identity(n, n) * ridge;
        let log_det = if n == 0 {
            0.0
        } else {
            a.clone().lu().determinant().ln()
        };
        DenseRidge {
            spec: spec.clone(),
            inverse: a.try_inverse().expect("ridge matrix is invertible"),
            points,
            ridge,
            log_det,
        }
    }

    fn kvec(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| kernel(&self.spec, p, z)),
        )
    }

    pub fn mean(&self, y: &[f64], z: &[f64]) -> f64 {
        let k = self.kvec(z);
        (k.transpose() * &self.inverse * DVector::from_column_slice(y))[0]
    }

    pub fn variance(&self, z: &[f64]) -> f64 {
        let k = self.kvec(z);
        kernel(&self.spec, z, z) - (k.transpose() * &self.inverse * &k)[0]
    }

    /// `sqrt(nu) S + sqrt(log det(K + nu I) + 2 log(1/delta))`.
    pub fn beta(&self, norm_bound: f64, delta: f64) -> f64 {
        self.ridge.sqrt() * norm_bound + (self.log_det + 2.0 * (1.0 / delta).ln()).max(0.0).sqrt()
    }

    pub fn pessimistic(&self, y: &[f64], z: &[f64], norm_bound: f64, delta: f64) -> f64 {
        let width =
            self.beta(norm_bound, delta) * self.variance(z).max(0.0).sqrt() / self.ridge.sqrt();
        (self.mean(y, z) - width).max(0.0)
    }
}

pub fn random_spec(rng: &mut SimRng, m: usize, pick: usize) -> KernelSpec {
    match pick % 5 {
        0 => KernelSpec::squared_exponential(rng.random_range(0.3..2.0), m),
        1 => KernelSpec::matern(MaternSmoothness::Half, rng.random_range(0.3..2.0), m),
        2 => KernelSpec::matern(MaternSmoothness::ThreeHalves, rng.random_range(0.3..2.0), m),
        3 => KernelSpec::matern(MaternSmoothness::FiveHalves, rng.random_range(0.3..2.0), m),
        _ => KernelSpec::explicit_features(rng.random_range(1..=3), m),
    }
}

/// A labeled one-step dataset with `n` episodes, `state_dim`-dimensional states in
/// `[0, 1]` and actions `0..3`.
pub fn random_labeled(rng: &mut SimRng, n: usize, state_dim: usize, horizon: usize) -> Dataset {
    let episodes = (0..n)
        .map(|e| {
            (1..=horizon)
                .map(|h| Transition {
                    episode: e,
                    h,
                    s: (0..state_dim).map(|_| rng.random::<f64>()).collect(),
                    a: rng.random_range(0..3),
                    r: Some(rng.random::<f64>()),
                    s_next: (0..state_dim).map(|_| rng.random::<f64>()).collect(),
                })
                .collect()
        })
        .collect();
    unstitched(episodes, true, horizon)
}

/// Builds a dataset whose `s_next` values are rewritten to chain into the next step.
pub fn unstitched(mut episodes: Vec<Vec<Transition>>, labeled: bool, horizon: usize) -> Dataset {
    for ep in &mut episodes {
        for h in 1..ep.len() {
            ep[h - 1].s_next = ep[h].s.clone();
        }
    }
    Dataset::new(episodes, labeled, horizon).expect("valid dataset")
}

pub fn unit_scaling(state_dim: usize, actions: usize) -> InputScaling {
    InputScaling {
        state: vec![[0.0, 1.0]; state_dim],
        action: [0.0, (actions - 1).max(1) as f64],
    }
}

pub fn random_query(rng: &mut SimRng, state_dim: usize) -> (Vec<f64>, usize) {
    (
        (0..state_dim).map(|_| rng.random::<f64>()).collect(),
        rng.random_range(0..3),
    )
}

/// Two states, two actions, horizon two; states and actions embedded at `-1` and `+1`.
pub fn tabular_dataset(rng: &mut SimRng, n: usize) -> Dataset {
    let episodes = (0..n)
        .map(|e| {
            let mut s = rng.random_range(0..2) as f64;
            (1..=2)
                .map(|h| {
                    let s_next = rng.random_range(0..2) as f64;
                    let t = Transition {
                        episode: e,
                        h,
                        s: vec![s],
                        a: rng.random_range(0..2),
                        r: Some(rng.random::<f64>()),
                        s_next: vec![s_next],
                    };
                    s = s_next;
                    t
                })
                .collect()
        })
        .collect();
    Dataset::new(episodes, true, 2).expect("valid tabular dataset")
}

/// Quadratic monomials of `(x, y)` scaled to unit norm on `{-1, 1}^2`.
fn tabular_features(s: f64, a: usize) -> DVector<f64> {
    let x = 2.0 * s - 1.0;
    let y = 2.0 * a as f64 - 1.0;
    DVector::from_vec(vec![1.0, x, y, x * x, x * y, y * y]) / 6f64.sqrt()
}

/// Pessimistic least-squares value iteration in primal form:
/// `Lambda = lambda I + sum phi phi^T`, `Gamma = B sqrt(phi^T Lambda^{-1} phi)`.
/// Returns `q[h - 1][s][a]`.
pub fn tabular_pevi(d: &Dataset, plan: &FoldPlan, lambda: f64, bonus: f64) -> [[[f64; 2]; 2]; 2] {
    let mut q = [[[0.0f64; 2]; 2]; 2];
    for h in (1..=2).rev() {
        let mut gram = DMatrix::identity(6, 6) * lambda;
        let mut rhs = DVector::zeros(6);
        for &i in plan.fold(h) {
            let t = &d.episodes()[i][h - 1];
            let phi = tabular_features(t.s[0], t.a);
            let next = if h == 2 {
                0.0
            } else {
                let sn = t.s_next[0] as usize;
                q[1][sn][0].max(q[1][sn][1])
            };
            gram += &phi * phi.transpose();
            rhs += &phi * (t.r.unwrap() + next);
        }
        let inv = gram.try_inverse().unwrap();
        let w = &inv * rhs;
        for s in 0..2 {
            for a in 0..2 {
                let phi = tabular_features(s as f64, a);
                let gamma = bonus * (phi.transpose() * &inv * &phi)[0].sqrt();
                let cap = (2 - h + 1) as f64;
                q[h - 1][s][a] = (phi.dot(&w) - gamma).clamp(0.0, cap);
            }
        }
    }
    q
}

pub fn tabular_scaling() -> InputScaling {
    InputScaling {
        state: vec![[0.0, 1.0]],
        action: [0.0, 1.0],
    }
}

pub type Trial = Result<(), String>;

fn fail(what: &str, got: f64, bound: f64) -> Trial {
    Err(format!("{what}: {got:e} against {bound:e}"))
}

fn random_points(rng: &mut SimRng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Library mean and pessimistic reward against the dense-inverse oracle on one random
/// instance with `n <= 8` points and `m <= 3` input coordinates.
pub fn ridge_oracle_trial(seed: u64, pick: usize) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::{fit_reward, RewardParams};
    let mut rng = rng_from_seed(seed);
    let state_dim = rng.random_range(1..=2);
    let n = rng.random_range(1..=8);
    let spec = random_spec(&mut rng, state_dim + 1, pick);
    let scaling = unit_scaling(state_dim, 3);
    let d = random_labeled(&mut rng, n, state_dim, 1);
    let params = RewardParams {
        nu: rng.random_range(0.5..2.0),
        norm_bound: rng.random_range(0.0..2.0),
        delta: rng.random_range(0.01..0.5),
    };
    let model = fit_reward(&d, &spec, &scaling, params).map_err(|e| e.to_string())?;
    let points: Vec<Vec<f64>> = d.step(1).map(|t| scaling.embed(&t.s, t.a)).collect();
    let y: Vec<f64> = d.step(1).map(|t| t.r.unwrap()).collect();
    let oracle = DenseRidge::new(&spec, points, params.nu);
    for _ in 0..5 {
        let (s, a) = random_query(&mut rng, state_dim);
        let z = scaling.embed(&s, a);
        let mean = model.predict_mean(1, &z).unwrap();
        let pess = model.pessimistic_reward(1, &z).unwrap();
        let want_mean = oracle.mean(&y, &z);
        let want_pess = oracle.pessimistic(&y, &z, params.norm_bound, params.delta);
        if (mean - want_mean).abs() > 1e-8 {
            return fail("mean", mean, want_mean);
        }
        if (pess - want_pess).abs() > 1e-8 {
            return fail("pessimistic reward", pess, want_pess);
        }
    }
    Ok(())
}

/// `Q_hat` of value iteration on the two-state MDP against the primal transcription.
pub fn tabular_trial(seed: u64) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::{backward_induction, split_folds, FoldScheme};
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=12);
    let d = tabular_dataset(&mut rng, n);
    let lambda = 1.0 + 1.0 / n as f64;
    let bonus = rng.random_range(0.0..1.5);
    let plan = split_folds(n, 2, FoldScheme::Shuffled { seed }).unwrap();
    let spec = KernelSpec::explicit_features(2, 2);
    let policy = backward_induction(&d, &spec, &tabular_scaling(), 2, lambda, bonus, &plan)
        .map_err(|e| e.to_string())?;
    let want = tabular_pevi(&d, &plan, lambda, bonus);
    for h in 1..=2 {
        for s in 0..2 {
            for a in 0..2 {
                let got = policy.q_hat(h, &[s as f64], a).unwrap();
                if (got - want[h - 1][s][a]).abs() > 1e-8 {
                    return fail(&format!("q_hat({h}, {s}, {a})"), got, want[h - 1][s][a]);
                }
            }
        }
    }
    Ok(())
}

/// `var(z) / lambda <= zeta(z)` with `lambda >= 1`.
pub fn zeta_bound_trial(seed: u64, pick: usize, n: usize, lambda: f64) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::{zeta_information_amount, GramFactor};
    let mut rng = rng_from_seed(seed);
    let m = rng.random_range(1..=3);
    let spec = random_spec(&mut rng, m, pick);
    let points = random_points(&mut rng, n, m);
    let z = random_points(&mut rng, 1, m).remove(0);
    let v = GramFactor::new(&spec, points.clone(), lambda)
        .and_then(|f| f.posterior_variance(&z))
        .map_err(|e| e.to_string())?;
    let zeta = zeta_information_amount(&spec, &points, &z, lambda).map_err(|e| e.to_string())?;
    if v / lambda > zeta + 1e-10 {
        return fail("var / lambda", v / lambda, zeta);
    }
    Ok(())
}

/// Adding support points never raises the posterior variance.
pub fn variance_monotone_trial(
    seed: u64,
    pick: usize,
    n: usize,
    extra: usize,
    ridge: f64,
) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::GramFactor;
    let mut rng = rng_from_seed(seed);
    let m = rng.random_range(1..=3);
    let spec = random_spec(&mut rng, m, pick);
    let small = random_points(&mut rng, n, m);
    let mut big = small.clone();
    big.extend(random_points(&mut rng, extra, m));
    let fs = GramFactor::new(&spec, small, ridge).map_err(|e| e.to_string())?;
    let fb = GramFactor::new(&spec, big, ridge).map_err(|e| e.to_string())?;
    for z in random_points(&mut rng, 10, m) {
        let (vs, vb) = (
            fs.posterior_variance(&z).unwrap(),
            fb.posterior_variance(&z).unwrap(),
        );
        if vb > vs + 1e-10 {
            return fail("variance after adding points", vb, vs);
        }
        if vs < 0.0 {
            return fail("negative variance", vs, 0.0);
        }
    }
    Ok(())
}

/// Every `Q_hat(h, s, a)` of a trained policy lies in `[0, H - h + 1]`.
pub fn q_range_trial(seed: u64, pick: usize, n: usize, bonus: f64) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::{backward_induction, split_folds, FoldScheme};
    let mut rng = rng_from_seed(seed);
    let horizon = 3;
    let spec = random_spec(&mut rng, 2, pick);
    let d = random_labeled(&mut rng, n.max(horizon), 1, horizon);
    let lambda = 1.0 + 1.0 / d.len() as f64;
    let plan = split_folds(d.len(), horizon, FoldScheme::Contiguous).unwrap();
    let policy = backward_induction(&d, &spec, &unit_scaling(1, 3), 3, lambda, bonus, &plan)
        .map_err(|e| e.to_string())?;
    for h in 1..=horizon {
        let cap = (horizon - h + 1) as f64;
        for _ in 0..10 {
            let (s, a) = random_query(&mut rng, 1);
            let q = policy.q_hat(h, &s, a).unwrap();
            if !(0.0..=cap).contains(&q) {
                return fail(&format!("q_hat at h={h}"), q, cap);
            }
        }
    }
    Ok(())
}

/// `0 <= pessimistic <= max(mean, 0)` everywhere, with equality to the floor when the
/// penalty exceeds the mean.
pub fn dominance_trial(seed: u64, pick: usize, n: usize) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::{fit_reward, RewardParams};
    let mut rng = rng_from_seed(seed);
    let spec = random_spec(&mut rng, 2, pick);
    let scaling = unit_scaling(1, 3);
    let d = random_labeled(&mut rng, n, 1, 2);
    let model = fit_reward(&d, &spec, &scaling, RewardParams::defaults_for(n))
        .map_err(|e| e.to_string())?;
    for h in 1..=2 {
        for _ in 0..10 {
            let (s, a) = random_query(&mut rng, 1);
            let z = scaling.embed(&s, a);
            let mean = model.predict_mean(h, &z).unwrap();
            let pen = model.penalty(h, &z).unwrap();
            let p = model.pessimistic_reward(h, &z).unwrap();
            if p < 0.0 {
                return fail("pessimistic reward", p, 0.0);
            }
            if p > mean.max(0.0) + 1e-10 {
                return fail("pessimistic reward above mean", p, mean);
            }
            if pen >= mean && p != 0.0 {
                return fail("floor", p, 0.0);
            }
        }
    }
    Ok(())
}

/// Dual prediction `k^T (K + lambda I)^{-1} y` against the primal
/// `phi^T (Phi^T Phi + lambda I)^{-1} Phi^T y` for explicit features.
pub fn representer_trial(seed: u64, degree: u8, n: usize, lambda: f64) -> Trial {
    use uds_core::rng::rng_from_seed;
    use uds_core::GramFactor;
    let mut rng = rng_from_seed(seed);
    let m = rng.random_range(1..=3);
    let spec = KernelSpec::explicit_features(degree, m);
    let points = random_points(&mut rng, n, m);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let factor = GramFactor::new(&spec, points.clone(), lambda).map_err(|e| e.to_string())?;
    let alpha = factor.solve(&y).map_err(|e| e.to_string())?;
    let phi = |z: &[f64]| DVector::from_vec(spec.feature_map(z).unwrap().unwrap());
    let p = phi(&points[0]).len();
    let mut gram = DMatrix::identity(p, p) * lambda;
    let mut rhs = DVector::zeros(p);
    for (z, yi) in points.iter().zip(&y) {
        let f = phi(z);
        gram += &f * f.transpose();
        rhs += f * *yi;
    }
    let w = gram.try_inverse().unwrap() * rhs;
    for z in random_points(&mut rng, 5, m) {
        let dual: f64 = factor
            .kernel_vector(&z)
            .unwrap()
            .iter()
            .zip(&alpha)
            .map(|(k, a)| k * a)
            .sum();
        let primal = phi(&z).dot(&w);
        if (dual - primal).abs() > 1e-10 {
            return fail("dual prediction", dual, primal);
        }
    }
    Ok(())
}
