//! The `uds` commands as library functions. Each returns the text destined for stdout
//! plus any warnings; the binary only parses flags and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use uds_core::experiment::{
    dp_oracle, evaluate_policy, fit_asymptote as fit_table, sidecar_path, step_supports,
    suboptimality, zeta_expected, zeta_expected_on, SweepTable,
};
use uds_core::pipeline::{generate_pair, run_sweep, train as train_pipeline};
use uds_core::rng::derive_seed;
use uds_core::{
    read_dataset, split_folds, write_dataset, Dataset, EnvVariant, Error, FoldPlan, PeviPolicy,
    Policy, Resolved, Result, RunConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "uds",
    version,
    about = "Kernel offline RL with unlabeled data sharing"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; defaults to `data.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the labeled and unlabeled datasets into the `--out` directory.
    GenData,
    /// Fit the reward model, relabel, and learn the policy into the `--out` directory.
    Train {
        #[arg(long)]
        d1: PathBuf,
        #[arg(long)]
        d2: PathBuf,
    },
    /// Monte-Carlo value of a trained policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// Also report the gap to the dynamic-programming optimum.
        #[arg(long)]
        suboptimality: bool,
    },
    /// Every grid cell of the evaluation section, written as CSV to `--out`.
    Sweep,
    /// Regress per-cell means of a sweep CSV on inverse square roots of N1 and N2.
    FitAsymptote {
        #[arg(long)]
        input: PathBuf,
    },
    /// Realized information gains, confidence radii and information amounts.
    DiagInfogain {
        #[arg(long)]
        d1: PathBuf,
        #[arg(long)]
        d2: PathBuf,
    },
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub stdout: String,
    pub warnings: Vec<String>,
}

impl From<String> for Output {
    fn from(stdout: String) -> Self {
        Output {
            stdout,
            warnings: Vec::new(),
        }
    }
}

/// 2 for linear-algebra failures, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

pub fn run(cli: &Cli) -> Result<Output> {
    if let Command::FitAsymptote { input } = &cli.command {
        return fit_asymptote(input, cli.out.as_deref());
    }
    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Input("--config is required".into()))?;
    let r = load_config(config)?;
    let seed = cli.seed.unwrap_or(r.config.data.seed);
    let out = || {
        cli.out
            .as_deref()
            .ok_or_else(|| Error::Input("--out is required".into()))
    };
    match &cli.command {
        Command::GenData => gen_data(&r, seed, out()?),
        Command::Train { d1, d2 } => train(&r, d1, d2, seed, out()?),
        Command::Eval {
            policy,
            suboptimality,
        } => eval(
            &r,
            policy,
            seed,
            *suboptimality,
            cli.format.unwrap_or(Format::Text),
            cli.out.as_deref(),
        ),
        Command::Sweep => {
            if cli.format == Some(Format::Text) {
                return Err(Error::Input("sweep output is CSV only".into()));
            }
            let mut r = r;
            r.config.data.seed = seed;
            sweep(&r, cli.workers, out()?)
        }
        Command::DiagInfogain { d1, d2 } => diag_infogain(&r, d1, d2, seed),
        Command::FitAsymptote { .. } => unreachable!(),
    }
}

pub fn load_config(path: &Path) -> Result<Resolved> {
    RunConfig::load(path)?.resolve()
}

pub fn write_fingerprint(artifact: &Path, fingerprint: &str) -> Result<()> {
    let side = sidecar_path(artifact);
    fs::write(&side, format!("fingerprint={fingerprint}\n")).map_err(|e| io(&side, e))
}

/// The fingerprint recorded beside `artifact`, if any.
pub fn read_fingerprint(artifact: &Path) -> Result<Option<String>> {
    let side = sidecar_path(artifact);
    match fs::read_to_string(&side) {
        Ok(text) => Ok(text
            .lines()
            .find_map(|l| l.strip_prefix("fingerprint=").map(str::to_owned))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(&side, e)),
    }
}

fn check_fingerprint(artifact: &Path, found: Option<&str>, expected: &str) -> Result<()> {
    match found {
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(Error::Input(format!(
            "fingerprint mismatch: {} was produced under configuration {f}, the current \
             configuration is {expected}",
            artifact.display()
        ))),
        None => Err(Error::Input(format!(
            "fingerprint mismatch: {} carries no configuration fingerprint",
            artifact.display()
        ))),
    }
}

/// Datasets written with a sidecar must match the configuration; bare files are accepted.
fn load_dataset(path: &Path, r: &Resolved, labeled: bool) -> Result<Dataset> {
    if let Some(fp) = read_fingerprint(path)? {
        check_fingerprint(path, Some(&fp), &r.fingerprint())?;
    }
    let d = read_dataset(path)?;
    if d.is_empty() {
        return Ok(Dataset::empty(labeled, r.env.horizon));
    }
    d.check_env(&r.env)?;
    Ok(d)
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

pub fn gen_data(r: &Resolved, seed: u64, out_dir: &Path) -> Result<Output> {
    let data = &r.config.data;
    let (d1, d2) = generate_pair(r, data.n1, data.n2, seed)?;
    create_dir(out_dir)?;
    let fp = r.fingerprint();
    for (name, d) in [("d1.jsonl", &d1), ("d2.jsonl", &d2)] {
        let path = out_dir.join(name);
        write_dataset(d, &path)?;
        write_fingerprint(&path, &fp)?;
    }
    Ok(format!(
        "N1={}\nN2={}\nH={}\nseed={seed}\n",
        data.n1, data.n2, r.env.horizon
    )
    .into())
}

/// Writes `policy.json`, `reward.json`, `relabeled.jsonl` and `report.txt` into `out_dir`.
pub fn train(r: &Resolved, d1: &Path, d2: &Path, seed: u64, out_dir: &Path) -> Result<Output> {
    let d1 = load_dataset(d1, r, true)?;
    let d2 = load_dataset(d2, r, false)?;
    let trained = train_pipeline(r, &d1, &d2, derive_seed(seed, &[3]))?;
    create_dir(out_dir)?;
    let fp = r.fingerprint();
    trained.policy.save(&out_dir.join("policy.json"))?;
    let reward = out_dir.join("reward.json");
    trained.reward.save(&reward)?;
    write_fingerprint(&reward, &fp)?;
    let relabeled = out_dir.join("relabeled.jsonl");
    write_dataset(&trained.relabeled, &relabeled)?;
    write_fingerprint(&relabeled, &fp)?;
    let report = format!("fingerprint={fp}\n{}", trained.report());
    let path = out_dir.join("report.txt");
    fs::write(&path, &report).map_err(|e| io(&path, e))?;
    Ok(report.into())
}

pub fn eval(
    r: &Resolved,
    policy_path: &Path,
    seed: u64,
    with_suboptimality: bool,
    format: Format,
    out: Option<&Path>,
) -> Result<Output> {
    let policy = PeviPolicy::load(policy_path)?;
    check_fingerprint(policy_path, policy.fingerprint(), &r.fingerprint())?;
    if policy.horizon() != r.env.horizon || policy.action_count() != r.env.action_count() {
        return Err(Error::Input(
            "policy horizon or action count differs from the environment".into(),
        ));
    }
    let ev = &r.config.evaluation;
    let eval_seed = derive_seed(seed, &[4]);
    let mut fields: Vec<(&str, String)> = Vec::new();
    let evaluation = if with_suboptimality || ev.suboptimality {
        let oracle = dp_oracle(&r.env, ev.grid_resolution)?;
        let s = suboptimality(&r.env, &policy, &oracle, ev.rollouts, eval_seed)?;
        fields.push(("v_star", s.optimal.to_string()));
        fields.push(("suboptimality", s.gap.to_string()));
        s.evaluation
    } else {
        evaluate_policy(&r.env, &policy, ev.rollouts, eval_seed)?
    };
    fields.splice(
        0..0,
        [
            ("v_mean", evaluation.mean.to_string()),
            ("v_se", evaluation.se.to_string()),
            ("m_rollouts", evaluation.rollouts.to_string()),
        ],
    );
    let text = match format {
        Format::Text => fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect(),
        Format::Csv => {
            let keys: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
            let vals: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
            format!("{}\n{}\n", keys.join(","), vals.join(","))
        }
    };
    if let Some(path) = out {
        fs::write(path, &text).map_err(|e| io(path, e))?;
    }
    let mut output = Output::from(text);
    if evaluation.rollouts == 1 {
        output
            .warnings
            .push("a single rollout gives no spread estimate; v_se = 0 is degenerate".into());
    }
    Ok(output)
}

pub fn sweep(r: &Resolved, workers: Option<usize>, out: &Path) -> Result<Output> {
    let table = run_sweep(r, workers)?;
    table.write(out)?;
    let mut output = Output::from(format!(
        "rows={}\nfailed={}\n",
        table.rows.len(),
        table.failures.len()
    ));
    for f in &table.failures {
        output.warnings.push(format!(
            "cell n1={} n2={} seed={} failed: {}",
            f.n1, f.n2, f.seed, f.message
        ));
    }
    Ok(output)
}

pub fn fit_asymptote(input: &Path, out: Option<&Path>) -> Result<Output> {
    let table = SweepTable::read(input)?;
    let fit = fit_table(&table)?;
    if let Some(path) = out {
        fit.write(path)?;
        if !table.fingerprint.is_empty() {
            write_fingerprint(path, &table.fingerprint)?;
        }
    }
    Ok(fit.to_text().into())
}

/// Per step: the realized information gain of the training fold, the exact confidence
/// radius next to its decay-class bound, and the expected information amount of the
/// reference policy's visit against `D1` (ridge `nu`) and against the `D2` fold (ridge
/// `lambda`).
pub fn diag_infogain(r: &Resolved, d1: &Path, d2: &Path, seed: u64) -> Result<Output> {
    let d1 = load_dataset(d1, r, true)?;
    let d2 = load_dataset(d2, r, false)?;
    let trained = train_pipeline(r, &d1, &d2, derive_seed(seed, &[3]))?;
    let h_count = r.env.horizon;
    let ev = &r.config.evaluation;
    let reference: Box<dyn Policy> = match (&ev.reference, &r.env.variant) {
        (Some(p), _) => Box::new(*p),
        (None, EnvVariant::RingGaussian { .. }) => Box::new(dp_oracle(&r.env, ev.grid_resolution)?),
        (None, _) => {
            return Err(Error::Unsupported(
                "oracle unsupported: no optimal policy for this environment; set \
                 evaluation.reference"
                    .into(),
            ))
        }
    };
    let zeta_seed = derive_seed(seed, &[5]);
    let nu = trained.reward.params().nu;
    let zeta_d1 = zeta_expected_on(
        &r.env,
        &*reference,
        &step_supports(&d1, &r.scaling),
        &r.kernel,
        &r.scaling,
        nu,
        ev.zeta_rollouts,
        zeta_seed,
    )?;
    let d2_plan = if d2.is_empty() {
        FoldPlan::from_folds(0, vec![Vec::new(); h_count])?
    } else {
        split_folds(d2.len(), h_count, r.fold_scheme(derive_seed(seed, &[3])))?
    };
    let zeta_d2 = zeta_expected(
        &r.env,
        &*reference,
        &d2,
        &d2_plan,
        &r.kernel,
        &r.scaling,
        trained.lambda,
        ev.zeta_rollouts,
        zeta_seed,
    )?;
    let bound = trained.reward.beta_decay_bound(1.0);
    let mut out = String::new();
    let _ = writeln!(out, "fingerprint={}", r.fingerprint());
    let _ = writeln!(out, "n1={}\nn2={}\nhorizon={h_count}", d1.len(), d2.len());
    let _ = writeln!(out, "nu={nu}\nlambda={}", trained.lambda);
    for h in 1..=h_count {
        let beta = trained.reward.beta_radius(h)?;
        let _ = writeln!(out, "fold_gain_{h}={}", trained.fold_gains[h - 1]);
        let _ = writeln!(out, "beta_{h}={beta}");
        let _ = writeln!(out, "beta_bound_{h}={bound}");
        let _ = writeln!(out, "zeta_d1_{h}={}", zeta_d1[h - 1]);
        let _ = writeln!(out, "zeta_d2_{h}={}", zeta_d2[h - 1]);
    }
    for (name, b) in uds_core::pevi::theoretical_bonus_scales(
        &r.kernel,
        trained.merged.len(),
        h_count,
        r.config.algorithm.delta,
        1.0,
    ) {
        let _ = writeln!(out, "bonus_scale_bound_{name}={b}");
    }
    let _ = writeln!(out, "bonus_scale={}", trained.bonus_scale);
    Ok(out.into())
}
