//! Command-line front end. `run` parses arguments, executes one command and
//! returns the process exit code: 0 on success, 1 on a runtime failure,
//! 2 on a usage error.

mod config;

pub use config::RunConfig;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aero::{Fidelity, SolverConfig};
use crate::env::{AeroModel, AirfoilEnv, ResetPool, StandardSolver, TerminationReason};
use crate::eval::{
    compare_report, evaluate_policy, inference_rollout, load_dataset, pareto_front, summarize, write_csv,
    DatasetEntry, EvalRecord,
};
use crate::geometry::{cst_to_geometry, fit_cst, read_dat, write_selig, CstParams, N_PARAMS};
use crate::nn::{AgentCheckpoint, WeightsFile};
use crate::ppo::{derive_seed, train, write_log_csv, PpoError, Preset, TrainSpec, UpdateLog};
use crate::pso::optimize_airfoil;
use crate::transfer::{finetune, time_reduction, FinetuneSpec, TlStrategy, TransferCost};

/// Names the default output root; commands write to `<root>/<command>`
/// unless `--out` is given.
pub const OUTPUT_ROOT_VAR: &str = "AIRFOIL_DRL_OUT";

#[derive(Debug, Parser)]
#[command(name = "airfoil-drl", version, about = "Airfoil shape optimization with deep reinforcement learning")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $AIRFOIL_DRL_OUT/<command>, or runs/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for rollouts, evaluation and PSO.
    #[arg(long, global = true)]
    pub n_workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent with PPO.
    Train(TrainArgs),
    /// Transfer a pretrained agent and fine-tune it on the high-fidelity solver.
    Finetune(FinetuneArgs),
    /// Optimize one airfoil with a trained agent and write the design trace.
    Optimize(OptimizeArgs),
    /// Evaluate an agent on a directory of airfoils.
    Evaluate(EvaluateArgs),
    /// Run the particle-swarm baseline.
    Pso(PsoArgs),
    /// Compare DRL and PSO evaluation records.
    Compare(CompareArgs),
    /// Write an agent's weights as JSON.
    ExportWeights(ExportArgs),
    /// Build a checkpoint from a JSON weights file.
    ImportWeights(ImportArgs),
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a finite value ≥ 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn fidelity(s: &str) -> Result<Fidelity, String> {
    s.parse()
}

fn preset(s: &str) -> Result<Preset, String> {
    s.parse()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Solver answering step queries: high or low.
    #[arg(long, value_parser = fidelity)]
    pub solver: Option<Fidelity>,
    /// Thickness-kernel strength σ ≥ 0.
    #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    /// Environment steps to train for.
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Master seed for environments, sampling and initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// from-scratch, pretrain or finetune.
    #[arg(long, value_parser = preset)]
    pub preset: Option<Preset>,
    /// Parallel environments per rollout.
    #[arg(long)]
    pub n_envs: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    /// Pretrained checkpoint.
    #[arg(long = "from")]
    pub from: PathBuf,
    /// Transfer strategy 1-4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub strategy: u8,
    /// Environment steps to fine-tune for.
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Master seed for the fine-tuning run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the σ stored in the source checkpoint.
    #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    /// Solver calls of a from-scratch high-fidelity run, for the time-reduction report.
    #[arg(long)]
    pub baseline_calls: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimizeArgs {
    /// Agent checkpoint written by train or finetune.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Selig or Lednicer `.dat` file.
    #[arg(long)]
    pub airfoil: PathBuf,
    /// Sample actions instead of using the policy mean.
    #[arg(long)]
    pub stochastic: bool,
    /// Defaults to the σ stored in the checkpoint.
    #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Agent checkpoint written by train or finetune.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of `.dat` files (default: the configured data directory).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Sample actions instead of using the policy mean.
    #[arg(long)]
    pub stochastic: bool,
    /// Seed for stochastic evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the σ stored in the checkpoint.
    #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    /// Evaluate only the first N airfoils.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PsoArgs {
    /// Single airfoil to optimize.
    #[arg(long, conflicts_with = "dataset")]
    pub airfoil: Option<PathBuf>,
    /// Directory of airfoils to optimize one by one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Relative tolerance on the seed's maximum thickness.
    #[arg(long, value_parser = non_negative)]
    pub keep_thickness: Option<f64>,
    /// PSO iterations after initialization.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Particles in the swarm.
    #[arg(long)]
    pub swarm: Option<usize>,
    /// Seed for the swarm.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver for the fitness: high (default) or low.
    #[arg(long, value_parser = fidelity)]
    pub solver: Option<Fidelity>,
    /// Optimize only the first N airfoils of the dataset.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// DRL records CSV.
    #[arg(long)]
    pub drl: PathBuf,
    /// PSO records CSV.
    #[arg(long)]
    pub pso: PathBuf,
    /// Extra `label=records.csv` points for the (ΔMT, best) scatter.
    #[arg(long = "point")]
    pub points: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    /// Agent checkpoint to export.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImportArgs {
    /// Weights JSON written by export-weights.
    #[arg(long)]
    pub weights: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Finetune(_) => "finetune",
            Command::Optimize(_) => "optimize",
            Command::Evaluate(_) => "evaluate",
            Command::Pso(_) => "pso",
            Command::Compare(_) => "compare",
            Command::ExportWeights(_) => "export-weights",
            Command::ImportWeights(_) => "import-weights",
        }
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.n_workers {
        // Fails only when a pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let preset = match &cli.command {
        Command::Train(a) => a.preset,
        Command::Finetune(_) => Some(Preset::Finetune),
        _ => None,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), preset).map_err(anyhow::Error::msg)?;
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(cli.command.name()),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Train(a) => cmd_train(&mut cfg, &a, &out),
        Command::Finetune(a) => cmd_finetune(&mut cfg, &a, &out),
        Command::Optimize(a) => cmd_optimize(&mut cfg, &a, &out),
        Command::Evaluate(a) => cmd_evaluate(&mut cfg, &a, &out),
        Command::Pso(a) => cmd_pso(&mut cfg, &a, &out),
        Command::Compare(a) => cmd_compare(&cfg, &a, &out),
        Command::ExportWeights(a) => cmd_export(&cfg, &a, &out),
        Command::ImportWeights(a) => cmd_import(&cfg, &a, &out),
    }
}

/// The resolved configuration plus the command's own flags.
#[derive(Serialize)]
struct Provenance<'a, A: Serialize> {
    command: &'static str,
    args: &'a A,
    #[serde(flatten)]
    config: &'a RunConfig,
}

fn write_provenance<A: Serialize>(out: &Path, command: &'static str, args: &A, cfg: &RunConfig) -> Result<()> {
    let p = Provenance { command, args, config: cfg };
    let text = toml::to_string_pretty(&p).context("serializing run config")?;
    write_file(&out.join("config.toml"), text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn load_pool(cfg: &RunConfig, out: &Path) -> Result<Arc<ResetPool>> {
    let pool = ResetPool::load_cached(
        &out.join("pool_cache.json"),
        &cfg.data_dir,
        &cfg.env.reset_pool,
        &cfg.env.bounds,
    )?;
    Ok(Arc::new(pool))
}

fn load_checkpoint(path: &Path) -> Result<AgentCheckpoint> {
    AgentCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn print_update(r: &UpdateLog) {
    println!(
        "update {:>4}  steps {:>8}  mean episode reward {:>10.3}  solver calls {}",
        r.update + 1,
        r.timesteps,
        r.mean_episode_reward,
        r.solver_calls
    );
}

#[derive(Serialize)]
struct TrainTiming {
    wall_time_s: f64,
}

fn cmd_train(cfg: &mut RunConfig, a: &TrainArgs, out: &Path) -> Result<()> {
    if let Some(s) = a.solver {
        cfg.env.fidelity = s;
    }
    if let Some(s) = a.sigma {
        cfg.env.sigma = s;
    }
    if let Some(t) = a.timesteps {
        cfg.ppo.total_timesteps = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_envs {
        cfg.ppo.n_envs = n;
    }
    cfg.env.validate()?;
    cfg.ppo.validate()?;
    write_provenance(out, "train", a, cfg)?;
    let pool = load_pool(cfg, out)?;
    let started = Instant::now();
    let mut spec = TrainSpec::new(cfg.env.clone(), pool, cfg.ppo.clone(), cfg.seed);
    spec.label = format!("{:?}", cfg.preset).to_lowercase();
    let mut last_good: Option<AgentCheckpoint> = None;
    let result = train(spec, &mut |row, ck| {
        print_update(row);
        last_good = Some(ck.clone());
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e @ PpoError::TrainingDiverged(_)) => {
            if let Some(ck) = last_good {
                ck.save(&out.join("checkpoint.diverged.bin"))?;
            }
            bail!("{e}");
        }
        Err(e) => return Err(e.into()),
    };
    outcome.checkpoint.save(&out.join("checkpoint.bin"))?;
    write_log_csv(&outcome.log, create(&out.join("train_log.csv"))?)?;
    write_json(&out.join("ledger.json"), &outcome.ledger)?;
    write_json(
        &out.join("timing.json"),
        &TrainTiming {
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "trained {} steps; {} solver calls ({:.1} s nominal); output in {}",
        outcome.checkpoint.meta.timesteps,
        outcome.ledger.solver_calls,
        outcome.ledger.nominal_ms / 1000.0,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FinetuneReport {
    strategy: u8,
    cost: TransferCost,
    baseline_calls: Option<u64>,
    baseline_s: Option<f64>,
    time_reduction_percent: Option<f64>,
}

fn cmd_finetune(cfg: &mut RunConfig, a: &FinetuneArgs, out: &Path) -> Result<()> {
    let strategy = TlStrategy::from_number(a.strategy).expect("range checked by the parser");
    let source = load_checkpoint(&a.from)?;
    cfg.env.fidelity = Fidelity::High;
    cfg.env.sigma = a.sigma.unwrap_or(source.meta.sigma);
    if let Some(t) = a.timesteps {
        cfg.ppo.total_timesteps = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.env.validate()?;
    cfg.ppo.validate()?;
    write_provenance(out, "finetune", a, cfg)?;
    let pool = load_pool(cfg, out)?;
    let spec = FinetuneSpec {
        source,
        strategy,
        env: cfg.env.clone(),
        pool,
        ppo: cfg.ppo.clone(),
        seed: cfg.seed,
        model: None,
    };
    let started = Instant::now();
    let outcome = finetune(spec, &mut |row, _| {
        print_update(row);
        Ok(())
    })?;
    outcome.checkpoint.save(&out.join("checkpoint.bin"))?;
    write_log_csv(&outcome.log, create(&out.join("train_log.csv"))?)?;
    let baseline_s = a.baseline_calls.map(|c| TransferCost::new(0, c).total_s);
    let reduction = baseline_s.map(|b| time_reduction(b, outcome.cost.total_s)).transpose()?;
    let report = FinetuneReport {
        strategy: a.strategy,
        cost: outcome.cost,
        baseline_calls: a.baseline_calls,
        baseline_s,
        time_reduction_percent: reduction,
    };
    write_json(&out.join("ledger.json"), &report)?;
    write_json(
        &out.join("timing.json"),
        &TrainTiming {
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "strategy #{}: pretrain {:.1} s + fine-tune {:.1} s = {:.1} s nominal solver time",
        a.strategy, report.cost.pretrain_s, report.cost.finetune_s, report.cost.total_s
    );
    if let Some(r) = reduction {
        println!("time reduction vs baseline: {r:.2}%");
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    params: [f64; N_PARAMS],
    cl: Option<f64>,
    cd: Option<f64>,
    ratio: Option<f64>,
    mt: f64,
    reward: f64,
}

#[derive(Serialize)]
struct OptimizeMetrics {
    name: String,
    initial_ratio: f64,
    final_ratio: Option<f64>,
    best_ratio: f64,
    best_step: usize,
    improvement: f64,
    mt_initial: f64,
    mt_at_best: f64,
    delta_mt_percent: f64,
    termination: String,
}

#[derive(Serialize)]
struct OptimizeTiming {
    inference_s: f64,
    solver_metrics_s: f64,
}

fn fit_airfoil(path: &Path, cfg: &RunConfig) -> Result<(String, CstParams)> {
    let coords = read_dat(path).with_context(|| format!("reading {}", path.display()))?;
    let fit = fit_cst(&coords.points, &cfg.env.bounds).with_context(|| format!("fitting {}", path.display()))?;
    let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
    Ok((name, fit.params))
}

fn cmd_optimize(cfg: &mut RunConfig, a: &OptimizeArgs, out: &Path) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (name, params) = fit_airfoil(&a.airfoil, cfg)?;
    cfg.env.fidelity = Fidelity::High;
    cfg.env.sigma = a.sigma.unwrap_or(ck.meta.sigma);
    cfg.env.validate()?;
    write_provenance(out, "optimize", a, cfg)?;
    let deterministic = !a.stochastic;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, inference_s) = inference_rollout(&ck.agent, &params, &cfg.env, deterministic, &mut rng);

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env = AirfoilEnv::new(cfg.env.clone(), Arc::new(ResetPool::default()))?;
    let mut obs = env.reset_to(params, &name).with_context(|| format!("solving {name}"))?;
    let state = env.state().expect("reset succeeded").clone();
    let initial = state.initial.ratio.expect("converged start");
    let mut rows = vec![TraceRow {
        step: 0,
        params: state.params.to_array(),
        cl: state.initial.cl,
        cd: state.initial.cd,
        ratio: state.initial.ratio,
        mt: state.mt0,
        reward: 0.0,
    }];
    let (mut best, mut best_step, mut mt_best) = (initial, 0, state.mt0);
    let mut best_params = state.params;
    let mut reason = TerminationReason::Running;
    let mut final_ratio = Some(initial);
    while reason == TerminationReason::Running {
        let action = crate::eval::Policy::action(&ck.agent, &obs, &mut rng, deterministic);
        let o = env.step(&action)?;
        reason = o.reason;
        obs = o.observation;
        final_ratio = o.info.ratio;
        let step = rows.len();
        if let Some(r) = o.info.ratio {
            if r > best {
                (best, best_step, mt_best, best_params) = (r, step, o.info.mt, o.params);
            }
        }
        rows.push(TraceRow {
            step,
            params: o.params.to_array(),
            cl: o.info.cl,
            cd: o.info.cd,
            ratio: o.info.ratio,
            mt: o.info.mt,
            reward: o.reward,
        });
    }
    let solver_metrics_s = started.elapsed().as_secs_f64();

    write_trace_csv(&rows, create(&out.join("trace.csv"))?)?;
    let geom = cst_to_geometry(&best_params, cfg.env.stations)?;
    write_selig(create(&out.join("best.dat"))?, &format!("{name} optimized"), &geom.to_selig())?;
    let metrics = OptimizeMetrics {
        name: name.clone(),
        initial_ratio: initial,
        final_ratio,
        best_ratio: best,
        best_step,
        improvement: best - initial,
        mt_initial: state.mt0,
        mt_at_best: mt_best,
        delta_mt_percent: 100.0 * (mt_best - state.mt0).abs() / state.mt0,
        termination: reason.as_str().into(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(
        &out.join("timing.json"),
        &OptimizeTiming {
            inference_s,
            solver_metrics_s,
        },
    )?;
    println!(
        "{name}: CL/CD {initial:.2} -> best {best:.2} at step {best_step} (ΔMT {:.2}%), {} ({} steps)",
        metrics.delta_mt_percent,
        metrics.termination,
        rows.len() - 1
    );
    println!("policy inference {:.4} s, solver metrics {:.3} s", inference_s, solver_metrics_s);
    Ok(())
}

fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend((0..N_PARAMS).map(|i| format!("p{i}")));
    header.extend(["cl", "cd", "ratio", "mt", "reward"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.params.iter().map(|p| p.to_string()));
        rec.extend([opt(r.cl), opt(r.cd), opt(r.ratio), r.mt.to_string(), r.reward.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RecordTiming {
    total_s: f64,
    per_airfoil_s: BTreeMap<String, f64>,
    /// Policy-only rollout time per airfoil, with no solver in the loop.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    inference_s: BTreeMap<String, f64>,
}

fn write_records(out: &Path, records: &[EvalRecord], total_s: f64, inference_s: BTreeMap<String, f64>) -> Result<()> {
    crate::eval::write_records_csv(records, create(&out.join("records.csv"))?)?;
    let timing = RecordTiming {
        total_s,
        per_airfoil_s: records.iter().map(|r| (r.name.clone(), r.wall_time_s)).collect(),
        inference_s,
    };
    write_json(&out.join("timing.json"), &timing)
}

fn print_summary(label: &str, records: &[EvalRecord]) -> Result<()> {
    let s = summarize(records)?;
    println!(
        "{label}: {} evaluated, {} excluded; improvement {:.2} ± {:.2}; best median {:.2} (IQR {:.2}); ΔMT {:.2}% ± {:.2}; improved on {:.1}%",
        s.n_evaluated,
        s.n_excluded,
        s.improvement.mean,
        s.improvement.std,
        s.best_median,
        s.best_iqr,
        s.delta_mt_percent.mean,
        s.delta_mt_percent.std,
        100.0 * s.fraction_improved
    );
    Ok(())
}

fn load_entries(dir: &Path, cfg: &RunConfig, limit: Option<usize>) -> Result<Vec<DatasetEntry>> {
    let mut data = load_dataset(dir, &cfg.env.bounds)?;
    if let Some(n) = limit {
        data.truncate(n);
    }
    Ok(data)
}

fn cmd_evaluate(cfg: &mut RunConfig, a: &EvaluateArgs, out: &Path) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    cfg.env.fidelity = Fidelity::High;
    cfg.env.sigma = a.sigma.unwrap_or(ck.meta.sigma);
    if a.stochastic {
        cfg.eval.deterministic = false;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    if let Some(d) = &a.dataset {
        cfg.data_dir = d.clone();
    }
    write_provenance(out, "evaluate", a, cfg)?;
    let data = load_entries(&cfg.data_dir, cfg, a.limit)?;
    let started = Instant::now();
    let records = evaluate_policy(&ck.agent, &data, &cfg.env, cfg.eval, None)?;
    let total = started.elapsed().as_secs_f64();
    let summary = summarize(&records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let inference: BTreeMap<String, f64> = data
        .iter()
        .map(|e| {
            let (_, t) = inference_rollout(&ck.agent, &e.params, &cfg.env, cfg.eval.deterministic, &mut rng);
            (e.name.clone(), t)
        })
        .collect();
    write_records(out, &records, total, inference)?;
    write_json(&out.join("summary.json"), &summary)?;
    print_summary("DRL", &records)
}

#[derive(Serialize)]
struct PsoTraceRow<'a> {
    name: &'a str,
    iteration: usize,
    best: f64,
}

fn cmd_pso(cfg: &mut RunConfig, a: &PsoArgs, out: &Path) -> Result<()> {
    if let Some(n) = a.iterations {
        cfg.pso.max_iterations = n;
    }
    if let Some(n) = a.swarm {
        cfg.pso.swarm_size = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.dataset {
        cfg.data_dir = d.clone();
    }
    cfg.pso.validate()?;
    write_provenance(out, "pso", a, cfg)?;
    let entries: Vec<(String, CstParams)> = match &a.airfoil {
        Some(p) => vec![fit_airfoil(p, cfg)?],
        None => load_entries(&cfg.data_dir, cfg, a.limit)?
            .into_iter()
            .map(|e| (e.name, e.params))
            .collect(),
    };
    if entries.is_empty() {
        bail!("no airfoils to optimize");
    }
    let solver = match a.solver.unwrap_or(Fidelity::High) {
        Fidelity::High => SolverConfig::high(),
        Fidelity::Low => SolverConfig::low(),
    };
    let model: Arc<dyn AeroModel> = Arc::new(StandardSolver {
        flow: cfg.env.flow,
        config: solver,
    });
    let started = Instant::now();
    let mut records = Vec::new();
    let mut trace = Vec::new();
    for (k, (name, params)) in entries.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k as u64));
        match optimize_airfoil(name, params, &cfg.env.bounds, model.clone(), a.keep_thickness, &cfg.pso, &mut rng) {
            Ok((rec, res)) => {
                println!(
                    "{name}: CL/CD {:.2} -> {:.2} (ΔMT {:.2}%) in {:.1} s",
                    rec.initial_ratio, rec.best_ratio, rec.delta_mt_percent, rec.wall_time_s
                );
                let rows: Vec<_> = res.trace.iter().enumerate().map(|(i, &b)| (i, b)).collect();
                trace.push((name.clone(), rows));
                records.push(rec);
            }
            Err(crate::pso::PsoError::Seed(msg)) => {
                log::info!("excluding {name}: {msg}");
                records.push(excluded(name));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let total = started.elapsed().as_secs_f64();
    write_records(out, &records, total, BTreeMap::new())?;
    let rows: Vec<PsoTraceRow> = trace
        .iter()
        .flat_map(|(n, rows)| {
            rows.iter().map(move |&(iteration, best)| PsoTraceRow {
                name: n,
                iteration,
                best,
            })
        })
        .collect();
    write_csv(&rows, create(&out.join("trace.csv"))?)?;
    if let Ok(summary) = summarize(&records) {
        write_json(&out.join("summary.json"), &summary)?;
    }
    print_summary("PSO", &records)
}

fn excluded(name: &str) -> EvalRecord {
    EvalRecord {
        name: name.to_string(),
        converged: false,
        initial_ratio: f64::NAN,
        best_ratio: f64::NAN,
        improvement: f64::NAN,
        mt_initial: f64::NAN,
        mt_at_best: f64::NAN,
        delta_mt_percent: f64::NAN,
        best_step: 0,
        episode_length: 0,
        termination: "initial_solve_failed".into(),
        wall_time_s: 0.0,
    }
}

/// Read a records CSV; wall times come from a sibling `timing.json` when present.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(read_records_timed(path)?.0)
}

/// Records plus the mean policy-only inference time per airfoil, if known.
fn read_records_timed(path: &Path) -> Result<(Vec<EvalRecord>, Option<f64>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut records: Vec<EvalRecord> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    let timing_path = path.with_file_name("timing.json");
    let mut inference = None;
    if let Ok(text) = fs::read_to_string(&timing_path) {
        if let Ok(t) = serde_json::from_str::<RecordTiming>(&text) {
            for r in records.iter_mut() {
                r.wall_time_s = t.per_airfoil_s.get(&r.name).copied().unwrap_or(0.0);
            }
            if !t.inference_s.is_empty() {
                inference = Some(t.inference_s.values().sum::<f64>() / t.inference_s.len() as f64);
            }
        }
    }
    Ok((records, inference))
}

fn cmd_compare(cfg: &RunConfig, a: &CompareArgs, out: &Path) -> Result<()> {
    write_provenance(out, "compare", a, cfg)?;
    let (drl, drl_inference) = read_records_timed(&a.drl)?;
    let pso = read_records(&a.pso)?;
    let report = compare_report(&drl, &pso)?;
    write_csv(&report.rows, create(&out.join("comparison.csv"))?)?;
    let summary = serde_json::json!({
        "drl": report.drl,
        "pso": report.pso,
        "drl_wins": report.drl_wins,
        "pso_wins": report.pso_wins,
        "ties": report.ties,
    });
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("timing.json"),
        &serde_json::json!({
            "drl_wall_per_airfoil_s": report.drl_wall_per_airfoil,
            "pso_wall_per_airfoil_s": report.pso_wall_per_airfoil,
            "speedup": report.speedup,
            "drl_inference_per_airfoil_s": drl_inference,
            "inference_speedup": drl_inference.map(|t| report.pso_wall_per_airfoil / t),
        }),
    )?;
    println!("{:<20} {:>10} {:>10}  winner", "airfoil", "DRL", "PSO");
    for r in &report.rows {
        println!("{:<20} {:>10.2} {:>10.2}  {}", r.name, r.drl_best, r.pso_best, r.winner.as_str());
    }
    println!(
        "DRL wins {}, PSO wins {}, ties {}; wall time per airfoil {:.4} s vs {:.4} s",
        report.drl_wins, report.pso_wins, report.ties, report.drl_wall_per_airfoil, report.pso_wall_per_airfoil
    );
    if let Some(t) = drl_inference {
        println!(
            "policy inference {:.5} s per airfoil; speedup over PSO {:.3}x",
            t,
            report.pso_wall_per_airfoil / t
        );
    }
    if !a.points.is_empty() {
        let mut pts = Vec::new();
        for spec in &a.points {
            let Some((label, path)) = spec.split_once('=') else {
                bail!("--point expects label=records.csv, got '{spec}'");
            };
            let s = summarize(&read_records(Path::new(path))?)?;
            pts.push((label.to_string(), s.delta_mt_percent.mean, s.best_median));
        }
        let front = pareto_front(&pts);
        write_csv(&front, create(&out.join("pareto.csv"))?)?;
        for p in &front {
            println!(
                "{:<12} ΔMT {:>7.2}%  best {:>8.2}  {}",
                p.label,
                p.delta_mt_percent,
                p.best,
                if p.pareto { "pareto" } else { "" }
            );
        }
    }
    Ok(())
}

fn cmd_export(cfg: &RunConfig, a: &ExportArgs, out: &Path) -> Result<()> {
    write_provenance(out, "export-weights", a, cfg)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let path = out.join("weights.json");
    write_json(&path, &WeightsFile::from_agent(&ck.agent))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_import(cfg: &RunConfig, a: &ImportArgs, out: &Path) -> Result<()> {
    write_provenance(out, "import-weights", a, cfg)?;
    let text = fs::read_to_string(&a.weights).with_context(|| format!("reading {}", a.weights.display()))?;
    let weights: WeightsFile = serde_json::from_str(&text).context("parsing weights file")?;
    let agent = weights.to_agent()?;
    let ck = AgentCheckpoint::new(agent, cfg.ppo.learning_rate, Default::default());
    let path = out.join("checkpoint.bin");
    ck.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

