//! `cfisac` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cfisac_core::manifold::worst_case_with_model;
use cfisac_core::{CommChannels, SensingModel};
use cfisac_metarl::cfisac_env::{decode_action, ideal_crlb};
use cfisac_metarl::meta::derive_seed;
use cfisac_metarl::{Environment, TsMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_list, Baseline, ExperimentConfig, ExperimentSpec, SweepAxis};
use crate::error::{HarnessError, Result};
use crate::output::{self, ResultRow};
use crate::pipeline::{self, DesignScore};
use crate::sweep;

#[derive(Debug, Parser)]
#[command(name = "cfisac", version, about = "Worst-case CRLB and meta-RL design for movable-antenna cell-free ISAC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Worst-case TS error for one design (random, or the policy's first action).
    SolveWorstCase(Flags),
    /// Meta-train, adapt to the configured scenario and score the result.
    Train(Flags),
    /// Adapt a meta checkpoint to the configured scenario.
    Adapt(Flags),
    /// Score a checkpoint's policy on the configured scenario.
    Eval(Flags),
    /// Run a parameter sweep.
    Sweep(Flags),
}

#[derive(Debug, Args, Clone)]
pub struct Flags {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for sweeps.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated, strictly monotone axis values.
    #[arg(long)]
    pub values: Option<String>,
    /// TS error used in the training reward.
    #[arg(long = "ts-mode")]
    pub ts_mode: Option<TsMode>,
    /// Policy checkpoint to start from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses, runs and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cfisac: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CFISAC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn load(flags: &Flags) -> Result<(ExperimentConfig, Baseline)> {
    let mut cfg = match &flags.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = flags.ts_mode {
        cfg.env.ts_mode = mode;
    }
    let baseline = flags.baseline.unwrap_or(cfg.sweep.baseline);
    Ok((cfg, baseline))
}

fn need_checkpoint(flags: &Flags) -> Result<&Path> {
    flags.checkpoint.as_deref().ok_or_else(|| HarnessError::Config("--checkpoint is required for this command".into()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::SolveWorstCase(f) => solve_worst_case(&f),
        Command::Train(f) => train(&f),
        Command::Adapt(f) => adapt(&f),
        Command::Eval(f) => eval(&f),
        Command::Sweep(f) => run_sweep(&f),
    }
}

fn single_row(seed: u64, baseline: Baseline, d: &DesignScore) -> ResultRow {
    ResultRow {
        seed,
        axis_value: f64::NAN,
        baseline: baseline.name().into(),
        worst_crlb: d.worst_crlb,
        nominal_crlb: d.nominal_crlb,
        r_sum: d.r_sum,
        violations: d.violations,
        rate_violations: d.rate_violations,
        seconds: 0.0,
        error: None,
    }
}

fn solve_worst_case(flags: &Flags) -> Result<()> {
    let (cfg, baseline) = load(flags)?;
    let seed = flags.seed.unwrap_or(0);
    let env_cfg = pipeline::training_env(&cfg, baseline);
    let mut env = pipeline::make_env(&cfg.scenario, &env_cfg, cfg.td3.gamma)?;
    let action = match &flags.checkpoint {
        Some(p) => {
            let mut agent = Checkpoint::load(p)?.to_agent(&cfg.scenario)?;
            let state = env.reset()?;
            agent.select_action(&state, 0.0)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xd5, 0));
            (0..env.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
        }
    };
    let sc = &env.scenario;
    let (beams, layout) = decode_action(&action, sc, env_cfg.fixed_positions)?;
    let model = SensingModel::new(sc, &beams, &layout)?;
    let nominal = ideal_crlb(&model, sc)?;
    let res = worst_case_with_model(&model, &sc.freq_grid, sc.config.ts_bounds, &cfg.env.solver)?;
    let channels = CommChannels::compute(sc, &layout);
    let rates = cfisac_core::weighted_sum_rate(sc, &channels, &beams)?;
    let out = &flags.out;
    output::write(&out.join("trace.csv"), &output::trace_csv(&res.trace)?)?;
    output::write(&out.join("worst_case_ts.csv"), &output::ts_csv(&res.ts, sc.num_tx_aps(), sc.num_rx_aps())?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "worst_crlb", "relaxed_crlb", "nominal_crlb", "r_sum", "cg_iterations"])?;
    w.write_record([
        seed.to_string(),
        res.worst_crlb.to_string(),
        res.relaxed_crlb.to_string(),
        nominal.to_string(),
        rates.sum.to_string(),
        res.cg_iterations.to_string(),
    ])?;
    let text = String::from_utf8(w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?)
        .expect("ASCII CSV");
    output::write(&out.join("worst_case.csv"), &text)?;
    println!("worst-case tr(CRLB) {:.6e} m² (no TS error {:.6e} m²)", res.worst_crlb, nominal);
    Ok(())
}

fn train(flags: &Flags) -> Result<()> {
    let (cfg, baseline) = load(flags)?;
    let seed = flags.seed.unwrap_or(0);
    let p = pipeline::run_point(&cfg, baseline, seed)?;
    let out = &flags.out;
    Checkpoint::from_agent(&p.meta_agent, &cfg.scenario).save(&out.join("meta_checkpoint.json"))?;
    Checkpoint::from_agent(&p.agent, &cfg.scenario).save(&out.join("checkpoint.json"))?;
    output::write(&out.join("meta_log.csv"), &output::meta_log_csv(&p.meta.log)?)?;
    output::write(&out.join("train_log.csv"), &output::log_csv(&p.adapt_log)?)?;
    output::write(&out.join("results.csv"), &output::results_csv(&[single_row(seed, baseline, &p.design)])?)?;
    println!("worst-case tr(CRLB) {:.6e} m² after training ({:.1}s)", p.design.worst_crlb, p.seconds);
    Ok(())
}

fn adapt(flags: &Flags) -> Result<()> {
    let (cfg, baseline) = load(flags)?;
    let seed = flags.seed.unwrap_or(0);
    let meta = Checkpoint::load(need_checkpoint(flags)?)?.to_agent(&cfg.scenario)?;
    let adapted = pipeline::run_adapt(&cfg, baseline, &meta, seed)?;
    let elites: Vec<Vec<f64>> = adapted.summary.elites.items.iter().map(|e| e.action.clone()).collect();
    let (cands, _) = pipeline::candidate_actions(&cfg, baseline, &adapted.agent, &elites)?;
    let design = pipeline::score_candidates(&cfg, baseline, &cands)?;
    let out = &flags.out;
    Checkpoint::from_agent(&adapted.agent, &cfg.scenario).save(&out.join("checkpoint.json"))?;
    output::write(&out.join("train_log.csv"), &output::log_csv(&adapted.summary.log)?)?;
    output::write(&out.join("results.csv"), &output::results_csv(&[single_row(seed, baseline, &design)])?)?;
    println!("worst-case tr(CRLB) {:.6e} m² after adaptation", design.worst_crlb);
    Ok(())
}

fn eval(flags: &Flags) -> Result<()> {
    let (cfg, baseline) = load(flags)?;
    let seed = flags.seed.unwrap_or(0);
    let agent = Checkpoint::load(need_checkpoint(flags)?)?.to_agent(&cfg.scenario)?;
    let (cands, mean_reward) = pipeline::candidate_actions(&cfg, baseline, &agent, &[])?;
    let design = pipeline::score_candidates(&cfg, baseline, &cands)?;
    output::write(&flags.out.join("results.csv"), &output::results_csv(&[single_row(seed, baseline, &design)])?)?;
    println!("mean greedy reward {mean_reward:.6e}; worst-case tr(CRLB) {:.6e} m²", design.worst_crlb);
    Ok(())
}

fn run_sweep(flags: &Flags) -> Result<()> {
    let (cfg, baseline) = load(flags)?;
    let axis = flags
        .axis
        .or(cfg.sweep.axis)
        .ok_or_else(|| HarnessError::Config("sweep needs --axis or sweep.axis".into()))?;
    let values = match &flags.values {
        Some(v) => parse_list::<f64>(v)?,
        None => cfg.sweep.values.clone(),
    };
    let seeds = match (&flags.seeds, flags.seed) {
        (Some(s), _) => parse_list::<u64>(s)?,
        (None, Some(s)) => vec![s],
        (None, None) if !cfg.sweep.seeds.is_empty() => cfg.sweep.seeds.clone(),
        (None, None) => vec![0],
    };
    let spec = ExperimentSpec::new(axis, values, baseline, seeds)?;
    for v in &spec.values {
        sweep::point_config(&cfg, axis, *v)?;
    }
    let rows = sweep::run_sweep(&cfg, &spec);
    let out = &flags.out;
    output::write(&out.join("results.csv"), &output::results_csv(&rows)?)?;
    output::write(&out.join("chart.svg"), &sweep::sweep_chart(&spec, &rows))?;
    let timings: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| serde_json::json!({ "seed": r.seed, "axis_value": r.axis_value, "seconds": r.seconds }))
        .collect();
    output::write(&out.join("timings.json"), &(serde_json::to_string_pretty(&timings).expect("json") + "\n"))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    for (v, w, n) in sweep::summarize(&rows, &spec.values) {
        println!("{axis}={v}: mean worst-case tr(CRLB) {w:.6e} m², no TS error {n:.6e} m²");
    }
    if failed == rows.len() {
        return Err(HarnessError::Runtime("every sweep row failed".into()));
    }
    if failed > 0 {
        log::warn!("{failed} of {} sweep rows failed; see the error column", rows.len());
    }
    Ok(())
}
