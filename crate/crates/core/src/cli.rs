//! Command-line front end: `generate`, `run`, `sweep`, `report` and `config`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_learner_with_reservoir, save_learner};
use crate::config;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::experiment::{
    advance_continual, aggregate, continual_learner, finish_continual, generate_run_data, run_setting_in_context,
    sweep_lambda, sweep_threshold, AggregateResult, ExperimentConfig, RunContext, RunResult, Setting,
};
use crate::io::{self, create_dir, read_json, write_json, Provenance};
use crate::multihead::TrainStepReport;
use crate::report;
use crate::seeds::RunSeeds;

/// Environment variable that sets the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "MHRC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "mhrc-out";
pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Parser)]
#[command(name = "mhrc", version, about = "Competitive multi-head reservoir computing for continual learning of dynamical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate and standardize a multi-environment dataset.
    Generate(GenerateArgs),
    /// Train and evaluate over several seeds.
    Run(RunArgs),
    /// Sweep the drift threshold or the ridge strength on validation data.
    Sweep(SweepArgs),
    /// Aggregate stored run results into tables.
    Report(ReportArgs),
    /// Print a complete configuration file for a published setup.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Published setup instead of a file: vdp, l63 or l96.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => config::load(path),
            (None, Some(name)) => config::preset(name),
            (None, None) => Err(Error::Config("pass --config FILE or --preset NAME".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Output root; the dataset goes to `<out>/<system>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run index whose data seed is used.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Use this generated dataset for every seed instead of simulating per seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First run index; runs are `seed_offset .. seed_offset + num_seeds`.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
    /// Override the config's setting.
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Skip runs already stored in the output directory and continue from
    /// a saved continual-learning checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Continual setting only: checkpoint and stop after this many training
    /// sequences of the first unfinished run.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Run seeds one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// `threshold=V1,V2,...` or `lambda=V1,V2,...`.
    #[arg(long)]
    pub sweep: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories written by `run`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// vdp, l63 or l96.
    #[arg(long, default_value = "vdp")]
    pub preset: String,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "threshold" | "theta" | "drift_threshold" => Ok(SweepParameter::Threshold),
            "lambda" | "ridge" => Ok(SweepParameter::Lambda),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}; expected threshold or lambda"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Threshold,
    Lambda,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Threshold => "threshold",
            SweepParameter::Lambda => "lambda",
        }
    }
}

/// Parses `name=v1,v2,...`. Duplicate values are dropped with a warning;
/// order of first appearance is kept.
pub fn parse_sweep_spec(spec: &str) -> Result<(SweepParameter, Vec<f64>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep spec {spec:?} must look like name=v1,v2,...")))?;
    let parameter: SweepParameter = name.parse()?;
    let mut out: Vec<f64> = Vec::new();
    for raw in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let v: f64 = raw.parse().map_err(|_| Error::Config(format!("sweep value {raw:?} is not a number")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("sweep value {raw:?} is not finite")));
        }
        if out.iter().any(|o| o.to_bits() == v.to_bits()) {
            warn!("duplicate sweep value {raw} ignored");
        } else {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("sweep spec {spec:?} has no values")));
    }
    let valid = match parameter {
        SweepParameter::Threshold => out.iter().all(|&v| v > 1.0),
        SweepParameter::Lambda => out.iter().all(|&v| v > 0.0),
    };
    if !valid {
        let rule = if parameter == SweepParameter::Threshold { "> 1" } else { "> 0" };
        return Err(Error::Config(format!("{} values must be {rule}", parameter.name())));
    }
    Ok((parameter, out))
}

/// `--out`, else `$MHRC_OUT_DIR`, else `mhrc-out`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Config(a) => {
            print!("{}", config::to_toml_string(&config::preset(&a.preset)?)?);
            Ok(())
        }
    }
}

fn system_dir_name(cfg: &ExperimentConfig) -> String {
    cfg.kind().map_or("dataset".into(), |k| k.label().to_ascii_lowercase())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = args.source.load()?;
    let dir = resolve_out_dir(args.out.as_deref()).join(system_dir_name(&cfg));
    let seeds = RunSeeds::for_run(cfg.seed, args.seed_offset);
    let (icfg, data) = generate_run_data(&cfg, seeds, Execution::Parallel)?;
    io::write_dataset(&dir, &data, &icfg)?;
    println!("wrote {} environments to {}", data.len(), dir.display());
    Ok(())
}

/// What `run` stores next to its results so that `--resume` can verify it
/// continues the same experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    config: ExperimentConfig,
    data: Option<PathBuf>,
    provenance: Provenance,
}

fn run_file(out: &Path, setting: Setting, run: u64) -> PathBuf {
    out.join("runs").join(format!("{}_run{run}.json", setting.name()))
}

fn checkpoint_dir(out: &Path, run: u64) -> PathBuf {
    out.join("checkpoints").join(format!("run{run}"))
}

fn check_resume_manifest(out: &Path, cfg: &ExperimentConfig, data: Option<&Path>) -> Result<()> {
    let path = out.join("run.json");
    if !path.exists() {
        return Ok(());
    }
    let previous: RunManifest = read_json(&path)?;
    if previous.config != *cfg || previous.data.as_deref() != data {
        return Err(Error::Config(format!(
            "{} holds results of a different configuration; choose another --out or drop --resume",
            out.display()
        )));
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = args.source.load()?;
    if let Some(s) = args.setting {
        cfg.setting = s;
    }
    if args.stop_after.is_some() && cfg.setting != Setting::Continual {
        return Err(Error::Config("--stop-after only applies to the continual setting".into()));
    }
    let data = match &args.data {
        Some(dir) => {
            let (manifest, data) = io::read_dataset(dir)?;
            let specs: Vec<_> = data.iter().map(|e| e.spec.clone()).collect();
            if specs != cfg.environments {
                info!("using the {} environments stored in {}", specs.len(), dir.display());
                cfg.environments = specs;
            }
            cfg.integrator = manifest.integrator;
            cfg.validate()?;
            Some(data)
        }
        None => None,
    };
    let out = resolve_out_dir(args.out.as_deref());
    create_dir(&out.join("runs"))?;
    if args.resume {
        check_resume_manifest(&out, &cfg, args.data.as_deref())?;
    }
    write_json(
        &out.join("run.json"),
        &RunManifest { config: cfg.clone(), data: args.data.clone(), provenance: Provenance::now() },
    )?;

    let runs: Vec<u64> = (args.seed_offset..args.seed_offset + cfg.num_seeds as u64).collect();
    let mut done: BTreeMap<u64, RunResult> = BTreeMap::new();
    if args.resume {
        for &run in &runs {
            let path = run_file(&out, cfg.setting, run);
            if path.exists() {
                done.insert(run, read_json(&path)?);
            }
        }
        if !done.is_empty() {
            info!("resuming: {} of {} runs already complete", done.len(), runs.len());
        }
    }
    let pending: Vec<u64> = runs.iter().copied().filter(|r| !done.contains_key(r)).collect();
    let ctx_for = |run: u64| -> Result<RunContext> {
        let seeds = RunSeeds::for_run(cfg.seed, run);
        match &data {
            Some(d) => RunContext::with_data(&cfg, seeds, d.clone()),
            None => RunContext::build(&cfg, seeds),
        }
    };

    if let Some(limit) = args.stop_after {
        // Checkpointing mode: work through pending runs one by one and stop
        // inside the first one that reaches the limit.
        for &run in &pending {
            let ctx = ctx_for(run)?;
            match continual_with_checkpoint(&ctx, &cfg, run, &out, Some(limit), args.resume)? {
                Some(result) => {
                    write_json(&run_file(&out, cfg.setting, run), &result)?;
                    done.insert(run, result);
                }
                None => {
                    println!(
                        "stopped run {run} after {limit} training sequences; checkpoint in {}",
                        checkpoint_dir(&out, run).display()
                    );
                    return Ok(());
                }
            }
        }
    } else {
        let exec = execution(args.sequential);
        let finished = exec.try_map(pending, |run| {
            let ctx = ctx_for(run)?;
            let result = if cfg.setting == Setting::Continual {
                continual_with_checkpoint(&ctx, &cfg, run, &out, None, args.resume)?.expect("no limit means the run completes")
            } else {
                run_setting_in_context(&ctx, &cfg, cfg.setting, run)?
            };
            write_json(&run_file(&out, cfg.setting, run), &result)?;
            info!("run {run} done");
            Ok::<_, Error>(result)
        })?;
        for r in finished {
            done.insert(r.seed, r);
        }
    }

    let results: Vec<RunResult> = done.into_values().collect();
    write_json(&out.join(RESULTS_FILE), &results)?;
    let agg = aggregate(&results)?;
    write_json(&out.join("aggregate.json"), &agg)?;
    write_tables(&out, std::slice::from_ref(&agg), &results)?;
    print!("{}", report::markdown_table(&[agg]));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointProgress {
    reports: Vec<TrainStepReport>,
}

/// Continual run that can stop after `limit` sequences (saving a
/// checkpoint) and pick up from such a checkpoint. Returns `None` when it
/// stopped early.
fn continual_with_checkpoint(
    ctx: &RunContext,
    cfg: &ExperimentConfig,
    run: u64,
    out: &Path,
    limit: Option<u64>,
    resume: bool,
) -> Result<Option<RunResult>> {
    let dir = checkpoint_dir(out, run);
    let progress_path = dir.join("progress.json");
    let (mut learner, mut reports) = if resume && progress_path.exists() {
        let learner = load_learner_with_reservoir(&dir, &ctx.reservoir_cfg, std::sync::Arc::clone(&ctx.reservoir))?;
        let progress: CheckpointProgress = read_json(&progress_path)?;
        if progress.reports.len() as u64 != learner.sequences_seen() {
            return Err(Error::Integrity { path: progress_path, reason: "progress does not match the learner checkpoint".into() });
        }
        info!("run {run}: resuming after {} sequences", learner.sequences_seen());
        (learner, progress.reports)
    } else {
        (continual_learner(ctx, cfg)?, Vec::new())
    };
    let complete = advance_continual(ctx, &mut learner, &mut reports, limit)?;
    if !complete {
        save_learner(&dir, &learner)?;
        write_json(&progress_path, &CheckpointProgress { reports })?;
        return Ok(None);
    }
    finish_continual(ctx, cfg, run, &learner, &reports).map(Some)
}

fn write_tables(out: &Path, rows: &[AggregateResult], results: &[RunResult]) -> Result<()> {
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(io::io_err(&path))
    };
    write("table.md", report::markdown_table(rows))?;
    write("table.csv", report::csv_table(rows)?)?;
    write("results_long.csv", report::long_csv(results)?)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.source.load()?;
    let (parameter, values) = parse_sweep_spec(&args.sweep)?;
    let exec = execution(args.sequential);
    let points = match parameter {
        SweepParameter::Threshold => sweep_threshold(&cfg, &values, exec)?,
        SweepParameter::Lambda => sweep_lambda(&cfg, &values, exec)?,
    };
    let out = resolve_out_dir(args.out.as_deref());
    create_dir(&out)?;
    let csv = report::sweep_csv(parameter.name(), &points)?;
    let path = out.join(format!("sweep_{}.csv", parameter.name()));
    std::fs::write(&path, &csv).map_err(io::io_err(&path))?;
    write_json(&out.join(format!("sweep_{}.json", parameter.name())), &points)?;
    let metric = match parameter {
        SweepParameter::Threshold => "detection accuracy",
        SweepParameter::Lambda => "validation MSE",
    };
    println!("{:>12}  {metric} (mean +- sem over {} seeds)", parameter.name(), cfg.num_seeds);
    for p in &points {
        println!("{:>12}  {} +- {}", p.value, report::sig4(p.mean), report::sig4(p.sem));
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut all: Vec<RunResult> = Vec::new();
    for dir in &args.inputs {
        let results: Vec<RunResult> = read_json(&dir.join(RESULTS_FILE))?;
        all.extend(results);
    }
    let mut groups: BTreeMap<(String, Setting), Vec<RunResult>> = BTreeMap::new();
    for r in &all {
        groups.entry((r.system.label().to_string(), r.setting)).or_default().push(r.clone());
    }
    let rows = groups.values().map(|g| aggregate(g)).collect::<Result<Vec<_>>>()?;
    let out = resolve_out_dir(args.out.as_deref());
    create_dir(&out)?;
    write_tables(&out, &rows, &all)?;
    print!("{}", report::markdown_table(&rows));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        let (p, v) = parse_sweep_spec("lambda=1e-6,1e-3,1,5,100").unwrap();
        assert_eq!(p, SweepParameter::Lambda);
        assert_eq!(v, vec![1e-6, 1e-3, 1.0, 5.0, 100.0]);
        let (p, v) = parse_sweep_spec("threshold=2,5,2,10").unwrap();
        assert_eq!(p, SweepParameter::Threshold);
        assert_eq!(v, vec![2.0, 5.0, 10.0]);
        for bad in ["lambda", "alpha=1", "lambda=", "lambda=0", "threshold=1", "lambda=x", "lambda=inf"] {
            let err = parse_sweep_spec(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn out_dir_precedence() {
        assert_eq!(resolve_out_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["mhrc", "run", "--preset", "vdp", "--seed-offset", "3", "--resume"]).unwrap();
        match cli.command {
            Command::Run(a) => {
                assert_eq!(a.seed_offset, 3);
                assert!(a.resume);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["mhrc", "run", "--preset", "vdp", "--config", "a.toml"]).is_err());
        assert!(Cli::try_parse_from(["mhrc", "run", "--setting", "bogus", "--preset", "vdp"]).is_err());
    }
}
