//! Evaluation protocol: continual, single-task, multi-task and naive
//! continual runs over repeated seeds, hyperparameter sweeps and
//! aggregation into per-environment mean and standard error.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::dynsys::{
    build_continual_dataset, EnvironmentDataset, IntegratorConfig, SystemKind, SystemSpec, Trajectory, DEFAULT_L96_DIM,
};
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::federated::HeadAccumulator;
use crate::multihead::{mse, LearnerConfig, MultiHeadLearner, TrainStepReport};
use crate::reservoir::{init_reservoir, solve_normal_equations, ReservoirConfig, ReservoirWeights};
use crate::seeds::RunSeeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Continual,
    SingleTask,
    MultiTask,
    NaiveContinual,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Continual, Setting::SingleTask, Setting::MultiTask, Setting::NaiveContinual];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Continual => "continual",
            Setting::SingleTask => "single_task",
            Setting::MultiTask => "multi_task",
            Setting::NaiveContinual => "naive_continual",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?}; expected one of continual, single_task, multi_task, naive_continual")))
    }
}

/// Everything one experiment needs. Per-run seeds are derived from `seed`
/// (see [`RunSeeds`]); the `rng_seed`/`seed` fields of the component configs
/// are overwritten for each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environments: Vec<SystemSpec>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub reservoir: ReservoirConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_num_seeds")]
    pub num_seeds: usize,
    #[serde(default = "default_setting")]
    pub setting: Setting,
    #[serde(default)]
    pub seed: u64,
}

fn default_num_seeds() -> usize {
    10
}

fn default_setting() -> Setting {
    Setting::Continual
}

impl ExperimentConfig {
    /// Published setup for one system family: four environments, the
    /// validated ridge strength and every other hyperparameter at default.
    pub fn standard(kind: SystemKind) -> Self {
        let (environments, lambda) = match kind {
            SystemKind::VanDerPol => (
                [0.5, 1.0, 2.0, 4.0].iter().map(|&mu| SystemSpec::VanDerPol { mu }).collect(),
                1e-6,
            ),
            SystemKind::Lorenz63 => (
                [(28.0, 10.0, 2.66), (36.0, 8.5, 3.5), (35.0, 21.0, 1.0), (60.0, 20.0, 8.0)]
                    .iter()
                    .map(|&(rho, sigma, beta)| SystemSpec::Lorenz63 { rho, sigma, beta })
                    .collect(),
                1e-6,
            ),
            SystemKind::Lorenz96 => (
                [5.0, 10.0, 20.0, 50.0]
                    .iter()
                    .map(|&forcing| SystemSpec::Lorenz96 { forcing, dim: DEFAULT_L96_DIM })
                    .collect(),
                5.0,
            ),
        };
        Self {
            environments,
            integrator: IntegratorConfig::default(),
            reservoir: ReservoirConfig::default(),
            learner: LearnerConfig { lambda, ..Default::default() },
            num_seeds: default_num_seeds(),
            setting: Setting::Continual,
            seed: 0,
        }
    }

    pub fn kind(&self) -> Option<SystemKind> {
        self.environments.first().map(|s| s.kind())
    }

    pub fn dim(&self) -> usize {
        self.environments.first().map_or(0, |s| s.dim())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.environments.is_empty(), "environment list must not be empty");
        ensure!(self.num_seeds >= 1, "num_seeds must be >= 1");
        let kind = self.environments[0].kind();
        let dim = self.environments[0].dim();
        for s in &self.environments {
            s.validate()?;
            ensure!(s.kind() == kind && s.dim() == dim, "all environments must share one system kind and dimension");
        }
        self.integrator.validate()?;
        self.reservoir.validate()?;
        self.learner.validate()?;
        ensure!(
            self.integrator.steps_per_sequence >= self.learner.min_sequence_len()
                && self.integrator.steps_per_sequence >= self.learner.test_prefix_len(),
            "sequences of {} steps are too short for cue_len {}",
            self.integrator.steps_per_sequence,
            self.learner.cue_len
        );
        Ok(())
    }

    /// Integrator config with the run's data seed filled in.
    pub fn integrator_for(&self, seeds: RunSeeds) -> IntegratorConfig {
        IntegratorConfig { rng_seed: seeds.data, ..self.integrator.clone() }
    }

    fn reservoir_for(&self, seeds: RunSeeds) -> ReservoirConfig {
        ReservoirConfig { seed: seeds.reservoir, ..self.reservoir.clone() }
    }

    fn learner_for(&self, seeds: RunSeeds) -> LearnerConfig {
        LearnerConfig { seed: seeds.learner, ..self.learner.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub system: SystemKind,
    pub setting: Setting,
    /// Run index within the experiment.
    pub seed: u64,
    #[serde(with = "decimal::vec")]
    pub per_env_mse: Vec<f64>,
    /// Test MSE of every test sequence, grouped by environment.
    pub per_sequence_mse: Vec<Vec<f64>>,
    /// Indices (in the training stream) of sequences flagged as a new environment.
    pub drift_events: Vec<u64>,
    /// Head trained most often on each environment.
    pub head_assignment: Vec<usize>,
    /// Head chosen for each test sequence, grouped by environment.
    pub test_heads: Vec<Vec<usize>>,
}

/// Generates the dataset of one run; returns it with the integrator config used.
pub fn generate_run_data(
    cfg: &ExperimentConfig,
    seeds: RunSeeds,
    exec: Execution,
) -> Result<(IntegratorConfig, Vec<EnvironmentDataset>)> {
    cfg.validate()?;
    let icfg = cfg.integrator_for(seeds);
    let data = build_continual_dataset(&cfg.environments, &icfg, exec)?;
    Ok((icfg, data))
}

/// Data and reservoir shared by every setting of one run.
pub struct RunContext {
    pub seeds: RunSeeds,
    pub data: Vec<EnvironmentDataset>,
    pub reservoir_cfg: ReservoirConfig,
    pub reservoir: Arc<ReservoirWeights>,
}

impl RunContext {
    pub fn build(cfg: &ExperimentConfig, seeds: RunSeeds) -> Result<Self> {
        cfg.validate()?;
        let data = build_continual_dataset(&cfg.environments, &cfg.integrator_for(seeds), Execution::Sequential)?;
        Self::with_data(cfg, seeds, data)
    }

    /// Context over an already generated (e.g. loaded) dataset.
    pub fn with_data(cfg: &ExperimentConfig, seeds: RunSeeds, data: Vec<EnvironmentDataset>) -> Result<Self> {
        cfg.validate()?;
        ensure!(!data.is_empty(), "dataset has no environments");
        let reservoir_cfg = cfg.reservoir_for(seeds);
        let reservoir = Arc::new(init_reservoir(&reservoir_cfg, cfg.dim())?);
        Ok(Self { seeds, data, reservoir_cfg, reservoir })
    }

    fn learner(&self, lcfg: &LearnerConfig) -> Result<MultiHeadLearner> {
        MultiHeadLearner::with_reservoir(&self.reservoir_cfg, Arc::clone(&self.reservoir), lcfg)
    }

    fn single_head(&self, cfg: &ExperimentConfig) -> LearnerConfig {
        LearnerConfig {
            num_heads: 1,
            num_active: 1,
            drift_detection: false,
            ..cfg.learner_for(self.seeds)
        }
    }
}

fn evaluate_fixed_head(learner: &MultiHeadLearner, env: &EnvironmentDataset, head: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let mses = env.test.iter().map(|seq| learner.evaluate_sequence(seq, head)).collect::<Result<Vec<_>>>()?;
    let heads = vec![head; mses.len()];
    Ok((mses, heads))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn result(cfg: &ExperimentConfig, setting: Setting, run: u64, per_seq: Vec<Vec<f64>>, test_heads: Vec<Vec<usize>>) -> RunResult {
    RunResult {
        system: cfg.kind().expect("validated config has environments"),
        setting,
        seed: run,
        per_env_mse: per_seq.iter().map(|v| mean(v)).collect(),
        per_sequence_mse: per_seq,
        drift_events: Vec::new(),
        head_assignment: Vec::new(),
        test_heads,
    }
}

/// Fresh continual learner for this run.
pub fn continual_learner(ctx: &RunContext, cfg: &ExperimentConfig) -> Result<MultiHeadLearner> {
    ctx.learner(&cfg.learner_for(ctx.seeds))
}

/// Feeds the training stream (environments in order) to `learner`, starting
/// after the `learner.sequences_seen()` sequences it has already consumed and
/// stopping once it has seen `limit` in total (or the stream ends). Returns
/// true when the whole stream has been consumed.
pub fn advance_continual(
    ctx: &RunContext,
    learner: &mut MultiHeadLearner,
    reports: &mut Vec<TrainStepReport>,
    limit: Option<u64>,
) -> Result<bool> {
    let stream: Vec<&Trajectory> = ctx.data.iter().flat_map(|e| e.train.iter()).collect();
    let start = learner.sequences_seen() as usize;
    ensure!(start <= stream.len(), "learner has seen {start} sequences but the stream has {}", stream.len());
    let end = limit.map_or(stream.len(), |l| (l as usize).min(stream.len()));
    for seq in stream.iter().take(end).skip(start) {
        reports.push(learner.train_on_sequence(seq)?);
    }
    Ok(learner.sequences_seen() as usize == stream.len())
}

/// Streams every training sequence through a multi-head learner in
/// environment order. Returns the learner and the per-sequence reports.
pub fn train_continual(ctx: &RunContext, cfg: &ExperimentConfig) -> Result<(MultiHeadLearner, Vec<TrainStepReport>)> {
    let mut learner = continual_learner(ctx, cfg)?;
    let mut reports = Vec::new();
    advance_continual(ctx, &mut learner, &mut reports, None)?;
    Ok((learner, reports))
}

/// Test-time protocol for a trained multi-head learner: choose a head from
/// the cue of each test sequence, then score it on the whole sequence.
pub fn evaluate_continual(learner: &MultiHeadLearner, data: &[EnvironmentDataset]) -> Result<(Vec<Vec<f64>>, Vec<Vec<usize>>)> {
    let prefix = learner.config().test_prefix_len();
    let mut per_seq = Vec::new();
    let mut heads = Vec::new();
    for env in data {
        let mut m = Vec::new();
        let mut h = Vec::new();
        for seq in &env.test {
            let head = learner.select_head_for_test(&seq.slice(0, prefix))?;
            m.push(learner.evaluate_sequence(seq, head)?);
            h.push(head);
        }
        per_seq.push(m);
        heads.push(h);
    }
    Ok((per_seq, heads))
}

pub fn continual_in_context(ctx: &RunContext, cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    let (learner, reports) = train_continual(ctx, cfg)?;
    finish_continual(ctx, cfg, run, &learner, &reports)
}

/// Evaluates a fully trained continual learner. `reports` must cover the
/// whole training stream.
pub fn finish_continual(
    ctx: &RunContext,
    cfg: &ExperimentConfig,
    run: u64,
    learner: &MultiHeadLearner,
    reports: &[TrainStepReport],
) -> Result<RunResult> {
    let total: usize = ctx.data.iter().map(|e| e.train.len()).sum();
    ensure!(reports.len() == total, "{} training reports for a stream of {total} sequences", reports.len());
    let (per_seq, test_heads) = evaluate_continual(&learner, &ctx.data)?;
    let mut res = result(cfg, Setting::Continual, run, per_seq, test_heads);
    res.drift_events = reports.iter().filter(|r| r.drift).map(|r| r.sequence_index).collect();
    let mut offset = 0;
    for env in &ctx.data {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &reports[offset..offset + env.train.len()] {
            for &l in &r.active {
                *counts.entry(l).or_default() += 1;
            }
        }
        offset += env.train.len();
        // Most frequent head; lowest index on ties.
        let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(0, |(l, _)| *l);
        res.head_assignment.push(best);
    }
    Ok(res)
}

pub fn single_task_in_context(ctx: &RunContext, cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    let lcfg = ctx.single_head(cfg);
    let mut per_seq = Vec::new();
    let mut heads = Vec::new();
    for env in &ctx.data {
        ensure!(!env.train.is_empty(), "single-task training needs at least one training sequence");
        let mut learner = ctx.learner(&lcfg)?;
        for seq in &env.train {
            learner.absorb(seq, 0)?;
        }
        learner.solve_pending()?;
        let (m, h) = evaluate_fixed_head(&learner, env, 0)?;
        per_seq.push(m);
        heads.push(h);
    }
    let mut res = result(cfg, Setting::SingleTask, run, per_seq, heads);
    res.head_assignment = vec![0; ctx.data.len()];
    Ok(res)
}

pub fn multi_task_in_context(ctx: &RunContext, cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    let mut learner = ctx.learner(&ctx.single_head(cfg))?;
    for env in &ctx.data {
        for seq in &env.train {
            learner.absorb(seq, 0)?;
        }
    }
    ensure!(learner.sequences_seen() > 0, "multi-task training needs at least one training sequence");
    learner.solve_pending()?;
    finish_single_head(cfg, Setting::MultiTask, run, &learner, &ctx.data)
}

pub fn naive_continual_in_context(ctx: &RunContext, cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    let mut learner = ctx.learner(&ctx.single_head(cfg))?;
    for env in &ctx.data {
        for seq in &env.train {
            learner.train_on_sequence(seq)?;
        }
    }
    finish_single_head(cfg, Setting::NaiveContinual, run, &learner, &ctx.data)
}

fn finish_single_head(
    cfg: &ExperimentConfig,
    setting: Setting,
    run: u64,
    learner: &MultiHeadLearner,
    data: &[EnvironmentDataset],
) -> Result<RunResult> {
    let mut per_seq = Vec::new();
    let mut heads = Vec::new();
    for env in data {
        let (m, h) = evaluate_fixed_head(learner, env, 0)?;
        per_seq.push(m);
        heads.push(h);
    }
    let mut res = result(cfg, setting, run, per_seq, heads);
    res.head_assignment = vec![0; data.len()];
    Ok(res)
}

pub fn run_setting_in_context(ctx: &RunContext, cfg: &ExperimentConfig, setting: Setting, run: u64) -> Result<RunResult> {
    match setting {
        Setting::Continual => continual_in_context(ctx, cfg, run),
        Setting::SingleTask => single_task_in_context(ctx, cfg, run),
        Setting::MultiTask => multi_task_in_context(ctx, cfg, run),
        Setting::NaiveContinual => naive_continual_in_context(ctx, cfg, run),
    }
}

fn run_checked(cfg: &ExperimentConfig, run: u64, setting: Setting) -> Result<RunResult> {
    ensure!(cfg.setting == setting, "config setting is {} but {} was requested", cfg.setting, setting);
    let ctx = RunContext::build(cfg, RunSeeds::for_run(cfg.seed, run))?;
    run_setting_in_context(&ctx, cfg, setting, run)
}

pub fn run_continual(cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    run_checked(cfg, run, Setting::Continual)
}

pub fn run_single_task(cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    run_checked(cfg, run, Setting::SingleTask)
}

pub fn run_multi_task(cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    run_checked(cfg, run, Setting::MultiTask)
}

pub fn run_naive_continual(cfg: &ExperimentConfig, run: u64) -> Result<RunResult> {
    run_checked(cfg, run, Setting::NaiveContinual)
}

/// Runs several settings for runs `first_run..first_run + num_seeds`, sharing
/// each run's data and reservoir across settings. Output is grouped by
/// setting, then ordered by run.
pub fn run_many(
    cfg: &ExperimentConfig,
    settings: &[Setting],
    first_run: u64,
    exec: Execution,
) -> Result<BTreeMap<Setting, Vec<RunResult>>> {
    cfg.validate()?;
    let runs: Vec<u64> = (first_run..first_run + cfg.num_seeds as u64).collect();
    let per_run = exec.try_map(runs, |run| {
        let ctx = RunContext::build(cfg, RunSeeds::for_run(cfg.seed, run))?;
        settings
            .iter()
            .map(|&s| run_setting_in_context(&ctx, cfg, s, run))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out: BTreeMap<Setting, Vec<RunResult>> = BTreeMap::new();
    for results in per_run {
        for r in results {
            out.entry(r.setting).or_default().push(r);
        }
    }
    Ok(out)
}

/// Runs `cfg.setting` for every seed.
pub fn run_experiment(cfg: &ExperimentConfig, first_run: u64, exec: Execution) -> Result<Vec<RunResult>> {
    Ok(run_many(cfg, &[cfg.setting], first_run, exec)?.remove(&cfg.setting).unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub system: SystemKind,
    pub setting: Setting,
    pub num_seeds: usize,
    #[serde(with = "decimal::vec")]
    pub mean_mse: Vec<f64>,
    /// Sample standard deviation over seeds divided by `sqrt(num_seeds)`.
    #[serde(with = "decimal::vec")]
    pub sem_mse: Vec<f64>,
}

/// Mean and standard error of `values` (sample std / sqrt(n); 0 for n = 1).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values);
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub fn aggregate(results: &[RunResult]) -> Result<AggregateResult> {
    ensure!(!results.is_empty(), "cannot aggregate zero results");
    let k = results[0].per_env_mse.len();
    ensure!(
        results.iter().all(|r| r.per_env_mse.len() == k),
        "results disagree on the number of environments"
    );
    let mut mean_mse = Vec::with_capacity(k);
    let mut sem_mse = Vec::with_capacity(k);
    for e in 0..k {
        // Sort so the summation order (and hence the bits) ignore result order.
        let mut column: Vec<f64> = results.iter().map(|r| r.per_env_mse[e]).collect();
        column.sort_by(f64::total_cmp);
        let (m, s) = mean_sem(&column);
        mean_mse.push(m);
        sem_mse.push(s);
    }
    Ok(AggregateResult {
        system: results[0].system,
        setting: results[0].setting,
        num_seeds: results.len(),
        mean_mse,
        sem_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(with = "decimal")]
    pub value: f64,
    #[serde(with = "decimal")]
    pub mean: f64,
    #[serde(with = "decimal")]
    pub sem: f64,
    #[serde(with = "decimal::vec")]
    pub per_seed: Vec<f64>,
    /// Per-environment metric averaged over seeds (lambda sweeps only).
    #[serde(default, with = "decimal::vec")]
    pub per_env: Vec<f64>,
}

fn validation_context(cfg: &ExperimentConfig, run: u64) -> Result<RunContext> {
    RunContext::build(cfg, RunSeeds::validation(cfg.seed, run))
}

/// Per-sequence drift decisions scored against the true environment
/// boundaries: a sequence should be flagged iff it is the first of a new
/// environment (the very first sequence is not).
pub fn detection_accuracy(flags: &[bool], env_of: &[usize]) -> f64 {
    let correct = flags
        .iter()
        .enumerate()
        .filter(|&(i, &f)| f == (i > 0 && env_of[i] != env_of[i - 1]))
        .count();
    correct as f64 / flags.len().max(1) as f64
}

fn summarize(values: &[f64], per_value: Vec<Vec<f64>>) -> Vec<SweepPoint> {
    values
        .iter()
        .zip(per_value)
        .map(|(&value, per_seed)| {
            let (mean, sem) = mean_sem(&per_seed);
            SweepPoint { value, mean, sem, per_seed, per_env: Vec::new() }
        })
        .collect()
}

/// Detection accuracy of continual training on validation streams, per threshold.
pub fn sweep_threshold(cfg: &ExperimentConfig, thetas: &[f64], exec: Execution) -> Result<Vec<SweepPoint>> {
    ensure!(!thetas.is_empty(), "threshold sweep needs at least one value");
    ensure!(thetas.iter().all(|t| *t > 1.0), "thresholds must be > 1");
    cfg.validate()?;
    let runs: Vec<u64> = (0..cfg.num_seeds as u64).collect();
    let per_run: Vec<Vec<f64>> = exec.try_map(runs, |run| {
        let ctx = validation_context(cfg, run)?;
        let env_of: Vec<usize> = ctx.data.iter().enumerate().flat_map(|(k, e)| std::iter::repeat_n(k, e.train.len())).collect();
        thetas
            .iter()
            .map(|&theta| {
                let mut c = cfg.clone();
                c.learner.drift_threshold = theta;
                let (_, reports) = train_continual(&ctx, &c)?;
                let flags: Vec<bool> = reports.iter().map(|r| r.drift).collect();
                Ok(detection_accuracy(&flags, &env_of))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let per_value = (0..thetas.len()).map(|i| per_run.iter().map(|r| r[i]).collect()).collect();
    Ok(summarize(thetas, per_value))
}

/// Single-task validation MSE (mean over environments) per ridge strength.
pub fn sweep_lambda(cfg: &ExperimentConfig, lambdas: &[f64], exec: Execution) -> Result<Vec<SweepPoint>> {
    ensure!(!lambdas.is_empty(), "lambda sweep needs at least one value");
    ensure!(lambdas.iter().all(|l| l.is_finite() && *l > 0.0), "lambda values must be > 0");
    cfg.validate()?;
    let runs: Vec<u64> = (0..cfg.num_seeds as u64).collect();
    // per_run[run][env][lambda]
    let per_run: Vec<Vec<Vec<f64>>> = exec.try_map(runs, |run| {
        let ctx = validation_context(cfg, run)?;
        let probe = ctx.learner(&ctx.single_head(cfg))?;
        ctx.data
            .iter()
            .map(|env| {
                // The statistics do not depend on lambda; only the solve does.
                let mut acc = HeadAccumulator::new(ctx.reservoir_cfg.size, cfg.dim(), 1.0)?;
                for seq in &env.train {
                    let (h, x) = probe.regression_rows(seq)?;
                    acc.accumulate(&h, &x)?;
                }
                let tests = env.test.iter().map(|s| probe.regression_rows(s)).collect::<Result<Vec<_>>>()?;
                lambdas
                    .iter()
                    .map(|&lambda| {
                        let sol = solve_normal_equations(acc.gram(), acc.cross(), lambda)?;
                        let m: Vec<f64> = tests.iter().map(|(h, x)| mse(h, x, &sol)).collect();
                        Ok(mean(&m))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let k = cfg.environments.len();
    let per_value = (0..lambdas.len())
        .map(|i| per_run.iter().map(|r| mean(&r.iter().map(|e| e[i]).collect::<Vec<_>>())).collect())
        .collect();
    let mut points = summarize(lambdas, per_value);
    for (i, p) in points.iter_mut().enumerate() {
        p.per_env = (0..k).map(|e| mean(&per_run.iter().map(|r| r[e][i]).collect::<Vec<_>>())).collect();
    }
    Ok(points)
}
