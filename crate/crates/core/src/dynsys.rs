//! Dynamical systems, fixed-step RK4 integration and the standardized
//! multi-environment datasets the learner is trained on.
//!
//! Three families are supported: the Van-der-Pol oscillator (reduced to
//! first order as `(x, dx/dt)`), Lorenz-63 and Lorenz-96 with cyclic
//! neighbor indexing. An environment is one parameterization of a family.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    VanDerPol,
    Lorenz63,
    Lorenz96,
}

impl SystemKind {
    pub fn label(self) -> &'static str {
        match self {
            SystemKind::VanDerPol => "VdP",
            SystemKind::Lorenz63 => "L63",
            SystemKind::Lorenz96 => "L96",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vdp" | "van_der_pol" | "vanderpol" => Ok(SystemKind::VanDerPol),
            "l63" | "lorenz63" | "lorenz_63" => Ok(SystemKind::Lorenz63),
            "l96" | "lorenz96" | "lorenz_96" => Ok(SystemKind::Lorenz96),
            other => Err(Error::Config(format!("unknown system kind {other:?}"))),
        }
    }
}

/// One environment: a system family with concrete parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    VanDerPol {
        #[serde(with = "decimal")]
        mu: f64,
    },
    Lorenz63 {
        #[serde(with = "decimal")]
        rho: f64,
        #[serde(with = "decimal")]
        sigma: f64,
        #[serde(with = "decimal")]
        beta: f64,
    },
    Lorenz96 {
        #[serde(with = "decimal")]
        forcing: f64,
        dim: usize,
    },
}

/// Default Lorenz-96 dimension.
pub const DEFAULT_L96_DIM: usize = 40;

impl SystemSpec {
    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::VanDerPol { .. } => SystemKind::VanDerPol,
            SystemSpec::Lorenz63 { .. } => SystemKind::Lorenz63,
            SystemSpec::Lorenz96 { .. } => SystemKind::Lorenz96,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::VanDerPol { .. } => 2,
            SystemSpec::Lorenz63 { .. } => 3,
            SystemSpec::Lorenz96 { dim, .. } => *dim,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            SystemSpec::VanDerPol { mu } => vec![mu],
            SystemSpec::Lorenz63 { rho, sigma, beta } => vec![rho, sigma, beta],
            SystemSpec::Lorenz96 { forcing, .. } => vec![forcing],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.params().iter().all(|p| p.is_finite()),
            "system parameters must be finite: {self:?}"
        );
        if let SystemSpec::Lorenz96 { dim, .. } = self {
            ensure!(*dim >= 4, "Lorenz-96 dimension must be >= 4, got {dim}");
        }
        Ok(())
    }

    /// Per-dimension range of the uniform initial-state distribution.
    pub fn initial_range(&self) -> (f64, f64) {
        match *self {
            SystemSpec::Lorenz96 { forcing, .. } => (forcing - 1.0, forcing + 1.0),
            _ => (-1.0, 1.0),
        }
    }

    /// Writes `d state / dt` into `out`. Both slices must have length `dim()`.
    pub fn derivative_into(&self, state: &[f64], out: &mut [f64]) {
        match *self {
            SystemSpec::VanDerPol { mu } => {
                let (x, v) = (state[0], state[1]);
                out[0] = v;
                out[1] = mu * (1.0 - x * x) * v - x;
            }
            SystemSpec::Lorenz63 { rho, sigma, beta } => {
                let (x, y, z) = (state[0], state[1], state[2]);
                out[0] = sigma * (y - x);
                out[1] = x * (rho - z) - y;
                out[2] = x * y - beta * z;
            }
            SystemSpec::Lorenz96 { forcing, dim } => {
                for i in 0..dim {
                    let next = state[(i + 1) % dim];
                    let prev = state[(i + dim - 1) % dim];
                    let prev2 = state[(i + dim - 2) % dim];
                    out[i] = (next - prev2) * prev - state[i] + forcing;
                }
            }
        }
    }

    pub fn derivative(&self, state: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            state.len() == self.dim(),
            "state has length {} but {:?} has dimension {}",
            state.len(),
            self.kind(),
            self.dim()
        );
        let mut out = vec![0.0; state.len()];
        self.derivative_into(state, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    #[serde(with = "decimal")]
    pub dt_out: f64,
    pub substeps: usize,
    pub transient_steps: usize,
    pub steps_per_sequence: usize,
    pub sequences_per_env: usize,
    /// Leading sequences of each environment that go to the training split.
    pub train_sequences: usize,
    pub rng_seed: u64,
    /// Standardize every environment on its own instead of pooling all of them.
    pub per_environment_standardization: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt_out: 0.05,
            substeps: 10,
            transient_steps: 100,
            steps_per_sequence: 200,
            sequences_per_env: 10,
            train_sequences: 7,
            rng_seed: 0,
            per_environment_standardization: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.dt_out.is_finite() && self.dt_out > 0.0,
            "dt_out must be positive, got {}",
            self.dt_out
        );
        ensure!(self.substeps >= 1, "substeps must be >= 1");
        ensure!(self.steps_per_sequence >= 1, "steps_per_sequence must be >= 1");
        ensure!(
            self.train_sequences <= self.sequences_per_env,
            "train_sequences ({}) exceeds sequences_per_env ({})",
            self.train_sequences,
            self.sequences_per_env
        );
        Ok(())
    }
}

/// A sampled time series, stored row-major: row `t` is the state `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: usize,
    dim: usize,
    values: Vec<f64>,
    /// Environment label. Bookkeeping only; the learner never reads it.
    pub env_id: usize,
}

impl Trajectory {
    pub fn from_rows(steps: usize, dim: usize, values: Vec<f64>, env_id: usize) -> Result<Self> {
        ensure!(
            values.len() == steps * dim,
            "trajectory buffer has {} values, expected {steps} x {dim}",
            values.len()
        );
        Ok(Self {
            steps,
            dim,
            values,
            env_id,
        })
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.steps)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows `start..end` as a new trajectory with the same label.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        assert!(start <= end && end <= self.steps);
        Trajectory {
            steps: end - start,
            dim: self.dim,
            values: self.values[start * self.dim..end * self.dim].to_vec(),
            env_id: self.env_id,
        }
    }
}

fn rk4_step(spec: &SystemSpec, x: &mut [f64], h: f64, buf: &mut Rk4Buffers) {
    let Rk4Buffers { k1, k2, k3, k4, tmp } = buf;
    let n = x.len();
    spec.derivative_into(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    spec.derivative_into(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    spec.derivative_into(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    spec.derivative_into(tmp, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Rk4Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Integrates `spec` from `x0` with classical RK4.
///
/// Produces `transient_steps + steps_per_sequence` samples spaced `dt_out`
/// apart (the first sample is `x0`), then drops the transient.
pub fn integrate(spec: &SystemSpec, x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory> {
    spec.validate()?;
    cfg.validate()?;
    let d = spec.dim();
    ensure!(x0.len() == d, "x0 has length {} but system dimension is {d}", x0.len());

    let h = cfg.dt_out / cfg.substeps as f64;
    let total = cfg.transient_steps + cfg.steps_per_sequence;
    let mut x = x0.to_vec();
    let mut buf = Rk4Buffers::new(d);
    let mut values = Vec::with_capacity(cfg.steps_per_sequence * d);
    for step in 0..total {
        if step > 0 {
            for _ in 0..cfg.substeps {
                rk4_step(spec, &mut x, h, &mut buf);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if step >= cfg.transient_steps {
            values.extend_from_slice(&x);
        }
    }
    Trajectory::from_rows(cfg.steps_per_sequence, d, values, 0)
}

/// `sequences_per_env` trajectories from independent uniform initial states,
/// drawn from a stream seeded with `cfg.rng_seed`.
pub fn generate_environment(spec: &SystemSpec, cfg: &IntegratorConfig) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.rng_seed);
    let (lo, hi) = spec.initial_range();
    (0..cfg.sequences_per_env)
        .map(|_| {
            let x0: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(lo..=hi)).collect();
            integrate(spec, &x0, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    #[serde(with = "decimal::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "decimal::vec")]
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Pooled per-dimension mean and population standard deviation over
    /// every row of every trajectory.
    pub fn fit<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory> + Clone) -> Result<Self> {
        let mut iter = trajectories.clone().into_iter().peekable();
        let d = match iter.peek() {
            Some(t) => t.dim(),
            None => return Err(Error::Contract("cannot standardize an empty dataset".into())),
        };
        let mut count = 0usize;
        let mut sum = vec![0.0; d];
        for t in iter {
            ensure!(t.dim() == d, "mixed trajectory dimensions {} and {d}", t.dim());
            for row in t.rows() {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
        }
        ensure!(count > 0, "cannot standardize trajectories with no samples");
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for t in trajectories {
            for row in t.rows() {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        if let Some(dim) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateData { dim });
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, t: &Trajectory) -> Trajectory {
        let mut out = t.clone();
        let d = t.dim();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        out
    }

    pub fn invert(&self, t: &Trajectory) -> Trajectory {
        let mut out = t.clone();
        let d = t.dim();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = *v * self.std[i % d] + self.mean[i % d];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentDataset {
    pub spec: SystemSpec,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub standardization: StandardizationStats,
}

/// Seed of environment `k` derived from the dataset seed.
pub fn environment_seed(dataset_seed: u64, k: usize) -> u64 {
    seeds::derive(dataset_seed, seeds::stream::ENVIRONMENT, k as u64)
}

/// Generates all environments, standardizes them (jointly unless
/// `per_environment_standardization` is set) and splits train/test.
pub fn build_continual_dataset(
    specs: &[SystemSpec],
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<Vec<EnvironmentDataset>> {
    ensure!(!specs.is_empty(), "at least one environment is required");
    let kind = specs[0].kind();
    let dim = specs[0].dim();
    for s in specs {
        ensure!(
            s.kind() == kind && s.dim() == dim,
            "all environments must share one system kind and dimension"
        );
        s.validate()?;
    }
    cfg.validate()?;

    let jobs: Vec<(usize, SystemSpec)> = specs.iter().cloned().enumerate().collect();
    let raw: Vec<Vec<Trajectory>> = exec.try_map(jobs, |(k, spec)| {
        let env_cfg = IntegratorConfig {
            rng_seed: environment_seed(cfg.rng_seed, k),
            ..cfg.clone()
        };
        let mut trajs = generate_environment(&spec, &env_cfg)?;
        for t in &mut trajs {
            t.env_id = k;
        }
        Ok::<_, Error>(trajs)
    })?;

    let pooled = if cfg.per_environment_standardization {
        None
    } else {
        Some(StandardizationStats::fit(raw.iter().flatten())?)
    };

    raw.into_iter()
        .zip(specs)
        .map(|(trajs, spec)| {
            let stats = match &pooled {
                Some(s) => s.clone(),
                None => StandardizationStats::fit(trajs.iter())?,
            };
            let mut standardized: Vec<Trajectory> = trajs.iter().map(|t| stats.apply(t)).collect();
            let test = standardized.split_off(cfg.train_sequences);
            Ok(EnvironmentDataset {
                spec: spec.clone(),
                train: standardized,
                test,
                standardization: stats,
            })
        })
        .collect()
}
