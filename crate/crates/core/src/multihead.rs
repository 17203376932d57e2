//! Competitive multi-head learner.
//!
//! `L` readout heads share one reservoir. For every incoming sequence all
//! heads are scored by their one-step-ahead MSE. If a previously active head
//! got more than `drift_threshold` times worse than on the last sequence, a
//! new environment is assumed and untouched heads are recruited; otherwise
//! the best heads win. Only the winners are updated, so every other head is
//! left exactly as it was.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::dynsys::Trajectory;
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::federated::HeadAccumulator;
use crate::reservoir::{embed_matrix, init_reservoir, ReservoirConfig, ReservoirWeights};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub num_heads: usize,
    /// Heads updated per training sequence.
    pub num_active: usize,
    /// MSE ratio above which a previously active head signals a new environment.
    #[serde(with = "decimal")]
    pub drift_threshold: f64,
    /// Leading steps of each sequence used only to warm up the hidden state.
    pub cue_len: usize,
    pub test_init_len: usize,
    pub test_select_len: usize,
    #[serde(with = "decimal")]
    pub lambda: f64,
    /// Disable to get a plain single-stream learner (no recruiting).
    pub drift_detection: bool,
    /// Never-active heads cannot be picked at test time.
    pub exclude_never_active_at_test: bool,
    /// Seed of the stream used to pick fresh heads at a detected drift.
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            num_heads: 10,
            num_active: 1,
            drift_threshold: 2.0,
            cue_len: 10,
            test_init_len: 5,
            test_select_len: 5,
            lambda: 1e-6,
            drift_detection: true,
            exclude_never_active_at_test: true,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_heads >= 1, "num_heads must be >= 1");
        ensure!(
            self.num_active >= 1 && self.num_active <= self.num_heads,
            "num_active must lie in 1..={}, got {}",
            self.num_heads,
            self.num_active
        );
        ensure!(
            self.drift_threshold > 1.0,
            "drift_threshold must be > 1, got {}",
            self.drift_threshold
        );
        ensure!(self.cue_len >= 1, "cue_len must be >= 1");
        ensure!(self.test_init_len >= 1, "test_init_len must be >= 1");
        ensure!(self.test_select_len >= 1, "test_select_len must be >= 1");
        ensure!(
            self.lambda.is_finite() && self.lambda > 0.0,
            "lambda must be positive, got {}",
            self.lambda
        );
        Ok(())
    }

    /// Shortest sequence the learner can train on or score.
    pub fn min_sequence_len(&self) -> usize {
        self.cue_len + 2
    }

    pub fn test_prefix_len(&self) -> usize {
        self.test_init_len + self.test_select_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionScores {
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub sequence_index: u64,
    pub drift: bool,
    pub active: Vec<usize>,
    pub mse: Vec<f64>,
}

/// Regression rows of one sequence after the cue: states `h_cue..h_{T-1}`
/// and targets `x_{cue+1}..x_T` (1-based time).
struct Features {
    states: DMatrix<f64>,
    targets: DMatrix<f64>,
}

fn targets(seq: &Trajectory, start: usize, end: usize) -> DMatrix<f64> {
    DMatrix::from_fn(end - start, seq.dim(), |i, j| seq.row(start + i)[j])
}

pub(crate) fn mse(states: &DMatrix<f64>, targets: &DMatrix<f64>, solution: &DMatrix<f64>) -> f64 {
    let pred = states * solution;
    let n = targets.len().max(1) as f64;
    (pred - targets).norm_squared() / n
}

#[derive(Debug, Clone)]
pub struct MultiHeadLearner {
    pub(crate) reservoir_cfg: ReservoirConfig,
    pub(crate) reservoir: Arc<ReservoirWeights>,
    pub(crate) cfg: LearnerConfig,
    pub(crate) dim: usize,
    pub(crate) heads: Vec<HeadAccumulator>,
    pub(crate) mse_last: Vec<Option<f64>>,
    pub(crate) active: BTreeSet<usize>,
    pub(crate) never_active: BTreeSet<usize>,
    pub(crate) prev_active: BTreeSet<usize>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) sequences_seen: u64,
}

impl MultiHeadLearner {
    pub fn new(rcfg: &ReservoirConfig, lcfg: &LearnerConfig, d: usize) -> Result<Self> {
        let reservoir = Arc::new(init_reservoir(rcfg, d)?);
        Self::with_reservoir(rcfg, reservoir, lcfg)
    }

    /// Learner on top of an existing reservoir (built from `rcfg`).
    pub fn with_reservoir(
        rcfg: &ReservoirConfig,
        reservoir: Arc<ReservoirWeights>,
        lcfg: &LearnerConfig,
    ) -> Result<Self> {
        lcfg.validate()?;
        ensure!(
            reservoir.size() == rcfg.size,
            "reservoir has {} neurons but config says {}",
            reservoir.size(),
            rcfg.size
        );
        let d = reservoir.input_dim();
        let heads = (0..lcfg.num_heads)
            .map(|_| HeadAccumulator::new(rcfg.size, d, lcfg.lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reservoir_cfg: rcfg.clone(),
            reservoir,
            cfg: lcfg.clone(),
            dim: d,
            heads,
            mse_last: vec![None; lcfg.num_heads],
            active: BTreeSet::new(),
            never_active: (0..lcfg.num_heads).collect(),
            prev_active: BTreeSet::new(),
            rng: seeds::rng(lcfg.seed),
            sequences_seen: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn reservoir_config(&self) -> &ReservoirConfig {
        &self.reservoir_cfg
    }

    pub fn reservoir(&self) -> &Arc<ReservoirWeights> {
        &self.reservoir
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> &[HeadAccumulator] {
        &self.heads
    }

    pub fn mse_last(&self) -> &[Option<f64>] {
        &self.mse_last
    }

    pub fn active(&self) -> &BTreeSet<usize> {
        &self.active
    }

    pub fn never_active(&self) -> &BTreeSet<usize> {
        &self.never_active
    }

    pub fn prev_active(&self) -> &BTreeSet<usize> {
        &self.prev_active
    }

    pub fn sequences_seen(&self) -> u64 {
        self.sequences_seen
    }

    /// Heads that have been trained at least once.
    pub fn ever_active(&self) -> Vec<usize> {
        (0..self.heads.len()).filter(|l| !self.never_active.contains(l)).collect()
    }

    fn features(&self, seq: &Trajectory) -> Result<Features> {
        let need = self.cfg.min_sequence_len();
        ensure!(seq.len() >= need, "sequence has {} steps, need at least {need}", seq.len());
        ensure!(seq.dim() == self.dim, "sequence dimension {} != learner dimension {}", seq.dim(), self.dim);
        let all = embed_matrix(&self.reservoir, seq)?;
        let t = seq.len();
        let c = self.cfg.cue_len;
        Ok(Features {
            states: all.rows(c - 1, t - c).into_owned(),
            targets: targets(seq, c, t),
        })
    }

    /// Regression rows of `seq`: post-cue states (`n x M`) and next-step
    /// targets (`n x d`).
    pub fn regression_rows(&self, seq: &Trajectory) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let f = self.features(seq)?;
        Ok((f.states, f.targets))
    }

    fn solution(&self, l: usize) -> &DMatrix<f64> {
        self.heads[l]
            .solution()
            .expect("learner keeps every head solved between operations")
    }

    fn score_features(&self, f: &Features) -> PredictionScores {
        let mse = Execution::Parallel.map((0..self.heads.len()).collect(), |l| {
            mse(&f.states, &f.targets, self.solution(l))
        });
        PredictionScores { mse }
    }

    /// One-step-ahead MSE of every head on `seq` (after the cue), averaged
    /// over time steps and dimensions.
    pub fn score_heads(&self, seq: &Trajectory) -> Result<PredictionScores> {
        Ok(self.score_features(&self.features(seq)?))
    }

    pub fn detect_drift(&self, scores: &PredictionScores) -> bool {
        self.prev_active.iter().any(|&l| match self.mse_last[l] {
            None => false,
            Some(last) if last == 0.0 => scores.mse[l] > 0.0,
            Some(last) => scores.mse[l] / last > self.cfg.drift_threshold,
        })
    }

    /// `k` lowest-MSE heads outside `exclude`, ties broken by index.
    fn lowest(scores: &PredictionScores, k: usize, exclude: &BTreeSet<usize>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..scores.mse.len()).filter(|l| !exclude.contains(l)).collect();
        order.sort_by(|&a, &b| scores.mse[a].total_cmp(&scores.mse[b]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }

    pub fn select_active(&mut self, scores: &PredictionScores, drift: bool) -> BTreeSet<usize> {
        let k = self.cfg.num_active;
        if !drift {
            return Self::lowest(scores, k, &BTreeSet::new()).into_iter().collect();
        }
        let pool: Vec<usize> = self.never_active.iter().copied().collect();
        let take = k.min(pool.len());
        let mut chosen: BTreeSet<usize> = rand::seq::index::sample(&mut self.rng, pool.len(), take)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        if chosen.len() < k {
            log::warn!(
                "drift detected but only {} never-active heads remain; reusing lowest-MSE heads (capacity exhausted)",
                pool.len()
            );
            chosen.extend(Self::lowest(scores, k - chosen.len(), &chosen));
        }
        chosen
    }

    /// One step of the competitive training loop.
    pub fn train_on_sequence(&mut self, seq: &Trajectory) -> Result<TrainStepReport> {
        let f = self.features(seq)?;
        let scores = self.score_features(&f);
        let drift = self.cfg.drift_detection && self.detect_drift(&scores);
        let active = self.select_active(&scores, drift);
        for &l in &active {
            self.heads[l].accumulate(&f.states, &f.targets)?;
            self.heads[l].solve()?;
        }
        for (last, m) in self.mse_last.iter_mut().zip(&scores.mse) {
            *last = Some(*m);
        }
        for l in &active {
            self.never_active.remove(l);
        }
        self.prev_active = active.clone();
        self.active = active.clone();
        let report = TrainStepReport {
            sequence_index: self.sequences_seen,
            drift,
            active: active.into_iter().collect(),
            mse: scores.mse,
        };
        self.sequences_seen += 1;
        Ok(report)
    }

    /// Adds a sequence to head `head` without competition or solving.
    /// Call [`MultiHeadLearner::solve_pending`] before scoring again.
    pub fn absorb(&mut self, seq: &Trajectory, head: usize) -> Result<()> {
        ensure!(head < self.heads.len(), "head {head} out of range");
        let f = self.features(seq)?;
        self.heads[head].accumulate(&f.states, &f.targets)?;
        self.never_active.remove(&head);
        self.sequences_seen += 1;
        Ok(())
    }

    pub fn solve_pending(&mut self) -> Result<()> {
        for h in &mut self.heads {
            h.solve()?;
        }
        Ok(())
    }

    /// Picks the head for a test sequence from its first
    /// `test_init_len + test_select_len` steps.
    pub fn select_head_for_test(&self, prefix: &Trajectory) -> Result<usize> {
        let (init, sel) = (self.cfg.test_init_len, self.cfg.test_select_len);
        ensure!(
            prefix.len() == init + sel,
            "test prefix has {} steps, expected {}",
            prefix.len(),
            init + sel
        );
        ensure!(prefix.dim() == self.dim, "prefix dimension {} != {}", prefix.dim(), self.dim);
        let candidates: Vec<usize> = if self.cfg.exclude_never_active_at_test {
            self.ever_active()
        } else {
            (0..self.heads.len()).collect()
        };
        if candidates.is_empty() {
            return Err(Error::Contract("learner has no trained heads to select from".into()));
        }
        let all = embed_matrix(&self.reservoir, prefix)?;
        let states = all.rows(init - 1, sel).into_owned();
        let target = targets(prefix, init, init + sel);
        let mut best = candidates[0];
        let mut best_mse = f64::INFINITY;
        for l in candidates {
            let m = mse(&states, &target, self.solution(l));
            if m < best_mse {
                best = l;
                best_mse = m;
            }
        }
        Ok(best)
    }

    /// Teacher-forced one-step-ahead MSE of `head` on `seq` after the cue.
    pub fn evaluate_sequence(&self, seq: &Trajectory, head: usize) -> Result<f64> {
        ensure!(head < self.heads.len(), "head {head} out of range");
        let f = self.features(seq)?;
        Ok(mse(&f.states, &f.targets, self.solution(head)))
    }

    /// Bytes needed for the heads' `A` and `B` matrices.
    pub fn memory_footprint(&self) -> u64 {
        memory_footprint_bytes(self.heads.len(), self.reservoir_cfg.size, self.dim)
            .expect("learner dimensions are validated at construction")
    }
}

/// `8 * (L*M*M + L*M*d)`: the float64 storage of all heads' statistics.
pub fn memory_footprint_bytes(num_heads: usize, reservoir_size: usize, dim: usize) -> Result<u64> {
    ensure!(num_heads >= 1 && reservoir_size >= 1 && dim >= 1, "footprint needs L, M, d >= 1");
    let (l, m, d) = (num_heads as u64, reservoir_size as u64, dim as u64);
    Ok(8 * (l * m * m + l * m * d))
}
