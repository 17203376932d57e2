//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use mhrc::checkpoint::{load_learner_with_reservoir, save_learner};
use mhrc::dynsys::{integrate, IntegratorConfig, SystemKind, SystemSpec};
use mhrc::exec::Execution;
use mhrc::experiment::{
    continual_learner, run_setting_in_context, sweep_lambda, ExperimentConfig, RunContext, RunResult, Setting,
};
use mhrc::federated::HeadAccumulator;
use mhrc::reservoir::{init_reservoir, ReservoirConfig, SparseMatrix};
use mhrc::seeds::{self, RunSeeds};

const SYSTEMS: [SystemKind; 3] = [SystemKind::VanDerPol, SystemKind::Lorenz63, SystemKind::Lorenz96];
const SEEDS: usize = 10;

/// Published continual multi-head MSE x 10^3, environments 1 to 4.
fn published_continual(kind: SystemKind) -> [f64; 4] {
    match kind {
        SystemKind::VanDerPol => [1.298, 1.765, 3.478, 20.49],
        SystemKind::Lorenz63 => [7.749, 60.26, 3.595, 26.03],
        SystemKind::Lorenz96 => [2.932, 15.94, 197.0, 2473.0],
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct SystemRuns {
    continual: Vec<RunResult>,
    single: Vec<RunResult>,
    multi: Vec<RunResult>,
    /// Wall time of the continual runs, including data and reservoir.
    continual_time: Duration,
}

/// Every system x seed x setting needed by criteria 4 to 6, computed once.
fn protocol_runs() -> BTreeMap<&'static str, SystemRuns> {
    let mut out = BTreeMap::new();
    for kind in SYSTEMS {
        let cfg = ExperimentConfig::standard(kind);
        let mut runs = SystemRuns { continual: vec![], single: vec![], multi: vec![], continual_time: Duration::ZERO };
        for run in 0..SEEDS as u64 {
            let t0 = Instant::now();
            let ctx = RunContext::build(&cfg, RunSeeds::for_run(cfg.seed, run)).expect("run context");
            runs.continual.push(run_setting_in_context(&ctx, &cfg, Setting::Continual, run).expect("continual run"));
            runs.continual_time += t0.elapsed();
            runs.single.push(run_setting_in_context(&ctx, &cfg, Setting::SingleTask, run).expect("single-task run"));
            runs.multi.push(run_setting_in_context(&ctx, &cfg, Setting::MultiTask, run).expect("multi-task run"));
        }
        out.insert(kind.label(), runs);
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// Criterion 1 ---------------------------------------------------------------

/// Ridge solution `(H^T H + lambda I)^-1 H^T X` through the thin SVD of `H`.
fn svd_ridge(h: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let m = h.ncols();
    if h.nrows() == 0 {
        return DMatrix::zeros(m, x.ncols());
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let shrink = DMatrix::from_diagonal(&svd.singular_values.map(|s| s / (s * s + lambda)));
    vt.transpose() * shrink * u.transpose() * x
}

fn criterion_federated() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeds::rng(0xfeed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=50);
        let d = rng.random_range(1..=5);
        let chunks = rng.random_range(1..=8);
        let lambda = 10f64.powf(rng.random_range(-4.0..1.0));
        let mut acc = HeadAccumulator::new(m, d, lambda).unwrap();
        let mut rows_h: Vec<f64> = Vec::new();
        let mut rows_x: Vec<f64> = Vec::new();
        let mut n = 0;
        for _ in 0..chunks {
            let k = rng.random_range(0..=40);
            let h = DMatrix::from_fn(k, m, |_, _| rng.random_range(-1.0..1.0));
            let x = DMatrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0));
            acc.accumulate(&h, &x).unwrap();
            for i in 0..k {
                rows_h.extend(h.row(i).iter());
                rows_x.extend(x.row(i).iter());
            }
            n += k;
        }
        let h = DMatrix::from_row_slice(n, m, &rows_h);
        let x = DMatrix::from_row_slice(n, d, &rows_x);
        let expected = svd_ridge(&h, &x, lambda).transpose();
        let got = acc.solve_head().unwrap();
        let scale = expected.norm();
        let err = (&got - &expected).norm() / if scale > 0.0 { scale } else { 1.0 };
        worst = worst.max(err);
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome::new(worst <= 1e-8 && secs < 10.0, format!("worst relative Frobenius error {worst:.2e} over 100 instances, {secs:.2}s"))
}

// Criterion 2 and the checkpoint half of 8 -----------------------------------

fn criterion_no_forgetting() -> (Outcome, Outcome) {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::standard(SystemKind::VanDerPol);
    let ctx = RunContext::build(&cfg, RunSeeds::for_run(cfg.seed, 0)).unwrap();
    let reservoir_before = ctx.reservoir.to_bytes();
    let mut learner = continual_learner(&ctx, &cfg).unwrap();
    let mut violations = 0;
    let mut checked = 0;
    for seq in ctx.data.iter().flat_map(|e| e.train.iter()) {
        let before: Vec<Vec<u8>> = learner.heads().iter().map(|h| h.state_bytes()).collect();
        let report = learner.train_on_sequence(seq).unwrap();
        for (l, head) in learner.heads().iter().enumerate() {
            if !report.active.contains(&l) {
                checked += 1;
                if head.state_bytes() != before[l] {
                    violations += 1;
                }
            }
        }
    }
    let reservoir_same = learner.reservoir().to_bytes() == reservoir_before;
    let secs = t0.elapsed().as_secs_f64();
    let forgetting = Outcome::new(
        violations == 0 && reservoir_same && secs < 60.0,
        format!("{checked} inactive-head checks, {violations} changed; reservoir unchanged: {reservoir_same}; {secs:.1}s"),
    );

    let dir = tempfile::tempdir().unwrap();
    save_learner(dir.path(), &learner).unwrap();
    let back = load_learner_with_reservoir(dir.path(), &ctx.reservoir_cfg, Arc::clone(&ctx.reservoir)).unwrap();
    let mut compared = 0;
    let mut differing = 0;
    for seq in ctx.data.iter().flat_map(|e| e.test.iter()) {
        let prefix = seq.slice(0, cfg.learner.test_prefix_len());
        if learner.select_head_for_test(&prefix).unwrap() != back.select_head_for_test(&prefix).unwrap() {
            differing += 1;
        }
        for l in learner.ever_active() {
            compared += 1;
            let a = learner.evaluate_sequence(seq, l).unwrap();
            let b = back.evaluate_sequence(seq, l).unwrap();
            if a.to_bits() != b.to_bits() {
                differing += 1;
            }
        }
    }
    let checkpoint = Outcome::new(differing == 0, format!("{compared} evaluations after save/load, {differing} differ in any bit"));
    (forgetting, checkpoint)
}

// Criterion 3 ---------------------------------------------------------------

/// Largest eigenvalue modulus by orthogonal subspace iteration with
/// Rayleigh-Ritz extraction, using only sparse products with `w`.
fn dominant_modulus(w: &SparseMatrix) -> f64 {
    let m = w.size();
    let p = 32.min(m);
    let mut rng = seeds::rng(7);
    let mut q = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let mut z = DMatrix::zeros(m, p);
    let mut out = vec![0.0; m];
    let mut last = f64::NAN;
    let apply = |q: &DMatrix<f64>, z: &mut DMatrix<f64>, out: &mut Vec<f64>| {
        for j in 0..p {
            let col: Vec<f64> = q.column(j).iter().copied().collect();
            w.mul_vec_into(&col, out);
            z.column_mut(j).copy_from_slice(out);
        }
    };
    for it in 1..=20_000 {
        apply(&q, &mut z, &mut out);
        if it % 100 == 0 {
            let ritz = q.transpose() * &z;
            let rho = ritz.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
            if it >= 500 && (rho - last).abs() < 1e-13 {
                return rho;
            }
            last = rho;
        }
        q = z.clone().qr().q();
    }
    last
}

fn criterion_spectral_radius() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let cfg = ReservoirConfig { seed, ..Default::default() };
        let w = init_reservoir(&cfg, 3).unwrap();
        let rho = dominant_modulus(w.recurrent());
        worst = worst.max((rho - 0.6).abs());
    }
    Outcome::new(
        worst <= 1e-6,
        format!("20 default reservoirs, max |rho - 0.6| = {worst:.2e} (subspace-iteration estimate), {:.0}s", t0.elapsed().as_secs_f64()),
    )
}

// Criteria 4 to 6 ------------------------------------------------------------

fn criterion_drift(runs: &BTreeMap<&'static str, SystemRuns>) -> Outcome {
    let expected = vec![7u64, 14, 21];
    let mut parts = Vec::new();
    let mut pass = true;
    let mut total = Duration::ZERO;
    for (label, r) in runs {
        let exact = r.continual.iter().filter(|c| c.drift_events == expected).count();
        let false_pos: usize = r.continual.iter().map(|c| c.drift_events.iter().filter(|e| !expected.contains(e)).count()).sum();
        let missed: usize = r.continual.iter().map(|c| expected.iter().filter(|e| !c.drift_events.contains(e)).count()).sum();
        pass &= exact == r.continual.len();
        total += r.continual_time;
        parts.push(format!("{label}: {exact}/{} exact, {false_pos} false positives, {missed} missed", r.continual.len()));
    }
    pass &= total < Duration::from_secs(300);
    Outcome::new(pass, format!("{}; continual runtime {:.0}s", parts.join("; "), total.as_secs_f64()))
}

fn criterion_table1(runs: &BTreeMap<&'static str, SystemRuns>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in SYSTEMS {
        let r = &runs[kind.label()];
        let reference = published_continual(kind);
        let ours: Vec<f64> = (0..4).map(|e| 1e3 * mean(&r.continual.iter().map(|c| c.per_env_mse[e]).collect::<Vec<_>>())).collect();
        let ratios: Vec<String> = ours
            .iter()
            .zip(reference)
            .map(|(o, p)| {
                let ratio = o / p;
                pass &= (0.1..=10.0).contains(&ratio);
                format!("{o:.3e}/{p} = {ratio:.2e}")
            })
            .collect();
        let secs = r.continual_time.as_secs_f64();
        pass &= secs < 180.0;
        parts.push(format!("{} [{}] ({secs:.0}s)", kind.label(), ratios.join(", ")));
    }
    Outcome::new(pass, format!("ours/reference x10^3: {}", parts.join("; ")))
}

fn criterion_ordering(runs: &BTreeMap<&'static str, SystemRuns>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in SYSTEMS {
        let r = &runs[kind.label()];
        let meds: Vec<f64> = (0..3)
            .map(|e| median(r.continual.iter().zip(&r.single).map(|(c, s)| c.per_env_mse[e] / s.per_env_mse[e]).collect()))
            .collect();
        pass &= meds.iter().all(|&m| m <= 3.0);
        parts.push(format!("{} continual/single median env1-3 = {:.2e}, {:.2e}, {:.2e}", kind.label(), meds[0], meds[1], meds[2]));
    }
    let r = &runs[SystemKind::Lorenz96.label()];
    let gap = median(r.multi.iter().zip(&r.continual).map(|(m, c)| m.per_env_mse[0] / c.per_env_mse[0]).collect());
    pass &= gap >= 10.0;
    parts.push(format!("L96 env1 multi/continual median = {gap:.2}"));
    Outcome::new(pass, parts.join("; "))
}

// Criterion 7 ---------------------------------------------------------------

fn criterion_lambda_sweep() -> Outcome {
    let grid = [1e-6, 1e-3, 1.0, 5.0, 100.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in SYSTEMS {
        let mut cfg = ExperimentConfig::standard(kind);
        cfg.num_seeds = SEEDS;
        let points = sweep_lambda(&cfg, &grid, Execution::Parallel).unwrap();
        let best = points.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap().value;
        let want = if kind == SystemKind::Lorenz96 { 5.0 } else { 1e-6 };
        pass &= best == want;
        let curve: Vec<String> = points.iter().map(|p| format!("{}:{:.3e}", p.value, p.mean)).collect();
        // Diagnostic only: where each environment alone would put the minimum.
        let per_env: Vec<String> = (0..points[0].per_env.len())
            .map(|e| {
                let b = points.iter().min_by(|x, y| x.per_env[e].total_cmp(&y.per_env[e])).unwrap();
                format!("{}", b.value)
            })
            .collect();
        parts.push(format!(
            "{} argmin {best} (want {want}) [{}] per-env argmin [{}]",
            kind.label(),
            curve.join(" "),
            per_env.join(", ")
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

// Criterion 8 ---------------------------------------------------------------

fn criterion_integrator(checkpoint: Outcome) -> Outcome {
    let cfg = IntegratorConfig { transient_steps: 0, steps_per_sequence: 200, ..Default::default() };
    let l96 = SystemSpec::Lorenz96 { forcing: 10.0, dim: 40 };
    let traj = integrate(&l96, &[10.0; 40], &cfg).unwrap();
    let mut step_drift = 0.0f64;
    for t in 1..traj.len() {
        for (a, b) in traj.row(t).iter().zip(traj.row(t - 1)) {
            step_drift = step_drift.max((a - b).abs());
        }
    }
    let vdp = SystemSpec::VanDerPol { mu: 0.0 };
    let traj = integrate(&vdp, &[1.0, 0.0], &cfg).unwrap();
    let energy = traj.rows().map(|r| (r[0] * r[0] + r[1] * r[1] - 1.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        step_drift <= 1e-10 && energy <= 1e-4 && checkpoint.pass,
        format!("L96 fixed point max per-step change {step_drift:.1e}; VdP mu=0 energy drift {energy:.1e}; {}", checkpoint.detail),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let titles = [
        "federated-batch equivalence",
        "no-forgetting bit stability",
        "spectral radius contract",
        "drift detection",
        "reference continual MSE within 10x",
        "stability-plasticity ordering",
        "lambda sweep minimum",
        "integrator sanity and checkpoint round trip",
    ];
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut record = |n: u32, o: Outcome| {
        println!("criterion {n} {}: {} ({})", titles[n as usize - 1], if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    if on(1) {
        record(1, criterion_federated());
    }
    if on(2) || on(8) {
        let (forgetting, checkpoint) = criterion_no_forgetting();
        if on(2) {
            record(2, forgetting);
        }
        if on(8) {
            record(8, criterion_integrator(checkpoint));
        }
    }
    if on(3) {
        record(3, criterion_spectral_radius());
    }
    if on(4) || on(5) || on(6) {
        let runs = protocol_runs();
        if on(4) {
            record(4, criterion_drift(&runs));
        }
        if on(5) {
            record(5, criterion_table1(&runs));
        }
        if on(6) {
            record(6, criterion_ordering(&runs));
        }
    }
    if on(7) {
        record(7, criterion_lambda_sweep());
    }
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
