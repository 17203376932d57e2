//! Rendering of aggregated results. MSE is stored raw and only scaled by
//! 10^3 here.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::experiment::{AggregateResult, RunResult, SweepPoint};

pub const MSE_SCALE: f64 = 1e3;

/// `x` with four significant digits; scientific notation below 1e-3.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if mag < -3 {
        return format!("{x:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn cell(mean: f64, sem: f64) -> String {
    format!("{} ({})", sig4(mean * MSE_SCALE), sig4(sem * MSE_SCALE))
}

fn env_count(rows: &[AggregateResult]) -> usize {
    rows.iter().map(|r| r.mean_mse.len()).max().unwrap_or(0)
}

/// Markdown table: one row per (system, setting), cells `mean (sem)` in units of 10^-3.
pub fn markdown_table(rows: &[AggregateResult]) -> String {
    let k = env_count(rows);
    let mut out = String::from("| System | Setting | Seeds |");
    for e in 1..=k {
        let _ = write!(out, " Env {e} |");
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(k));
    out.push('\n');
    for r in rows {
        let _ = write!(out, "| {} | {} | {} |", r.system.label(), r.setting, r.num_seeds);
        for e in 0..k {
            match (r.mean_mse.get(e), r.sem_mse.get(e)) {
                (Some(&m), Some(&s)) => {
                    let _ = write!(out, " {} |", cell(m, s));
                }
                _ => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\nOne-step-ahead test MSE x 10^3, standard error of the mean in parentheses.\n");
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv encoding failed: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Wide CSV mirroring the Markdown table (scaled, four significant digits).
pub fn csv_table(rows: &[AggregateResult]) -> Result<String> {
    let k = env_count(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["system".to_string(), "setting".to_string(), "seeds".to_string()];
    for e in 1..=k {
        header.push(format!("env{e}_mean_x1e3"));
        header.push(format!("env{e}_sem_x1e3"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.system.label().to_string(), r.setting.to_string(), r.num_seeds.to_string()];
        for e in 0..k {
            rec.push(r.mean_mse.get(e).map_or(String::new(), |m| sig4(m * MSE_SCALE)));
            rec.push(r.sem_mse.get(e).map_or(String::new(), |s| sig4(s * MSE_SCALE)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// Long-format CSV with one raw (unscaled, round-trip precision) MSE per
/// system, setting, seed and environment.
pub fn long_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["system", "setting", "seed", "env", "mse"]).map_err(csv_err)?;
    for r in results {
        for (e, m) in r.per_env_mse.iter().enumerate() {
            w.write_record([
                r.system.label().to_string(),
                r.setting.to_string(),
                r.seed.to_string(),
                (e + 1).to_string(),
                crate::decimal::to_string(*m),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// CSV of a sweep: parameter value, mean, sem, per-environment means (if
/// any) and the per-seed values.
pub fn sweep_csv(parameter: &str, points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let seeds = points.iter().map(|p| p.per_seed.len()).max().unwrap_or(0);
    let envs = points.iter().map(|p| p.per_env.len()).max().unwrap_or(0);
    let mut header = vec![parameter.to_string(), "mean".into(), "sem".into()];
    header.extend((1..=envs).map(|e| format!("env{e}")));
    header.extend((0..seeds).map(|i| format!("seed{i}")));
    w.write_record(&header).map_err(csv_err)?;
    let text = |v: Option<&f64>| v.map_or(String::new(), |v| crate::decimal::to_string(*v));
    for p in points {
        let mut rec = vec![crate::decimal::to_string(p.value), crate::decimal::to_string(p.mean), crate::decimal::to_string(p.sem)];
        rec.extend((0..envs).map(|e| text(p.per_env.get(e))));
        rec.extend((0..seeds).map(|i| text(p.per_seed.get(i))));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}
