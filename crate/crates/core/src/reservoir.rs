//! Fixed-weight echo-state reservoir.
//!
//! The recurrent matrix is sparse and random, rescaled to a target spectral
//! radius; the input matrix is dense uniform. Neither is ever trained. The
//! hidden state follows `h_t = tanh(W_h h_{t-1} + W_i x_t)` from `h_0 = 0`
//! and a linear readout `W_o` maps `h_t` to the prediction of `x_{t+1}`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::dynsys::Trajectory;
use crate::error::{ensure, Error, Result};
use crate::seeds;

const MAX_INIT_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    pub size: usize,
    #[serde(with = "decimal")]
    pub spectral_radius: f64,
    /// Probability that an entry of the recurrent matrix is nonzero.
    #[serde(with = "decimal")]
    pub sparsity: f64,
    /// Half-width of the uniform distribution of input weights.
    #[serde(with = "decimal")]
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            size: 1000,
            spectral_radius: 0.6,
            sparsity: 0.01,
            input_scale: 1.0,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.size >= 1, "reservoir size must be >= 1");
        ensure!(
            self.spectral_radius.is_finite() && self.spectral_radius > 0.0,
            "spectral_radius must be positive, got {}",
            self.spectral_radius
        );
        ensure!(
            self.sparsity > 0.0 && self.sparsity <= 1.0,
            "sparsity must lie in (0, 1], got {}",
            self.sparsity
        );
        ensure!(
            self.input_scale.is_finite() && self.input_scale >= 0.0,
            "input_scale must be non-negative, got {}",
            self.input_scale
        );
        Ok(())
    }
}

/// Square matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Raw little-endian bytes of the structure and values, for
    /// byte-identity checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.row_ptr {
            out.extend_from_slice(&(*p as u64).to_le_bytes());
        }
        for c in &self.col_idx {
            out.extend_from_slice(&(*c as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Largest eigenvalue modulus of a square matrix, from its real Schur form
/// (eigenvalues only, no Schur vectors).
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    ensure!(m.is_square(), "spectral radius needs a square matrix");
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("spectral radius of a non-finite matrix".into()));
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirWeights {
    recurrent: SparseMatrix,
    /// Dense `M x d` input matrix.
    input: DMatrix<f64>,
}

impl ReservoirWeights {
    /// Builds a reservoir from explicit matrices. No rescaling is applied.
    pub fn from_parts(recurrent: &DMatrix<f64>, input: DMatrix<f64>) -> Result<Self> {
        ensure!(recurrent.is_square(), "recurrent matrix must be square");
        ensure!(
            input.nrows() == recurrent.nrows() && input.ncols() >= 1,
            "input matrix must be M x d with d >= 1"
        );
        Ok(Self {
            recurrent: SparseMatrix::from_dense(recurrent),
            input,
        })
    }

    pub fn size(&self) -> usize {
        self.recurrent.size()
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn recurrent(&self) -> &SparseMatrix {
        &self.recurrent
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn measured_spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.recurrent.to_dense())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.recurrent.to_bytes();
        for v in self.input.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Draws a reservoir for `d`-dimensional inputs.
///
/// Recurrent entries are nonzero with probability `sparsity` and uniform on
/// `[-1, 1]`; the matrix is then scaled to the configured spectral radius.
/// A draw with zero spectral radius is retried (up to 10 attempts).
pub fn init_reservoir(cfg: &ReservoirConfig, d: usize) -> Result<ReservoirWeights> {
    cfg.validate()?;
    ensure!(d >= 1, "input dimension must be >= 1");
    let m = cfg.size;
    let mut rng = seeds::rng(cfg.seed);

    for attempt in 0..MAX_INIT_ATTEMPTS {
        let mut dense = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if rng.random::<f64>() < cfg.sparsity {
                    dense[(i, j)] = rng.random_range(-1.0..=1.0);
                }
            }
        }
        let radius = spectral_radius(&dense)?;
        if !(radius > 0.0) || !radius.is_finite() {
            log::debug!("reservoir draw {attempt} has spectral radius {radius}; redrawing");
            continue;
        }
        let mut recurrent = SparseMatrix::from_dense(&dense);
        recurrent.scale(cfg.spectral_radius / radius);
        let s = cfg.input_scale;
        let input = DMatrix::from_fn(m, d, |_, _| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 });
        return Ok(ReservoirWeights { recurrent, input });
    }
    Err(Error::Numerical(format!(
        "no reservoir with nonzero spectral radius after {MAX_INIT_ATTEMPTS} draws (size {m}, sparsity {})",
        cfg.sparsity
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

impl HiddenState {
    pub fn zeros(m: usize) -> Self {
        HiddenState(vec![0.0; m])
    }
}

/// Writes `tanh(W_h h + W_i x)` into `out`.
fn step_into(w: &ReservoirWeights, h: &[f64], x: &[f64], out: &mut [f64]) {
    w.recurrent.mul_vec_into(h, out);
    for (j, xj) in x.iter().enumerate() {
        if *xj != 0.0 {
            for (o, wij) in out.iter_mut().zip(w.input.column(j).iter()) {
                *o += wij * xj;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn step(w: &ReservoirWeights, h: &HiddenState, x: &[f64]) -> Result<HiddenState> {
    ensure!(h.0.len() == w.size(), "hidden state has length {}, reservoir has {}", h.0.len(), w.size());
    ensure!(x.len() == w.input_dim(), "input has length {}, reservoir expects {}", x.len(), w.input_dim());
    let mut out = vec![0.0; w.size()];
    step_into(w, &h.0, x, &mut out);
    Ok(HiddenState(out))
}

/// States `h_1..h_T` from iterating [`step`] over the sequence starting at `h0`.
pub fn embed(w: &ReservoirWeights, seq: &Trajectory, h0: &HiddenState) -> Result<Vec<HiddenState>> {
    ensure!(seq.dim() == w.input_dim() || seq.is_empty(), "sequence dimension {} != reservoir input {}", seq.dim(), w.input_dim());
    ensure!(h0.0.len() == w.size(), "h0 has length {}, reservoir has {}", h0.0.len(), w.size());
    let mut states = Vec::with_capacity(seq.len());
    let mut h = h0.0.clone();
    let mut next = vec![0.0; w.size()];
    for x in seq.rows() {
        step_into(w, &h, x, &mut next);
        std::mem::swap(&mut h, &mut next);
        states.push(HiddenState(h.clone()));
    }
    Ok(states)
}

/// Same as [`embed`] from `h_0 = 0`, packed as a `T x M` matrix whose row `t`
/// is the state after ingesting `x_{t+1}` (0-based row `t` of the sequence).
pub fn embed_matrix(w: &ReservoirWeights, seq: &Trajectory) -> Result<DMatrix<f64>> {
    ensure!(seq.dim() == w.input_dim() || seq.is_empty(), "sequence dimension {} != reservoir input {}", seq.dim(), w.input_dim());
    let m = w.size();
    let mut states = DMatrix::zeros(seq.len(), m);
    let mut h = vec![0.0; m];
    let mut next = vec![0.0; m];
    for (t, x) in seq.rows().enumerate() {
        step_into(w, &h, x, &mut next);
        std::mem::swap(&mut h, &mut next);
        for (i, v) in h.iter().enumerate() {
            states[(t, i)] = *v;
        }
    }
    Ok(states)
}

/// Solves `(A + lambda I) R = B` for symmetric positive semi-definite `A`.
///
/// Uses a Cholesky factorization and falls back to full-pivot LU when it
/// fails. Returns `R` (`M x d`), i.e. the transposed readout.
pub fn solve_normal_equations(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    ensure!(a.is_square() && a.nrows() == b.nrows(), "normal equations have mismatched shapes");
    let mut sys = a.clone();
    for i in 0..sys.nrows() {
        sys[(i, i)] += lambda;
    }
    let solution = match sys.clone().cholesky() {
        Some(chol) => Some(chol.solve(b)),
        None => {
            log::debug!("Cholesky failed (lambda = {lambda}); retrying with pivoted LU");
            sys.full_piv_lu().solve(b)
        }
    };
    match solution {
        Some(r) if r.iter().all(|v| v.is_finite()) => Ok(r),
        _ => Err(Error::Singular { lambda }),
    }
}

/// Batch ridge regression: the readout `W_o` (`d x M`) minimizing
/// `|H W_o^T - X|^2 + lambda |W_o|^2`.
pub fn ridge_solve(h: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    ensure!(h.nrows() >= 1, "ridge regression needs at least one row");
    ensure!(h.nrows() == x.nrows(), "H has {} rows but X has {}", h.nrows(), x.nrows());
    ensure!(lambda.is_finite() && lambda >= 0.0, "lambda must be >= 0, got {lambda}");
    ensure!(
        lambda > 0.0 || h.nrows() >= h.ncols(),
        "lambda = 0 with fewer rows ({}) than features ({}) is always singular",
        h.nrows(),
        h.ncols()
    );
    let a = h.tr_mul(h);
    let b = h.tr_mul(x);
    Ok(solve_normal_equations(&a, &b, lambda)?.transpose())
}
