//! Incremental ridge regression through additive sufficient statistics.
//!
//! A head keeps `A = sum H^T H` and `B = sum H^T X` over everything it has
//! been trained on. Both are additive across chunks, so a head can be updated
//! one sequence at a time (or merged with another head) and still solve to
//! the batch ridge solution. No raw data is retained.

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::reservoir::solve_normal_equations;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    /// `(A + lambda I)^-1 B`, i.e. the readout transposed (`M x d`).
    solution: DMatrix<f64>,
    solution_valid: bool,
    update_count: u64,
    lambda: f64,
}

impl HeadAccumulator {
    pub fn new(m: usize, d: usize, lambda: f64) -> Result<Self> {
        ensure!(m >= 1 && d >= 1, "accumulator needs M >= 1 and d >= 1, got {m} x {d}");
        ensure!(lambda.is_finite() && lambda > 0.0, "lambda must be positive, got {lambda}");
        Ok(Self {
            gram: DMatrix::zeros(m, m),
            cross: DMatrix::zeros(m, d),
            solution: DMatrix::zeros(m, d),
            solution_valid: true,
            update_count: 0,
            lambda,
        })
    }

    /// Rebuilds an accumulator from stored statistics and solves it.
    pub fn from_statistics(gram: DMatrix<f64>, cross: DMatrix<f64>, lambda: f64, update_count: u64) -> Result<Self> {
        let mut acc = Self::new(gram.nrows(), cross.ncols(), lambda)?;
        ensure!(
            gram.is_square() && cross.nrows() == gram.nrows(),
            "statistics have mismatched shapes"
        );
        acc.gram = gram;
        acc.cross = cross;
        acc.update_count = update_count;
        acc.solution_valid = update_count == 0;
        if update_count > 0 {
            acc.solve()?;
        }
        Ok(acc)
    }

    pub fn reservoir_size(&self) -> usize {
        self.gram.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.cross.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Adds `H^T H` and `H^T X` for a chunk of states `H` (`n x M`) and
    /// targets `X` (`n x d`). The cached readout is stale until the next solve.
    pub fn accumulate<S1, S2>(
        &mut self,
        h: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, S1>,
        x: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, S2>,
    ) -> Result<()>
    where
        S1: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
        S2: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
    {
        ensure!(
            h.ncols() == self.reservoir_size() && x.ncols() == self.output_dim() && h.nrows() == x.nrows(),
            "chunk shapes {:?} / {:?} do not match accumulator {} x {}",
            h.shape(),
            x.shape(),
            self.reservoir_size(),
            self.output_dim()
        );
        if h.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite values passed to accumulate".into()));
        }
        if h.nrows() > 0 {
            self.gram.gemm_tr(1.0, h, h, 1.0);
            self.cross.gemm_tr(1.0, h, x, 1.0);
            self.solution_valid = false;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Solves `(A + lambda I)^-1 B`, caches it and returns the readout `W_o` (`d x M`).
    pub fn solve_head(&mut self) -> Result<DMatrix<f64>> {
        self.solve()?;
        Ok(self.solution.transpose())
    }

    pub(crate) fn solve(&mut self) -> Result<()> {
        if !self.solution_valid {
            self.solution = solve_normal_equations(&self.gram, &self.cross, self.lambda)?;
            self.solution_valid = true;
        }
        Ok(())
    }

    pub fn is_solved(&self) -> bool {
        self.solution_valid
    }

    /// Cached transposed readout (`M x d`), if current.
    pub fn solution(&self) -> Option<&DMatrix<f64>> {
        self.solution_valid.then_some(&self.solution)
    }

    /// Combines two accumulators trained on disjoint data.
    pub fn merge(&self, other: &HeadAccumulator) -> Result<HeadAccumulator> {
        ensure!(
            self.gram.shape() == other.gram.shape() && self.cross.shape() == other.cross.shape(),
            "cannot merge accumulators of different shapes"
        );
        ensure!(
            self.lambda.to_bits() == other.lambda.to_bits(),
            "cannot merge accumulators with different lambda ({} vs {})",
            self.lambda,
            other.lambda
        );
        let mut merged = Self::new(self.reservoir_size(), self.output_dim(), self.lambda)?;
        merged.gram = &self.gram + &other.gram;
        merged.cross = &self.cross + &other.cross;
        merged.update_count = self.update_count + other.update_count;
        merged.solution_valid = merged.update_count == 0;
        Ok(merged)
    }

    /// `A` then `B`, little-endian `f64`, row-major. Length depends only on `(M, d)`.
    pub fn statistics_bytes(&self) -> Vec<u8> {
        let m = self.reservoir_size();
        let d = self.output_dim();
        let mut out = Vec::with_capacity(8 * (m * m + m * d));
        for i in 0..m {
            for j in 0..m {
                out.extend_from_slice(&self.gram[(i, j)].to_le_bytes());
            }
        }
        for i in 0..m {
            for j in 0..d {
                out.extend_from_slice(&self.cross[(i, j)].to_le_bytes());
            }
        }
        out
    }

    /// Statistics plus the cached readout, for byte-identity checks.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = self.statistics_bytes();
        for v in self.solution.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.solution_valid as u8);
        out.extend_from_slice(&self.update_count.to_le_bytes());
        out
    }
}

pub fn new_accumulator(m: usize, d: usize, lambda: f64) -> Result<HeadAccumulator> {
    HeadAccumulator::new(m, d, lambda)
}

pub fn merge_accumulators(a: &HeadAccumulator, b: &HeadAccumulator) -> Result<HeadAccumulator> {
    a.merge(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::ridge_solve;
    use crate::seeds;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn fresh_accumulator() {
        let mut acc = HeadAccumulator::new(1000, 3, 1e-6).unwrap();
        assert_eq!(acc.gram().shape(), (1000, 1000));
        assert_eq!(acc.cross().shape(), (1000, 3));
        assert_eq!(acc.solve_head().unwrap(), DMatrix::zeros(3, 1000));
        let other = HeadAccumulator::new(1000, 3, 1e-6).unwrap();
        assert_eq!(acc.state_bytes(), other.state_bytes());
        assert!(HeadAccumulator::new(0, 3, 1.0).is_err());
        assert!(HeadAccumulator::new(3, 3, 0.0).is_err());
    }

    #[test]
    fn empty_chunk_leaves_statistics_unchanged() {
        let mut rng = seeds::rng(1);
        let mut acc = HeadAccumulator::new(5, 2, 0.1).unwrap();
        acc.accumulate(&random(4, 5, &mut rng), &random(4, 2, &mut rng)).unwrap();
        let before = acc.statistics_bytes();
        acc.accumulate(&DMatrix::zeros(0, 5), &DMatrix::zeros(0, 2)).unwrap();
        assert_eq!(before, acc.statistics_bytes());
    }

    #[test]
    fn single_row_is_outer_product() {
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let x = DMatrix::from_row_slice(1, 2, &[0.5, 3.0]);
        let mut acc = HeadAccumulator::new(3, 2, 1.0).unwrap();
        acc.accumulate(&h, &x).unwrap();
        assert_eq!(acc.gram(), &(h.transpose() * &h));
        assert_eq!(acc.cross(), &(h.transpose() * &x));
    }

    #[test]
    fn chunked_statistics_match_concatenation() {
        let mut rng = seeds::rng(2);
        let (h1, x1) = (random(6, 8, &mut rng), random(6, 2, &mut rng));
        let (h2, x2) = (random(9, 8, &mut rng), random(9, 2, &mut rng));
        let mut chunked = HeadAccumulator::new(8, 2, 0.3).unwrap();
        chunked.accumulate(&h1, &x1).unwrap();
        chunked.accumulate(&h2, &x2).unwrap();
        let h = DMatrix::from_fn(15, 8, |i, j| if i < 6 { h1[(i, j)] } else { h2[(i - 6, j)] });
        let x = DMatrix::from_fn(15, 2, |i, j| if i < 6 { x1[(i, j)] } else { x2[(i - 6, j)] });
        let mut whole = HeadAccumulator::new(8, 2, 0.3).unwrap();
        whole.accumulate(&h, &x).unwrap();
        assert!(rel(chunked.gram(), whole.gram()) <= 1e-12);
        assert!(rel(chunked.cross(), whole.cross()) <= 1e-12);
        assert_eq!(chunked.update_count(), 2);
    }

    #[test]
    fn one_chunk_solve_equals_ridge_solve() {
        let mut rng = seeds::rng(3);
        let (h, x) = (random(30, 12, &mut rng), random(30, 3, &mut rng));
        let mut acc = HeadAccumulator::new(12, 3, 0.01).unwrap();
        acc.accumulate(&h, &x).unwrap();
        let w = acc.solve_head().unwrap();
        assert!(rel(&w, &ridge_solve(&h, &x, 0.01).unwrap()) <= 1e-10);
        assert!(acc.is_solved());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut acc = HeadAccumulator::new(2, 1, 1.0).unwrap();
        let h = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(acc.accumulate(&h, &DMatrix::zeros(1, 1)), Err(Error::Numerical(_))));
        assert!(acc.accumulate(&DMatrix::zeros(1, 3), &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn merge_properties() {
        let mut rng = seeds::rng(4);
        let (h1, x1) = (random(7, 6, &mut rng), random(7, 2, &mut rng));
        let (h2, x2) = (random(5, 6, &mut rng), random(5, 2, &mut rng));
        let mut a = HeadAccumulator::new(6, 2, 0.2).unwrap();
        a.accumulate(&h1, &x1).unwrap();
        let mut b = HeadAccumulator::new(6, 2, 0.2).unwrap();
        b.accumulate(&h2, &x2).unwrap();
        let fresh = HeadAccumulator::new(6, 2, 0.2).unwrap();

        let ident = a.merge(&fresh).unwrap();
        assert_eq!(ident.statistics_bytes(), a.statistics_bytes());
        let ab = a.merge(&b).unwrap();
        let ba = b.merge(&a).unwrap();
        assert!(rel(ab.gram(), ba.gram()) <= 1e-12);

        let h = DMatrix::from_fn(12, 6, |i, j| if i < 7 { h1[(i, j)] } else { h2[(i - 7, j)] });
        let x = DMatrix::from_fn(12, 2, |i, j| if i < 7 { x1[(i, j)] } else { x2[(i - 7, j)] });
        let mut merged = ab;
        assert!(rel(&merged.solve_head().unwrap(), &ridge_solve(&h, &x, 0.2).unwrap()) <= 1e-8);

        let other_lambda = HeadAccumulator::new(6, 2, 0.3).unwrap();
        assert!(a.merge(&other_lambda).is_err());
        assert!(a.merge(&HeadAccumulator::new(5, 2, 0.2).unwrap()).is_err());
    }

    #[test]
    fn storage_is_independent_of_row_count() {
        let mut rng = seeds::rng(5);
        let mut acc = HeadAccumulator::new(10, 3, 1.0).unwrap();
        let size = acc.statistics_bytes().len();
        for n in [1, 50, 400] {
            acc.accumulate(&random(n, 10, &mut rng), &random(n, 3, &mut rng)).unwrap();
            assert_eq!(acc.statistics_bytes().len(), size);
        }
        assert_eq!(size, 8 * (100 + 30));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gram_stays_symmetric_psd(seed in 0u64..10_000, chunks in 1usize..6) {
            let mut rng = seeds::rng(seed);
            let mut acc = HeadAccumulator::new(9, 2, 1e-3).unwrap();
            for _ in 0..chunks {
                let n = rng.random_range(0..12);
                acc.accumulate(&random(n, 9, &mut rng), &random(n, 2, &mut rng)).unwrap();
            }
            let a = acc.gram();
            prop_assert!((a - a.transpose()).norm() <= 1e-12 * a.norm().max(1.0));
            for _ in 0..10 {
                let v = random(9, 1, &mut rng);
                prop_assert!((v.transpose() * a * &v)[(0, 0)] >= -1e-9);
            }
        }
    }
}
