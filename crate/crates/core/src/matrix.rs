//! Dense row-stochastic matrices over the alphabet `G`.

use serde::{Deserialize, Serialize};

/// Absolute tolerance on row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Entries at or below this value are treated as zero when reading supports.
pub const POSITIVITY_EPS: f64 = 1e-12;

/// Square matrix stored row-major. Construction through [`StochasticMatrix::new`]
/// checks stochasticity; [`StochasticMatrix::from_rows_unchecked`] does not and
/// is meant for the validator, which reports violations instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticMatrix {
    size: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix is empty")]
    Empty,
    #[error("row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("entry ({row},{col}) = {value} is negative or not finite")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
}

impl StochasticMatrix {
    /// Builds a validated matrix; rows are renormalized to sum to one exactly.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        let mut m = Self::from_rows_unchecked(rows)?;
        for (row, sum) in m.row_sums().into_iter().enumerate() {
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MatrixError::RowSum { row, sum });
            }
        }
        if let Some((row, col, value)) = m.bad_entry() {
            return Err(MatrixError::BadEntry { row, col, value });
        }
        m.renormalize();
        Ok(m)
    }

    /// Checks shape only.
    pub fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        let size = rows.len();
        if size == 0 {
            return Err(MatrixError::Empty);
        }
        let mut data = Vec::with_capacity(size * size);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != size {
                return Err(MatrixError::Ragged { row, len: r.len(), expected: size });
            }
            data.extend(r);
        }
        Ok(Self { size, data })
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        Self { size, data }
    }

    /// The permutation matrix sending state `i` to `perm[i]`.
    pub fn permutation(perm: &[usize]) -> Self {
        let size = perm.len();
        let mut data = vec![0.0; size * size];
        for (i, &j) in perm.iter().enumerate() {
            data[i * size + j] = 1.0;
        }
        Self { size, data }
    }

    /// Convex combination `Σ w_i M_i`. Weights must sum to one.
    pub fn convex_combination<'a>(size: usize, terms: impl IntoIterator<Item = (f64, &'a StochasticMatrix)>) -> Self {
        let mut data = vec![0.0; size * size];
        for (w, m) in terms {
            debug_assert_eq!(m.size, size);
            for (acc, x) in data.iter_mut().zip(&m.data) {
                *acc += w * x;
            }
        }
        let mut out = Self { size, data };
        out.renormalize();
        out
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.size)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    fn bad_entry(&self) -> Option<(usize, usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .find_map(|(idx, &v)| (!v.is_finite() || v < 0.0).then_some((idx / self.size, idx % self.size, v)))
    }

    /// Every entry finite and nonnegative, every row within [`ROW_SUM_TOL`] of one.
    pub fn is_stochastic(&self) -> bool {
        self.bad_entry().is_none() && self.row_sums().iter().all(|s| (s - 1.0).abs() <= ROW_SUM_TOL)
    }

    /// Rescales each row to sum to one. Rows summing to zero are left alone.
    pub fn renormalize(&mut self) {
        let size = self.size;
        for row in self.data.chunks_exact_mut(size) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &StochasticMatrix) -> StochasticMatrix {
        assert_eq!(self.size, rhs.size, "matrix size mismatch");
        let n = self.size;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for h in 0..n {
                let a = self.data[i * n + h];
                if a == 0.0 {
                    continue;
                }
                let out = &mut data[i * n..(i + 1) * n];
                for (o, b) in out.iter_mut().zip(rhs.row(h)) {
                    *o += a * b;
                }
            }
        }
        StochasticMatrix { size: n, data }
    }

    /// Left action `λ · self` on a row vector.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.size);
        let mut out = vec![0.0; self.size];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += vi * x;
            }
        }
        out
    }

    /// Restriction to the given states (rows and columns), in the given order.
    pub fn restrict(&self, states: &[usize]) -> StochasticMatrix {
        let n = states.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in states {
            for &j in states {
                data.push(self.get(i, j));
            }
        }
        StochasticMatrix { size: n, data }
    }

    /// `true` where the entry exceeds [`POSITIVITY_EPS`].
    #[inline]
    pub fn positive(&self, i: usize, j: usize) -> bool {
        self.get(i, j) > POSITIVITY_EPS
    }

    pub fn max_abs_diff(&self, other: &StochasticMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `I₂`.
pub fn i2() -> StochasticMatrix {
    StochasticMatrix::identity(2)
}

/// `J₂`, the swap of the two states.
pub fn j2() -> StochasticMatrix {
    StochasticMatrix::permutation(&[1, 0])
}
