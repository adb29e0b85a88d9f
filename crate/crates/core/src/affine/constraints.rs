use nalgebra::{DMatrix, DVector};

use super::{AffineError, SubsetIndex};

/// The polytope `{u | A u <= b}` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraintSet {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineConstraintSet {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, AffineError> {
        if a.nrows() != b.len() {
            return Err(AffineError::Shape(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(AffineError::Shape(format!(
                "constraint set must have at least one row and one column, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(AffineError::NonFinite);
        }
        Ok(Self { a, b })
    }

    /// Builds a set from row-major slices; convenient in tests and scenario code.
    pub fn from_rows(rows: &[&[f64]], b: &[f64]) -> Result<Self, AffineError> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(AffineError::Shape("ragged constraint rows".into()));
        }
        let a = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        Self::new(a, DVector::from_column_slice(b))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Number of constraint rows `n_c`.
    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Dimension `m` of the constrained vector.
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `A y - b`.
    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a * y - &self.b
    }

    /// Largest entry of `A y - b` (negative when strictly feasible).
    pub fn max_residual(&self, y: &DVector<f64>) -> f64 {
        (0..self.n_rows())
            .map(|i| self.row_residual(i, y))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, y: &DVector<f64>, tol: f64) -> bool {
        (0..self.n_rows()).all(|i| self.row_residual(i, y) <= tol)
    }

    /// `a_i . y - b_i` for a single row.
    pub fn row_residual(&self, i: usize, y: &DVector<f64>) -> f64 {
        let mut acc = -self.b[i];
        for j in 0..self.dim() {
            acc += self.a[(i, j)] * y[j];
        }
        acc
    }

    /// Rows selected by `gamma`, as `(A_gamma, b_gamma)`.
    pub fn select_rows(&self, gamma: &SubsetIndex) -> (DMatrix<f64>, DVector<f64>) {
        let idx = gamma.indices();
        let a = self.a.select_rows(idx);
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.b[j]));
        (a, b)
    }

    /// Same normals, new offsets.
    pub fn with_offsets(&self, b: DVector<f64>) -> Result<Self, AffineError> {
        Self::new(self.a.clone(), b)
    }

    /// Bit-level fingerprint of `(A, b)`, used to detect stale selection traces.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bit patterns.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.a.iter().chain(self.b.iter()) {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash ^ ((self.n_rows() as u64) << 32 | self.dim() as u64)
    }
}
