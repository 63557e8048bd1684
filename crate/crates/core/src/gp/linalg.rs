//! Packed lower-triangular storage and the Cholesky routines built on it.
//!
//! The factor of an n×n covariance matrix is stored row-major in a single
//! `Vec<f64>` (row i starts at i·(i+1)/2 and holds i+1 entries), so the dot
//! products that dominate factorization and triangular solves run over
//! contiguous memory.
//!
//! Besides the full factorization this module implements the two incremental
//! operations the rolling forecaster relies on:
//!
//! - appending a row/column (one forward solve plus a scalar pivot), and
//! - dropping the *first* row/column, which reduces to a rank-one update of
//!   the trailing factor with the removed column.

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Dot product with four independent accumulators so the compiler can keep
/// several multiply chains in flight; this is the hot loop of the crate.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4 * 4;
    let (ah, at) = a.split_at(quads);
    let (bh, bt) = b.split_at(quads);
    let mut acc = [0.0f64; 4];
    for (ca, cb) in ah.chunks_exact(4).zip(bh.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in at.iter().zip(bt) {
        s += x * y;
    }
    s
}

/// Lower-triangular matrix in packed row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

/// Why a factorization attempt failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PivotFailure {
    /// Row whose pivot came out non-positive or non-finite.
    pub row: usize,
    /// The offending pivot value (before the square root).
    pub pivot: f64,
}

impl PackedLower {
    pub fn empty() -> Self {
        PackedLower { n: 0, data: Vec::new() }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i < self.n);
        self.data[row_offset(i) + j]
    }

    /// Cholesky-factor a symmetric matrix given as packed lower storage
    /// (diagonal included). Fails on the first non-positive pivot.
    pub fn factorize(mut packed: Vec<f64>, n: usize) -> Result<Self, PivotFailure> {
        debug_assert_eq!(packed.len(), row_offset(n));
        for i in 0..n {
            let off_i = row_offset(i);
            let (done, rest) = packed.split_at_mut(off_i);
            let row_i = &mut rest[..=i];
            for j in 0..i {
                let off_j = row_offset(j);
                let row_j = &done[off_j..off_j + j + 1];
                let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
                row_i[j] = s / row_j[j];
            }
            let pivot = row_i[i] - dot(&row_i[..i], &row_i[..i]);
            if !(pivot.is_finite() && pivot > 0.0) {
                return Err(PivotFailure { row: i, pivot });
            }
            row_i[i] = pivot.sqrt();
        }
        Ok(PackedLower { n, data: packed })
    }

    /// y = L·x (used to turn i.i.d. normals into correlated draws).
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let off = row_offset(i);
                dot(&self.data[off..off + i + 1], &x[..i + 1])
            })
            .collect()
    }

    /// Solve L·x = b in place.
    pub fn solve_lower(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let off = row_offset(i);
            let row = &self.data[off..off + i + 1];
            let s = x[i] - dot(&row[..i], &x[..i]);
            x[i] = s / row[i];
        }
    }

    /// Solve Lᵀ·x = b in place.
    pub fn solve_lower_transpose(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for k in (0..self.n).rev() {
            let off = row_offset(k);
            let row = &self.data[off..off + k + 1];
            let xk = x[k] / row[k];
            x[k] = xk;
            let (head, _) = x.split_at_mut(k);
            for (xj, lkj) in head.iter_mut().zip(&row[..k]) {
                *xj -= lkj * xk;
            }
        }
    }

    /// Sum of the log-diagonal, i.e. ½·ln det(L·Lᵀ).
    pub fn sum_log_diag(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i).ln()).sum()
    }

    /// Extend the factor by one row/column of the underlying matrix:
    /// `col` holds the covariances against the existing points and `diag`
    /// the new diagonal entry. One forward solve plus a scalar pivot.
    pub fn append_row(&mut self, col: &[f64], diag: f64) -> Result<(), PivotFailure> {
        debug_assert_eq!(col.len(), self.n);
        let mut l12 = col.to_vec();
        self.solve_lower(&mut l12);
        let pivot = diag - dot(&l12, &l12);
        if !(pivot.is_finite() && pivot > 0.0) {
            return Err(PivotFailure { row: self.n, pivot });
        }
        self.data.extend_from_slice(&l12);
        self.data.push(pivot.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Remove the newest (last) row/column. The factor of a leading principal
    /// submatrix is just the leading part of the factor, so this truncates.
    pub fn pop_last(&mut self) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        self.data.truncate(row_offset(self.n));
    }

    /// Remove the oldest (first) row/column. Writing V = [[v₁₁, v₂₁ᵀ],
    /// [v₂₁, V₂₂]] with factor [[l₁₁, 0], [l₂₁, L₂₂]], the trailing block
    /// satisfies V₂₂ = L₂₂·L₂₂ᵀ + l₂₁·l₂₁ᵀ, so the new factor is the rank-one
    /// update of L₂₂ with the removed column l₂₁ (always positive
    /// semi-definite; performed with stabilized row rotations).
    pub fn drop_first(&mut self) -> Result<(), PivotFailure> {
        debug_assert!(self.n > 0);
        let n = self.n;
        if n == 1 {
            self.n = 0;
            self.data.clear();
            return Ok(());
        }
        let mut w = Vec::with_capacity(n - 1);
        let mut packed = Vec::with_capacity(row_offset(n - 1));
        for i in 1..n {
            let off = row_offset(i);
            w.push(self.data[off]);
            packed.extend_from_slice(&self.data[off + 1..off + i + 1]);
        }
        let mut sub = PackedLower { n: n - 1, data: packed };
        sub.rank_one_update(&mut w)?;
        *self = sub;
        Ok(())
    }

    /// In-place rank-one update: after the call the factor corresponds to
    /// L·Lᵀ + w·wᵀ. `w` is consumed as workspace.
    fn rank_one_update(&mut self, w: &mut [f64]) -> Result<(), PivotFailure> {
        debug_assert_eq!(w.len(), self.n);
        let n = self.n;
        let mut b = 1.0f64;
        for j in 0..n {
            let off_j = row_offset(j);
            let ljj = self.data[off_j + j];
            let wj = w[j];
            let gamma = ljj * ljj * b + wj * wj;
            let pivot = ljj * ljj + wj * wj / b;
            if !(pivot.is_finite() && pivot > 0.0) {
                return Err(PivotFailure { row: j, pivot });
            }
            let nljj = pivot.sqrt();
            for k in j + 1..n {
                let off_k = row_offset(k);
                let lkj = self.data[off_k + j];
                w[k] -= wj / ljj * lkj;
                self.data[off_k + j] = nljj / ljj * lkj + nljj * wj / gamma * w[k];
            }
            self.data[off_j + j] = nljj;
            b += wj * wj / (ljj * ljj);
        }
        Ok(())
    }

    /// Largest absolute elementwise difference against another factor of the
    /// same size (used by the drift tests and the acceptance suite).
    pub fn max_abs_diff(&self, other: &PackedLower) -> f64 {
        debug_assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
