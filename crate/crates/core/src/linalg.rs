//! Sparse CSR matrices and a banded Cholesky direct solver.
//!
//! The truth discretizations in this crate produce symmetric matrices with
//! small bandwidth under the natural node ordering of structured meshes, so a
//! band Cholesky factorization is used as the sparse direct solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with `f64` entries.
///
/// Serializes as sorted triplets so that model files are portable and the
/// round-trip is bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CsrTriplets", into = "CsrTriplets")]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone)]
struct CsrTriplets {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl From<CsrMatrix> for CsrTriplets {
    fn from(m: CsrMatrix) -> Self {
        let mut rows = Vec::with_capacity(m.values.len());
        for i in 0..m.nrows {
            for _ in m.row_ptr[i]..m.row_ptr[i + 1] {
                rows.push(i);
            }
        }
        CsrTriplets {
            nrows: m.nrows,
            ncols: m.ncols,
            rows,
            cols: m.col_idx,
            values: m.values,
        }
    }
}

impl From<CsrTriplets> for CsrMatrix {
    fn from(t: CsrTriplets) -> Self {
        let trips: Vec<(usize, usize, f64)> = t
            .rows
            .iter()
            .zip(&t.cols)
            .zip(&t.values)
            .map(|((&r, &c), &v)| (r, c, v))
            .collect();
        CsrMatrix::from_triplets(t.nrows, t.ncols, &trips)
    }
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicate positions are summed
    /// in their original order (stable), entries are stored sorted by
    /// (row, col). Exact zeros arising in the input are kept so that sparsity
    /// patterns stay predictable.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet index out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Scaled identity (diagonal) matrix of size `n`.
    pub fn identity_scaled(n: usize, s: f64) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![s; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let xs = x.as_slice();
        let mut y = DVector::zeros(self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * xs[self.col_idx[k]];
            }
            y[i] = s;
        }
        y
    }

    /// Maximum |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] += self.values[k];
            }
        }
        d
    }
}

/// Linear combination `sum_k coeffs[k] * terms[k]` over the union sparsity
/// pattern. Accumulation order follows term order, so repeated calls are
/// bit-reproducible.
pub fn csr_linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
    let (nrows, ncols) = match terms.first() {
        Some((_, m)) => (m.nrows(), m.ncols()),
        None => return Err(Error::InvalidInput("empty linear combination".into())),
    };
    for (_, m) in terms {
        if m.nrows() != nrows || m.ncols() != ncols {
            return Err(Error::DimensionMismatch(
                "linear combination of differently sized matrices".into(),
            ));
        }
    }
    let mut scratch = vec![0.0f64; ncols];
    let mut touched: Vec<usize> = Vec::new();
    let mut seen = vec![false; ncols];
    let mut row_ptr = Vec::with_capacity(nrows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..nrows {
        touched.clear();
        for &(c, m) in terms {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                    scratch[j] = 0.0;
                }
                scratch[j] += c * v;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            col_idx.push(j);
            values.push(scratch[j]);
            seen[j] = false;
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix {
        nrows,
        ncols,
        row_ptr,
        col_idx,
        values,
    })
}

/// Lower-band Cholesky factorization `A = L L^T` of a symmetric positive
/// definite matrix with band structure.
///
/// Storage is row-major: row `i` keeps `L[i][j]` for `j` in
/// `[i - bw, i]` at offset `i * (bw + 1) + (j + bw - i)`.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// Factor a symmetric CSR matrix. Fails with [`Error::CoercivityLoss`]
    /// when a pivot is not strictly positive.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("factor of non-square matrix".into()));
        }
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0f64; n * w];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * w + (j + bw - i)] += v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = band[i * w + (j + bw - i)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j < i {
                    band[i * w + (j + bw - i)] = sum / band[j * w + bw];
                } else {
                    if !(sum > 0.0) {
                        return Err(Error::CoercivityLoss(format!(
                            "non-positive pivot {sum:.3e} at row {i} during Cholesky"
                        )));
                    }
                    band[i * w + bw] = sum.sqrt();
                }
            }
        }
        Ok(BandCholesky { n, bw, band })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let w = self.bw + 1;
        let mut x = b.clone_owned();
        // forward: L y = b
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = x[i];
            for j in j0..i {
                s -= self.band[i * w + (j + self.bw - i)] * x[j];
            }
            x[i] = s / self.band[i * w + self.bw];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let jmax = (i + self.bw).min(self.n - 1);
            let mut s = x[i];
            for j in (i + 1)..=jmax {
                s -= self.band[j * w + (i + self.bw - j)] * x[j];
            }
            x[i] = s / self.band[i * w + self.bw];
        }
        x
    }

    /// Solve with one step of iterative refinement against the original
    /// matrix, tightening the residual for ill-conditioned systems.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve(b);
        let r = b - a.matvec(&x);
        x += self.solve(&r);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0)]);
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], 3.0);
        assert_eq!(d[(1, 1)], 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut trips = Vec::new();
        for i in 0..15 {
            for j in 0..12 {
                if rng.random::<f64>() < 0.3 {
                    trips.push((i, j, rng.random::<f64>() - 0.5));
                }
            }
        }
        let m = CsrMatrix::from_triplets(15, 12, &trips);
        let x = DVector::from_fn(12, |i, _| (i as f64 + 1.0).sin());
        let y = m.matvec(&x);
        let yd = m.to_dense() * &x;
        assert!((y - yd).amax() < 1e-14);
    }

    #[test]
    fn linear_combination_union_pattern() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let b = CsrMatrix::from_triplets(3, 3, &[(1, 1, 1.0), (2, 0, 4.0)]);
        let c = csr_linear_combination(&[(2.0, &a), (-1.0, &b)]).unwrap();
        assert_eq!(c.nnz(), 3);
        let d = c.to_dense();
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(1, 1)], 3.0);
        assert_eq!(d[(2, 0)], -4.0);
    }

    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, DMatrix<f64>) {
        // banded diagonally dominant symmetric matrix
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 4.0 + rng.random::<f64>()));
            for off in 1..=3usize {
                if i + off < n {
                    let v = 0.4 * (rng.random::<f64>() - 0.5);
                    trips.push((i, i + off, v));
                    trips.push((i + off, i, v));
                }
            }
        }
        let m = CsrMatrix::from_triplets(n, n, &trips);
        let d = m.to_dense();
        (m, d)
    }

    #[test]
    fn band_cholesky_solves_spd() {
        let (m, d) = random_spd(30, 7);
        let f = BandCholesky::factor(&m).unwrap();
        let b = DVector::from_fn(30, |i, _| (i as f64).cos());
        let x = f.solve(&b);
        let xd = nalgebra::Cholesky::new(d).unwrap().solve(&b);
        assert!((x - xd).amax() < 1e-12);
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(
            BandCholesky::factor(&m),
            Err(Error::CoercivityLoss(_))
        ));
    }

    #[test]
    fn refined_solve_reduces_residual() {
        let (m, _) = random_spd(50, 11);
        let f = BandCholesky::factor(&m).unwrap();
        let b = DVector::from_fn(50, |i, _| ((i * 3) as f64).sin());
        let x = f.solve_refined(&m, &b);
        let res = (&b - m.matvec(&x)).norm();
        assert!(res <= 1e-12 * b.norm());
    }

    #[test]
    fn serde_round_trip_bit_identical() {
        let (m, _) = random_spd(10, 3);
        let s1 = serde_json::to_string(&m).unwrap();
        let m2: CsrMatrix = serde_json::from_str(&s1).unwrap();
        assert_eq!(m, m2);
        let s2 = serde_json::to_string(&m2).unwrap();
        assert_eq!(s1, s2);
    }
}
