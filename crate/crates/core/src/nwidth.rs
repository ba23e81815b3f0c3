//! Kolmogorov N-width laboratory: best-approximation decay of snapshot sets
//! measured through POD subspaces, with the analytic lower bound for the
//! one-dimensional advection front manifold.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::pod;
use crate::linalg::CsrMatrix;

/// A finite sample of a solution manifold together with its metric.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub vectors: Vec<DVector<f64>>,
    pub metric: CsrMatrix,
    pub label: String,
}

impl SnapshotSet {
    pub fn new(vectors: Vec<DVector<f64>>, metric: CsrMatrix, label: impl Into<String>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidInput("snapshot set must be non-empty".into()));
        }
        let n = vectors[0].len();
        if vectors.iter().any(|v| v.len() != n) || metric.nrows() != n {
            return Err(Error::DimensionMismatch(
                "snapshot set vectors and metric must share one dimension".into(),
            ));
        }
        Ok(Self {
            vectors,
            metric,
            label: label.into(),
        })
    }
}

/// Width-decay curve of a snapshot set: worst-case POD projection defects
/// per subspace dimension, plus the full POD spectrum. `analytic_lower` is
/// attached for manifolds with a known continuum bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NWidthReport {
    pub n_values: Vec<usize>,
    pub pod_upper: Vec<f64>,
    pub analytic_lower: Option<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl NWidthReport {
    /// CSV with columns `N,pod_upper,analytic_lower,sigma_N` (empty field
    /// when no analytic bound is attached).
    pub fn to_csv(&self, precision: usize) -> String {
        let mut out = String::from("N,pod_upper,analytic_lower,sigma_N\n");
        let fmt = |x: f64| format!("{:.*e}", precision.saturating_sub(1), x);
        for (k, &n) in self.n_values.iter().enumerate() {
            let lower = self
                .analytic_lower
                .as_ref()
                .map(|l| fmt(l[k]))
                .unwrap_or_default();
            let sigma = self
                .singular_values
                .get(n.saturating_sub(1))
                .map(|&s| fmt(s))
                .unwrap_or_default();
            out.push_str(&format!("{n},{},{lower},{sigma}\n", fmt(self.pod_upper[k])));
        }
        out
    }
}

/// Scaled indicator of the sub-interval `[(n-1)/N, n/N]` of `[0,1]` as cell
/// averages on a uniform grid of `grid_n` cells. Requires the grid to align
/// with the interval endpoints so the representation is exact.
pub fn psi_function(big_n: usize, n: usize, grid_n: usize) -> Result<DVector<f64>> {
    if big_n < 1 || n < 1 || n > big_n {
        return Err(Error::InvalidInput(format!(
            "need 1 <= n <= N, got n = {n}, N = {big_n}"
        )));
    }
    if grid_n == 0 || grid_n % big_n != 0 {
        return Err(Error::InvalidInput(format!(
            "grid of {grid_n} cells does not align with N = {big_n} sub-intervals"
        )));
    }
    let per = grid_n / big_n;
    let mut v = DVector::zeros(grid_n);
    for i in (n - 1) * per..n * per {
        v[i] = 1.0;
    }
    Ok(v)
}

/// Verify that `psi_{N,n}` lies in (the difference set of) the advection
/// manifold: it must equal `u_1(n/N) - u_1((n-1)/N)` exactly on an aligned
/// grid, up to `1e-14` per entry.
pub fn psi_in_manifold_check(big_n: usize, n: usize, grid_n: usize) -> Result<bool> {
    let psi = psi_function(big_n, n, grid_n)?;
    let t0 = (n - 1) as f64 / big_n as f64;
    let t1 = n as f64 / big_n as f64;
    let snaps = crate::truth::advection_snapshots(1.0, grid_n, &[t0, t1])?;
    let diff = &snaps[1] - &snaps[0] - psi;
    Ok(diff.amax() <= 1e-14)
}

/// Measure the width-decay curve of a snapshot set for `N = 1..=n_max`
/// using POD-optimal subspaces. `n_max` may not exceed the numerical rank
/// of the set.
pub fn measure_widths(set: &SnapshotSet, n_max: usize) -> Result<NWidthReport> {
    if n_max < 1 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    let count = set.vectors.len();
    let pr = pod(&set.vectors, &set.metric, count)?;
    let rank = pr.modes.ncols();
    if n_max > rank {
        return Err(Error::InvalidInput(format!(
            "n_max = {n_max} exceeds the numerical rank {rank} of '{}'",
            set.label
        )));
    }
    // coefficients c[(k, j)] = <mode_k, s_j>_X; defect after N modes is
    // sqrt(|s_j|_X^2 - sum_{k<=N} c_kj^2)
    let mut norms2 = vec![0.0f64; count];
    let mut coeffs = vec![vec![0.0f64; count]; rank];
    for (j, s) in set.vectors.iter().enumerate() {
        let xs = set.metric.matvec(s);
        norms2[j] = s.dot(&xs);
        for k in 0..rank {
            coeffs[k][j] = pr.modes.column(k).dot(&xs);
        }
    }
    let mut n_values = Vec::with_capacity(n_max);
    let mut pod_upper = Vec::with_capacity(n_max);
    let mut residual2 = norms2;
    for n in 1..=n_max {
        for j in 0..count {
            residual2[j] -= coeffs[n - 1][j] * coeffs[n - 1][j];
        }
        let worst = residual2.iter().fold(0.0f64, |a, &r| a.max(r.max(0.0)));
        n_values.push(n);
        pod_upper.push(worst.sqrt());
    }
    Ok(NWidthReport {
        n_values,
        pod_upper,
        analytic_lower: None,
        singular_values: pr.singular_values,
    })
}

/// Width decay of the advection front manifold sampled at `m_time_samples`
/// uniform times in `[0, 1]`, with the analytic continuum lower bound
/// `0.5 N^{-1/2}` attached.
pub fn advection_nwidth_demo(
    grid_n: usize,
    m_time_samples: usize,
    n_max: usize,
) -> Result<NWidthReport> {
    if grid_n < 2 * n_max {
        return Err(Error::InvalidInput(format!(
            "grid of {grid_n} cells cannot resolve n_max = {n_max} (need grid_n >= 2 n_max)"
        )));
    }
    if m_time_samples < grid_n {
        return Err(Error::InvalidInput(format!(
            "{m_time_samples} time samples under-resolve a grid of {grid_n} cells"
        )));
    }
    let times: Vec<f64> = (0..m_time_samples)
        .map(|i| i as f64 / (m_time_samples - 1) as f64)
        .collect();
    let vectors = crate::truth::advection_snapshots(1.0, grid_n, &times)?;
    let metric = crate::truth::advection_metric(grid_n);
    let set = SnapshotSet::new(vectors, metric, "advection front manifold")?;
    let mut report = measure_widths(&set, n_max)?;
    report.analytic_lower = Some(
        report
            .n_values
            .iter()
            .map(|&n| 0.5 / (n as f64).sqrt())
            .collect(),
    );
    Ok(report)
}

/// Same report machinery on a log-uniform sample of thermal-block
/// solutions; the near-exponential singular-value decay contrasts with the
/// advection set's algebraic decay.
pub fn thermal_contrast_demo(
    problem: &crate::truth::TruthProblem,
    n_snapshots: usize,
    seed: u64,
    n_max: usize,
) -> Result<NWidthReport> {
    if n_snapshots < 1 {
        return Err(Error::InvalidInput("need at least one snapshot".into()));
    }
    let params = crate::affine::sample_log_uniform(&problem.domain, n_snapshots, seed)?;
    let vectors: Result<Vec<DVector<f64>>> = params
        .iter()
        .map(|mu| Ok(crate::truth::solve_truth(problem, mu)?.coefficients))
        .collect();
    let set = SnapshotSet::new(vectors?, problem.inner_product.clone(), "thermal block")?;
    let count = set.vectors.len();
    let pr = pod(&set.vectors, &set.metric, count)?;
    let n_max = n_max.min(pr.modes.ncols());
    measure_widths(&set, n_max)
}
