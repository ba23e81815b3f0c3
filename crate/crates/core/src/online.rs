//! Certified online stage: Galerkin-reduced solves, residual dual norms in
//! `O(Q^2 N^2)`, coercivity/continuity bounds and error certificates.
//!
//! All operations on a [`ReducedModel`] are independent of the truth
//! dimension `n_h`; the model stores only reduced blocks, residual Gram data
//! and scalar bound constants.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{evaluate_coefficients, CoefficientFunction, Parameter, ParameterDomain};
use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, CsrMatrix};
use crate::truth::TruthProblem;

/// X-orthonormal reduced basis `V` (`n_h x N`) with the parameters whose
/// snapshots generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBasis {
    pub matrix: DMatrix<f64>,
    pub snapshot_parameters: Vec<Parameter>,
}

impl ReducedBasis {
    pub fn empty(n_h: usize) -> Self {
        ReducedBasis {
            matrix: DMatrix::zeros(n_h, 0),
            snapshot_parameters: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_dof(&self) -> usize {
        self.matrix.nrows()
    }

    /// Maximum entrywise deviation of `V^T X V` from the identity.
    pub fn orthonormality_defect(&self, x: &CsrMatrix) -> f64 {
        let nb = self.n();
        let mut dev = 0.0f64;
        let xcols: Vec<DVector<f64>> = (0..nb)
            .map(|j| x.matvec(&self.matrix.column(j).into_owned()))
            .collect();
        for i in 0..nb {
            let vi = self.matrix.column(i);
            for (j, xc) in xcols.iter().enumerate() {
                let g = vi.dot(xc);
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g - target).abs());
            }
        }
        dev
    }

    /// X-orthogonal projection coefficients `V^T X v`.
    pub fn project_coefficients(&self, x: &CsrMatrix, v: &DVector<f64>) -> DVector<f64> {
        let xv = x.matvec(v);
        self.matrix.tr_mul(&xv)
    }

    /// Lift reduced coordinates to the truth space: `V c`.
    pub fn lift(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.matrix * coords
    }
}

/// Precomputed residual Gram data in the dual (X^-1) metric.
///
/// `c_ff`, `c_fa`, `c_aa` are the pairwise X-inner products of the Riesz
/// representers of `f` and of `A_q v_n`, exactly as used by the classical
/// `O(Q^2 N^2)` residual-norm formula. `factor` is an upper-trapezoidal
/// factor `R` (rank x (1 + Q N)) of the same Gram matrix obtained by
/// X-orthonormalizing the representers offline; `R^T R` equals the Gram in
/// exact arithmetic, and evaluating `||R c||` avoids the catastrophic
/// cancellation the quadratic-form evaluation suffers near zero residual.
/// Column order: `f` first, then `(q, n)` with `q` major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualGram {
    pub c_ff: f64,
    pub c_fa: Vec<DVector<f64>>,
    pub c_aa: Vec<Vec<DMatrix<f64>>>,
    pub factor: DMatrix<f64>,
}

/// Data for the min-theta coercivity lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivitySpec {
    pub mu_bar: Parameter,
    pub c_ref: f64,
    /// `theta_q(mu_bar)` per term.
    pub theta_ref: Vec<f64>,
    /// Per-term certificates that `theta_q > 0` on the whole domain.
    pub positive: Vec<bool>,
}

/// Truth-dimension-free reduced-order model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub coefficients: Vec<CoefficientFunction>,
    pub domain: ParameterDomain,
    /// `A_q^N = V^T A_q V`, per term.
    pub reduced_terms: Vec<DMatrix<f64>>,
    /// `f^N = V^T f`.
    pub reduced_load: DVector<f64>,
    /// `s^N = S V` (S x N).
    pub reduced_outputs: DMatrix<f64>,
    /// X-dual norms of the S output functionals.
    pub output_dual_norms: DVector<f64>,
    pub residual_gram: ResidualGram,
    pub coercivity: CoercivitySpec,
    /// Per-term operator norms `gamma_q = ||A_q||` in the X-induced norm.
    pub continuity: Vec<f64>,
    pub snapshot_parameters: Vec<Parameter>,
}

impl ReducedModel {
    pub fn n(&self) -> usize {
        self.reduced_load.len()
    }

    pub fn n_terms(&self) -> usize {
        self.coefficients.len()
    }

    /// Evaluate the coefficient vector after validating `mu` against the
    /// domain.
    pub fn theta(&self, mu: &Parameter) -> Result<Vec<f64>> {
        self.domain.check_member(mu)?;
        self.coefficients.iter().map(|c| c.evaluate(mu)).collect()
    }
}

/// Reduced coordinates at one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub coordinates: DVector<f64>,
    pub parameter: Parameter,
}

/// Certified error bound for a reduced solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Upper bound on the X-norm state error.
    pub error_bound: f64,
    /// Upper bounds on the S output errors.
    pub output_bound: Vec<f64>,
    pub coercivity_lb: f64,
    pub residual_dual_norm: f64,
}

/// Per-term operator norms `gamma_q` (largest generalized eigenvalue of
/// `(A_q, X)`) by power iteration on `X^-1 A_q`. Independent of any basis,
/// so callers constructing many models for one problem should compute this
/// once and reuse it through [`project_with_continuity`].
pub fn continuity_constants(problem: &TruthProblem) -> Result<Vec<f64>> {
    let chol = BandCholesky::factor(&problem.inner_product)?;
    let n = problem.n_dof();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let mut out = Vec::with_capacity(problem.n_terms());
    for term in problem.operator.terms() {
        let a = &term.matrix;
        let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let xv = problem.inner_product.matvec(&v);
        let nv = v.dot(&xv).max(f64::MIN_POSITIVE).sqrt();
        v /= nv;
        let mut lam = 0.0f64;
        for _ in 0..500 {
            let av = a.matvec(&v);
            let w = chol.solve(&av);
            let new_lam = w.dot(&av).max(0.0).sqrt();
            if new_lam == 0.0 {
                lam = 0.0;
                break;
            }
            v = w / new_lam;
            let converged = (new_lam - lam).abs() <= 1e-12 * new_lam;
            lam = new_lam;
            if converged {
                break;
            }
        }
        out.push(lam);
    }
    Ok(out)
}

/// Incremental X-orthonormalization of Riesz representers, producing the
/// upper-trapezoidal residual factor. Columns are pushed as pairs
/// `(y, w = X y)` so no extra X-products are needed.
pub(crate) struct RieszFactorBuilder {
    dirs: Vec<DVector<f64>>,
    xdirs: Vec<DVector<f64>>,
    rows: Vec<Vec<f64>>,
    ncols: usize,
    col: usize,
}

impl RieszFactorBuilder {
    pub(crate) fn new(ncols: usize) -> Self {
        RieszFactorBuilder {
            dirs: Vec::new(),
            xdirs: Vec::new(),
            rows: Vec::new(),
            ncols,
            col: 0,
        }
    }

    pub(crate) fn push(&mut self, mut y: DVector<f64>, mut w: DVector<f64>) {
        assert!(self.col < self.ncols, "too many factor columns");
        let orig = y.dot(&w).max(0.0).sqrt();
        for _pass in 0..2 {
            for k in 0..self.dirs.len() {
                let alpha = self.dirs[k].dot(&w);
                self.rows[k][self.col] += alpha;
                y.axpy(-alpha, &self.dirs[k], 1.0);
                w.axpy(-alpha, &self.xdirs[k], 1.0);
            }
        }
        let norm = y.dot(&w).max(0.0).sqrt();
        // numerically dependent columns leave no new row; the dropped tail is
        // below roundoff relative to the column norm
        if norm > 1e-13 * orig {
            let mut row = vec![0.0; self.ncols];
            row[self.col] = norm;
            self.rows.push(row);
            self.dirs.push(y / norm);
            self.xdirs.push(w / norm);
        }
        self.col += 1;
    }

    pub(crate) fn finish(self) -> DMatrix<f64> {
        assert_eq!(self.col, self.ncols, "factor not fully populated");
        let rank = self.rows.len();
        DMatrix::from_fn(rank, self.ncols, |i, j| self.rows[i][j])
    }
}

/// Galerkin projection of a truth problem onto an X-orthonormal basis,
/// including all residual-estimator precomputation. One X factorization is
/// reused across all `Q N + 1` Riesz solves.
pub fn project(problem: &TruthProblem, basis: &ReducedBasis) -> Result<ReducedModel> {
    let continuity = continuity_constants(problem)?;
    project_with_continuity(problem, basis, &continuity)
}

/// [`project`] with externally supplied continuity constants `gamma_q`
/// (basis-independent, so reusable across projections of the same problem).
pub fn project_with_continuity(
    problem: &TruthProblem,
    basis: &ReducedBasis,
    continuity: &[f64],
) -> Result<ReducedModel> {
    let n = problem.n_dof();
    let nb = basis.n();
    let q_count = problem.n_terms();
    if basis.n_dof() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows for n_h = {n}",
            basis.n_dof()
        )));
    }
    if continuity.len() != q_count {
        return Err(Error::DimensionMismatch(
            "continuity constants do not match term count".into(),
        ));
    }
    let defect = basis.orthonormality_defect(&problem.inner_product);
    if defect > 1e-8 {
        return Err(Error::NonOrthonormalBasis(defect));
    }
    let chol = BandCholesky::factor(&problem.inner_product)?;

    // A_q V columns
    let aqv: Vec<DMatrix<f64>> = problem
        .operator
        .terms()
        .iter()
        .map(|t| {
            let mut m = DMatrix::zeros(n, nb);
            for j in 0..nb {
                m.set_column(j, &t.matrix.matvec(&basis.matrix.column(j).into_owned()));
            }
            m
        })
        .collect();

    let reduced_terms: Vec<DMatrix<f64>> =
        aqv.iter().map(|m| basis.matrix.tr_mul(m)).collect();
    let reduced_load = basis.matrix.tr_mul(&problem.load);
    let reduced_outputs = &problem.outputs * &basis.matrix;

    // Riesz representers
    let rf = chol.solve(&problem.load);
    let c_ff = problem.load.dot(&rf);
    let rq: Vec<DMatrix<f64>> = aqv
        .iter()
        .map(|m| {
            let mut r = DMatrix::zeros(n, nb);
            for j in 0..nb {
                r.set_column(j, &chol.solve(&m.column(j).into_owned()));
            }
            r
        })
        .collect();

    // Gram blocks: <r_f, r_qn>_X = r_f . (A_q v_n), <r_qn, r_q'n'>_X = r_qn . (A_q' v_n')
    let c_fa: Vec<DVector<f64>> = aqv.iter().map(|m| m.tr_mul(&rf)).collect();
    let c_aa: Vec<Vec<DMatrix<f64>>> = rq
        .iter()
        .map(|rqm| aqv.iter().map(|m| rqm.tr_mul(m)).collect())
        .collect();

    // stable residual factor
    let mut builder = RieszFactorBuilder::new(1 + q_count * nb);
    builder.push(rf, problem.load.clone_owned());
    for q in 0..q_count {
        for j in 0..nb {
            builder.push(rq[q].column(j).into_owned(), aqv[q].column(j).into_owned());
        }
    }
    let factor = builder.finish();

    // output dual norms
    let s_count = problem.outputs.nrows();
    let output_dual_norms = DVector::from_fn(s_count, |i, _| {
        let s = problem.outputs.row(i).transpose().into_owned();
        let rs = chol.solve(&s);
        s.dot(&rs).max(0.0).sqrt()
    });

    let theta_ref = evaluate_coefficients(&problem.operator, &problem.coercivity_ref.mu_bar)?;
    if theta_ref.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidInput(
            "reference coefficients must be strictly positive for min-theta".into(),
        ));
    }
    let positive = problem
        .operator
        .terms()
        .iter()
        .map(|t| t.coefficient.positive_on(&problem.domain))
        .collect();

    Ok(ReducedModel {
        coefficients: problem.operator.coefficients(),
        domain: problem.domain.clone(),
        reduced_terms,
        reduced_load,
        reduced_outputs,
        output_dual_norms,
        residual_gram: ResidualGram {
            c_ff,
            c_fa,
            c_aa,
            factor,
        },
        coercivity: CoercivitySpec {
            mu_bar: problem.coercivity_ref.mu_bar.clone(),
            c_ref: problem.coercivity_ref.c_ref,
            theta_ref,
            positive,
        },
        continuity: continuity.to_vec(),
        snapshot_parameters: basis.snapshot_parameters.clone(),
    })
}

/// Assemble and solve the dense reduced system: `O(Q N^2)` assembly,
/// `O(N^3)` solve.
pub fn solve_reduced(model: &ReducedModel, mu: &Parameter) -> Result<ReducedSolution> {
    let theta = model.theta(mu)?;
    let nb = model.n();
    if nb == 0 {
        return Ok(ReducedSolution {
            coordinates: DVector::zeros(0),
            parameter: mu.clone(),
        });
    }
    let mut a = DMatrix::zeros(nb, nb);
    for (t, m) in theta.iter().zip(&model.reduced_terms) {
        a += m * *t;
    }
    let chol = Cholesky::new(a).ok_or_else(|| {
        Error::ReducedCoercivityLoss(format!("reduced system not SPD at {mu}"))
    })?;
    Ok(ReducedSolution {
        coordinates: chol.solve(&model.reduced_load),
        parameter: mu.clone(),
    })
}

/// Reduced outputs `s^N u_N`.
pub fn evaluate_outputs(model: &ReducedModel, sol: &ReducedSolution) -> DVector<f64> {
    &model.reduced_outputs * &sol.coordinates
}

fn residual_coefficients(model: &ReducedModel, theta: &[f64], u_n: &DVector<f64>) -> DVector<f64> {
    let nb = model.n();
    let q_count = model.n_terms();
    let mut c = DVector::zeros(1 + q_count * nb);
    c[0] = 1.0;
    for q in 0..q_count {
        for j in 0..nb {
            c[1 + q * nb + j] = -theta[q] * u_n[j];
        }
    }
    c
}

/// Dual norm of the residual `f - A(mu) V u_N` in `O(Q^2 N^2)`, evaluated
/// through the precomputed factor (`||R c||` with the residual coefficient
/// vector `c`); equal in exact arithmetic to the classical Gram quadratic
/// form, see [`residual_dual_norm_reference`].
pub fn residual_dual_norm(model: &ReducedModel, mu: &Parameter, u_n: &DVector<f64>) -> Result<f64> {
    let theta = model.theta(mu)?;
    if u_n.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "coordinate vector of length {} for N = {}",
            u_n.len(),
            model.n()
        )));
    }
    let c = residual_coefficients(model, &theta, u_n);
    Ok((&model.residual_gram.factor * c).norm())
}

/// Classical residual-norm formula straight from the Gram blocks:
/// `sqrt(max(0, c_ff - 2 sum_q theta_q u^T c_fa[q]
///              + sum_{q,q'} theta_q theta_q' u^T c_aa[q][q'] u))`.
/// Suffers cancellation of order `sqrt(eps) ||f||_dual` near zero residual;
/// kept as the reference definition and for cross-checks.
pub fn residual_dual_norm_reference(
    model: &ReducedModel,
    mu: &Parameter,
    u_n: &DVector<f64>,
) -> Result<f64> {
    let theta = model.theta(mu)?;
    if u_n.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "coordinate vector of length {} for N = {}",
            u_n.len(),
            model.n()
        )));
    }
    let g = &model.residual_gram;
    let mut r2 = g.c_ff;
    for q in 0..model.n_terms() {
        r2 -= 2.0 * theta[q] * u_n.dot(&g.c_fa[q]);
        for qp in 0..model.n_terms() {
            r2 += theta[q] * theta[qp] * u_n.dot(&(&g.c_aa[q][qp] * u_n));
        }
    }
    Ok(r2.max(0.0).sqrt())
}

/// Min-theta coercivity lower bound
/// `C_ref * min_q theta_q(mu) / theta_q(mu_bar)`.
pub fn coercivity_lower_bound(model: &ReducedModel, mu: &Parameter) -> Result<f64> {
    let theta = model.theta(mu)?;
    if model.coercivity.positive.iter().any(|&p| !p) {
        return Err(Error::CoercivityLoss(
            "min-theta inapplicable: a coefficient is not certified positive on the domain".into(),
        ));
    }
    let mut min_ratio = f64::INFINITY;
    for (t, tr) in theta.iter().zip(&model.coercivity.theta_ref) {
        if !(*t > 0.0) {
            return Err(Error::CoercivityLoss(format!(
                "non-positive coefficient {t} at {mu}; min-theta inapplicable"
            )));
        }
        min_ratio = min_ratio.min(t / tr);
    }
    Ok(model.coercivity.c_ref * min_ratio)
}

/// Continuity upper bound `sum_q |theta_q(mu)| gamma_q`.
pub fn continuity_upper_bound(model: &ReducedModel, mu: &Parameter) -> Result<f64> {
    let theta = model.theta(mu)?;
    Ok(theta
        .iter()
        .zip(&model.continuity)
        .map(|(t, g)| t.abs() * g)
        .sum())
}

/// Residual-based a posteriori certificate: `error_bound = residual dual
/// norm / coercivity lower bound`, output bounds scaled by the output
/// functionals' dual norms.
pub fn certify(model: &ReducedModel, mu: &Parameter, sol: &ReducedSolution) -> Result<Certificate> {
    if sol.parameter != *mu {
        return Err(Error::InvalidInput(
            "solution was computed for a different parameter".into(),
        ));
    }
    let eta = residual_dual_norm(model, mu, &sol.coordinates)?;
    let clb = coercivity_lower_bound(model, mu)?;
    let error_bound = eta / clb;
    let output_bound = model
        .output_dual_norms
        .iter()
        .map(|d| d * error_bound)
        .collect();
    Ok(Certificate {
        error_bound,
        output_bound,
        coercivity_lb: clb,
        residual_dual_norm: eta,
    })
}
