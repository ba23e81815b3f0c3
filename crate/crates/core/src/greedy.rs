//! Offline basis construction: weak greedy driven by the certified online
//! estimator, Gram-Schmidt extension, POD, and POD-Greedy for parabolic
//! problems.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::Parameter;
use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, CsrMatrix};
use crate::online::{
    certify, coercivity_lower_bound, continuity_constants, continuity_upper_bound,
    project_with_continuity, solve_reduced, ReducedBasis, ReducedModel, RieszFactorBuilder,
};
use crate::truth::{solve_parabolic, solve_truth, TruthProblem};

/// Configuration of a greedy (or POD-Greedy) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub training_set: Vec<Parameter>,
    pub max_basis_size: usize,
    pub target_error: f64,
    /// POD modes appended per POD-Greedy iteration (ignored by the elliptic
    /// greedy).
    pub pod_modes_per_iter: usize,
    /// Optional first snapshot parameter; when absent, iteration 0 selects
    /// by the empty-basis estimator (`u_N = 0`).
    pub seed_parameter: Option<Parameter>,
}

impl GreedyConfig {
    fn validate(&self) -> Result<()> {
        if self.training_set.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        if self.max_basis_size < 1 {
            return Err(Error::InvalidInput("max_basis_size must be at least 1".into()));
        }
        if !(self.target_error > 0.0) {
            return Err(Error::InvalidInput("target_error must be positive".into()));
        }
        if self.pod_modes_per_iter < 1 {
            return Err(Error::InvalidInput(
                "pod_modes_per_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Why a greedy loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TargetReached,
    BasisFull,
    ExtensionRejected,
    TrivialDynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyIteration {
    pub selected_mu: Parameter,
    pub max_estimated_error: f64,
    pub basis_size_after: usize,
    pub modes_added: usize,
    pub max_true_error: Option<f64>,
}

/// Per-iteration convergence record, including the full per-parameter error
/// tables so the argmax selection can be re-checked afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub iterations: Vec<GreedyIteration>,
    /// `error_tables[it][k]` = estimated error of training parameter `k` at
    /// iteration `it`.
    pub error_tables: Vec<Vec<f64>>,
    pub stop_reason: StopReason,
}

impl GreedyTrace {
    /// Max estimated error per iteration.
    pub fn max_errors(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.max_estimated_error).collect()
    }
}

/// POD of a snapshot set in the X-inner product.
#[derive(Debug, Clone)]
pub struct PODResult {
    /// X-orthonormal modes, `n_h x (retained count)`.
    pub modes: DMatrix<f64>,
    /// Non-increasing singular values (up to the requested count).
    pub singular_values: Vec<f64>,
}

/// Gram-Schmidt extension of an X-orthonormal basis by one vector, with one
/// re-orthogonalization pass. Rejects vectors whose orthogonal defect is
/// below `1e-10` of their own X-norm (numerical linear dependence).
pub fn orthonormalize_extend(
    basis: &ReducedBasis,
    v: &DVector<f64>,
    x: &CsrMatrix,
) -> Result<ReducedBasis> {
    let n = basis.n_dof();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "extension vector of length {} for n_h = {n}",
            v.len()
        )));
    }
    let orig = v.dot(&x.matvec(v)).max(0.0).sqrt();
    let mut w = v.clone_owned();
    for _pass in 0..2 {
        if basis.n() == 0 {
            break;
        }
        let coeffs = basis.project_coefficients(x, &w);
        w -= &basis.matrix * coeffs;
    }
    let norm = w.dot(&x.matvec(&w)).max(0.0).sqrt();
    if !(norm > 1e-10 * orig) {
        return Err(Error::DependentVector {
            defect: norm,
            norm: orig,
        });
    }
    let mut matrix = DMatrix::zeros(n, basis.n() + 1);
    matrix.view_mut((0, 0), (n, basis.n())).copy_from(&basis.matrix);
    matrix.set_column(basis.n(), &(w / norm));
    Ok(ReducedBasis {
        matrix,
        snapshot_parameters: basis.snapshot_parameters.clone(),
    })
}

/// POD by the method of snapshots: eigendecomposition of the Gram matrix
/// `G_ij = <s_i, s_j>_X`; modes are snapshot combinations scaled by inverse
/// singular values. Retains `min(m, numerical rank)` modes with the rank cut
/// at `sigma_k <= 1e-12 sigma_1`.
pub fn pod(snapshots: &[DVector<f64>], x: &CsrMatrix, m: usize) -> Result<PODResult> {
    let count = snapshots.len();
    if count == 0 {
        return Err(Error::InvalidInput("empty snapshot set".into()));
    }
    if m < 1 {
        return Err(Error::InvalidInput("mode count must be at least 1".into()));
    }
    let n = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("snapshots differ in length".into()));
    }
    let xs: Vec<DVector<f64>> = snapshots.iter().map(|s| x.matvec(s)).collect();
    let mut gram = DMatrix::zeros(count, count);
    for i in 0..count {
        for j in i..count {
            let g = snapshots[i].dot(&xs[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    if gram.amax() == 0.0 {
        return Ok(PODResult {
            modes: DMatrix::zeros(n, 0),
            singular_values: vec![0.0; m.min(count)],
        });
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let sigma: Vec<f64> = order
        .iter()
        .map(|&k| eig.eigenvalues[k].max(0.0).sqrt())
        .collect();
    let rank = sigma.iter().filter(|&&s| s > 1e-12 * sigma[0]).count();
    let keep = m.min(rank);
    let mut modes = DMatrix::zeros(n, keep);
    for k in 0..keep {
        let mut acc = DVector::zeros(n);
        for i in 0..count {
            acc.axpy(eig.eigenvectors[(i, order[k])], &snapshots[i], 1.0);
        }
        modes.set_column(k, &(acc / sigma[k]));
    }
    Ok(PODResult {
        modes,
        singular_values: sigma.into_iter().take(m.min(count)).collect(),
    })
}

fn argmax_lowest_index(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Weak greedy loop for the elliptic problem: sweep the training set with
/// the certified estimator, extend with the truth snapshot at the argmax,
/// repeat until the target, a full basis, or a rejected extension.
pub fn run_greedy(
    problem: &TruthProblem,
    config: &GreedyConfig,
) -> Result<(ReducedBasis, ReducedModel, GreedyTrace)> {
    config.validate()?;
    for mu in &config.training_set {
        problem.domain.check_member(mu)?;
    }
    let gammas = continuity_constants(problem)?;
    let mut basis = ReducedBasis::empty(problem.n_dof());
    let mut iterations = Vec::new();
    let mut error_tables = Vec::new();
    let stop_reason;
    loop {
        let model = project_with_continuity(problem, &basis, &gammas)?;
        let bounds: Vec<f64> = config
            .training_set
            .par_iter()
            .map(|mu| {
                let sol = solve_reduced(&model, mu)?;
                Ok(certify(&model, mu, &sol)?.error_bound)
            })
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::Numerical(format!("estimator sweep failed: {e}")))?;
        error_tables.push(bounds.clone());
        let mut kstar = argmax_lowest_index(&bounds);
        let max_bound = bounds[kstar];
        if basis.n() == 0 {
            if let Some(seed) = &config.seed_parameter {
                problem.domain.check_member(seed)?;
                if let Some(k) = config.training_set.iter().position(|m| m == seed) {
                    kstar = k;
                }
            }
        }
        let selected = if basis.n() == 0 && config.seed_parameter.is_some() {
            config.seed_parameter.clone().unwrap()
        } else {
            config.training_set[kstar].clone()
        };
        let mut record = GreedyIteration {
            selected_mu: selected.clone(),
            max_estimated_error: max_bound,
            basis_size_after: basis.n(),
            modes_added: 0,
            max_true_error: None,
        };
        if max_bound <= config.target_error {
            stop_reason = StopReason::TargetReached;
            iterations.push(record);
            return Ok((basis, model, GreedyTrace {
                iterations,
                error_tables,
                stop_reason,
            }));
        }
        if basis.n() >= config.max_basis_size {
            stop_reason = StopReason::BasisFull;
            iterations.push(record);
            return Ok((basis, model, GreedyTrace {
                iterations,
                error_tables,
                stop_reason,
            }));
        }
        let snapshot = solve_truth(problem, &selected)?;
        match orthonormalize_extend(&basis, &snapshot.coefficients, &problem.inner_product) {
            Ok(extended) => {
                basis = extended;
                basis.snapshot_parameters.push(selected);
                record.basis_size_after = basis.n();
                record.modes_added = 1;
                iterations.push(record);
            }
            Err(Error::DependentVector { .. }) => {
                stop_reason = StopReason::ExtensionRejected;
                iterations.push(record);
                return Ok((basis, model, GreedyTrace {
                    iterations,
                    error_tables,
                    stop_reason,
                }));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Reduced-order data for the parabolic problem: the elliptic reduced model
/// plus the reduced mass matrix and the extended residual factor with
/// representer columns `[f | A_q v_n (q major) | M v_n]`.
#[derive(Debug, Clone)]
pub struct ParabolicReducedModel {
    pub model: ReducedModel,
    pub reduced_mass: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

/// Project the parabolic problem onto a basis. `continuity` as in
/// [`project_with_continuity`].
pub fn project_parabolic(
    problem: &TruthProblem,
    basis: &ReducedBasis,
    continuity: &[f64],
) -> Result<ParabolicReducedModel> {
    let mass = problem.mesh_meta.mass.as_ref().ok_or_else(|| {
        Error::InvalidInput("problem has no mass matrix; POD-Greedy unavailable".into())
    })?;
    let model = project_with_continuity(problem, basis, continuity)?;
    let n = problem.n_dof();
    let nb = basis.n();
    let q_count = problem.n_terms();
    let chol = BandCholesky::factor(&problem.inner_product)?;
    let mut builder = RieszFactorBuilder::new(1 + (q_count + 1) * nb);
    let rf = chol.solve(&problem.load);
    builder.push(rf, problem.load.clone_owned());
    for t in problem.operator.terms() {
        for j in 0..nb {
            let w = t.matrix.matvec(&basis.matrix.column(j).into_owned());
            let y = chol.solve(&w);
            builder.push(y, w);
        }
    }
    let mut mv = DMatrix::zeros(n, nb);
    for j in 0..nb {
        let w = mass.matvec(&basis.matrix.column(j).into_owned());
        mv.set_column(j, &w);
        let y = chol.solve(&w);
        builder.push(y, w);
    }
    Ok(ParabolicReducedModel {
        reduced_mass: basis.matrix.tr_mul(&mv),
        factor: builder.finish(),
        model,
    })
}

impl ParabolicReducedModel {
    /// Implicit-Euler trajectory in the reduced space starting from zero;
    /// returns `k_steps + 1` coordinate vectors.
    pub fn reduced_trajectory(
        &self,
        mu: &Parameter,
        dt: f64,
        k_steps: usize,
    ) -> Result<Vec<DVector<f64>>> {
        let theta = self.model.theta(mu)?;
        let nb = self.model.n();
        let mut states = Vec::with_capacity(k_steps + 1);
        states.push(DVector::zeros(nb));
        if nb == 0 {
            states.resize(k_steps + 1, DVector::zeros(0));
            return Ok(states);
        }
        let mut b = self.reduced_mass.clone();
        for (t, m) in theta.iter().zip(&self.model.reduced_terms) {
            b += m * (dt * t);
        }
        let chol = Cholesky::new(b).ok_or_else(|| {
            Error::ReducedCoercivityLoss(format!("reduced parabolic system not SPD at {mu}"))
        })?;
        let dtf = dt * &self.model.reduced_load;
        for _ in 0..k_steps {
            let rhs = &self.reduced_mass * states.last().unwrap() + &dtf;
            states.push(chol.solve(&rhs));
        }
        Ok(states)
    }

    /// Stepwise residual dual norms of a reduced trajectory (one per step):
    /// the residual of `f - M du/dt - A(mu) u^{k+1}` in the dual metric.
    pub fn step_residuals(
        &self,
        mu: &Parameter,
        dt: f64,
        states: &[DVector<f64>],
    ) -> Result<Vec<f64>> {
        let theta = self.model.theta(mu)?;
        let nb = self.model.n();
        let q_count = self.model.n_terms();
        let mut out = Vec::with_capacity(states.len().saturating_sub(1));
        let mut c = DVector::zeros(1 + (q_count + 1) * nb);
        for k in 1..states.len() {
            let unew = &states[k];
            let d = (unew - &states[k - 1]) / dt;
            c[0] = 1.0;
            for q in 0..q_count {
                for j in 0..nb {
                    c[1 + q * nb + j] = -theta[q] * unew[j];
                }
            }
            for j in 0..nb {
                c[1 + q_count * nb + j] = -d[j];
            }
            out.push((&self.factor * &c).norm());
        }
        Ok(out)
    }

    /// Time-integrated error surrogate
    /// `sqrt(sum_k dt (eta_k / C_lb)^2)` over the reduced trajectory.
    pub fn surrogate(&self, mu: &Parameter, dt: f64, k_steps: usize) -> Result<f64> {
        let clb = coercivity_lower_bound(&self.model, mu)?;
        let states = self.reduced_trajectory(mu, dt, k_steps)?;
        let etas = self.step_residuals(mu, dt, &states)?;
        Ok(etas.iter().map(|e| dt * (e / clb) * (e / clb)).sum::<f64>().sqrt())
    }
}

/// POD-Greedy for the parabolic problem: select the worst training
/// trajectory by the time-integrated surrogate, extend the basis with POD
/// modes of its projection defect, repeat.
pub fn run_pod_greedy(
    problem: &TruthProblem,
    config: &GreedyConfig,
    dt: f64,
    t_final: f64,
) -> Result<(ReducedBasis, ReducedModel, GreedyTrace)> {
    config.validate()?;
    for mu in &config.training_set {
        problem.domain.check_member(mu)?;
    }
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(Error::InvalidInput("dt and t_final must be positive".into()));
    }
    let k_steps_f = t_final / dt;
    let k_steps = k_steps_f.round();
    if !(k_steps >= 1.0) || (k_steps_f - k_steps).abs() > 1e-12 * k_steps.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "t_final {t_final} is not a positive multiple of dt {dt}"
        )));
    }
    let k_steps = k_steps as usize;
    let x = &problem.inner_product;
    let gammas = continuity_constants(problem)?;
    let mut basis = ReducedBasis::empty(problem.n_dof());
    let mut iterations = Vec::new();
    let mut error_tables = Vec::new();
    loop {
        let prm = project_parabolic(problem, &basis, &gammas)?;
        let surrs: Vec<f64> = config
            .training_set
            .par_iter()
            .map(|mu| prm.surrogate(mu, dt, k_steps))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::Numerical(format!("surrogate sweep failed: {e}")))?;
        error_tables.push(surrs.clone());
        let kstar = argmax_lowest_index(&surrs);
        let max_surr = surrs[kstar];
        let selected = config.training_set[kstar].clone();
        let mut record = GreedyIteration {
            selected_mu: selected.clone(),
            max_estimated_error: max_surr,
            basis_size_after: basis.n(),
            modes_added: 0,
            max_true_error: None,
        };
        let finish = |reason: StopReason,
                      iterations: Vec<GreedyIteration>,
                      error_tables: Vec<Vec<f64>>,
                      basis: ReducedBasis,
                      model: ReducedModel| {
            Ok((basis, model, GreedyTrace {
                iterations,
                error_tables,
                stop_reason: reason,
            }))
        };
        if max_surr == 0.0 {
            iterations.push(record);
            return finish(StopReason::TrivialDynamics, iterations, error_tables, basis, prm.model);
        }
        if max_surr <= config.target_error {
            iterations.push(record);
            return finish(StopReason::TargetReached, iterations, error_tables, basis, prm.model);
        }
        if basis.n() >= config.max_basis_size {
            iterations.push(record);
            return finish(StopReason::BasisFull, iterations, error_tables, basis, prm.model);
        }
        let traj = solve_parabolic(
            problem,
            &selected,
            dt,
            t_final,
            &DVector::zeros(problem.n_dof()),
        )?;
        let defects: Vec<DVector<f64>> = traj
            .states
            .iter()
            .map(|s| {
                if basis.n() == 0 {
                    s.clone_owned()
                } else {
                    s - basis.lift(&basis.project_coefficients(x, s))
                }
            })
            .collect();
        let pod_result = pod(&defects, x, config.pod_modes_per_iter)?;
        let mut added = 0usize;
        for k in 0..pod_result.modes.ncols() {
            if basis.n() >= config.max_basis_size {
                break;
            }
            match orthonormalize_extend(&basis, &pod_result.modes.column(k).into_owned(), x) {
                Ok(extended) => {
                    basis = extended;
                    basis.snapshot_parameters.push(selected.clone());
                    added += 1;
                }
                Err(Error::DependentVector { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        if added == 0 {
            iterations.push(record);
            return finish(StopReason::ExtensionRejected, iterations, error_tables, basis, prm.model);
        }
        record.basis_size_after = basis.n();
        record.modes_added = added;
        iterations.push(record);
    }
}

/// Computable weak-greedy parameter estimate:
/// `min over the training set of (continuity_UB / coercivity_LB)^-2`.
pub fn weak_greedy_gamma(model: &ReducedModel, training_set: &[Parameter]) -> Result<f64> {
    if training_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut gamma = f64::INFINITY;
    for mu in training_set {
        let ub = continuity_upper_bound(model, mu)?;
        let lb = coercivity_lower_bound(model, mu)?;
        gamma = gamma.min((ub / lb).powi(-2));
    }
    Ok(gamma)
}

/// Least-squares fit of `ln(values[i])` against `i^exponent`; returns
/// `(slope, r_squared)`. Used to check convergence curves against the
/// `C exp(-c N^{1/Q})` form.
pub fn log_fit(values: &[f64], exponent: f64) -> (f64, f64) {
    let m = values.len();
    assert!(m >= 2, "need at least two points to fit");
    let xs: Vec<f64> = (0..m).map(|i| (i as f64).powf(exponent)).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let xm = xs.iter().sum::<f64>() / m as f64;
    let ym = ys.iter().sum::<f64>() / m as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = slope * x + intercept;
            (y - p) * (y - p)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}
