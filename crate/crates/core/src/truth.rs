//! Truth discretizations: the 2D thermal-block elliptic problem, its 1D
//! Poisson analogue, implicit-Euler parabolic stepping, and exact snapshot
//! generation for the 1D advection transport problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{
    assemble, evaluate_coefficients, AffineOperator, AffineTerm, CoefficientFunction, Parameter,
    ParameterDomain,
};
use crate::error::{Error, Result};
use crate::linalg::{csr_linear_combination, BandCholesky, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeshKind {
    ThermalBlock2D,
    Interval1D,
    Custom,
}

/// Mesh descriptor carried by a truth problem; holds the consistent mass
/// matrix when the problem supports parabolic stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshMeta {
    pub kind: MeshKind,
    pub cells_per_axis: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub mass: Option<CsrMatrix>,
}

/// Reference data for the min-theta coercivity lower bound: the reference
/// parameter and the exact coercivity constant of `a_mu_bar` in the X-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRef {
    pub mu_bar: Parameter,
    pub c_ref: f64,
}

/// High-dimensional reference ("truth") discretization of a parametrized
/// coercive problem `A(mu) u = f` with output functionals and an SPD inner
/// product matrix `X` defining the norm in which errors are certified.
#[derive(Debug, Clone)]
pub struct TruthProblem {
    pub operator: AffineOperator,
    pub load: DVector<f64>,
    /// S output row functionals (S x n_h).
    pub outputs: DMatrix<f64>,
    pub inner_product: CsrMatrix,
    pub mesh_meta: MeshMeta,
    pub domain: ParameterDomain,
    pub coercivity_ref: CoercivityRef,
}

impl TruthProblem {
    pub fn n_dof(&self) -> usize {
        self.load.len()
    }

    pub fn n_terms(&self) -> usize {
        self.operator.n_terms()
    }
}

/// Solution of the truth problem at one parameter.
#[derive(Debug, Clone)]
pub struct TruthSolution {
    pub coefficients: DVector<f64>,
    pub parameter: Parameter,
}

/// Implicit-Euler trajectory of the parabolic problem.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `K + 1` states including the initial condition.
    pub states: Vec<DVector<f64>>,
    pub dt: f64,
    pub t_final: f64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Build the 2D thermal-block problem on the unit square: P1 elements on a
/// structured triangular mesh, homogeneous Dirichlet boundary, unit source.
///
/// The domain splits into `blocks_x * blocks_y` rectangular blocks with
/// per-block diffusivities `mu_q`, giving the affine decomposition
/// `A(mu) = sum_q mu_q A_q`. The inner product is `X = A(mu_bar)` with
/// `mu_bar = (1, ..., 1)`, which makes the reference coercivity exactly 1.
/// The single output is the mean of the solution over the domain.
pub fn build_thermal_block(
    blocks_x: usize,
    blocks_y: usize,
    cells_per_axis: usize,
    mu_bounds: (f64, f64),
) -> Result<TruthProblem> {
    let (mu_min, mu_max) = mu_bounds;
    if blocks_x < 1 || blocks_y < 1 {
        return Err(Error::InvalidInput("block counts must be at least 1".into()));
    }
    if cells_per_axis % blocks_x != 0 || cells_per_axis % blocks_y != 0 {
        return Err(Error::InvalidInput(format!(
            "cells_per_axis {cells_per_axis} not divisible by block counts {blocks_x}x{blocks_y}"
        )));
    }
    if !(0.0 < mu_min && mu_min < mu_max) {
        return Err(Error::InvalidInput(format!(
            "need 0 < mu_min < mu_max, got [{mu_min}, {mu_max}]"
        )));
    }
    let c = cells_per_axis;
    let q_count = blocks_x * blocks_y;
    let h = 1.0 / c as f64;
    let nn = (c + 1) * (c + 1);
    let nid = |i: usize, j: usize| j * (c + 1) + i;

    let mut stiff_trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); q_count];
    let mut mass_trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut load = vec![0.0f64; nn];

    // P1 stiffness of a triangle with vertices p1, p2, p3 for unit
    // diffusivity: K_ab = (b_a b_b + c_a c_b) / (4 |T|) with the usual
    // barycentric gradient coefficients.
    let tri_stiff = |p: [(f64, f64); 3]| -> ([[f64; 3]; 3], f64) {
        let [(x1, y1), (x2, y2), (x3, y3)] = p;
        let area = 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)).abs();
        let b = [y2 - y3, y3 - y1, y1 - y2];
        let cc = [x3 - x2, x1 - x3, x2 - x1];
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for bi in 0..3 {
                k[a][bi] = (b[a] * b[bi] + cc[a] * cc[bi]) / (4.0 * area);
            }
        }
        (k, area)
    };

    for j in 0..c {
        for i in 0..c {
            let qx = i * blocks_x / c;
            let qy = j * blocks_y / c;
            let q = qy * blocks_x + qx;
            let (xi, yj) = (i as f64 * h, j as f64 * h);
            let a = (xi, yj);
            let b = (xi + h, yj);
            let d = (xi, yj + h);
            let e = (xi + h, yj + h);
            let (na, nb, nd, ne) = (nid(i, j), nid(i + 1, j), nid(i, j + 1), nid(i + 1, j + 1));
            for (tri, ids) in [
                ([a, b, e], [na, nb, ne]),
                ([a, e, d], [na, ne, nd]),
            ] {
                let (k, area) = tri_stiff(tri);
                for ii in 0..3 {
                    load[ids[ii]] += area / 3.0;
                    for jj in 0..3 {
                        stiff_trips[q].push((ids[ii], ids[jj], k[ii][jj]));
                        let m = if ii == jj { 2.0 } else { 1.0 } * area / 12.0;
                        mass_trips.push((ids[ii], ids[jj], m));
                    }
                }
            }
        }
    }

    // interior nodes in natural order; boundary rows/cols eliminated
    let mut idx = vec![usize::MAX; nn];
    let mut n_int = 0usize;
    for j in 1..c {
        for i in 1..c {
            idx[nid(i, j)] = n_int;
            n_int += 1;
        }
    }
    let restrict = |trips: &[(usize, usize, f64)]| -> CsrMatrix {
        let kept: Vec<(usize, usize, f64)> = trips
            .iter()
            .filter(|(r, cc, _)| idx[*r] != usize::MAX && idx[*cc] != usize::MAX)
            .map(|&(r, cc, v)| (idx[r], idx[cc], v))
            .collect();
        CsrMatrix::from_triplets(n_int, n_int, &kept)
    };

    let mut terms = Vec::with_capacity(q_count);
    for (q, trips) in stiff_trips.iter().enumerate() {
        terms.push(AffineTerm {
            coefficient: CoefficientFunction::Component { index: q },
            matrix: restrict(trips),
        });
    }
    let operator = AffineOperator::new(terms)?;
    let mass = restrict(&mass_trips);
    let load_int = DVector::from_iterator(
        n_int,
        (0..nn).filter(|&n| idx[n] != usize::MAX).map(|n| load[n]),
    );

    let domain = ParameterDomain::cube(q_count, mu_min, mu_max)?;
    let mu_bar = Parameter::new(vec![1.0; q_count]);
    let inner_product = assemble(&operator, &mu_bar)?;
    // output: domain mean = integral of u over the unit square = f^T u
    let outputs = DMatrix::from_fn(1, n_int, |_, j| load_int[j]);

    Ok(TruthProblem {
        operator,
        load: load_int,
        outputs,
        inner_product,
        mesh_meta: MeshMeta {
            kind: MeshKind::ThermalBlock2D,
            cells_per_axis: c,
            blocks_x,
            blocks_y,
            mass: Some(mass),
        },
        domain,
        coercivity_ref: CoercivityRef { mu_bar, c_ref: 1.0 },
    })
}

/// 1D analogue: `-mu u'' = 1` on (0,1) with zero boundary values, P1
/// elements on a uniform mesh. Q = 1 with `theta_1(mu) = mu_1`.
pub fn build_poisson_1d(cells: usize, mu_bounds: (f64, f64)) -> Result<TruthProblem> {
    let (mu_min, mu_max) = mu_bounds;
    if cells < 2 {
        return Err(Error::InvalidInput("need at least 2 cells".into()));
    }
    if !(0.0 < mu_min && mu_min < mu_max) {
        return Err(Error::InvalidInput(format!(
            "need 0 < mu_min < mu_max, got [{mu_min}, {mu_max}]"
        )));
    }
    let n = cells - 1;
    let h = 1.0 / cells as f64;
    let mut stiff = Vec::new();
    let mut mass = Vec::new();
    for i in 0..n {
        stiff.push((i, i, 2.0 / h));
        mass.push((i, i, 4.0 * h / 6.0));
        if i + 1 < n {
            stiff.push((i, i + 1, -1.0 / h));
            stiff.push((i + 1, i, -1.0 / h));
            mass.push((i, i + 1, h / 6.0));
            mass.push((i + 1, i, h / 6.0));
        }
    }
    let a = CsrMatrix::from_triplets(n, n, &stiff);
    let operator = AffineOperator::new(vec![AffineTerm {
        coefficient: CoefficientFunction::Component { index: 0 },
        matrix: a,
    }])?;
    let mu_bar = Parameter::new(vec![1.0]);
    let inner_product = assemble(&operator, &mu_bar)?;
    let load = DVector::from_element(n, h);
    let outputs = DMatrix::from_fn(1, n, |_, j| load[j]);
    Ok(TruthProblem {
        operator,
        load,
        outputs,
        inner_product,
        mesh_meta: MeshMeta {
            kind: MeshKind::Interval1D,
            cells_per_axis: cells,
            blocks_x: 1,
            blocks_y: 1,
            mass: Some(CsrMatrix::from_triplets(n, n, &mass)),
        },
        domain: ParameterDomain::cube(1, mu_min, mu_max)?,
        coercivity_ref: CoercivityRef { mu_bar, c_ref: 1.0 },
    })
}

/// Sparse-direct (band Cholesky) solve of `A(mu) u = f`, with one iterative
/// refinement step and a residual guard of `1e-10 ||f||`.
pub fn solve_truth(problem: &TruthProblem, mu: &Parameter) -> Result<TruthSolution> {
    problem.domain.check_member(mu)?;
    let a = assemble(&problem.operator, mu)?;
    let chol = BandCholesky::factor(&a)
        .map_err(|_| Error::CoercivityLoss(format!("truth operator not SPD at {mu}")))?;
    let u = chol.solve_refined(&a, &problem.load);
    let res = (&problem.load - a.matvec(&u)).norm();
    if res > 1e-10 * problem.load.norm() {
        return Err(Error::Numerical(format!(
            "truth solve residual {res:.3e} exceeds tolerance at {mu}"
        )));
    }
    Ok(TruthSolution {
        coefficients: u,
        parameter: mu.clone(),
    })
}

/// Implicit Euler on `M du/dt + A(mu) u = f`: each step solves
/// `(M + dt A(mu)) u_{k+1} = M u_k + dt f`, with the factorization computed
/// once per call.
pub fn solve_parabolic(
    problem: &TruthProblem,
    mu: &Parameter,
    dt: f64,
    t_final: f64,
    initial: &DVector<f64>,
) -> Result<Trajectory> {
    problem.domain.check_member(mu)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let steps_f = t_final / dt;
    let steps = steps_f.round();
    if !(steps >= 1.0) || (steps_f - steps).abs() > 1e-12 * steps.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "t_final {t_final} is not a positive multiple of dt {dt}"
        )));
    }
    let k_steps = steps as usize;
    let mass = problem.mesh_meta.mass.as_ref().ok_or_else(|| {
        Error::InvalidInput("problem has no mass matrix; parabolic stepping unavailable".into())
    })?;
    if initial.len() != problem.n_dof() {
        return Err(Error::DimensionMismatch(format!(
            "initial condition of length {} for n_h = {}",
            initial.len(),
            problem.n_dof()
        )));
    }
    let theta = evaluate_coefficients(&problem.operator, mu)?;
    let mut combo: Vec<(f64, &CsrMatrix)> = vec![(1.0, mass)];
    for (t, &c) in problem.operator.terms().iter().zip(&theta) {
        combo.push((dt * c, &t.matrix));
    }
    let b = csr_linear_combination(&combo)?;
    let chol = BandCholesky::factor(&b)
        .map_err(|_| Error::CoercivityLoss(format!("parabolic operator not SPD at {mu}")))?;
    let mut states = Vec::with_capacity(k_steps + 1);
    states.push(initial.clone_owned());
    let dtf = dt * &problem.load;
    for _ in 0..k_steps {
        let rhs = mass.matvec(states.last().unwrap()) + &dtf;
        states.push(chol.solve_refined(&b, &rhs));
    }
    Ok(Trajectory {
        states,
        dt,
        t_final,
    })
}

/// Exact solutions of the linear advection problem `u_t + mu u_x = 0` on
/// (0,1) with `u(x,0) = 0`, `u(0,t) = 1`, sampled as cell averages on a
/// uniform grid: a unit front at `x = mu t`, with the cut cell averaged
/// exactly.
pub fn advection_snapshots(mu: f64, grid_n: usize, times: &[f64]) -> Result<Vec<DVector<f64>>> {
    if grid_n < 1 {
        return Err(Error::InvalidInput("grid_n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::OutOfDomain(format!("advection speed {mu} not in [0,1]")));
    }
    let h = 1.0 / grid_n as f64;
    Ok(times
        .iter()
        .map(|&t| {
            DVector::from_fn(grid_n, |i, _| {
                ((mu * t - i as f64 * h) / h).clamp(0.0, 1.0)
            })
        })
        .collect())
}

/// The L2 inner product on cell averages: `X = h I`.
pub fn advection_metric(grid_n: usize) -> CsrMatrix {
    CsrMatrix::identity_scaled(grid_n, 1.0 / grid_n as f64)
}
