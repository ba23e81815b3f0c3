//! Parameter domains, affine operator decompositions and training-set
//! sampling.
//!
//! A parametric bilinear form is represented in affinely decomposed form
//! `A(mu) = sum_q theta_q(mu) A_q` with scalar coefficient functions
//! `theta_q` and parameter-independent sparse symmetric components `A_q`.
//! All reduced-order data downstream is indexed by the term order fixed here.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{csr_linear_combination, CsrMatrix};

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub values: Vec<f64>,
}

impl Parameter {
    pub fn new(values: Vec<f64>) -> Self {
        Parameter { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Axis-aligned compact box in `R^P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "domain bounds of lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l <= u) {
                return Err(Error::InvalidInput(format!(
                    "domain bound {l} exceeds {u}"
                )));
            }
        }
        Ok(ParameterDomain { lower, upper })
    }

    /// Hypercube `[lo, hi]^p`.
    pub fn cube(p: usize, lo: f64, hi: f64) -> Result<Self> {
        ParameterDomain::new(vec![lo; p], vec![hi; p])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, mu: &Parameter) -> bool {
        mu.dim() == self.dim()
            && mu
                .values
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Validate membership, distinguishing dimension mismatches from
    /// out-of-box points.
    pub fn check_member(&self, mu: &Parameter) -> Result<()> {
        if mu.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "parameter has dimension {}, domain has {}",
                mu.dim(),
                self.dim()
            )));
        }
        if !self.contains(mu) {
            return Err(Error::OutOfDomain(format!(
                "{mu} is outside the domain box"
            )));
        }
        Ok(())
    }
}

/// Closed enumeration of coefficient functions `theta_q`, chosen so that
/// models serialize exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientFunction {
    /// `theta(mu) = mu_i`
    Component { index: usize },
    /// `theta(mu) = value`
    Constant { value: f64 },
    /// `theta(mu) = factor * mu_i`
    Scaled { factor: f64, index: usize },
    /// `theta(mu) = constant + sum_i weights[i] * mu_i`
    Affine { constant: f64, weights: Vec<f64> },
}

impl CoefficientFunction {
    pub fn evaluate(&self, mu: &Parameter) -> Result<f64> {
        let get = |i: usize| -> Result<f64> {
            mu.values.get(i).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "coefficient references mu_{i} but parameter has dimension {}",
                    mu.dim()
                ))
            })
        };
        match self {
            CoefficientFunction::Component { index } => get(*index),
            CoefficientFunction::Constant { value } => Ok(*value),
            CoefficientFunction::Scaled { factor, index } => Ok(factor * get(*index)?),
            CoefficientFunction::Affine { constant, weights } => {
                if weights.len() != mu.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "affine coefficient with {} weights applied to dimension {}",
                        weights.len(),
                        mu.dim()
                    )));
                }
                Ok(constant
                    + weights
                        .iter()
                        .zip(&mu.values)
                        .map(|(w, v)| w * v)
                        .sum::<f64>())
            }
        }
    }

    /// Conservative positivity check over the whole domain box (interval
    /// arithmetic); a `true` flag certifies `theta(mu) > 0` for all admissible
    /// `mu`, which is required by the min-theta coercivity bound.
    pub fn positive_on(&self, domain: &ParameterDomain) -> bool {
        let lo = domain.lower();
        let hi = domain.upper();
        match self {
            CoefficientFunction::Component { index } => {
                *index < domain.dim() && lo[*index] > 0.0
            }
            CoefficientFunction::Constant { value } => *value > 0.0,
            CoefficientFunction::Scaled { factor, index } => {
                if *index >= domain.dim() {
                    return false;
                }
                let (a, b) = (factor * lo[*index], factor * hi[*index]);
                a.min(b) > 0.0
            }
            CoefficientFunction::Affine { constant, weights } => {
                if weights.len() != domain.dim() {
                    return false;
                }
                let min: f64 = constant
                    + weights
                        .iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(w, (l, u))| (w * l).min(w * u))
                        .sum::<f64>();
                min > 0.0
            }
        }
    }
}

/// One term of an affine decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTerm {
    pub coefficient: CoefficientFunction,
    pub matrix: CsrMatrix,
}

/// Affinely decomposed parametric operator `A(mu) = sum_q theta_q(mu) A_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineOperator {
    terms: Vec<AffineTerm>,
}

impl AffineOperator {
    pub fn new(terms: Vec<AffineTerm>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidInput("affine operator needs at least one term".into()))?;
        let (r, c) = (first.matrix.nrows(), first.matrix.ncols());
        if r != c {
            return Err(Error::DimensionMismatch(
                "affine operator components must be square".into(),
            ));
        }
        for t in &terms {
            if t.matrix.nrows() != r || t.matrix.ncols() != c {
                return Err(Error::DimensionMismatch(
                    "affine operator components differ in size".into(),
                ));
            }
        }
        Ok(AffineOperator { terms })
    }

    pub fn terms(&self) -> &[AffineTerm] {
        &self.terms
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn dim(&self) -> usize {
        self.terms[0].matrix.nrows()
    }

    pub fn coefficients(&self) -> Vec<CoefficientFunction> {
        self.terms.iter().map(|t| t.coefficient.clone()).collect()
    }
}

/// Evaluate `(theta_1(mu), ..., theta_Q(mu))` in term order.
pub fn evaluate_coefficients(op: &AffineOperator, mu: &Parameter) -> Result<Vec<f64>> {
    op.terms
        .iter()
        .map(|t| t.coefficient.evaluate(mu))
        .collect()
}

/// Assemble `sum_q theta_q(mu) A_q` over the union sparsity pattern.
pub fn assemble(op: &AffineOperator, mu: &Parameter) -> Result<CsrMatrix> {
    let theta = evaluate_coefficients(op, mu)?;
    let terms: Vec<(f64, &CsrMatrix)> = theta
        .iter()
        .zip(&op.terms)
        .map(|(&c, t)| (c, &t.matrix))
        .collect();
    csr_linear_combination(&terms)
}

/// Training-set sampling strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Tensor grid with `points_per_axis` uniformly spaced points per axis,
    /// including the box corners.
    UniformGrid { points_per_axis: usize },
    /// `count` independent uniform samples, reproducible from `seed`.
    Random { count: usize, seed: u64 },
}

/// Draw a training set from the domain.
pub fn sample_training_set(
    domain: &ParameterDomain,
    strategy: &SamplingStrategy,
) -> Result<Vec<Parameter>> {
    let p = domain.dim();
    match strategy {
        SamplingStrategy::UniformGrid { points_per_axis } => {
            let k = *points_per_axis;
            if k < 2 {
                return Err(Error::InvalidInput(
                    "grid sampling needs at least 2 points per axis".into(),
                ));
            }
            let total = k.checked_pow(p as u32).ok_or_else(|| {
                Error::InvalidInput("grid training set size overflows".into())
            })?;
            let mut out = Vec::with_capacity(total);
            for flat in 0..total {
                let mut values = vec![0.0; p];
                let mut rem = flat;
                // axis 0 varies slowest
                for axis in (0..p).rev() {
                    let idx = rem % k;
                    rem /= k;
                    let (l, u) = (domain.lower()[axis], domain.upper()[axis]);
                    values[axis] = l + (u - l) * idx as f64 / (k - 1) as f64;
                }
                out.push(Parameter::new(values));
            }
            Ok(out)
        }
        SamplingStrategy::Random { count, seed } => {
            if *count == 0 {
                return Err(Error::InvalidInput("empty random training set".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::with_capacity(*count);
            for _ in 0..*count {
                let values = (0..p)
                    .map(|axis| {
                        let (l, u) = (domain.lower()[axis], domain.upper()[axis]);
                        l + (u - l) * rng.random::<f64>()
                    })
                    .collect();
                out.push(Parameter::new(values));
            }
            Ok(out)
        }
    }
}

/// Log-uniform random samples in the box; used for validation sweeps where
/// wide multiplicative parameter ranges should be covered evenly per decade.
/// Requires strictly positive lower bounds.
pub fn sample_log_uniform(
    domain: &ParameterDomain,
    count: usize,
    seed: u64,
) -> Result<Vec<Parameter>> {
    if count == 0 {
        return Err(Error::InvalidInput("empty sample request".into()));
    }
    if domain.lower().iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidInput(
            "log-uniform sampling needs positive lower bounds".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = domain.dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let values = (0..p)
            .map(|axis| {
                let (l, u) = (domain.lower()[axis].ln(), domain.upper()[axis].ln());
                (l + (u - l) * rng.random::<f64>()).exp()
            })
            .collect();
        out.push(Parameter::new(values));
    }
    Ok(out)
}

/// Apply the assembled operator without forming it: `sum_q theta_q (A_q v)`.
pub fn apply(op: &AffineOperator, theta: &[f64], v: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(op.dim());
    for (t, &c) in op.terms.iter().zip(theta) {
        y += c * t.matrix.matvec(v);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_op(q: usize, n: usize, seed: u64) -> AffineOperator {
        // random symmetric components on a shared pattern
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for _ in 0..q {
            let mut trips = Vec::new();
            for i in 0..n {
                trips.push((i, i, 2.0 + rng.random::<f64>()));
                if i + 1 < n {
                    let v = rng.random::<f64>() - 0.5;
                    trips.push((i, i + 1, v));
                    trips.push((i + 1, i, v));
                }
            }
            terms.push(AffineTerm {
                coefficient: CoefficientFunction::Component { index: terms.len() },
                matrix: CsrMatrix::from_triplets(n, n, &trips),
            });
        }
        AffineOperator::new(terms).unwrap()
    }

    #[test]
    fn evaluate_identity_coefficients() {
        let op = block_op(4, 3, 0);
        let mu = Parameter::new(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(evaluate_coefficients(&op, &mu).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn evaluate_constant_and_component() {
        let c = CoefficientFunction::Constant { value: 2.5 };
        let mu = Parameter::new(vec![0.1, 10.0]);
        assert_eq!(c.evaluate(&mu).unwrap(), 2.5);
        let c0 = CoefficientFunction::Component { index: 0 };
        let c1 = CoefficientFunction::Component { index: 1 };
        assert_eq!(c0.evaluate(&mu).unwrap(), 0.1);
        assert_eq!(c1.evaluate(&mu).unwrap(), 10.0);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let c = CoefficientFunction::Component { index: 3 };
        let mu = Parameter::new(vec![1.0, 2.0]);
        assert!(matches!(
            c.evaluate(&mu),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn assemble_single_term_identity() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 3.0), (1, 1, 4.0)]);
        let op = AffineOperator::new(vec![AffineTerm {
            coefficient: CoefficientFunction::Constant { value: 1.0 },
            matrix: m.clone(),
        }])
        .unwrap();
        let a = assemble(&op, &Parameter::new(vec![])).unwrap();
        assert_eq!(a, m);
    }

    #[test]
    fn assemble_homogeneity() {
        let op = block_op(2, 6, 5);
        let mu = Parameter::new(vec![0.7, 1.3]);
        let mu2 = Parameter::new(vec![1.4, 2.6]);
        let a = assemble(&op, &mu).unwrap().to_dense();
        let a2 = assemble(&op, &mu2).unwrap().to_dense();
        assert!((a2 - 2.0 * a).amax() < 1e-13);
    }

    #[test]
    fn assemble_matches_dense_oracle() {
        let op = block_op(2, 8, 9);
        let mu = Parameter::new(vec![0.37, 2.11]);
        let a = assemble(&op, &mu).unwrap().to_dense();
        let oracle =
            0.37 * op.terms()[0].matrix.to_dense() + 2.11 * op.terms()[1].matrix.to_dense();
        let scale = oracle.amax();
        assert!((a - oracle).amax() < 1e-14 * scale);
    }

    #[test]
    fn grid_1d_three_points() {
        let d = ParameterDomain::new(vec![0.0], vec![1.0]).unwrap();
        let s = sample_training_set(
            &d,
            &SamplingStrategy::UniformGrid { points_per_axis: 3 },
        )
        .unwrap();
        let vals: Vec<f64> = s.iter().map(|p| p.values[0]).collect();
        assert_eq!(vals, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_2d_corners() {
        let d = ParameterDomain::cube(2, 0.0, 1.0).unwrap();
        let s = sample_training_set(
            &d,
            &SamplingStrategy::UniformGrid { points_per_axis: 2 },
        )
        .unwrap();
        assert_eq!(s.len(), 4);
        let expect = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        for e in expect {
            assert!(s.iter().any(|p| p.values == e));
        }
    }

    #[test]
    fn random_sampling_deterministic() {
        let d = ParameterDomain::cube(3, -1.0, 2.0).unwrap();
        let strat = SamplingStrategy::Random {
            count: 100,
            seed: 42,
        };
        let a = sample_training_set(&d, &strat).unwrap();
        let b = sample_training_set(&d, &strat).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn empty_request_rejected() {
        let d = ParameterDomain::cube(1, 0.0, 1.0).unwrap();
        assert!(sample_training_set(
            &d,
            &SamplingStrategy::Random { count: 0, seed: 0 }
        )
        .is_err());
        assert!(sample_training_set(
            &d,
            &SamplingStrategy::UniformGrid { points_per_axis: 1 }
        )
        .is_err());
    }

    #[test]
    fn positivity_flags_on_samples() {
        let d = ParameterDomain::cube(2, 0.1, 10.0).unwrap();
        let c = CoefficientFunction::Component { index: 1 };
        assert!(c.positive_on(&d));
        let samples = sample_training_set(
            &d,
            &SamplingStrategy::Random {
                count: 10_000,
                seed: 3,
            },
        )
        .unwrap();
        assert!(samples.iter().all(|mu| c.evaluate(mu).unwrap() > 0.0));
        let d2 = ParameterDomain::new(vec![-1.0, 0.1], vec![1.0, 2.0]).unwrap();
        let c0 = CoefficientFunction::Component { index: 0 };
        assert!(!c0.positive_on(&d2));
    }

    proptest! {
        #[test]
        fn assembly_commutes_with_application(
            m0 in 0.05f64..10.0,
            m1 in 0.05f64..10.0,
            seed in 0u64..50,
        ) {
            let op = block_op(2, 10, seed);
            let mu = Parameter::new(vec![m0, m1]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let v = DVector::from_fn(10, |_, _| rng.random::<f64>() - 0.5);
            let a = assemble(&op, &mu).unwrap();
            let theta = evaluate_coefficients(&op, &mu).unwrap();
            let lhs = a.matvec(&v);
            let rhs = apply(&op, &theta, &v);
            let scale = lhs.norm().max(1e-30);
            prop_assert!((lhs - rhs).norm() <= 1e-13 * scale);
        }

        #[test]
        fn grid_has_k_pow_p_elements(k in 2usize..5, p in 1usize..4) {
            let d = ParameterDomain::cube(p, 0.0, 1.0).unwrap();
            let s = sample_training_set(
                &d,
                &SamplingStrategy::UniformGrid { points_per_axis: k },
            ).unwrap();
            prop_assert_eq!(s.len(), k.pow(p as u32));
            prop_assert!(s.iter().all(|x| d.contains(x)));
        }
    }
}
