//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line with its pinned tolerances. Heavy shared state (the
//! n_h ~ 1e4 truth problem, the trained model, the truth sweep) is built
//! once; a global lock serializes the tests so the timing measurement in
//! criterion 8 is not polluted by sibling tests.

use std::sync::{LazyLock, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbcert::affine::{assemble, sample_training_set, Parameter, SamplingStrategy};
use rbcert::greedy::{
    log_fit, orthonormalize_extend, project_parabolic, run_greedy, run_pod_greedy, GreedyConfig,
    GreedyTrace,
};
use rbcert::linalg::{BandCholesky, CsrMatrix};
use rbcert::nwidth::advection_nwidth_demo;
use rbcert::online::{
    certify, coercivity_lower_bound, continuity_constants, continuity_upper_bound,
    evaluate_outputs, project_with_continuity, residual_dual_norm, solve_reduced, ReducedBasis,
    ReducedModel,
};
use rbcert::truth::{build_thermal_block, solve_parabolic, solve_truth, TruthProblem};

static GUARD: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    GUARD.lock().unwrap_or_else(|e| e.into_inner())
}

/// 2x2 thermal block at n_h = 99^2 = 9801.
static PROBLEM: LazyLock<TruthProblem> =
    LazyLock::new(|| build_thermal_block(2, 2, 100, (0.1, 10.0)).unwrap());

/// Greedy-trained model on the 5^4 grid training set, target 1e-6, N <= 40.
static TRAINED: LazyLock<(ReducedBasis, ReducedModel, GreedyTrace)> = LazyLock::new(|| {
    let training = sample_training_set(
        &PROBLEM.domain,
        &SamplingStrategy::UniformGrid { points_per_axis: 5 },
    )
    .unwrap();
    let config = GreedyConfig {
        training_set: training,
        max_basis_size: 40,
        target_error: 1e-6,
        pod_modes_per_iter: 1,
        seed_parameter: None,
    };
    run_greedy(&PROBLEM, &config).unwrap()
});

/// 100 random test parameters with their truth solutions.
static SWEEP: LazyLock<Vec<(Parameter, DVector<f64>)>> = LazyLock::new(|| {
    sample_training_set(
        &PROBLEM.domain,
        &SamplingStrategy::Random {
            count: 100,
            seed: 42,
        },
    )
    .unwrap()
    .into_iter()
    .map(|mu| {
        let u = solve_truth(&PROBLEM, &mu).unwrap().coefficients;
        (mu, u)
    })
    .collect()
});

fn xnorm(x: &CsrMatrix, v: &DVector<f64>) -> f64 {
    v.dot(&x.matvec(v)).max(0.0).sqrt()
}

fn random_orthonormal_basis(problem: &TruthProblem, n: usize, seed: u64) -> ReducedBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = ReducedBasis::empty(problem.n_dof());
    while basis.n() < n {
        let v = DVector::from_fn(problem.n_dof(), |_, _| rng.random::<f64>() - 0.5);
        if let Ok(b) = orthonormalize_extend(&basis, &v, &problem.inner_product) {
            basis = b;
        }
    }
    basis
}

#[test]
fn criterion_1_offline_online_consistency() {
    let _g = lock();
    let problem = &*PROBLEM;
    let basis = random_orthonormal_basis(problem, 20, 11);
    let model = project_with_continuity(problem, &basis, &[1.0; 4]).unwrap();
    let x_chol = BandCholesky::factor(&problem.inner_product).unwrap();
    let mus = sample_training_set(
        &problem.domain,
        &SamplingStrategy::Random { count: 50, seed: 5 },
    )
    .unwrap();
    let mut max_res_rel = 0.0f64;
    let mut max_gal_rel = 0.0f64;
    for mu in &mus {
        let a = assemble(&problem.operator, mu).unwrap();
        let sol = solve_reduced(&model, mu).unwrap();
        // residual dual norm vs the truth-space oracle sqrt(r' X^-1 r)
        let eta = residual_dual_norm(&model, mu, &sol.coordinates).unwrap();
        let r = &problem.load - a.matvec(&basis.lift(&sol.coordinates));
        let oracle = r.dot(&x_chol.solve(&r)).max(0.0).sqrt();
        max_res_rel = max_res_rel.max((eta - oracle).abs() / oracle);
        // reduced solve vs the explicit truth-space Galerkin projection
        let mut av = DMatrix::zeros(problem.n_dof(), basis.n());
        for j in 0..basis.n() {
            av.set_column(j, &a.matvec(&basis.matrix.column(j).into_owned()));
        }
        let an = basis.matrix.tr_mul(&av);
        let fn_ = basis.matrix.tr_mul(&problem.load);
        let oracle_coords = an.lu().solve(&fn_).unwrap();
        max_gal_rel = max_gal_rel
            .max((&sol.coordinates - &oracle_coords).norm() / oracle_coords.norm());
    }
    let ok = max_res_rel <= 1e-8 && max_gal_rel <= 1e-12;
    println!(
        "criterion 1 {}: residual vs oracle rel {:.3e} (tol 1e-8), reduced solve vs Galerkin rel {:.3e} (tol 1e-12), n_h = {}, N = 20, 50 parameters",
        if ok { "PASS" } else { "FAIL" },
        max_res_rel,
        max_gal_rel,
        problem.n_dof()
    );
    assert!(ok);
}

#[test]
fn criterion_2_certificate_rigor_and_effectivity() {
    let _g = lock();
    let problem = &*PROBLEM;
    let (basis, model, _) = &*TRAINED;
    let mut rigor_violations = 0usize;
    let mut effectivity_violations = 0usize;
    for (mu, u) in SWEEP.iter() {
        let sol = solve_reduced(model, mu).unwrap();
        let cert = certify(model, mu, &sol).unwrap();
        let diff = u - basis.lift(&sol.coordinates);
        let true_err = xnorm(&problem.inner_product, &diff);
        if cert.error_bound + 1e-9 < true_err {
            rigor_violations += 1;
        }
        let ratio = continuity_upper_bound(model, mu).unwrap()
            / coercivity_lower_bound(model, mu).unwrap();
        if cert.error_bound > ratio * true_err + 1e-8 {
            effectivity_violations += 1;
        }
    }
    let ok = rigor_violations == 0 && effectivity_violations == 0;
    println!(
        "criterion 2 {}: {} rigor violations (slack 1e-9), {} effectivity violations (slack 1e-8) over {} parameters",
        if ok { "PASS" } else { "FAIL" },
        rigor_violations,
        effectivity_violations,
        SWEEP.len()
    );
    assert!(ok);
}

#[test]
fn criterion_3_cea_quasi_optimality() {
    let _g = lock();
    let problem = &*PROBLEM;
    let (basis, model, _) = &*TRAINED;
    let x = &problem.inner_product;
    let mut violations = 0usize;
    let mut worst_margin = f64::INFINITY;
    for (mu, u) in SWEEP.iter() {
        let sol = solve_reduced(model, mu).unwrap();
        let diff = u - basis.lift(&sol.coordinates);
        let true_err = xnorm(x, &diff);
        let best = u - basis.lift(&basis.project_coefficients(x, u));
        let defect = xnorm(x, &best);
        let ratio = continuity_upper_bound(model, mu).unwrap()
            / coercivity_lower_bound(model, mu).unwrap();
        let bound = ratio * defect + 1e-9;
        worst_margin = worst_margin.min(bound - true_err);
        if true_err > bound {
            violations += 1;
        }
    }
    let ok = violations == 0;
    println!(
        "criterion 3 {}: {} quasi-optimality violations (tol 1e-9 absolute), worst margin {:.3e}",
        if ok { "PASS" } else { "FAIL" },
        violations,
        worst_margin
    );
    assert!(ok);
}

#[test]
fn criterion_4_greedy_convergence_form() {
    let _g = lock();
    let (_, _, trace) = &*TRAINED;
    let errors = trace.max_errors();
    let reached = errors.last().map(|&e| e <= 1e-6).unwrap_or(false)
        && trace.iterations.last().unwrap().basis_size_after <= 40;
    let (slope, r2) = log_fit(&errors, 0.25);
    let ok = reached && slope < 0.0 && r2 >= 0.9;
    println!(
        "criterion 4 {}: reached 1e-6 at N = {} (within 40): {}; fit of log(error) vs N^(1/4): slope {:.3}, R^2 = {:.3} (need >= 0.9)",
        if ok { "PASS" } else { "FAIL" },
        trace.iterations.last().unwrap().basis_size_after,
        reached,
        slope,
        r2
    );
    assert!(ok, "greedy convergence-form criterion not met (R^2 = {r2:.3})");
}

#[test]
fn criterion_5_nwidth_lower_bound() {
    let _g = lock();
    let report = advection_nwidth_demo(256, 512, 32).unwrap();
    let allowance = (1.0f64 / 256.0).sqrt();
    let mut bound_violations = Vec::new();
    for (idx, &n) in report.n_values.iter().enumerate() {
        let lower = 0.5 / (n as f64).sqrt() - allowance;
        if report.pod_upper[idx] < lower {
            bound_violations.push((n, report.pod_upper[idx], lower));
        }
    }
    // log-log slope of pod_upper against N
    let xs: Vec<f64> = report.n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = report.pod_upper.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    let slope_ok = (-0.65..=-0.4).contains(&slope);
    let ok = bound_violations.is_empty() && slope_ok;
    println!(
        "criterion 5 {}: {} lower-bound violations (first: {:?}), log-log slope {:.3} (need [-0.65, -0.4])",
        if ok { "PASS" } else { "FAIL" },
        bound_violations.len(),
        bound_violations.first(),
        slope
    );
    assert!(
        ok,
        "N-width lower-bound criterion not met: violations {bound_violations:?}, slope {slope:.3}"
    );
}

#[test]
fn criterion_6_psi_function_facts() {
    let _g = lock();
    let grid = 256;
    let x = rbcert::truth::advection_metric(grid);
    let mut worst_norm_dev = 0.0f64;
    let mut worst_ortho = 0.0f64;
    for &big_n in &[1usize, 2, 4, 8, 16] {
        let psis: Vec<DVector<f64>> = (1..=big_n)
            .map(|n| rbcert::nwidth::psi_function(big_n, n, grid).unwrap())
            .collect();
        for (i, p) in psis.iter().enumerate() {
            let dev = (xnorm(&x, p) - (big_n as f64).powf(-0.5)).abs();
            worst_norm_dev = worst_norm_dev.max(dev);
            for q in psis.iter().skip(i + 1) {
                worst_ortho = worst_ortho.max(p.dot(&x.matvec(q)).abs());
            }
        }
    }
    let ok = worst_norm_dev <= 1e-14 && worst_ortho <= 1e-14;
    println!(
        "criterion 6 {}: max norm deviation {:.3e}, max pairwise inner product {:.3e} (tol 1e-14, N in {{1,2,4,8,16}})",
        if ok { "PASS" } else { "FAIL" },
        worst_norm_dev,
        worst_ortho
    );
    assert!(ok);
}

#[test]
fn criterion_7_pod_greedy() {
    let _g = lock();
    let problem = build_thermal_block(2, 2, 32, (1.0, 10.0)).unwrap();
    let dt = 0.01;
    let t_final = 0.5; // K = 50 steps
    let training = sample_training_set(
        &problem.domain,
        &SamplingStrategy::UniformGrid { points_per_axis: 3 },
    )
    .unwrap();
    let config = GreedyConfig {
        training_set: training,
        max_basis_size: 30,
        target_error: 1e-8,
        pod_modes_per_iter: 2,
        seed_parameter: None,
    };
    let (basis, _, trace) = run_pod_greedy(&problem, &config, dt, t_final).unwrap();
    let surrs = trace.max_errors();
    let enough = surrs.len() >= 10;
    let monotone = surrs.windows(2).all(|w| w[1] <= 1.01 * w[0]);
    // rigor on held-out parameters: surrogate vs the l2(dt)-accumulated
    // true trajectory error
    let gammas = continuity_constants(&problem).unwrap();
    let prm = project_parabolic(&problem, &basis, &gammas).unwrap();
    let held_out = sample_training_set(
        &problem.domain,
        &SamplingStrategy::Random { count: 5, seed: 7 },
    )
    .unwrap();
    let k_steps = 50;
    let mut rigor_violations = 0usize;
    let mut min_ratio = f64::INFINITY;
    for mu in &held_out {
        let surr = prm.surrogate(mu, dt, k_steps).unwrap();
        let truth = solve_parabolic(
            &problem,
            mu,
            dt,
            t_final,
            &DVector::zeros(problem.n_dof()),
        )
        .unwrap();
        let reduced = prm.reduced_trajectory(mu, dt, k_steps).unwrap();
        let mut acc = 0.0;
        for k in 1..=k_steps {
            let diff = &truth.states[k] - basis.lift(&reduced[k]);
            acc += dt * diff.dot(&problem.inner_product.matvec(&diff)).max(0.0);
        }
        let true_err = acc.sqrt();
        if surr + 1e-8 < true_err {
            rigor_violations += 1;
        }
        if true_err > 0.0 {
            min_ratio = min_ratio.min(surr / true_err);
        }
    }
    let ok = enough && monotone && rigor_violations == 0;
    println!(
        "criterion 7 {}: {} iterations (need >= 10), monotone {}, {} rigor violations on 5 held-out parameters (slack 1e-8, min surrogate/error ratio {:.3})",
        if ok { "PASS" } else { "FAIL" },
        surrs.len(),
        monotone,
        rigor_violations,
        min_ratio
    );
    assert!(ok);
}

#[test]
fn criterion_8_online_cost_independent_of_truth_size() {
    let _g = lock();
    let n_basis = 15;
    let small = &*PROBLEM; // n_h ~ 1e4
    let large = build_thermal_block(2, 2, 200, (0.1, 10.0)).unwrap(); // n_h ~ 4e4
    let model_small = project_with_continuity(
        small,
        &random_orthonormal_basis(small, n_basis, 21),
        &[1.0; 4],
    )
    .unwrap();
    let model_large = project_with_continuity(
        &large,
        &random_orthonormal_basis(&large, n_basis, 22),
        &[1.0; 4],
    )
    .unwrap();
    let mus = sample_training_set(
        &small.domain,
        &SamplingStrategy::Random { count: 20, seed: 9 },
    )
    .unwrap();
    let batch = |model: &ReducedModel| {
        let start = Instant::now();
        let mut sink = 0.0;
        for mu in &mus {
            let sol = solve_reduced(model, mu).unwrap();
            let cert = certify(model, mu, &sol).unwrap();
            sink += cert.error_bound + evaluate_outputs(model, &sol)[0];
        }
        (start.elapsed().as_secs_f64(), sink)
    };
    // warm-up, then interleaved timing batches
    batch(&model_small);
    batch(&model_large);
    let mut times_small = Vec::new();
    let mut times_large = Vec::new();
    for _ in 0..21 {
        times_small.push(batch(&model_small).0);
        times_large.push(batch(&model_large).0);
    }
    times_small.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times_large.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_small = times_small[times_small.len() / 2];
    let med_large = times_large[times_large.len() / 2];
    let change = (med_large - med_small).abs() / med_small;
    let ok = change < 0.20;
    println!(
        "criterion 8 {}: median certify+solve batch {:.3e}s at n_h = {} vs {:.3e}s at n_h = {} — relative change {:.1}% (need < 20%)",
        if ok { "PASS" } else { "FAIL" },
        med_small,
        small.n_dof(),
        med_large,
        large.n_dof(),
        100.0 * change
    );
    assert!(ok);
}

#[test]
fn criterion_9_determinism_and_serialization() {
    let _g = lock();
    // identical configs + seeds must give byte-identical traces
    let problem = build_thermal_block(2, 2, 20, (0.1, 10.0)).unwrap();
    let training = sample_training_set(
        &problem.domain,
        &SamplingStrategy::Random {
            count: 60,
            seed: 123,
        },
    )
    .unwrap();
    let config = GreedyConfig {
        training_set: training,
        max_basis_size: 12,
        target_error: 1e-5,
        pod_modes_per_iter: 1,
        seed_parameter: None,
    };
    let (_, model_a, trace_a) = run_greedy(&problem, &config).unwrap();
    let (_, model_b, trace_b) = run_greedy(&problem, &config).unwrap();
    let trace_json_a = serde_json::to_string(&trace_a).unwrap();
    let trace_json_b = serde_json::to_string(&trace_b).unwrap();
    let traces_identical = trace_json_a == trace_json_b;
    let models_identical =
        serde_json::to_string(&model_a).unwrap() == serde_json::to_string(&model_b).unwrap();
    // model JSON round-trips losslessly (including the trained model)
    let (_, big_model, _) = &*TRAINED;
    let json = serde_json::to_string(big_model).unwrap();
    let back: ReducedModel = serde_json::from_str(&json).unwrap();
    let lossless = back == *big_model && serde_json::to_string(&back).unwrap() == json;
    let ok = traces_identical && models_identical && lossless;
    println!(
        "criterion 9 {}: traces byte-identical {}, models byte-identical {}, trained-model JSON round trip lossless {}",
        if ok { "PASS" } else { "FAIL" },
        traces_identical,
        models_identical,
        lossless
    );
    assert!(ok);
}
