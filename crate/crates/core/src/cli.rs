//! Config-driven command layer: offline training, online evaluation,
//! validation, the N-width demo, and POD-Greedy, with CSV/JSON artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affine::{sample_training_set, Parameter, ParameterDomain, SamplingStrategy};
use crate::error::{Error, Result};
use crate::greedy::{run_greedy, run_pod_greedy, GreedyConfig, GreedyTrace, StopReason};
use crate::nwidth::{advection_nwidth_demo, thermal_contrast_demo};
use crate::online::{
    certify, evaluate_outputs, solve_reduced, ReducedBasis, ReducedModel,
};
use crate::truth::{build_thermal_block, solve_truth, TruthProblem};

pub const FORMAT_VERSION: &str = "1";

/// Top-level run configuration. Unknown keys anywhere in the document are
/// rejected so typos cannot silently change a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub greedy: Option<GreedySection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub validation: Option<ValidationSection>,
    #[serde(default)]
    pub nwidth: Option<NWidthSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ThermalBlock,
    ParabolicThermal,
    AdvectionDemo,
}

/// Problem definition. A flat struct rather than a tagged union so that
/// unknown keys are rejected reliably; per-kind field requirements are
/// checked in [`ProblemConfig::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "type")]
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_y: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells_per_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
}

#[derive(Debug)]
pub enum BuiltProblem {
    Elliptic(TruthProblem),
    Parabolic {
        problem: TruthProblem,
        dt: f64,
        t_final: f64,
    },
}

impl ProblemConfig {
    fn require<T: Copy>(field: Option<T>, name: &str) -> Result<T> {
        field.ok_or_else(|| Error::Config(format!("problem section is missing field '{name}'")))
    }

    fn forbid<T>(field: &Option<T>, name: &str, kind: &str) -> Result<()> {
        if field.is_some() {
            return Err(Error::Config(format!(
                "problem field '{name}' is not valid for type '{kind}'"
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        match self.kind {
            ProblemKind::ThermalBlock | ProblemKind::ParabolicThermal => {
                let bx = Self::require(self.blocks_x, "blocks_x")?;
                let by = Self::require(self.blocks_y, "blocks_y")?;
                let cells = Self::require(self.cells_per_axis, "cells_per_axis")?;
                let lo = Self::require(self.mu_min, "mu_min")?;
                let hi = Self::require(self.mu_max, "mu_max")?;
                let problem = build_thermal_block(bx, by, cells, (lo, hi))?;
                if self.kind == ProblemKind::ThermalBlock {
                    Self::forbid(&self.dt, "dt", "thermal_block")?;
                    Self::forbid(&self.t_final, "t_final", "thermal_block")?;
                    Ok(BuiltProblem::Elliptic(problem))
                } else {
                    Ok(BuiltProblem::Parabolic {
                        problem,
                        dt: Self::require(self.dt, "dt")?,
                        t_final: Self::require(self.t_final, "t_final")?,
                    })
                }
            }
            ProblemKind::AdvectionDemo => {
                Self::forbid(&self.blocks_x, "blocks_x", "advection_demo")?;
                Self::forbid(&self.cells_per_axis, "cells_per_axis", "advection_demo")?;
                Err(Error::Config(
                    "type 'advection_demo' is only valid for the nwidth-demo command".into(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedySection {
    pub training: SamplingStrategy,
    pub max_basis_size: usize,
    pub target_error: f64,
    #[serde(default = "default_modes_per_iter")]
    pub pod_modes_per_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_parameter: Option<Vec<f64>>,
}

fn default_modes_per_iter() -> usize {
    1
}

impl GreedySection {
    pub fn to_greedy_config(&self, domain: &ParameterDomain) -> Result<GreedyConfig> {
        Ok(GreedyConfig {
            training_set: sample_training_set(domain, &self.training)?,
            max_basis_size: self.max_basis_size,
            target_error: self.target_error,
            pod_modes_per_iter: self.pod_modes_per_iter,
            seed_parameter: self.seed_parameter.clone().map(Parameter::new),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default = "default_precision")]
    pub precision: usize,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_precision() -> usize {
    17
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_out_dir(),
            precision: default_precision(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ValidationSection {
    /// Random parameters from the domain box.
    Random { size: usize, seed: u64 },
    /// Re-use the greedy training set (subset-consistency audits).
    Training,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NWidthSection {
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_contrast_snapshots")]
    pub contrast_snapshots: usize,
    #[serde(default = "default_contrast_cells")]
    pub contrast_cells: usize,
    #[serde(default = "default_contrast_seed")]
    pub contrast_seed: u64,
}

fn default_grid_n() -> usize {
    256
}
fn default_time_samples() -> usize {
    512
}
fn default_n_max() -> usize {
    32
}
fn default_contrast_snapshots() -> usize {
    200
}
fn default_contrast_cells() -> usize {
    30
}
fn default_contrast_seed() -> u64 {
    3
}

impl Default for NWidthSection {
    fn default() -> Self {
        NWidthSection {
            grid_n: default_grid_n(),
            time_samples: default_time_samples(),
            n_max: default_n_max(),
            contrast_snapshots: default_contrast_snapshots(),
            contrast_cells: default_contrast_cells(),
            contrast_seed: default_contrast_seed(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

/// On-disk wrapper for a reduced model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: String,
    pub model: ReducedModel,
}

/// On-disk wrapper for a reduced basis (the only n_h-sized artifact).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub format_version: String,
    pub basis: ReducedBasis,
}

pub fn load_model(path: &Path) -> Result<ReducedModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported model format version '{}'",
            file.format_version
        )));
    }
    Ok(file.model)
}

pub fn load_basis(path: &Path) -> Result<ReducedBasis> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read basis {}: {e}", path.display())))?;
    let file: BasisFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported basis format version '{}'",
            file.format_version
        )));
    }
    Ok(file.basis)
}

fn fmt_float(x: f64, precision: usize) -> String {
    format!("{:.*e}", precision.saturating_sub(1), x)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn mu_header(dim: usize) -> String {
    (1..=dim).map(|k| format!("mu_{k}")).collect::<Vec<_>>().join(",")
}

fn trace_csv(trace: &GreedyTrace, dim: usize, precision: usize) -> String {
    let mut out = format!(
        "iteration,{},max_estimated_error,basis_size,modes_added\n",
        mu_header(dim)
    );
    for (it, rec) in trace.iterations.iter().enumerate() {
        let mus = rec
            .selected_mu
            .values
            .iter()
            .map(|&v| fmt_float(v, precision))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!(
            "{it},{mus},{},{},{}\n",
            fmt_float(rec.max_estimated_error, precision),
            rec.basis_size_after,
            rec.modes_added
        ));
    }
    out
}

fn error_table_csv(trace: &GreedyTrace, precision: usize) -> String {
    let mut out = String::from("iteration,train_index,error_bound\n");
    for (it, table) in trace.error_tables.iter().enumerate() {
        for (k, &b) in table.iter().enumerate() {
            out.push_str(&format!("{it},{k},{}\n", fmt_float(b, precision)));
        }
    }
    out
}

fn write_offline_artifacts(
    dir: &Path,
    model: &ReducedModel,
    basis: &ReducedBasis,
    trace: &GreedyTrace,
    precision: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let model_file = ModelFile {
        format_version: FORMAT_VERSION.into(),
        model: model.clone(),
    };
    write_text(
        &dir.join("model.json"),
        &(serde_json::to_string(&model_file)? + "\n"),
    )?;
    let basis_file = BasisFile {
        format_version: FORMAT_VERSION.into(),
        basis: basis.clone(),
    };
    write_text(
        &dir.join("basis.json"),
        &(serde_json::to_string(&basis_file)? + "\n"),
    )?;
    let dim = model.domain.dim();
    write_text(&dir.join("greedy_trace.csv"), &trace_csv(trace, dim, precision))?;
    write_text(&dir.join("error_table.csv"), &error_table_csv(trace, precision))?;
    if trace.stop_reason == StopReason::ExtensionRejected {
        write_text(
            &dir.join("incomplete.flag"),
            "greedy stopped early: snapshot extension was numerically dependent\n",
        )?;
    }
    Ok(())
}

fn resolve_out_dir(config: &RunConfig, out_override: Option<&Path>) -> PathBuf {
    out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output.directory))
}

/// Train a reduced model from a config and write the artifacts.
pub fn cmd_offline(config_path: &Path, out_override: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let problem = match config.problem.build()? {
        BuiltProblem::Elliptic(p) => p,
        BuiltProblem::Parabolic { .. } => {
            return Err(Error::Config(
                "offline expects an elliptic problem; use pod-greedy for parabolic_thermal".into(),
            ))
        }
    };
    let section = config
        .greedy
        .as_ref()
        .ok_or_else(|| Error::Config("config has no greedy section".into()))?;
    let greedy_config = section.to_greedy_config(&problem.domain)?;
    let (basis, model, trace) = run_greedy(&problem, &greedy_config)?;
    if basis.n() == 0 {
        return Err(Error::InvalidInput(format!(
            "target error {:e} is already met by the empty model; an N = 0 model is unusable online — tighten target_error",
            greedy_config.target_error
        )));
    }
    let dir = resolve_out_dir(&config, out_override);
    write_offline_artifacts(&dir, &model, &basis, &trace, config.output.precision)?;
    let last = trace.iterations.last().unwrap();
    println!(
        "offline: N = {}, max certified training error = {:e}, stop = {:?}",
        basis.n(),
        last.max_estimated_error,
        trace.stop_reason
    );
    Ok(())
}

/// One JSON record per evaluated parameter.
#[derive(Debug, Serialize)]
struct OnlineRecord {
    mu: Vec<f64>,
    outputs: Vec<f64>,
    error_bound: f64,
    output_bound: Vec<f64>,
    coercivity_lb: f64,
    residual_dual_norm: f64,
    wall_time_s: f64,
}

pub fn parse_mu(text: &str) -> Result<Parameter> {
    let values: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(Parameter::new(v)),
        _ => Err(Error::InvalidInput(format!(
            "cannot parse parameter '{text}' (expected comma-separated numbers)"
        ))),
    }
}

/// Evaluate the reduced model at the given parameters. Never touches the
/// truth problem; `--lift` additionally loads the basis file next to the
/// model and writes lifted states as CSV.
pub fn cmd_online(
    model_path: &Path,
    mus: &[String],
    lift: bool,
    out_override: Option<&Path>,
) -> Result<()> {
    if mus.is_empty() {
        return Err(Error::InvalidInput("no --mu values given".into()));
    }
    let model = load_model(model_path)?;
    let basis = if lift {
        let basis_path = model_path.with_file_name("basis.json");
        Some(load_basis(&basis_path)?)
    } else {
        None
    };
    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    for (k, text) in mus.iter().enumerate() {
        let mu = parse_mu(text)?;
        let start = Instant::now();
        let sol = solve_reduced(&model, &mu)?;
        let cert = certify(&model, &mu, &sol)?;
        let outputs = evaluate_outputs(&model, &sol);
        let wall = start.elapsed().as_secs_f64();
        let record = OnlineRecord {
            mu: mu.values.clone(),
            outputs: outputs.iter().copied().collect(),
            error_bound: cert.error_bound,
            output_bound: cert.output_bound.clone(),
            coercivity_lb: cert.coercivity_lb,
            residual_dual_norm: cert.residual_dual_norm,
            wall_time_s: wall,
        };
        println!("{}", serde_json::to_string(&record)?);
        if let Some(basis) = &basis {
            let lifted = basis.lift(&sol.coordinates);
            let mut csv = String::from("index,value\n");
            for (i, v) in lifted.iter().enumerate() {
                csv.push_str(&format!("{i},{}\n", fmt_float(*v, 17)));
            }
            fs::create_dir_all(&out_dir)?;
            write_text(&out_dir.join(format!("lifted_{k}.csv")), &csv)?;
        }
    }
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Audit the certificate against truth solves on a test set; any rigor
/// violation beyond `1e-9` absolute fails the command.
pub fn cmd_validate(
    model_path: &Path,
    config_path: &Path,
    out_override: Option<&Path>,
) -> Result<()> {
    let config = load_config(config_path)?;
    let problem = match config.problem.build()? {
        BuiltProblem::Elliptic(p) => p,
        BuiltProblem::Parabolic { problem, .. } => problem,
    };
    let model = load_model(model_path)?;
    let basis = load_basis(&model_path.with_file_name("basis.json"))?;
    if basis.n() != model.n() || basis.n_dof() != problem.n_dof() {
        return Err(Error::DimensionMismatch(
            "model, basis, and truth problem dimensions disagree".into(),
        ));
    }
    let test_set: Vec<Parameter> = match config.validation.as_ref().ok_or_else(|| {
        Error::Config("config has no validation section".into())
    })? {
        ValidationSection::Random { size, seed } => sample_training_set(
            &problem.domain,
            &SamplingStrategy::Random {
                count: *size,
                seed: *seed,
            },
        )?,
        ValidationSection::Training => {
            let section = config.greedy.as_ref().ok_or_else(|| {
                Error::Config("validation strategy 'training' needs a greedy section".into())
            })?;
            sample_training_set(&problem.domain, &section.training)?
        }
    };
    let precision = config.output.precision;
    let dim = problem.domain.dim();
    let x = &problem.inner_product;
    let mut csv = format!(
        "index,{},true_error,error_bound,effectivity,output_violations\n",
        mu_header(dim)
    );
    let mut effectivities = Vec::new();
    let mut violations = 0usize;
    let mut max_true = 0.0f64;
    for (k, mu) in test_set.iter().enumerate() {
        let truth = solve_truth(&problem, mu)?;
        let sol = solve_reduced(&model, mu)?;
        let cert = certify(&model, mu, &sol)?;
        let diff = &truth.coefficients - basis.lift(&sol.coordinates);
        let true_err = diff.dot(&x.matvec(&diff)).max(0.0).sqrt();
        max_true = max_true.max(true_err);
        if cert.error_bound + 1e-9 < true_err {
            violations += 1;
        }
        let eff = if true_err > 0.0 {
            cert.error_bound / true_err
        } else {
            f64::INFINITY
        };
        effectivities.push(eff);
        let mut out_violations = 0usize;
        let true_outputs = &problem.outputs * &truth.coefficients;
        let red_outputs = evaluate_outputs(&model, &sol);
        for s in 0..true_outputs.len() {
            if cert.output_bound[s] + 1e-9 < (true_outputs[s] - red_outputs[s]).abs() {
                out_violations += 1;
            }
        }
        violations += out_violations;
        let mus = mu
            .values
            .iter()
            .map(|&v| fmt_float(v, precision))
            .collect::<Vec<_>>()
            .join(",");
        csv.push_str(&format!(
            "{k},{mus},{},{},{},{out_violations}\n",
            fmt_float(true_err, precision),
            fmt_float(cert.error_bound, precision),
            fmt_float(eff, precision)
        ));
    }
    let mut sorted = effectivities.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let finite: Vec<f64> = sorted.iter().copied().filter(|e| e.is_finite()).collect();
    let (emin, emed, emax) = if finite.is_empty() {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        (finite[0], median(&finite), finite[finite.len() - 1])
    };
    csv.push_str(&format!(
        "summary,{},{},{},{},{violations}\n",
        vec!["".to_string(); dim].join(","),
        fmt_float(emin, precision),
        fmt_float(emed, precision),
        fmt_float(emax, precision)
    ));
    let dir = resolve_out_dir(&config, out_override);
    fs::create_dir_all(&dir)?;
    write_text(&dir.join("validation_report.csv"), &csv)?;
    println!(
        "validate: {} test parameters, effectivity min/median/max = {:e}/{:e}/{:e}, violations = {violations}, max true error = {max_true:e}",
        test_set.len(),
        emin,
        emed,
        emax
    );
    if violations > 0 {
        return Err(Error::Numerical(format!(
            "{violations} rigor violation(s) beyond 1e-9 absolute"
        )));
    }
    Ok(())
}

/// Run the advection N-width demo plus the thermal-block contrast run.
pub fn cmd_nwidth_demo(config_path: &Path, out_override: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let section = config.nwidth.clone().unwrap_or_default();
    let report = advection_nwidth_demo(section.grid_n, section.time_samples, section.n_max)?;
    let dir = resolve_out_dir(&config, out_override);
    fs::create_dir_all(&dir)?;
    let precision = config.output.precision;
    write_text(&dir.join("nwidth_report.csv"), &report.to_csv(precision))?;
    let contrast_problem = build_thermal_block(2, 2, section.contrast_cells, (0.1, 10.0))?;
    let contrast = thermal_contrast_demo(
        &contrast_problem,
        section.contrast_snapshots,
        section.contrast_seed,
        section.n_max,
    )?;
    write_text(&dir.join("thermal_contrast.csv"), &contrast.to_csv(precision))?;
    let allowance = (1.0 / section.grid_n as f64).sqrt();
    println!(
        "nwidth-demo: advection pod_upper[1] = {:e} (lower 0.5, allowance {:e}); thermal sigma ratio at N = {} is {:e}",
        report.pod_upper[0],
        allowance,
        contrast.singular_values.len().min(30),
        contrast.singular_values[contrast.singular_values.len().min(30) - 1]
            / contrast.singular_values[0]
    );
    Ok(())
}

/// Train a parabolic reduced model with POD-Greedy and write the artifacts.
pub fn cmd_pod_greedy(config_path: &Path, out_override: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let (problem, dt, t_final) = match config.problem.build()? {
        BuiltProblem::Parabolic { problem, dt, t_final } => (problem, dt, t_final),
        BuiltProblem::Elliptic(_) => {
            return Err(Error::Config(
                "pod-greedy expects problem type 'parabolic_thermal'".into(),
            ))
        }
    };
    let section = config
        .greedy
        .as_ref()
        .ok_or_else(|| Error::Config("config has no greedy section".into()))?;
    let greedy_config = section.to_greedy_config(&problem.domain)?;
    let (basis, model, trace) = run_pod_greedy(&problem, &greedy_config, dt, t_final)?;
    if trace.stop_reason == StopReason::TrivialDynamics {
        println!("pod-greedy: trivial dynamics (zero source and zero initial state); nothing to train");
        return Ok(());
    }
    let dir = resolve_out_dir(&config, out_override);
    write_offline_artifacts(&dir, &model, &basis, &trace, config.output.precision)?;
    let last = trace.iterations.last().unwrap();
    println!(
        "pod-greedy: N = {}, max surrogate = {:e}, stop = {:?}",
        basis.n(),
        last.max_estimated_error,
        trace.stop_reason
    );
    Ok(())
}
