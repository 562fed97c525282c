//! Scenario files, the two reference experiments (the sharpness example and
//! the spacecraft sweep) and CSV emission.
//!
//! Sweeps run one MPC per `N` in parallel, bounded by `MPC_LAB_THREADS`, and
//! are assembled in the order of the `N` list, so equal specs give
//! byte-identical CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ExtremalTriple, ParameterSignal, PiecewiseConstant, UniformGrid};
use crate::metrics::GammaSet;
use crate::mpc::{
    compare_to_reference, reference_solution, run_mpc_with, BoundInputs, ErrorModel, Measurement, MpcOptions,
    Prediction,
};
use crate::problems;
use crate::regularity::{box_edges, extract_gamma, DEFAULT_ZERO_TOL};
use crate::solver::{switching_function, SolveConfig};

/// The N values of the spacecraft table.
pub const TABLE1_N: [usize; 6] = [160, 320, 480, 640, 800, 960];

/// Environment variable bounding sweep parallelism.
pub const THREADS_ENV: &str = "MPC_LAB_THREADS";

/// Either one N or a sweep list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NSpec {
    One(usize),
    List(Vec<usize>),
}

impl NSpec {
    pub fn values(&self) -> Vec<usize> {
        match self {
            NSpec::One(n) => vec![*n],
            NSpec::List(v) => v.clone(),
        }
    }
}

/// Random error magnitudes. Zero bounds mean exact measurements or predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSpec {
    /// Radius of the ball the measurement errors are drawn from.
    pub measurement_bound: f64,
    /// Half-width of the uniform prediction error.
    pub prediction_bound: f64,
    /// Number of equal cells the prediction error is constant on.
    pub prediction_mesh: usize,
}

impl Default for ErrorSpec {
    fn default() -> Self {
        Self { measurement_bound: 0.0, prediction_bound: 0.0, prediction_mesh: 3200 }
    }
}

impl ErrorSpec {
    pub fn model(&self, seed: u64) -> ErrorModel {
        let measurement = if self.measurement_bound > 0.0 {
            Measurement::Uniform { bound: self.measurement_bound }
        } else {
            Measurement::None
        };
        let prediction = if self.prediction_bound > 0.0 {
            Prediction::ResampleUniform { bound: self.prediction_bound, mesh: self.prediction_mesh }
        } else {
            Prediction::Exact
        };
        ErrorModel { measurement, prediction, seed }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Result table (CSV).
    pub table: Option<PathBuf>,
    /// Directory receiving one `u_N<N>.csv` per run.
    pub controls_dir: Option<PathBuf>,
}

fn default_substeps() -> usize {
    crate::integrate::DEFAULT_PLANT_SUBSTEPS
}

fn one() -> usize {
    1
}

/// A reproducible MPC experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub problem_key: String,
    #[serde(rename = "N")]
    pub n: NSpec,
    #[serde(default)]
    pub errors: ErrorSpec,
    #[serde(default)]
    pub solver: SolveConfig,
    /// Solver settings for the reference optimum; defaults to `solver` with
    /// ten times the iteration budget.
    #[serde(default)]
    pub reference_solver: Option<SolveConfig>,
    /// Intervals of the reference grid; defaults to `8 · max N`.
    #[serde(default)]
    pub reference_intervals: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub plant_substeps: usize,
    #[serde(default = "one")]
    pub solver_refinement: usize,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario specs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        problems::by_key(&self.problem_key)?;
        let ns = self.n.values();
        if ns.is_empty() || ns.contains(&0) {
            return Err(Error::InvalidConfig("N must be a nonempty list of positive integers".into()));
        }
        let e = &self.errors;
        if !(e.measurement_bound >= 0.0) || !(e.prediction_bound >= 0.0) || e.prediction_mesh == 0 {
            return Err(Error::InvalidConfig("error bounds must be >= 0 and the prediction mesh >= 1".into()));
        }
        self.solver.validate()?;
        if let Some(r) = &self.reference_solver {
            r.validate()?;
        }
        if self.reference_intervals == Some(0) || self.solver_refinement == 0 {
            return Err(Error::InvalidConfig("reference intervals and solver refinement must be positive".into()));
        }
        Ok(())
    }

    /// The spacecraft sweep with the experiment's error magnitudes.
    pub fn spacecraft(n_list: &[usize], seed: u64) -> Self {
        Self {
            problem_key: "spacecraft".into(),
            n: NSpec::List(n_list.to_vec()),
            errors: ErrorSpec { measurement_bound: 0.1, prediction_bound: 0.05, prediction_mesh: 3200 },
            solver: SolveConfig::projected_gradient(1e-6, 500),
            reference_solver: Some(SolveConfig::projected_gradient(1e-6, 20_000)),
            reference_intervals: None,
            seed,
            plant_substeps: default_substeps(),
            solver_refinement: 1,
            outputs: OutputSpec::default(),
        }
    }

    fn reference_config(&self) -> SolveConfig {
        self.reference_solver.unwrap_or(SolveConfig { max_iters: 10 * self.solver.max_iters, ..self.solver })
    }
}

/// One row of a sweep table. Failed cells carry NaN and a message.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub objective: f64,
    #[serde(rename = "RE")]
    pub re: f64,
    #[serde(rename = "E_avg")]
    pub e_avg: f64,
    pub lhs: f64,
    #[serde(skip)]
    pub all_converged: bool,
    #[serde(skip)]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Objective of the reference optimum.
    pub reference_objective: f64,
    pub reference_intervals: usize,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,objective,RE,E_avg,lhs\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.n, fmt_f(r.objective), fmt_f(r.re), fmt_f(r.e_avg), fmt_f(r.lhs))
                .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &str)> {
        self.rows.iter().filter_map(|r| r.failure.as_deref().map(|f| (r.n, f)))
    }

    pub fn row(&self, n: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// 17 significant digits, so values round-trip exactly.
fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs `f` on a pool bounded by `MPC_LAB_THREADS` when that is set.
pub fn with_thread_limit<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(threads) if threads > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

/// `Γ` of a reference: the switching-function zeros for control-affine
/// problems, empty otherwise.
pub fn reference_gamma(problem_key: &str, reference: &ExtremalTriple, p_hat: &ParameterSignal) -> Result<GammaSet> {
    let reg = problems::by_key(problem_key)?;
    if !reg.problem.is_affine() {
        return Ok(GammaSet::empty());
    }
    let sigma = switching_function(&reg.problem, p_hat, reference)?;
    Ok(extract_gamma(&sigma, &box_edges(reg.problem.control_box()), DEFAULT_ZERO_TOL).gamma)
}

/// Runs every `N` of the spec against one shared reference.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<SweepTable> {
    spec.validate()?;
    let reg = problems::by_key(&spec.problem_key)?;
    let ns = spec.n.values();
    let n_ref = spec.reference_intervals.unwrap_or(8 * ns.iter().max().copied().unwrap_or(1));
    let p_hat = reg.p_hat_signal(n_ref)?;
    let reference = reference_solution(&reg.problem, &p_hat, &reg.x0, n_ref, &spec.reference_config())?;
    let reference_objective =
        crate::solver::discrete_objective(&reg.problem, &p_hat, reference.grid(), &reg.x0, reference.u.values())?;
    let gamma = reference_gamma(&spec.problem_key, &reference, &p_hat)?;
    let lipschitz = reg.problem.lipschitz_estimate(256, 2.0, spec.seed)?;
    let model = spec.errors.model(spec.seed);
    let opts = MpcOptions { plant_substeps: spec.plant_substeps, solver_refinement: spec.solver_refinement };

    let run_one = |n: usize| -> Result<SweepRow> {
        let p_hat_n = reg.p_hat_signal(n)?;
        let mut result = run_mpc_with(&reg.problem, &p_hat_n, &reg.x0, n, &model, &spec.solver, &opts)?;
        let report =
            compare_to_reference(&reg.problem, &mut result, &reference, &gamma, BoundInputs { c0: 1.0, lipschitz })?;
        if let Some(dir) = &spec.outputs.controls_dir {
            write_control_csv(result.u_n.as_piecewise(), &dir.join(format!("u_N{n}.csv")))?;
        }
        Ok(SweepRow {
            n,
            objective: result.closed_loop_objective,
            re: report.re,
            e_avg: report.e_avg,
            lhs: report.lhs,
            all_converged: result.all_converged(),
            failure: None,
        })
    };
    let rows = with_thread_limit(|| {
        ns.par_iter()
            .map(|&n| {
                run_one(n).unwrap_or_else(|e| SweepRow {
                    n,
                    objective: f64::NAN,
                    re: f64::NAN,
                    e_avg: f64::NAN,
                    lhs: f64::NAN,
                    all_converged: false,
                    failure: Some(e.to_string()),
                })
            })
            .collect::<Vec<_>>()
    })?;
    let table = SweepTable { rows, reference_objective, reference_intervals: n_ref };
    if let Some(path) = &spec.outputs.table {
        table.write_csv(path)?;
    }
    Ok(table)
}

/// The spacecraft sweep for one seed. `solver_refinement` is forwarded to the MPC loop.
pub fn scenario_spacecraft(n_list: &[usize], seed: u64, solver_refinement: usize) -> Result<SweepTable> {
    let mut spec = ScenarioSpec::spacecraft(n_list, seed);
    spec.solver_refinement = solver_refinement;
    run_scenario(&spec)
}

/// Outcome of the sharpness example for one `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpnessRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub h: f64,
    /// `u^N` on `[0, t₁]`.
    pub first_piece: f64,
    /// `‖u^N - û‖₁`.
    pub u_l1: f64,
    pub lhs: f64,
    pub e_avg: f64,
    /// `‖u^N - û‖₁ / √ℰ`.
    pub ratio: f64,
    pub failures: Vec<String>,
}

impl SharpnessRow {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the sharpness example: only the first prediction is perturbed, to
/// `p₀ = 1 + 2h`, which flips the first control piece while `û ≡ 1`.
///
/// With `perturbed = false` every prediction is exact and `u^N = û`.
pub fn scenario_sharpness_with(n_list: &[usize], perturbed: bool) -> Result<Vec<SharpnessRow>> {
    let reg = problems::by_key("sharpness")?;
    let cfg = SolveConfig::bang_bang(1e-12, 100);
    let gamma = GammaSet::new(vec![0.0])?;
    n_list
        .iter()
        .map(|&n| {
            if n <= 2 {
                return Err(Error::InvalidConfig(format!("the sharpness example needs N > 2, got {n}")));
            }
            let h = 1.0 / n as f64;
            let g = UniformGrid::new(0.0, 1.0, n)?;
            let p_hat = ParameterSignal::constant(g.clone(), &reg.p_hat);
            let first = if perturbed { 1.0 + 2.0 * h } else { 1.0 };
            let mut list = vec![ParameterSignal::constant(g.clone(), &[first])];
            list.extend((1..n).map(|_| p_hat.clone()));
            let err = ErrorModel { measurement: Measurement::None, prediction: Prediction::PerStep(list), seed: 0 };
            let mut res = run_mpc_with(&reg.problem, &p_hat, &reg.x0, n, &err, &cfg, &MpcOptions::default())?;
            let reference = reference_solution(&reg.problem, &p_hat, &reg.x0, n, &cfg)?;
            let report = compare_to_reference(
                &reg.problem,
                &mut res,
                &reference,
                &gamma,
                BoundInputs { c0: 1.0, lipschitz: 2.0 },
            )?;
            let u = res.u_n.values();
            let ratio = if report.e_avg > 0.0 { report.u_l1 / report.e_avg.sqrt() } else { f64::NAN };
            let mut failures = Vec::new();
            if reference.u.values().iter().any(|&v| v != 1.0) {
                failures.push("reference control is not identically 1".to_string());
            }
            if perturbed {
                if u[0] != -1.0 {
                    failures.push(format!("u^N on [0, t1] is {} instead of -1", u[0]));
                }
                if report.u_l1 < 2.0 * h {
                    failures.push(format!("|u^N - û|_1 = {} < 2h = {}", report.u_l1, 2.0 * h));
                }
                if report.e_avg != 2.0 * h * h {
                    failures.push(format!("E = {} differs from 2h^2 = {}", report.e_avg, 2.0 * h * h));
                }
                if !(ratio >= 2f64.sqrt() - 1e-12) {
                    failures.push(format!("ratio {ratio} < sqrt(2)"));
                }
            } else if u.iter().any(|&v| v != 1.0) || report.u_l1 != 0.0 {
                // The state part of lhs keeps the O(h) gap between the RK4 plant and the Euler reference.
                failures.push(format!("exact predictions should reproduce û; |u^N - û|_1 = {}", report.u_l1));
            }
            Ok(SharpnessRow {
                n,
                h,
                first_piece: u[0],
                u_l1: report.u_l1,
                lhs: report.lhs,
                e_avg: report.e_avg,
                ratio,
                failures,
            })
        })
        .collect()
}

pub fn scenario_sharpness(n_list: &[usize]) -> Result<Vec<SharpnessRow>> {
    scenario_sharpness_with(n_list, true)
}

/// Writes a piecewise-constant signal as CSV with columns `t, u1, …`: one row
/// per grid node, the last one repeating the final piece.
pub fn write_control_csv(signal: &PiecewiseConstant, path: &Path) -> Result<()> {
    std::fs::write(path, control_csv(signal))?;
    Ok(())
}

pub fn control_csv(signal: &PiecewiseConstant) -> String {
    let g = signal.grid();
    let mut out = String::from("t");
    for j in 0..signal.dim() {
        write!(out, ",u{}", j + 1).expect("writing to a String");
    }
    out.push('\n');
    for k in 0..=g.intervals() {
        out.push_str(&fmt_f(g.node(k)));
        for v in signal.value(k.min(g.intervals() - 1)) {
            out.push(',');
            out.push_str(&fmt_f(*v));
        }
        out.push('\n');
    }
    out
}

/// Reads a signal written by [`write_control_csv`]. The node times must be uniform.
pub fn read_control_csv(path: &Path) -> Result<PiecewiseConstant> {
    let mut reader = csv::Reader::from_path(path)?;
    let dim = reader.headers()?.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "{}: need a time column and at least one value column",
            path.display()
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("{}: bad number `{s}`: {e}", path.display())))
        };
        times.push(parse(&record[0])?);
        for j in 1..=dim {
            values.push(parse(&record[j])?);
        }
    }
    if times.len() < 2 {
        return Err(Error::InvalidConfig(format!("{}: need at least two rows", path.display())));
    }
    let intervals = times.len() - 1;
    let grid = UniformGrid::new(times[0], times[intervals], intervals)?;
    if times.iter().enumerate().any(|(k, t)| (t - grid.node(k)).abs() > 1e-9 * (1.0 + t.abs())) {
        return Err(Error::GridMismatch(format!("{}: node times are not uniform", path.display())));
    }
    values.truncate(intervals * dim);
    PiecewiseConstant::new(grid, dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip_and_defaults() {
        let spec = ScenarioSpec::from_json(r#"{"problem_key": "lqr-decay", "N": 20}"#).unwrap();
        assert_eq!(spec.n.values(), vec![20]);
        assert_eq!(spec.plant_substeps, 10);
        assert_eq!(spec.solver_refinement, 1);
        let full = ScenarioSpec::spacecraft(&TABLE1_N, 4);
        assert_eq!(ScenarioSpec::from_json(&full.to_json()).unwrap(), full);
    }

    #[test]
    fn bad_specs_rejected() {
        for text in [
            r#"{"problem_key": "nope", "N": 4}"#,
            r#"{"problem_key": "lqr-decay", "N": []}"#,
            r#"{"problem_key": "lqr-decay", "N": 4, "errors": {"measurement_bound": -1}}"#,
            r#"{"problem_key": "lqr-decay", "N": 4, "extra": 1}"#,
        ] {
            assert!(ScenarioSpec::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn control_csv_round_trip() {
        let g = UniformGrid::new(0.0, 2.0, 3).unwrap();
        let u = PiecewiseConstant::new(g, 2, vec![0.1, 0.2, 1.0 / 3.0, -0.5, 0.0, 1e-17]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_control_csv(&u, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("t,u1,u2\n"));
        assert_eq!(read_control_csv(&path).unwrap(), u);
    }

    #[test]
    fn sharpness_rows() {
        for row in scenario_sharpness(&[4, 8, 16, 32]).unwrap() {
            assert!(row.pass(), "{row:?}");
        }
        assert_eq!(scenario_sharpness(&[32]).unwrap()[0].e_avg, 1.0 / 512.0);
        for row in scenario_sharpness_with(&[4, 16], false).unwrap() {
            assert!(row.pass() && row.u_l1 == 0.0 && row.lhs < row.h, "{row:?}");
        }
        assert!(scenario_sharpness(&[2]).is_err());
    }

    #[test]
    fn lqr_sweep_is_ordered_and_reproducible() {
        let spec = ScenarioSpec::from_json(
            r#"{"problem_key": "lqr-decay", "N": [40, 10, 20], "seed": 3,
                "errors": {"measurement_bound": 0.01, "prediction_bound": 0.0},
                "solver": {"tol_residual": 1e-9, "max_iters": 500, "armijo": {"c": 1e-4, "shrink": 0.5, "init_step": 1.0},
                           "mode": "projected_gradient", "damping": 0.5}}"#,
        )
        .unwrap();
        let a = run_scenario(&spec).unwrap();
        let b = run_scenario(&spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let ns: Vec<usize> = a.rows.iter().map(|r| r.n).collect();
        assert_eq!(ns, vec![40, 10, 20]);
        assert!(a.rows.iter().all(|r| r.failure.is_none() && r.re.is_finite() && r.lhs > 0.0));
        assert_eq!(a.reference_intervals, 320);
    }
}
