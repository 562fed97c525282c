//! Shrinking-horizon MPC with injected measurement, prediction and solver errors.
//!
//! At each grid time `t_k` the loop measures `x^N(t_k) + e_k`, takes a
//! prediction `p_k`, solves `P_{p_k}(t_k, ·)` on `[t_k, T]`, applies the first
//! control piece to the plant (RK4 under the true `p̂`) and moves on.
//!
//! Random draws use [`CounterRng`] with stream `2k` for the measurement error
//! and `2k + 1` for the prediction at step `k`, so runs are reproducible and
//! independent of how many draws each step makes.

use crate::error::{Error, Result};
use crate::grid::{euclid, ControlSignal, ExtremalTriple, ParameterSignal, PiecewiseConstant, Trajectory, UniformGrid};
use crate::integrate::{plant_advance, Rk4Scratch, DEFAULT_PLANT_SUBSTEPS};
use crate::metrics::{self, GammaSet};
use crate::problem::ProblemDef;
use crate::rng::CounterRng;
use crate::solver::{solve_ocp, SolveConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum Measurement {
    None,
    /// Uniform in the Euclidean ball of radius `bound`.
    Uniform {
        bound: f64,
    },
    /// `e_k` given explicitly; one entry per step.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// `p_k = p̂`.
    Exact,
    /// `p_k = p̂ + offset` at every step.
    FixedOffset(ParameterSignal),
    /// `p_k` given explicitly; one signal per step.
    PerStep(Vec<ParameterSignal>),
    /// Fresh draw at every step: piecewise constant on `mesh` equal cells of
    /// the horizon, each value `p̂` plus a uniform variate in `[-bound, bound]`.
    ResampleUniform { bound: f64, mesh: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModel {
    pub measurement: Measurement,
    pub prediction: Prediction,
    pub seed: u64,
}

impl ErrorModel {
    pub fn exact() -> Self {
        Self { measurement: Measurement::None, prediction: Prediction::Exact, seed: 0 }
    }

    fn validate(&self, n: usize, l: usize, steps: usize) -> Result<()> {
        match &self.measurement {
            Measurement::Uniform { bound } if !(*bound >= 0.0) => {
                return Err(Error::InvalidConfig("measurement bound must be >= 0".into()))
            }
            Measurement::Fixed(list) if list.len() != steps || list.iter().any(|e| e.len() != n) => {
                return Err(Error::InvalidConfig(format!(
                    "fixed measurement errors need {steps} vectors of length {n}"
                )))
            }
            _ => {}
        }
        match &self.prediction {
            Prediction::ResampleUniform { bound, mesh } if !(*bound >= 0.0) || *mesh == 0 => {
                Err(Error::InvalidConfig("prediction resampling needs bound >= 0 and mesh >= 1".into()))
            }
            Prediction::PerStep(list) if list.len() != steps || list.iter().any(|p| p.dim() != l) => {
                Err(Error::InvalidConfig(format!("per-step predictions need {steps} signals of dimension {l}")))
            }
            Prediction::FixedOffset(p) if p.dim() != l => {
                Err(Error::InvalidConfig("prediction offset has the wrong dimension".into()))
            }
            _ => Ok(()),
        }
    }

    fn measurement_error(&self, k: usize, n: usize) -> Vec<f64> {
        match &self.measurement {
            Measurement::None => vec![0.0; n],
            Measurement::Uniform { bound } => CounterRng::new(self.seed, 2 * k as u64).in_ball(n, *bound),
            Measurement::Fixed(list) => list[k].clone(),
        }
    }

    fn prediction(&self, k: usize, p_hat: &ParameterSignal) -> Result<ParameterSignal> {
        match &self.prediction {
            Prediction::Exact => Ok(p_hat.clone()),
            Prediction::FixedOffset(offset) => add_signals(p_hat, offset),
            Prediction::PerStep(list) => Ok(list[k].clone()),
            Prediction::ResampleUniform { bound, mesh } => {
                let g = p_hat.grid();
                let grid = UniformGrid::new(g.t0(), g.t_end(), *mesh)?;
                let base = p_hat.average_onto(&grid);
                let mut rng = CounterRng::new(self.seed, 2 * k as u64 + 1);
                let values = base.values().iter().map(|v| v + rng.uniform(-bound, *bound)).collect();
                ParameterSignal::new(grid, p_hat.dim(), values)
            }
        }
    }
}

/// Sum of two parameter signals, represented on the finer of the two grids.
fn add_signals(a: &ParameterSignal, b: &ParameterSignal) -> Result<ParameterSignal> {
    if !a.same_horizon(b) || a.dim() != b.dim() {
        return Err(Error::GridMismatch("prediction offset must cover the horizon of p̂".into()));
    }
    let (fine, coarse) = if a.intervals() >= b.intervals() { (a, b) } else { (b, a) };
    let other = coarse.average_onto(fine.grid());
    let values = fine.values().iter().zip(other.values()).map(|(x, y)| x + y).collect();
    ParameterSignal::new(fine.grid().clone(), fine.dim(), values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub e_k: Vec<f64>,
    pub e_k_norm: f64,
    /// `‖p_k - p̂‖_∞` on `[t_k, T]`.
    pub e_k_p: f64,
    /// Residual norm of the accepted solve.
    pub e_k_u: f64,
    pub solver_iters: usize,
    pub converged: bool,
    /// `d*_{t_k}(ũ_k, û)`, filled in by [`compare_to_reference`].
    pub dstar_tau_k: Option<f64>,
}

impl StepRecord {
    pub fn budget(&self) -> (f64, f64, f64) {
        (self.e_k_norm, self.e_k_p, self.e_k_u)
    }
}

#[derive(Clone, Debug)]
pub struct MpcResult {
    /// The MPC grid `t_0 < ... < t_N`.
    pub grid: UniformGrid,
    /// `u^N` on the solver grid (the MPC grid unless a solver refinement is set).
    pub u_n: ControlSignal,
    /// Plant trajectory on the grid refined by the plant substep count.
    pub x_n: Trajectory,
    pub steps: Vec<StepRecord>,
    /// The accepted auxiliary controls `ũ_k` on `[t_k, T]`.
    pub tails: Vec<ControlSignal>,
    pub e_avg: f64,
    pub closed_loop_objective: f64,
}

impl MpcResult {
    pub fn budgets(&self) -> Vec<(f64, f64, f64)> {
        self.steps.iter().map(StepRecord::budget).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }
}

/// Discretization choices of the MPC loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MpcOptions {
    /// RK4 substeps of the plant per solver interval.
    pub plant_substeps: usize,
    /// Solver intervals per MPC interval. With `r > 1` each auxiliary problem
    /// is transcribed on the MPC grid refined `r` times and `u^N` keeps the
    /// `r` pieces of `ũ_k` on `(t_k, t_{k+1}]`.
    pub solver_refinement: usize,
}

impl Default for MpcOptions {
    fn default() -> Self {
        Self { plant_substeps: DEFAULT_PLANT_SUBSTEPS, solver_refinement: 1 }
    }
}

/// Runs `n` MPC steps on the horizon of `p_hat`'s grid, transcribing each
/// auxiliary problem on the MPC grid itself.
pub fn run_mpc(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    x0: &[f64],
    n: usize,
    err: &ErrorModel,
    solver_cfg: &SolveConfig,
    plant_substeps: usize,
) -> Result<MpcResult> {
    let opts = MpcOptions { plant_substeps, solver_refinement: 1 };
    run_mpc_with(prob, p_hat, x0, n, err, solver_cfg, &opts)
}

/// [`run_mpc`] with explicit [`MpcOptions`].
///
/// Solver non-convergence is recorded in the step records. A plant blow-up
/// aborts with [`Error::PlantDiverged`].
pub fn run_mpc_with(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    x0: &[f64],
    n: usize,
    err: &ErrorModel,
    solver_cfg: &SolveConfig,
    opts: &MpcOptions,
) -> Result<MpcResult> {
    if n == 0 {
        return Err(Error::InvalidConfig("MPC needs N >= 1".into()));
    }
    if x0.len() != prob.n() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("x0 must be finite with dimension n".into()));
    }
    if opts.plant_substeps < 4 {
        return Err(Error::InvalidConfig("plant needs at least 4 substeps per interval".into()));
    }
    if opts.solver_refinement == 0 {
        return Err(Error::InvalidConfig("solver refinement must be >= 1".into()));
    }
    if p_hat.dim() != prob.l() {
        return Err(Error::InvalidConfig("p̂ has the wrong dimension".into()));
    }
    err.validate(prob.n(), prob.l(), n)?;
    solver_cfg.validate()?;

    let (dim_x, m) = (prob.n(), prob.m());
    let (r, sub) = (opts.solver_refinement, opts.plant_substeps);
    let horizon = p_hat.grid();
    let grid = UniformGrid::new(horizon.t0(), horizon.t_end(), n)?;
    let solve_grid = grid.refine(r)?;
    let fine = solve_grid.refine(sub)?;
    let mut nodes = Vec::with_capacity((fine.intervals() + 1) * dim_x);
    nodes.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(dim_x);
    let mut u_values = Vec::with_capacity(n * r * m);
    let mut steps = Vec::with_capacity(n);
    let mut tails = Vec::with_capacity(n);
    let mut warm: Option<Vec<f64>> = None;
    let mut running = 0.0;

    for k in 0..n {
        let e_k = err.measurement_error(k, dim_x);
        let measured: Vec<f64> = x.iter().zip(&e_k).map(|(a, b)| a + b).collect();
        let p_k = err.prediction(k, p_hat)?;
        let e_k_p = p_k.sup_distance_on(p_hat, grid.node(k), grid.t_end())?;
        let tail = solve_grid.tail(k * r)?;
        let out = solve_ocp(prob, &p_k, &tail, &measured, solver_cfg, warm.as_deref())?;
        let applied = &out.triple.u.values()[..r * m];
        for (j, u_j) in applied.chunks(m).enumerate() {
            running += plant_advance(prob, p_hat, u_j, &mut x, &fine, (k * r + j) * sub, sub, &mut nodes, &mut scratch)
                .map_err(|_| Error::PlantDiverged { step: k, completed: k })?;
        }
        u_values.extend_from_slice(applied);
        warm = Some(out.triple.u.values()[r * m..].to_vec());
        steps.push(StepRecord {
            k,
            e_k_norm: euclid(&e_k),
            e_k,
            e_k_p,
            e_k_u: out.e_u(),
            solver_iters: out.iterations,
            converged: out.converged,
            dstar_tau_k: None,
        });
        tails.push(out.triple.u);
    }

    let closed_loop_objective = running + prob.terminal_cost(&x)?;
    let budgets: Vec<_> = steps.iter().map(StepRecord::budget).collect();
    Ok(MpcResult {
        u_n: ControlSignal::new(solve_grid, u_values, prob.control_box())?,
        x_n: Trajectory::new(fine, dim_x, nodes)?,
        e_avg: metrics::averaged_error(&budgets)?,
        steps,
        tails,
        grid,
        closed_loop_objective,
    })
}

/// Single-shot solve of `P_{p̂}(t_0, x_0)` on `n_fine` intervals.
///
/// Fails with [`Error::ReferenceNotConverged`] when the residual stays above
/// the configured tolerance.
pub fn reference_solution(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    x0: &[f64],
    n_fine: usize,
    cfg: &SolveConfig,
) -> Result<ExtremalTriple> {
    let horizon = p_hat.grid();
    let grid = UniformGrid::new(horizon.t0(), horizon.t_end(), n_fine)?;
    let out = solve_ocp(prob, p_hat, &grid, x0, cfg, None)?;
    if !out.converged {
        return Err(Error::ReferenceNotConverged { residual: out.e_u(), tol: cfg.tol_residual });
    }
    Ok(out.triple)
}

/// User-supplied estimates behind the diagnostic bound constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    /// `c₀` from the local error estimate.
    pub c0: f64,
    /// Lipschitz constant `L` of the dynamics.
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub h: f64,
    pub u_l1: f64,
    pub x_w11: f64,
    /// `‖u^N - û‖₁ + ‖x^N - x̂‖_{1,1}`.
    pub lhs: f64,
    pub e_avg: f64,
    pub re: f64,
    /// `lhs / ℰ` (infinite when `ℰ = 0`).
    pub ratio_linear: f64,
    /// `lhs / (√ℰ + h)`.
    pub ratio_sqrt: f64,
    pub c1_bar: f64,
    pub c2_bar: f64,
    pub c3_bar: f64,
    /// `d*_{t_k}(ũ_k, û)` per step.
    pub dstar_tau: Vec<f64>,
    /// `‖ũ_k - û‖₁` on `[t_k, T]` per step; the smallness hypothesis of the estimate.
    pub tail_l1: Vec<f64>,
}

impl ErrorReport {
    pub fn max_tail_l1(&self) -> f64 {
        self.tail_l1.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares an MPC run with a reference optimum. Also fills in
/// `dstar_tau_k` on `result.steps`.
pub fn compare_to_reference(
    prob: &ProblemDef,
    result: &mut MpcResult,
    reference: &ExtremalTriple,
    gamma: &GammaSet,
    bounds: BoundInputs,
) -> Result<ErrorReport> {
    let u_ref: &PiecewiseConstant = reference.u.as_piecewise();
    let h = result.grid.h();
    let u_l1 = metrics::dist_l1(result.u_n.as_piecewise(), u_ref)?;
    let x_w11 = metrics::dist_w11(&result.x_n, &reference.x)?;
    let lhs = u_l1 + x_w11;
    let budgets = result.budgets();
    let re = metrics::relative_error(result.u_n.as_piecewise(), &result.x_n, u_ref, &reference.x, &budgets, h)?;
    let mut dstar_tau = Vec::with_capacity(result.tails.len());
    let mut tail_l1 = Vec::with_capacity(result.tails.len());
    for (step, tail) in result.steps.iter_mut().zip(&result.tails) {
        let d = metrics::dstar_tau(tail.as_piecewise(), u_ref, gamma)?;
        step.dstar_tau_k = Some(d);
        dstar_tau.push(d);
        tail_l1.push(metrics::dist_l1_tail(tail.as_piecewise(), u_ref)?);
    }
    let t = result.grid.t_end() - result.grid.t0();
    let (c0, l) = (bounds.c0, bounds.lipschitz);
    let d = prob.control_box().diameter();
    let big_m = gamma.len() as f64;
    let growth = (l * t).exp();
    let e = result.e_avg;
    Ok(ErrorReport {
        h,
        u_l1,
        x_w11,
        lhs,
        e_avg: e,
        re,
        ratio_linear: if e > 0.0 {
            lhs / e
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
        ratio_sqrt: lhs / (e.sqrt() + h),
        c1_bar: c0 * l * t * growth,
        c2_bar: 2.0 * d * l * growth * (c0 * t * big_m).sqrt(),
        c3_bar: 6.0 * big_m * d * l * growth,
        dstar_tau,
        tail_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    fn sharpness_errors(n: usize) -> ErrorModel {
        let h = 1.0 / n as f64;
        let g = UniformGrid::new(0.0, 1.0, n).unwrap();
        let mut list = vec![ParameterSignal::constant(g.clone(), &[1.0 + 2.0 * h])];
        list.extend((1..n).map(|_| ParameterSignal::constant(g.clone(), &[1.0])));
        ErrorModel { measurement: Measurement::None, prediction: Prediction::PerStep(list), seed: 0 }
    }

    #[test]
    fn single_step_matches_single_solve() {
        let reg = problems::by_key("lqr-decay").unwrap();
        let p_hat = reg.p_hat_signal(1).unwrap();
        let cfg = SolveConfig::projected_gradient(1e-10, 500);
        let res =
            run_mpc(&reg.problem, &p_hat, &reg.x0, 1, &ErrorModel::exact(), &cfg, DEFAULT_PLANT_SUBSTEPS).unwrap();
        let grid = UniformGrid::new(0.0, 1.0, 1).unwrap();
        let single = solve_ocp(&reg.problem, &p_hat, &grid, &reg.x0, &cfg, None).unwrap();
        assert_eq!(res.u_n.values(), single.triple.u.values());
        assert_eq!(res.steps.len(), 1);
    }

    #[test]
    fn sharpness_run_switches_after_first_step() {
        let reg = problems::by_key("sharpness").unwrap();
        for n in [4usize, 8, 16, 32] {
            let h = 1.0 / n as f64;
            let p_hat = reg.p_hat_signal(n).unwrap();
            let cfg = SolveConfig::bang_bang(1e-9, 100);
            let mut res =
                run_mpc(&reg.problem, &p_hat, &reg.x0, n, &sharpness_errors(n), &cfg, DEFAULT_PLANT_SUBSTEPS).unwrap();
            assert_eq!(res.u_n.value(0), &[-1.0]);
            assert!(res.u_n.values()[1..].iter().all(|&v| v == 1.0));
            assert_eq!(res.e_avg, 2.0 * h * h);
            let reference = reference_solution(&reg.problem, &p_hat, &reg.x0, 8 * n, &cfg).unwrap();
            assert!(reference.u.values().iter().all(|&v| v == 1.0));
            let report = compare_to_reference(
                &reg.problem,
                &mut res,
                &reference,
                &GammaSet::new(vec![0.0]).unwrap(),
                BoundInputs { c0: 1.0, lipschitz: 2.0 },
            )
            .unwrap();
            assert_eq!(report.u_l1, 2.0 * h);
            assert!(report.u_l1 / report.e_avg.sqrt() >= 2f64.sqrt() - 1e-12);
            assert_eq!(report.dstar_tau[0], h);
            assert!(report.dstar_tau[1..].iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn step_records_match_error_model() {
        let reg = problems::by_key("spacecraft").unwrap();
        let n = 16;
        let p_hat = reg.p_hat_signal(n).unwrap();
        let err = ErrorModel {
            measurement: Measurement::Uniform { bound: 0.1 },
            prediction: Prediction::ResampleUniform { bound: 0.05, mesh: 64 },
            seed: 3,
        };
        let cfg = SolveConfig::projected_gradient(1e-6, 200);
        let a = run_mpc(&reg.problem, &p_hat, &reg.x0, n, &err, &cfg, DEFAULT_PLANT_SUBSTEPS).unwrap();
        let b = run_mpc(&reg.problem, &p_hat, &reg.x0, n, &err, &cfg, DEFAULT_PLANT_SUBSTEPS).unwrap();
        assert_eq!(a.u_n, b.u_n);
        assert_eq!(a.x_n, b.x_n);
        assert_eq!(a.steps, b.steps);
        for s in &a.steps {
            assert!(s.e_k_norm <= 0.1 && s.e_k_p <= 0.05 && s.e_k_u >= 0.0);
        }
        assert_eq!(a.e_avg, metrics::averaged_error(&a.budgets()).unwrap());
        for (k, tail) in a.tails.iter().enumerate() {
            assert_eq!(tail.value(0), a.u_n.value(k));
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let reg = problems::by_key("lqr-smoke").unwrap();
        let p_hat = reg.p_hat_signal(4).unwrap();
        let cfg = SolveConfig::default();
        assert!(run_mpc(&reg.problem, &p_hat, &reg.x0, 0, &ErrorModel::exact(), &cfg, 10).is_err());
        let bad = ErrorModel { measurement: Measurement::Fixed(vec![vec![0.0]]), ..ErrorModel::exact() };
        assert!(matches!(run_mpc(&reg.problem, &p_hat, &reg.x0, 4, &bad, &cfg, 10), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn offset_prediction_adds_on_finer_grid() {
        let coarse = ParameterSignal::constant(UniformGrid::new(0.0, 1.0, 2).unwrap(), &[1.0]);
        let fine = ParameterSignal::new(UniformGrid::new(0.0, 1.0, 4).unwrap(), 1, vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let sum = add_signals(&coarse, &fine).unwrap();
        assert_eq!(sum.values(), &[1.0, 1.1, 1.2, 1.3]);
    }
}
