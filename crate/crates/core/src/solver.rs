//! Euler transcription of the auxiliary problems `P_p(τ, x_τ)` and the
//! optimality-map residual that certifies a candidate `(x, λ, u)`.
//!
//! On a grid with step `h` the transcribed problem is
//!
//! ```text
//! min  g_T(x_K) + Σ_k h g(p_k, x_k, u_k)
//! s.t. x_{k+1} = x_k + h f(p_k, x_k, u_k),   x_0 = x_τ,   u_k ∈ U
//! ```
//!
//! and its exact gradient is `h ∇_u H(p_k, x_k, λ_{k+1}, u_k)` with `λ` from
//! [`crate::integrate::propagate_adjoint`]. The residual uses the same
//! argument pattern, so a discrete KKT point has residual zero up to round-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{euclid, ControlSignal, ExtremalTriple, ParameterSignal, Trajectory, UniformGrid};
use crate::integrate::interval_params;
use crate::problem::{ControlBox, ProblemDef, Workspace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Armijo {
    pub c: f64,
    pub shrink: f64,
    /// First trial step. Later iterations start from
    /// `max(init_step, 2 * last accepted step)`.
    pub init_step: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c: 1e-4, shrink: 0.5, init_step: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    ProjectedGradient,
    BangBangSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol_residual: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub armijo: Armijo,
    pub mode: SolveMode,
    /// Weight of the new vertex control in the bang-bang sweep update
    /// (`0.5` averages with the previous iterate, `1.0` is undamped).
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_damping() -> f64 {
    0.5
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_residual: 1e-6,
            max_iters: 500,
            armijo: Armijo::default(),
            mode: SolveMode::ProjectedGradient,
            damping: default_damping(),
        }
    }
}

impl SolveConfig {
    pub fn projected_gradient(tol_residual: f64, max_iters: usize) -> Self {
        Self { tol_residual, max_iters, ..Self::default() }
    }

    pub fn bang_bang(tol_residual: f64, max_iters: usize) -> Self {
        Self { tol_residual, max_iters, mode: SolveMode::BangBangSweep, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::InvalidConfig("tol_residual must be positive".into()));
        }
        if !(self.armijo.shrink > 0.0 && self.armijo.shrink < 1.0) {
            return Err(Error::InvalidConfig("Armijo shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo.init_step > 0.0 && self.armijo.c > 0.0 && self.armijo.c < 1.0) {
            return Err(Error::InvalidConfig("Armijo needs init_step > 0 and c in (0, 1)".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `z = (ξ, ν, η, π, ρ)`, with per-interval components stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub h: f64,
    pub n: usize,
    pub m: usize,
    pub xi: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Residual {
    pub fn xi_l1(&self) -> f64 {
        self.xi.chunks(self.n).map(|c| self.h * euclid(c)).sum()
    }

    pub fn eta_l1(&self) -> f64 {
        self.eta.chunks(self.n).map(|c| self.h * euclid(c)).sum()
    }

    pub fn rho_linf(&self) -> f64 {
        self.rho.chunks(self.m).map(euclid).fold(0.0, f64::max)
    }

    /// `‖ξ‖₁ + |ν| + ‖η‖₁ + |π| + ‖ρ‖_∞`.
    pub fn z_norm(&self) -> f64 {
        self.xi_l1() + euclid(&self.nu) + self.eta_l1() + euclid(&self.pi) + self.rho_linf()
    }
}

/// Minimal-norm element of `g + N_U(u)` in coordinate `i` of a box.
fn stationarity_defect(g: f64, u: f64, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        0.0
    } else if u <= lo {
        g.min(0.0)
    } else if u >= hi {
        g.max(0.0)
    } else {
        g
    }
}

fn stationarity_into(bounds: &ControlBox, grad: &[f64], u: &[f64], out: &mut [f64]) {
    for i in 0..grad.len() {
        out[i] = stationarity_defect(grad[i], u[i], bounds.lo()[i], bounds.hi()[i]);
    }
}

/// Computes the residual of `y` in the optimality map of `P_p(τ, x_τ)`,
/// where `τ` is the first node of `y`'s grid.
pub fn residual_of(prob: &ProblemDef, p: &ParameterSignal, x_tau: &[f64], y: &ExtremalTriple) -> Result<Residual> {
    let grid = y.grid();
    let (n, m, l) = (prob.n(), prob.m(), prob.l());
    if y.x.dim() != n || y.lambda.dim() != n || y.u.dim() != m || x_tau.len() != n {
        return Err(Error::GridMismatch("triple dimensions do not match the problem".into()));
    }
    let kk = grid.intervals();
    let h = grid.h();
    let pv = interval_params(p, grid);
    let mut ws = prob.workspace();
    let (mut fv, mut gx, mut gu) = (vec![0.0; n], vec![0.0; n], vec![0.0; m]);
    let mut xi = vec![0.0; kk * n];
    let mut eta = vec![0.0; kk * n];
    let mut rho = vec![0.0; kk * m];
    for k in 0..kk {
        let pk = &pv[k * l..(k + 1) * l];
        let (xk, xk1) = (y.x.node(k), y.x.node(k + 1));
        let (lk, lk1) = (y.lambda.node(k), y.lambda.node(k + 1));
        let uk = y.u.value(k);
        prob.f_into(pk, xk, uk, &mut fv)?;
        prob.grad_x_h_into(pk, xk, lk1, uk, &mut gx, &mut ws)?;
        prob.grad_u_h_into(pk, xk, lk1, uk, &mut gu, &mut ws)?;
        // Same operation order as the Euler updates, so an exact transcription
        // solution has exactly zero defects.
        for i in 0..n {
            xi[k * n + i] = ((xk[i] + h * fv[i]) - xk1[i]) / h;
            eta[k * n + i] = ((lk1[i] + h * gx[i]) - lk[i]) / h;
        }
        stationarity_into(prob.control_box(), &gu, uk, &mut rho[k * m..(k + 1) * m]);
    }
    let nu: Vec<f64> = y.x.node(0).iter().zip(x_tau).map(|(a, b)| a - b).collect();
    let mut grad_t = vec![0.0; n];
    prob.terminal_grad_into(y.x.terminal(), &mut grad_t)?;
    let pi: Vec<f64> = y.lambda.terminal().iter().zip(&grad_t).map(|(a, b)| a - b).collect();
    Ok(Residual { h, n, m, xi, nu, eta, pi, rho })
}

/// Node-based switching function `σ_k = ∇_u H(p_k, x_k, λ_k, u_k)`; the last
/// node reuses the last interval's `p` and `u`.
pub fn switching_function(prob: &ProblemDef, p: &ParameterSignal, y: &ExtremalTriple) -> Result<Trajectory> {
    if !prob.is_affine() {
        return Err(Error::NotAffine(prob.name().to_string()));
    }
    let grid = y.grid();
    let (m, l) = (prob.m(), prob.l());
    let kk = grid.intervals();
    let pv = interval_params(p, grid);
    let mut ws = prob.workspace();
    let mut out = vec![0.0; (kk + 1) * m];
    for k in 0..=kk {
        let j = k.min(kk - 1);
        prob.grad_u_h_into(
            &pv[j * l..(j + 1) * l],
            y.x.node(k),
            y.lambda.node(k),
            y.u.value(j),
            &mut out[k * m..(k + 1) * m],
            &mut ws,
        )?;
    }
    Trajectory::new(grid.clone(), m, out)
}

/// The transcribed problem on one tail grid.
pub(crate) struct Transcription<'a> {
    prob: &'a ProblemDef,
    grid: &'a UniformGrid,
    h: f64,
    pv: Vec<f64>,
    x_tau: &'a [f64],
    ws: Workspace,
    fbuf: Vec<f64>,
    gbuf: Vec<f64>,
}

impl<'a> Transcription<'a> {
    pub(crate) fn new(prob: &'a ProblemDef, p: &ParameterSignal, grid: &'a UniformGrid, x_tau: &'a [f64]) -> Self {
        Self {
            prob,
            grid,
            h: grid.h(),
            pv: interval_params(p, grid),
            x_tau,
            ws: prob.workspace(),
            fbuf: vec![0.0; prob.n()],
            gbuf: vec![0.0; prob.n()],
        }
    }

    fn k(&self) -> usize {
        self.grid.intervals()
    }

    /// Euler states into `xs`; returns the transcribed objective.
    pub(crate) fn forward(&mut self, u: &[f64], xs: &mut [f64]) -> Result<f64> {
        let (n, m) = (self.prob.n(), self.prob.m());
        xs[..n].copy_from_slice(self.x_tau);
        let mut running = 0.0;
        for k in 0..self.k() {
            let l = self.prob.l();
            let pk = &self.pv[k * l..(k + 1) * l];
            let uk = &u[k * m..(k + 1) * m];
            let (head, tail) = xs.split_at_mut((k + 1) * n);
            let xk = &head[k * n..];
            self.prob.f_into(pk, xk, uk, &mut self.fbuf)?;
            running += self.h * self.prob.running_cost(pk, xk, uk)?;
            for i in 0..n {
                tail[i] = xk[i] + self.h * self.fbuf[i];
            }
            if tail[..n].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "state iterate", index: k + 1 });
            }
        }
        let kk = self.k();
        Ok(self.prob.terminal_cost(&xs[kk * n..])? + running)
    }

    pub(crate) fn backward(&mut self, u: &[f64], xs: &[f64], lam: &mut [f64]) -> Result<()> {
        let (n, m) = (self.prob.n(), self.prob.m());
        let kk = self.k();
        self.prob.terminal_grad_into(&xs[kk * n..], &mut lam[kk * n..])?;
        for k in (0..kk).rev() {
            let l = self.prob.l();
            let pk = &self.pv[k * l..(k + 1) * l];
            let (head, tail) = lam.split_at_mut((k + 1) * n);
            let next = &tail[..n];
            self.prob.grad_x_h_into(
                pk,
                &xs[k * n..(k + 1) * n],
                next,
                &u[k * m..(k + 1) * m],
                &mut self.gbuf,
                &mut self.ws,
            )?;
            for i in 0..n {
                head[k * n + i] = next[i] + self.h * self.gbuf[i];
            }
            if head[k * n..].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "adjoint iterate", index: k });
            }
        }
        Ok(())
    }

    /// `∇_u H(p_k, x_k, λ_{k+1}, u_k)` per interval.
    pub(crate) fn control_gradient(&mut self, u: &[f64], xs: &[f64], lam: &[f64], g: &mut [f64]) -> Result<()> {
        let (n, m) = (self.prob.n(), self.prob.m());
        for k in 0..self.k() {
            let l = self.prob.l();
            let pk = &self.pv[k * l..(k + 1) * l];
            self.prob.grad_u_h_into(
                pk,
                &xs[k * n..(k + 1) * n],
                &lam[(k + 1) * n..(k + 2) * n],
                &u[k * m..(k + 1) * m],
                &mut g[k * m..(k + 1) * m],
                &mut self.ws,
            )?;
        }
        Ok(())
    }

    /// `max_k |ρ_k|` for the given gradient.
    fn stationarity(&self, u: &[f64], g: &[f64]) -> f64 {
        let m = self.prob.m();
        let bounds = self.prob.control_box();
        let mut buf = vec![0.0; m];
        let mut worst: f64 = 0.0;
        for k in 0..self.k() {
            stationarity_into(bounds, &g[k * m..(k + 1) * m], &u[k * m..(k + 1) * m], &mut buf);
            worst = worst.max(euclid(&buf));
        }
        worst
    }

    fn triple(&self, u: Vec<f64>, xs: Vec<f64>, lam: Vec<f64>) -> Result<ExtremalTriple> {
        let n = self.prob.n();
        ExtremalTriple::new(
            Trajectory::new(self.grid.clone(), n, xs)?,
            Trajectory::new(self.grid.clone(), n, lam)?,
            ControlSignal::new(self.grid.clone(), u, self.prob.control_box())?,
        )
    }
}

/// Objective of the Euler-transcribed problem for control values `u`.
pub fn discrete_objective(
    prob: &ProblemDef,
    p: &ParameterSignal,
    grid: &UniformGrid,
    x_tau: &[f64],
    u: &[f64],
) -> Result<f64> {
    let mut tr = Transcription::new(prob, p, grid, x_tau);
    let mut xs = vec![0.0; (grid.intervals() + 1) * prob.n()];
    tr.forward(u, &mut xs)
}

/// Gradient of [`discrete_objective`] from one forward and one adjoint sweep.
pub fn discrete_gradient(
    prob: &ProblemDef,
    p: &ParameterSignal,
    grid: &UniformGrid,
    x_tau: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    let n = prob.n();
    let mut tr = Transcription::new(prob, p, grid, x_tau);
    let mut xs = vec![0.0; (grid.intervals() + 1) * n];
    let mut lam = xs.clone();
    tr.forward(u, &mut xs)?;
    tr.backward(u, &xs, &mut lam)?;
    let mut g = vec![0.0; u.len()];
    tr.control_gradient(u, &xs, &lam, &mut g)?;
    g.iter_mut().for_each(|v| *v *= grid.h());
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub triple: ExtremalTriple,
    pub residual: Residual,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before the residual reached tolerance.
    pub converged: bool,
}

impl SolveOutcome {
    pub fn e_u(&self) -> f64 {
        self.residual.z_norm()
    }
}

/// Approximately solves `P_p(τ, x_τ)` on `grid` (a tail grid whose first node is `τ`).
///
/// `warm_start` gives initial control values (flattened, one per interval);
/// without it the box midpoint is used. Hitting `max_iters` is not an error:
/// the best iterate comes back with `converged == false`.
pub fn solve_ocp(
    prob: &ProblemDef,
    p: &ParameterSignal,
    grid: &UniformGrid,
    x_tau: &[f64],
    cfg: &SolveConfig,
    warm_start: Option<&[f64]>,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    if x_tau.len() != prob.n() || x_tau.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial state must be finite with dimension n".into()));
    }
    let m = prob.m();
    let bounds = prob.control_box();
    let mut u = match warm_start {
        Some(w) if w.len() == grid.intervals() * m => w.to_vec(),
        Some(w) => {
            return Err(Error::GridMismatch(format!(
                "warm start has {} values, grid needs {}",
                w.len(),
                grid.intervals() * m
            )))
        }
        None => bounds.midpoint().repeat(grid.intervals()),
    };
    u.chunks_mut(m).for_each(|c| bounds.project(c));
    match cfg.mode {
        SolveMode::ProjectedGradient => projected_gradient(prob, p, grid, x_tau, cfg, u),
        SolveMode::BangBangSweep => bang_bang_sweep(prob, p, grid, x_tau, cfg, u),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prob: &ProblemDef,
    p: &ParameterSignal,
    tr: &Transcription<'_>,
    u: Vec<f64>,
    xs: Vec<f64>,
    lam: Vec<f64>,
    objective: f64,
    iterations: usize,
    tol: f64,
) -> Result<SolveOutcome> {
    let x_tau = tr.x_tau.to_vec();
    let triple = tr.triple(u, xs, lam)?;
    let residual = residual_of(prob, p, &x_tau, &triple)?;
    let converged = residual.z_norm() <= tol;
    Ok(SolveOutcome { triple, residual, objective, iterations, converged })
}

fn projected_gradient(
    prob: &ProblemDef,
    p: &ParameterSignal,
    grid: &UniformGrid,
    x_tau: &[f64],
    cfg: &SolveConfig,
    mut u: Vec<f64>,
) -> Result<SolveOutcome> {
    let (n, m) = (prob.n(), prob.m());
    let bounds = prob.control_box();
    let h = grid.h();
    let mut tr = Transcription::new(prob, p, grid, x_tau);
    let nodes = (grid.intervals() + 1) * n;
    let (mut xs, mut lam, mut xs_trial) = (vec![0.0; nodes], vec![0.0; nodes], vec![0.0; nodes]);
    let mut g = vec![0.0; u.len()];
    let mut g_trial = g.clone();
    let mut lam_trial = lam.clone();
    let mut u_trial = u.clone();
    let mut obj = tr.forward(&u, &mut xs)?;
    let mut trial_step = cfg.armijo.init_step;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it;
        tr.backward(&u, &xs, &mut lam)?;
        tr.control_gradient(&u, &xs, &lam, &mut g)?;
        // ξ, ν, η, π vanish by construction; ρ decides.
        let stat = tr.stationarity(&u, &g);
        if stat <= 0.5 * cfg.tol_residual {
            break;
        }
        // Below this the objective cannot resolve an Armijo decrease.
        let noise = 64.0 * f64::EPSILON * (1.0 + obj.abs());
        let mut step = trial_step;
        let mut accepted = false;
        while step >= 1e-14 * cfg.armijo.init_step {
            let mut directional = 0.0;
            for (ut, (uc, gk)) in u_trial.chunks_mut(m).zip(u.chunks(m).zip(g.chunks(m))) {
                for i in 0..m {
                    ut[i] = uc[i] - step * gk[i];
                }
                bounds.project(ut);
                for i in 0..m {
                    directional += h * gk[i] * (ut[i] - uc[i]);
                }
            }
            let trial = tr.forward(&u_trial, &mut xs_trial)?;
            let mut ok = trial <= obj + cfg.armijo.c * directional;
            if !ok && trial <= obj + noise && -directional <= noise {
                // Judge the step by the stationarity defect instead.
                tr.backward(&u_trial, &xs_trial, &mut lam_trial)?;
                tr.control_gradient(&u_trial, &xs_trial, &lam_trial, &mut g_trial)?;
                ok = tr.stationarity(&u_trial, &g_trial) < stat;
            }
            if ok {
                std::mem::swap(&mut u, &mut u_trial);
                std::mem::swap(&mut xs, &mut xs_trial);
                obj = trial;
                accepted = true;
                break;
            }
            step *= cfg.armijo.shrink;
        }
        if !accepted {
            // No descent along the projected arc: stationary to working precision.
            break;
        }
        trial_step = cfg.armijo.init_step.max(2.0 * step);
        iterations = it + 1;
    }
    tr.backward(&u, &xs, &mut lam)?;
    finish(prob, p, &tr, u, xs, lam, obj, iterations, cfg.tol_residual)
}

fn bang_bang_sweep(
    prob: &ProblemDef,
    p: &ParameterSignal,
    grid: &UniformGrid,
    x_tau: &[f64],
    cfg: &SolveConfig,
    mut u: Vec<f64>,
) -> Result<SolveOutcome> {
    let (n, m) = (prob.n(), prob.m());
    let bounds = prob.control_box();
    let mut tr = Transcription::new(prob, p, grid, x_tau);
    let nodes = (grid.intervals() + 1) * n;
    let (mut xs, mut lam) = (vec![0.0; nodes], vec![0.0; nodes]);
    let (mut vx, mut vlam) = (vec![0.0; nodes], vec![0.0; nodes]);
    let mut g = vec![0.0; u.len()];
    let mut vertex = vec![0.0; u.len()];
    let mut prev_vertex: Option<Vec<f64>> = None;
    // (residual, control, objective) of the best certified vertex control.
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        tr.forward(&u, &mut xs)?;
        tr.backward(&u, &xs, &mut lam)?;
        tr.control_gradient(&u, &xs, &lam, &mut g)?;
        for k in 0..grid.intervals() {
            let tie = prev_vertex.as_ref().map(|v| &v[k * m..(k + 1) * m]);
            bounds.argmin_vertex(&g[k * m..(k + 1) * m], tie, &mut vertex[k * m..(k + 1) * m]);
        }
        let repeated = prev_vertex.as_deref() == Some(vertex.as_slice());
        if repeated || it + 1 == cfg.max_iters {
            let obj = tr.forward(&vertex, &mut vx)?;
            tr.backward(&vertex, &vx, &mut vlam)?;
            tr.control_gradient(&vertex, &vx, &vlam, &mut g)?;
            let r = tr.stationarity(&vertex, &g);
            if best.as_ref().is_none_or(|(b, _, _)| r < *b) {
                best = Some((r, vertex.clone(), obj));
            }
            if r <= 0.5 * cfg.tol_residual {
                break;
            }
        }
        for (ui, vi) in u.iter_mut().zip(&vertex) {
            *ui = cfg.damping * vi + (1.0 - cfg.damping) * *ui;
        }
        prev_vertex = Some(vertex.clone());
    }

    let (_, control, obj) = best.expect("at least one certification happens on the last iteration");
    tr.forward(&control, &mut vx)?;
    tr.backward(&control, &vx, &mut vlam)?;
    finish(prob, p, &tr, control, vx, vlam, obj, iterations, cfg.tol_residual)
}
