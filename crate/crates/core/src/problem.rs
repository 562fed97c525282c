//! Bolza problem definition and the Hamiltonian calculus built on it.
//!
//! A problem is `min g_T(x(T)) + ∫ g(p, x, u) dt` subject to
//! `ẋ = f(p, x, u)`, `x(τ) = x_τ`, `u(t) ∈ U` with `U` an axis-aligned box.
//! Dynamics and costs are plain closures registered in code; matrices are
//! passed row-major (`f_x[i * n + j] = ∂f_i/∂x_j`).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// `(p, x, u, out)`.
pub type VecMap = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(p, x, u) -> value`.
pub type ScalarMap = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(x, out)`.
pub type TerminalMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(p, x, λ, u, out)`.
pub type HamiltonianMap = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Step used for second derivatives when none are supplied.
const SECOND_DERIVATIVE_FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ControlBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidConfig("box bounds must have equal, nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidConfig(format!("box needs lo <= hi, got {lo:?} / {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn project(&self, v: &mut [f64]) {
        for ((x, l), h) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*l, *h);
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| l <= x && x <= h)
    }

    /// Euclidean diameter `|hi - lo|`.
    pub fn diameter(&self) -> f64 {
        crate::grid::euclid_dist(&self.hi, &self.lo)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// All distinct corners.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for (l, h) in self.lo.iter().zip(&self.hi) {
            let mut next = Vec::with_capacity(out.len() * 2);
            for v in &out {
                let mut a = v.clone();
                a.push(*l);
                next.push(a);
                if h > l {
                    let mut b = v.clone();
                    b.push(*h);
                    next.push(b);
                }
            }
            out = next;
        }
        out
    }

    /// Coordinates along which the box has an edge (`lo_i < hi_i`).
    pub fn edge_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.lo[i] < self.hi[i]).collect()
    }

    /// Vertex minimizing `⟨sigma, v⟩`. Zero components keep `tie`'s value
    /// when it is itself a bound, else fall to `lo`.
    pub fn argmin_vertex(&self, sigma: &[f64], tie: Option<&[f64]>, out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = if sigma[i] > 0.0 {
                self.lo[i]
            } else if sigma[i] < 0.0 {
                self.hi[i]
            } else {
                match tie {
                    Some(t) if t[i] == self.hi[i] => self.hi[i],
                    _ => self.lo[i],
                }
            };
        }
    }
}

#[derive(Clone)]
pub struct ProblemDef {
    name: String,
    n: usize,
    m: usize,
    l: usize,
    f: VecMap,
    f_x: VecMap,
    f_u: VecMap,
    g: ScalarMap,
    g_x: VecMap,
    g_u: VecMap,
    g_t: TerminalCost,
    g_t_grad: TerminalMap,
    h_xx: Option<HamiltonianMap>,
    h_ux: Option<HamiltonianMap>,
    h_uu: Option<HamiltonianMap>,
    g_t_hess: Option<TerminalMap>,
    control_box: ControlBox,
    lipschitz: Option<f64>,
    affine: bool,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("l", &self.l)
            .field("control_box", &self.control_box)
            .field("affine", &self.affine)
            .finish_non_exhaustive()
    }
}

/// Scratch buffers for the allocation-free evaluation paths.
#[derive(Clone, Debug)]
pub struct Workspace {
    f: Vec<f64>,
    fx: Vec<f64>,
    fu: Vec<f64>,
    gx: Vec<f64>,
    gu: Vec<f64>,
}

fn check_finite(vals: &[f64], callable: &'static str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Eval { callable })
    }
}

impl ProblemDef {
    pub fn builder(name: impl Into<String>, n: usize, m: usize, l: usize) -> ProblemBuilder {
        ProblemBuilder::new(name.into(), n, m, l)
    }

    pub fn into_builder(self) -> ProblemBuilder {
        ProblemBuilder { def: self, has_dynamics: true, has_box: true }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn user_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn has_analytic_second_derivatives(&self) -> bool {
        self.h_xx.is_some() && self.h_ux.is_some() && self.h_uu.is_some()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            f: vec![0.0; self.n],
            fx: vec![0.0; self.n * self.n],
            fu: vec![0.0; self.n * self.m],
            gx: vec![0.0; self.n],
            gu: vec![0.0; self.m],
        }
    }

    pub fn f_into(&self, p: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(p, x, u, out);
        check_finite(out, "f")
    }

    pub fn running_cost(&self, p: &[f64], x: &[f64], u: &[f64]) -> Result<f64> {
        let v = (self.g)(p, x, u);
        check_finite(&[v], "g").map(|_| v)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> Result<f64> {
        let v = (self.g_t)(x);
        check_finite(&[v], "g_T").map(|_| v)
    }

    pub fn terminal_grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.g_t_grad)(x, out);
        check_finite(out, "g_T_grad")
    }

    pub fn f_x_into(&self, p: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f_x)(p, x, u, out);
        check_finite(out, "f_x")
    }

    pub fn f_u_into(&self, p: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f_u)(p, x, u, out);
        check_finite(out, "f_u")
    }

    pub fn g_x_into(&self, p: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.g_x)(p, x, u, out);
        check_finite(out, "g_x")
    }

    pub fn g_u_into(&self, p: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.g_u)(p, x, u, out);
        check_finite(out, "g_u")
    }

    pub fn hamiltonian_ws(&self, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], ws: &mut Workspace) -> Result<f64> {
        self.f_into(p, x, u, &mut ws.f)?;
        let g = self.running_cost(p, x, u)?;
        Ok(g + dot(lam, &ws.f))
    }

    /// `∇_x H = g_x + f_xᵀ λ`.
    pub fn grad_x_h_into(
        &self,
        p: &[f64],
        x: &[f64],
        lam: &[f64],
        u: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<()> {
        let n = self.n;
        self.f_x_into(p, x, u, &mut ws.fx)?;
        self.g_x_into(p, x, u, &mut ws.gx)?;
        for j in 0..n {
            let mut s = ws.gx[j];
            for i in 0..n {
                s += ws.fx[i * n + j] * lam[i];
            }
            out[j] = s;
        }
        Ok(())
    }

    /// `∇_u H = g_u + f_uᵀ λ`.
    pub fn grad_u_h_into(
        &self,
        p: &[f64],
        x: &[f64],
        lam: &[f64],
        u: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<()> {
        let (n, m) = (self.n, self.m);
        self.f_u_into(p, x, u, &mut ws.fu)?;
        self.g_u_into(p, x, u, &mut ws.gu)?;
        for j in 0..m {
            let mut s = ws.gu[j];
            for i in 0..n {
                s += ws.fu[i * m + j] * lam[i];
            }
            out[j] = s;
        }
        Ok(())
    }

    /// `H_xx` (n×n), analytic when registered, else central differences of `∇_x H`.
    pub fn h_xx_into(&self, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(h) = &self.h_xx {
            h(p, x, lam, u, out);
            return check_finite(out, "H_xx");
        }
        let n = self.n;
        self.fd_jacobian(x, n, out, |xs, g, ws| self.grad_x_h_into(p, xs, lam, u, g, ws))
    }

    /// `H_ux` (m×n): row `i` is `∂(∇_u H)_i / ∂x`.
    pub fn h_ux_into(&self, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(h) = &self.h_ux {
            h(p, x, lam, u, out);
            return check_finite(out, "H_ux");
        }
        let m = self.m;
        self.fd_jacobian(x, m, out, |xs, g, ws| self.grad_u_h_into(p, xs, lam, u, g, ws))
    }

    /// `H_uu` (m×m).
    pub fn h_uu_into(&self, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(h) = &self.h_uu {
            h(p, x, lam, u, out);
            return check_finite(out, "H_uu");
        }
        let m = self.m;
        self.fd_jacobian(u, m, out, |us, g, ws| self.grad_u_h_into(p, x, lam, us, g, ws))
    }

    /// `g_T''` (n×n).
    pub fn terminal_hess_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(h) = &self.g_t_hess {
            h(x, out);
            return check_finite(out, "g_T_hess");
        }
        let n = self.n;
        self.fd_jacobian(x, n, out, |xs, g, _| self.terminal_grad_into(xs, g))
    }

    /// Central-difference Jacobian of `eval` (rows: `rows` outputs, cols: `arg.len()`).
    fn fd_jacobian(
        &self,
        arg: &[f64],
        rows: usize,
        out: &mut [f64],
        eval: impl Fn(&[f64], &mut [f64], &mut Workspace) -> Result<()>,
    ) -> Result<()> {
        let cols = arg.len();
        let mut ws = self.workspace();
        let mut a = arg.to_vec();
        let (mut gp, mut gm) = (vec![0.0; rows], vec![0.0; rows]);
        for j in 0..cols {
            let s = SECOND_DERIVATIVE_FD_STEP * arg[j].abs().max(1.0);
            a[j] = arg[j] + s;
            eval(&a, &mut gp, &mut ws)?;
            a[j] = arg[j] - s;
            eval(&a, &mut gm, &mut ws)?;
            a[j] = arg[j];
            for i in 0..rows {
                out[i * cols + j] = (gp[i] - gm[i]) / (2.0 * s);
            }
        }
        Ok(())
    }

    /// The user's Lipschitz constant, or a sampled estimate of
    /// `sup ‖[f_x f_u]‖_F` over `x ∈ [-radius, radius]^n`, `u ∈ U`, `p ∈ [-1, 1]^l`.
    pub fn lipschitz_estimate(&self, samples: usize, radius: f64, seed: u64) -> Result<f64> {
        if let Some(l) = self.lipschitz {
            return Ok(l);
        }
        let mut rng = CounterRng::new(seed, 0);
        let (mut fx, mut fu) = (vec![0.0; self.n * self.n], vec![0.0; self.n * self.m]);
        let mut best: f64 = 0.0;
        for _ in 0..samples.max(1) {
            let (p, x, _, u) = self.sample_point(&mut rng, radius);
            self.f_x_into(&p, &x, &u, &mut fx)?;
            self.f_u_into(&p, &x, &u, &mut fu)?;
            let norm = fx.iter().chain(&fu).map(|v| v * v).sum::<f64>().sqrt();
            best = best.max(norm);
        }
        Ok(best)
    }

    pub(crate) fn sample_point(&self, rng: &mut CounterRng, radius: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = (0..self.l).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x: Vec<f64> = (0..self.n).map(|_| rng.uniform(-radius, radius)).collect();
        let lam: Vec<f64> = (0..self.n).map(|_| rng.uniform(-radius, radius)).collect();
        let u: Vec<f64> = (0..self.m).map(|i| rng.uniform(self.control_box.lo[i], self.control_box.hi[i])).collect();
        (p, x, lam, u)
    }
}

pub struct ProblemBuilder {
    def: ProblemDef,
    has_dynamics: bool,
    has_box: bool,
}

impl ProblemBuilder {
    fn new(name: String, n: usize, m: usize, l: usize) -> Self {
        let zero_vec: VecMap = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        Self {
            def: ProblemDef {
                name,
                n,
                m,
                l,
                f: zero_vec.clone(),
                f_x: zero_vec.clone(),
                f_u: zero_vec.clone(),
                g: Arc::new(|_, _, _| 0.0),
                g_x: zero_vec.clone(),
                g_u: zero_vec,
                g_t: Arc::new(|_| 0.0),
                g_t_grad: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
                h_xx: None,
                h_ux: None,
                h_uu: None,
                g_t_hess: None,
                control_box: ControlBox { lo: vec![0.0; m], hi: vec![0.0; m] },
                lipschitz: None,
                affine: false,
            },
            has_dynamics: false,
            has_box: false,
        }
    }

    pub fn dynamics(
        mut self,
        f: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        f_x: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        f_u: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.def.f = Arc::new(f);
        self.def.f_x = Arc::new(f_x);
        self.def.f_u = Arc::new(f_u);
        self.has_dynamics = true;
        self
    }

    pub fn running_cost(
        mut self,
        g: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        g_x: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        g_u: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.def.g = Arc::new(g);
        self.def.g_x = Arc::new(g_x);
        self.def.g_u = Arc::new(g_u);
        self
    }

    pub fn terminal_cost(
        mut self,
        g_t: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.def.g_t = Arc::new(g_t);
        self.def.g_t_grad = Arc::new(grad);
        self
    }

    pub fn terminal_hessian(mut self, hess: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.def.g_t_hess = Some(Arc::new(hess));
        self
    }

    pub fn hamiltonian_hessians(
        mut self,
        h_xx: impl Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        h_ux: impl Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        h_uu: impl Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.def.h_xx = Some(Arc::new(h_xx));
        self.def.h_ux = Some(Arc::new(h_ux));
        self.def.h_uu = Some(Arc::new(h_uu));
        self
    }

    pub fn f_x(mut self, f_x: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.def.f_x = Arc::new(f_x);
        self
    }

    pub fn control_box(mut self, b: ControlBox) -> Self {
        self.def.control_box = b;
        self.has_box = true;
        self
    }

    pub fn lipschitz(mut self, l: f64) -> Self {
        self.def.lipschitz = Some(l);
        self
    }

    /// Marks `f` and `g` as affine in the control.
    pub fn affine(mut self) -> Self {
        self.def.affine = true;
        self
    }

    pub fn build(self) -> Result<ProblemDef> {
        let d = &self.def;
        if d.n == 0 || d.m == 0 {
            return Err(Error::InvalidConfig("state and control dimensions must be positive".into()));
        }
        if !self.has_dynamics {
            return Err(Error::InvalidConfig(format!("problem `{}` has no dynamics", d.name)));
        }
        if !self.has_box || d.control_box.dim() != d.m {
            return Err(Error::InvalidConfig(format!("problem `{}` needs a control box of dimension {}", d.name, d.m)));
        }
        if let Some(l) = d.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig("Lipschitz estimate must be positive".into()));
            }
        }
        Ok(self.def)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `H(p, x, λ, u) = g(p, x, u) + ⟨λ, f(p, x, u)⟩`.
pub fn hamiltonian(prob: &ProblemDef, p: &[f64], x: &[f64], lam: &[f64], u: &[f64]) -> Result<f64> {
    prob.hamiltonian_ws(p, x, lam, u, &mut prob.workspace())
}

pub fn grad_x_h(prob: &ProblemDef, p: &[f64], x: &[f64], lam: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; prob.n()];
    prob.grad_x_h_into(p, x, lam, u, &mut out, &mut prob.workspace())?;
    Ok(out)
}

pub fn grad_u_h(prob: &ProblemDef, p: &[f64], x: &[f64], lam: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; prob.m()];
    prob.grad_u_h_into(p, x, lam, u, &mut out, &mut prob.workspace())?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Derivative verification
// ---------------------------------------------------------------------------

const DERIV_FD_STEP: f64 = 1e-5;
const DERIV_REL_TOL: f64 = 1e-6;
/// Absolute floor, expressed relative to `DERIV_REL_TOL` (`1e-9 / 1e-6`).
const DERIV_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeCheck {
    pub name: &'static str,
    /// `max |a - fd| / (max(|a|, |fd|) + 1e-3)` over entries and samples.
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeReport {
    pub samples: usize,
    pub checks: Vec<DerivativeCheck>,
}

impl DerivativeReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&DerivativeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Accumulator {
    name: &'static str,
    worst: f64,
}

impl Accumulator {
    fn record(&mut self, analytic: &[f64], fd: &[f64]) {
        for (a, d) in analytic.iter().zip(fd) {
            let e = (a - d).abs() / (a.abs().max(d.abs()) + DERIV_FLOOR);
            // NaN must register as a failure.
            self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
        }
    }

    fn finish(self) -> DerivativeCheck {
        DerivativeCheck { name: self.name, max_rel_err: self.worst, pass: self.worst <= DERIV_REL_TOL }
    }
}

/// Central-difference Jacobian of an infallible map (no finiteness checks, so
/// defects show up in the report rather than as errors).
fn raw_jacobian(arg: &[f64], rows: usize, mut eval: impl FnMut(&[f64], &mut [f64])) -> Vec<f64> {
    let cols = arg.len();
    let mut out = vec![0.0; rows * cols];
    let mut a = arg.to_vec();
    let (mut gp, mut gm) = (vec![0.0; rows], vec![0.0; rows]);
    for j in 0..cols {
        let s = DERIV_FD_STEP * arg[j].abs().max(1.0);
        a[j] = arg[j] + s;
        eval(&a, &mut gp);
        a[j] = arg[j] - s;
        eval(&a, &mut gm);
        a[j] = arg[j];
        for i in 0..rows {
            out[i * cols + j] = (gp[i] - gm[i]) / (2.0 * s);
        }
    }
    out
}

fn raw_grad_x_h(prob: &ProblemDef, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], out: &mut [f64]) {
    let n = prob.n;
    let mut fx = vec![0.0; n * n];
    let mut gx = vec![0.0; n];
    (prob.f_x)(p, x, u, &mut fx);
    (prob.g_x)(p, x, u, &mut gx);
    for j in 0..n {
        out[j] = gx[j] + (0..n).map(|i| fx[i * n + j] * lam[i]).sum::<f64>();
    }
}

fn raw_grad_u_h(prob: &ProblemDef, p: &[f64], x: &[f64], lam: &[f64], u: &[f64], out: &mut [f64]) {
    let (n, m) = (prob.n, prob.m);
    let mut fu = vec![0.0; n * m];
    let mut gu = vec![0.0; m];
    (prob.f_u)(p, x, u, &mut fu);
    (prob.g_u)(p, x, u, &mut gu);
    for j in 0..m {
        out[j] = gu[j] + (0..n).map(|i| fu[i * m + j] * lam[i]).sum::<f64>();
    }
}

/// Compares every supplied derivative with central differences of the map
/// it differentiates at `sample_count` random points with `u ∈ U`.
pub fn check_derivatives(prob: &ProblemDef, sample_count: usize, seed: u64) -> DerivativeReport {
    let (n, m) = (prob.n, prob.m);
    let mut rng = CounterRng::new(seed, 0);
    let acc = |name| Accumulator { name, worst: 0.0 };
    let (mut a_fx, mut a_fu, mut a_gx, mut a_gu, mut a_gt) =
        (acc("f_x"), acc("f_u"), acc("g_x"), acc("g_u"), acc("g_T_grad"));
    let (mut a_hxx, mut a_hux, mut a_huu, mut a_gtt) = (acc("H_xx"), acc("H_ux"), acc("H_uu"), acc("g_T_hess"));

    for _ in 0..sample_count.max(1) {
        let (p, x, lam, u) = prob.sample_point(&mut rng, 2.0);

        let mut fx = vec![0.0; n * n];
        (prob.f_x)(&p, &x, &u, &mut fx);
        a_fx.record(&fx, &raw_jacobian(&x, n, |xs, o| (prob.f)(&p, xs, &u, o)));

        let mut fu = vec![0.0; n * m];
        (prob.f_u)(&p, &x, &u, &mut fu);
        a_fu.record(&fu, &raw_jacobian(&u, n, |us, o| (prob.f)(&p, &x, us, o)));

        let mut gx = vec![0.0; n];
        (prob.g_x)(&p, &x, &u, &mut gx);
        a_gx.record(&gx, &raw_jacobian(&x, 1, |xs, o| o[0] = (prob.g)(&p, xs, &u)));

        let mut gu = vec![0.0; m];
        (prob.g_u)(&p, &x, &u, &mut gu);
        a_gu.record(&gu, &raw_jacobian(&u, 1, |us, o| o[0] = (prob.g)(&p, &x, us)));

        let mut gt = vec![0.0; n];
        (prob.g_t_grad)(&x, &mut gt);
        a_gt.record(&gt, &raw_jacobian(&x, 1, |xs, o| o[0] = (prob.g_t)(xs)));

        if let Some(h) = &prob.h_xx {
            let mut v = vec![0.0; n * n];
            h(&p, &x, &lam, &u, &mut v);
            a_hxx.record(&v, &raw_jacobian(&x, n, |xs, o| raw_grad_x_h(prob, &p, xs, &lam, &u, o)));
        }
        if let Some(h) = &prob.h_ux {
            let mut v = vec![0.0; m * n];
            h(&p, &x, &lam, &u, &mut v);
            a_hux.record(&v, &raw_jacobian(&x, m, |xs, o| raw_grad_u_h(prob, &p, xs, &lam, &u, o)));
        }
        if let Some(h) = &prob.h_uu {
            let mut v = vec![0.0; m * m];
            h(&p, &x, &lam, &u, &mut v);
            a_huu.record(&v, &raw_jacobian(&u, m, |us, o| raw_grad_u_h(prob, &p, &x, &lam, us, o)));
        }
        if let Some(h) = &prob.g_t_hess {
            let mut v = vec![0.0; n * n];
            h(&x, &mut v);
            a_gtt.record(&v, &raw_jacobian(&x, n, |xs, o| (prob.g_t_grad)(xs, o)));
        }
    }

    let mut checks = vec![a_fx.finish(), a_fu.finish(), a_gx.finish(), a_gu.finish(), a_gt.finish()];
    if prob.h_xx.is_some() {
        checks.push(a_hxx.finish());
    }
    if prob.h_ux.is_some() {
        checks.push(a_hux.finish());
    }
    if prob.h_uu.is_some() {
        checks.push(a_huu.finish());
    }
    if prob.g_t_hess.is_some() {
        checks.push(a_gtt.finish());
    }
    DerivativeReport { samples: sample_count.max(1), checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ẋ = A x + B u with A = [[0, 1], [-2, -0.5]], B = [0, 1]ᵀ.
    fn linear() -> ProblemDef {
        ProblemDef::builder("linear", 2, 1, 0)
            .dynamics(
                |_, x, u, o| {
                    o[0] = x[1];
                    o[1] = -2.0 * x[0] - 0.5 * x[1] + u[0];
                },
                |_, _, _, o| o.copy_from_slice(&[0.0, 1.0, -2.0, -0.5]),
                |_, _, _, o| o.copy_from_slice(&[0.0, 1.0]),
            )
            .running_cost(
                |_, x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]),
                |_, x, _, o| o.copy_from_slice(&[x[0], 0.0]),
                |_, _, u, o| o[0] = u[0],
            )
            .terminal_cost(|x| x[0] * x[1], |x, o| o.copy_from_slice(&[x[1], x[0]]))
            .control_box(ControlBox::new(vec![-1.0], vec![1.0]).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn box_geometry() {
        let b = ControlBox::new(vec![0.0, 0.0], vec![0.2, 0.2]).unwrap();
        assert_eq!(b.vertices().len(), 4);
        assert!((b.diameter() - 0.2 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.edge_axes(), vec![0, 1]);
        let flat = ControlBox::new(vec![0.0, 1.0], vec![0.2, 1.0]).unwrap();
        assert_eq!(flat.vertices().len(), 2);
        assert_eq!(flat.edge_axes(), vec![0]);
        assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn argmin_vertex_componentwise() {
        let b = ControlBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let mut v = [0.0; 2];
        b.argmin_vertex(&[0.3, -0.1], None, &mut v);
        assert_eq!(v, [-1.0, 2.0]);
        b.argmin_vertex(&[0.0, 0.0], Some(&[1.0, 0.7]), &mut v);
        assert_eq!(v, [1.0, 0.0]);
    }

    #[test]
    fn zero_problem_hamiltonian_is_zero() {
        let prob = ProblemDef::builder("zero", 2, 1, 1)
            .dynamics(|_, _, _, o| o.fill(0.0), |_, _, _, o| o.fill(0.0), |_, _, _, o| o.fill(0.0))
            .control_box(ControlBox::new(vec![-1.0], vec![1.0]).unwrap())
            .build()
            .unwrap();
        assert_eq!(hamiltonian(&prob, &[3.0], &[1.0, 2.0], &[5.0, 6.0], &[0.5]).unwrap(), 0.0);
        assert_eq!(grad_x_h(&prob, &[3.0], &[1.0, 2.0], &[5.0, 6.0], &[0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_dynamics_names_callable() {
        let prob = ProblemDef::builder("bad", 1, 1, 0)
            .dynamics(|_, x, _, o| o[0] = 1.0 / x[0], |_, _, _, o| o[0] = 0.0, |_, _, _, o| o[0] = 0.0)
            .control_box(ControlBox::new(vec![-1.0], vec![1.0]).unwrap())
            .build()
            .unwrap();
        let err = hamiltonian(&prob, &[], &[0.0], &[1.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Eval { callable: "f" }));
    }

    #[test]
    fn exact_linear_derivatives_pass_tightly() {
        let report = check_derivatives(&linear(), 50, 3);
        assert!(report.pass(), "{report:?}");
        for c in &report.checks {
            assert!(c.max_rel_err <= 1e-9, "{} {}", c.name, c.max_rel_err);
        }
    }

    #[test]
    fn scaled_f_x_is_flagged() {
        let wrong =
            linear().into_builder().f_x(|_, _, _, o| o.copy_from_slice(&[0.0, 1.01, -2.02, -0.505])).build().unwrap();
        let report = check_derivatives(&wrong, 20, 3);
        assert!(!report.pass());
        assert!(!report.get("f_x").unwrap().pass);
        assert!(report.get("f_u").unwrap().pass);
    }

    #[test]
    fn fd_second_derivatives_fallback() {
        let prob = linear();
        let mut hxx = [0.0; 4];
        prob.h_xx_into(&[], &[0.3, -0.2], &[1.0, 2.0], &[0.1], &mut hxx).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0];
        for (a, b) in hxx.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
        let mut gtt = [0.0; 4];
        prob.terminal_hess_into(&[0.3, -0.2], &mut gtt).unwrap();
        for (a, b) in gtt.iter().zip([0.0, 1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn builder_requires_dynamics_and_box() {
        assert!(ProblemDef::builder("x", 1, 1, 0).build().is_err());
        assert!(ProblemDef::builder("x", 1, 1, 0)
            .dynamics(|_, _, _, o| o[0] = 0.0, |_, _, _, o| o[0] = 0.0, |_, _, _, o| o[0] = 0.0)
            .build()
            .is_err());
    }
}
