//! Forward state and backward adjoint sweeps, and the high-accuracy plant.
//!
//! Parameters are held constant on each (sub)step at their time average over
//! that step; controls are held at the value of the control interval the step
//! falls in.

use crate::error::{Error, Result};
use crate::grid::{ControlSignal, ParameterSignal, Trajectory, UniformGrid};
use crate::problem::ProblemDef;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

/// Default number of RK4 substeps per control interval for the plant.
pub const DEFAULT_PLANT_SUBSTEPS: usize = 10;

/// Per-interval parameter averages on `grid`, flattened.
pub(crate) fn interval_params(p: &ParameterSignal, grid: &UniformGrid) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.intervals() * p.dim());
    for k in 0..grid.intervals() {
        out.extend(p.mean_over(grid.node(k), grid.node(k + 1)));
    }
    out
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, d: &[f64]) {
    for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
        *o = xi + a * di;
    }
}

/// Scratch for one RK4 step of `(x, ∫g)`.
pub(crate) struct Rk4Scratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self { k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }
}

/// One classical RK4 step in place; returns the RK4 quadrature of `g` over the step.
pub(crate) fn rk4_step(
    prob: &ProblemDef,
    p: &[f64],
    u: &[f64],
    x: &mut [f64],
    hs: f64,
    s: &mut Rk4Scratch,
) -> Result<f64> {
    let Rk4Scratch { k, tmp } = s;
    let [k1, k2, k3, k4] = k;
    prob.f_into(p, x, u, k1)?;
    let c1 = prob.running_cost(p, x, u)?;
    axpy(tmp, x, 0.5 * hs, k1);
    prob.f_into(p, tmp, u, k2)?;
    let c2 = prob.running_cost(p, tmp, u)?;
    axpy(tmp, x, 0.5 * hs, k2);
    prob.f_into(p, tmp, u, k3)?;
    let c3 = prob.running_cost(p, tmp, u)?;
    axpy(tmp, x, hs, k3);
    prob.f_into(p, tmp, u, k4)?;
    let c4 = prob.running_cost(p, tmp, u)?;
    for i in 0..x.len() {
        x[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(hs / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4))
}

fn check_state(x: &[f64], index: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "state", index })
    }
}

/// Solves `ẋ = f(p, x, u)`, `x(t0) = x0` and returns node values on `grid`.
pub fn propagate_state(
    prob: &ProblemDef,
    p: &ParameterSignal,
    u: &ControlSignal,
    x0: &[f64],
    grid: &UniformGrid,
    method: Method,
    substeps: usize,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(Error::InvalidConfig("substeps must be >= 1".into()));
    }
    let n = prob.n();
    let hs = grid.h() / substeps as f64;
    let mut nodes = Vec::with_capacity((grid.intervals() + 1) * n);
    nodes.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut fx = vec![0.0; n];
    let mut scratch = Rk4Scratch::new(n);
    for k in 0..grid.intervals() {
        let ta = grid.node(k);
        let uk = u.value_at(0.5 * (ta + grid.node(k + 1))).to_vec();
        for j in 0..substeps {
            let sa = ta + j as f64 * hs;
            let pk = p.mean_over(sa, sa + hs);
            match method {
                Method::Euler => {
                    prob.f_into(&pk, &x, &uk, &mut fx)?;
                    for i in 0..n {
                        x[i] += hs * fx[i];
                    }
                }
                Method::Rk4 => {
                    rk4_step(prob, &pk, &uk, &mut x, hs, &mut scratch)?;
                }
            }
        }
        check_state(&x, k + 1)?;
        nodes.extend_from_slice(&x);
    }
    Trajectory::new(grid.clone(), n, nodes)
}

/// Discrete adjoint of the Euler transcription:
/// `λ_N = ∇g_T(x_N)`, `λ_k = λ_{k+1} + h ∇_x H(p_k, x_k, λ_{k+1}, u_k)`.
pub fn propagate_adjoint(
    prob: &ProblemDef,
    p: &ParameterSignal,
    x: &Trajectory,
    u: &ControlSignal,
    grid: &UniformGrid,
) -> Result<Trajectory> {
    if x.grid() != grid || u.grid() != grid {
        return Err(Error::GridMismatch("adjoint sweep needs x and u on the sweep grid".into()));
    }
    let n = prob.n();
    let kk = grid.intervals();
    let pv = interval_params(p, grid);
    let l = prob.l();
    let mut lam = vec![0.0; (kk + 1) * n];
    prob.terminal_grad_into(x.terminal(), &mut lam[kk * n..])?;
    let mut ws = prob.workspace();
    let mut gx = vec![0.0; n];
    for k in (0..kk).rev() {
        let (head, tail) = lam.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        prob.grad_x_h_into(&pv[k * l..(k + 1) * l], x.node(k), next, u.value(k), &mut gx, &mut ws)?;
        let cur = &mut head[k * n..];
        for i in 0..n {
            cur[i] = next[i] + grid.h() * gx[i];
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "adjoint", index: k });
        }
    }
    Trajectory::new(grid.clone(), n, lam)
}

/// The "real" system: RK4 with `plant_substeps` substeps per control interval.
/// Returns the trajectory on the refined grid and the RK4 quadrature of `∫ g`.
pub fn simulate_plant_with_cost(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    u: &ControlSignal,
    x0: &[f64],
    grid: &UniformGrid,
    plant_substeps: usize,
) -> Result<(Trajectory, f64)> {
    if plant_substeps < 4 {
        return Err(Error::InvalidConfig("plant needs at least 4 substeps per interval".into()));
    }
    let n = prob.n();
    let fine = grid.refine(plant_substeps)?;
    let mut nodes = Vec::with_capacity((fine.intervals() + 1) * n);
    nodes.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut cost = 0.0;
    let mut scratch = Rk4Scratch::new(n);
    for k in 0..grid.intervals() {
        cost += plant_advance(
            prob,
            p_hat,
            u.value(k),
            &mut x,
            &fine,
            k * plant_substeps,
            plant_substeps,
            &mut nodes,
            &mut scratch,
        )?;
    }
    Ok((Trajectory::new(fine, n, nodes)?, cost))
}

pub fn simulate_plant(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    u: &ControlSignal,
    x0: &[f64],
    grid: &UniformGrid,
    plant_substeps: usize,
) -> Result<Trajectory> {
    simulate_plant_with_cost(prob, p_hat, u, x0, grid, plant_substeps).map(|(x, _)| x)
}

/// Advances `x` over fine intervals `first..first + count` with a fixed control,
/// appending each fine node to `nodes`. Returns the running-cost quadrature.
#[allow(clippy::too_many_arguments)]
pub(crate) fn plant_advance(
    prob: &ProblemDef,
    p_hat: &ParameterSignal,
    u: &[f64],
    x: &mut [f64],
    fine: &UniformGrid,
    first: usize,
    count: usize,
    nodes: &mut Vec<f64>,
    scratch: &mut Rk4Scratch,
) -> Result<f64> {
    let mut cost = 0.0;
    for j in first..first + count {
        let (ta, tb) = (fine.node(j), fine.node(j + 1));
        let p = p_hat.mean_over(ta, tb);
        cost += rk4_step(prob, &p, u, x, tb - ta, scratch)?;
        check_state(x, j + 1)?;
        nodes.extend_from_slice(x);
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ControlBox;
    use crate::problems;

    fn integrator() -> ProblemDef {
        ProblemDef::builder("integrator", 1, 1, 0)
            .dynamics(|_, _, u, o| o[0] = u[0], |_, _, _, o| o[0] = 0.0, |_, _, _, o| o[0] = 1.0)
            .control_box(ControlBox::new(vec![-2.0], vec![2.0]).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn unit_control_reaches_one() {
        let prob = integrator();
        let g = UniformGrid::new(0.0, 1.0, 7).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[]);
        let u = ControlSignal::constant(g.clone(), &[1.0], prob.control_box());
        for m in [Method::Euler, Method::Rk4] {
            let x = propagate_state(&prob, &p, &u, &[0.0], &g, m, 1).unwrap();
            assert!((x.terminal()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sharpness_dynamics_closed_form() {
        let prob = problems::sharpness();
        let g = UniformGrid::new(0.0, 1.0, 64).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[1.0]);
        let u = ControlSignal::constant(g.clone(), &[1.0], prob.control_box());
        let rk = propagate_state(&prob, &p, &u, &[0.0, 0.0], &g, Method::Rk4, 1).unwrap();
        assert!((rk.terminal()[0] - 0.5).abs() <= 1e-12);
        assert!((rk.terminal()[1] - 1.0).abs() <= 1e-12);
        let eu = propagate_state(&prob, &p, &u, &[0.0, 0.0], &g, Method::Euler, 1).unwrap();
        // Euler on x¹ gives Σ h·t_k = (1 - h)/2.
        assert!((eu.terminal()[0] - 0.5 * (1.0 - 1.0 / 64.0)).abs() < 1e-14);
        let plant = simulate_plant(&prob, &p, &u, &[0.0, 0.0], &g, 10).unwrap();
        for (k, t) in plant.grid().nodes().enumerate() {
            assert!((plant.node(k)[1] - t).abs() <= 1e-10);
            assert!((plant.node(k)[0] - 0.5 * t * t).abs() <= 1e-10);
        }
    }

    #[test]
    fn euler_step_is_literal() {
        let prob = problems::spacecraft();
        let g = UniformGrid::new(0.0, 1.0, 5).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[0.01]);
        let u = ControlSignal::constant(g.clone(), &[0.2, 0.05], prob.control_box());
        let x = propagate_state(&prob, &p, &u, &[1.0, 1.0], &g, Method::Euler, 1).unwrap();
        let mut f = [0.0; 2];
        for k in 0..5 {
            prob.f_into(&[0.01], x.node(k), &[0.2, 0.05], &mut f).unwrap();
            for i in 0..2 {
                assert_eq!(x.node(k + 1)[i], x.node(k)[i] + g.h() * f[i]);
            }
        }
    }

    #[test]
    fn spacecraft_rk4_self_consistent() {
        let prob = problems::spacecraft();
        let t = problems::SPACECRAFT_HORIZON;
        let coarse = UniformGrid::new(0.0, t, 3200).unwrap();
        let fine = UniformGrid::new(0.0, t, 6400).unwrap();
        let p = ParameterSignal::constant(coarse.clone(), &[0.0]);
        let uc = ControlSignal::constant(coarse.clone(), &[0.0, 0.0], prob.control_box());
        let uf = ControlSignal::constant(fine.clone(), &[0.0, 0.0], prob.control_box());
        let a = propagate_state(&prob, &p, &uc, &[1.0, 1.0], &coarse, Method::Rk4, 1).unwrap();
        let b = propagate_state(&prob, &p, &uf, &[1.0, 1.0], &fine, Method::Rk4, 1).unwrap();
        let mut sup: f64 = 0.0;
        for k in 0..=3200 {
            for i in 0..2 {
                sup = sup.max((a.node(k)[i] - b.node(2 * k)[i]).abs());
            }
        }
        assert!(sup <= 1e-8, "sup {sup}");
    }

    #[test]
    fn plant_substep_doubling_converges() {
        let prob = problems::spacecraft();
        let g = UniformGrid::new(0.0, problems::SPACECRAFT_HORIZON, 160).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[0.0]);
        let mut rng = crate::rng::CounterRng::new(11, 0);
        let vals: Vec<f64> = (0..320).map(|_| if rng.unit() < 0.5 { 0.0 } else { 0.2 }).collect();
        let u = ControlSignal::new(g.clone(), vals, prob.control_box()).unwrap();
        let a = simulate_plant(&prob, &p, &u, &[1.0, 1.0], &g, 10).unwrap();
        let b = simulate_plant(&prob, &p, &u, &[1.0, 1.0], &g, 20).unwrap();
        let d = crate::grid::euclid_dist(a.terminal(), b.terminal());
        assert!(d <= 1e-9, "terminal shift {d}");
    }

    #[test]
    fn zero_dynamics_constant_plant() {
        let prob = ProblemDef::builder("still", 2, 1, 0)
            .dynamics(|_, _, _, o| o.fill(0.0), |_, _, _, o| o.fill(0.0), |_, _, _, o| o.fill(0.0))
            .control_box(ControlBox::new(vec![-1.0], vec![1.0]).unwrap())
            .build()
            .unwrap();
        let g = UniformGrid::new(0.0, 2.0, 5).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[]);
        let u = ControlSignal::constant(g.clone(), &[0.7], prob.control_box());
        let x = simulate_plant(&prob, &p, &u, &[3.0, -1.0], &g, 4).unwrap();
        assert!(x.nodes().chunks(2).all(|c| c == [3.0, -1.0]));
    }

    #[test]
    fn sharpness_adjoint_is_exact_at_nodes() {
        let prob = problems::sharpness();
        let g = UniformGrid::new(0.0, 1.0, 16).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[1.0]);
        let u = ControlSignal::constant(g.clone(), &[1.0], prob.control_box());
        let x = propagate_state(&prob, &p, &u, &[0.0, 0.0], &g, Method::Euler, 1).unwrap();
        let lam = propagate_adjoint(&prob, &p, &x, &u, &g).unwrap();
        for (k, t) in g.nodes().enumerate() {
            assert_eq!(lam.node(k)[0], 1.0);
            assert!((lam.node(k)[1] - (-1.0 + (1.0 - t))).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_terminal_cost_gives_zero_adjoint() {
        let prob = integrator();
        let g = UniformGrid::new(0.0, 1.0, 8).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[]);
        let u = ControlSignal::constant(g.clone(), &[0.3], prob.control_box());
        let x = propagate_state(&prob, &p, &u, &[1.0], &g, Method::Euler, 1).unwrap();
        let lam = propagate_adjoint(&prob, &p, &x, &u, &g).unwrap();
        assert!(lam.nodes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blow_up_reports_first_bad_node() {
        let prob = ProblemDef::builder("boom", 1, 1, 0)
            .dynamics(|_, x, _, o| o[0] = x[0] * x[0], |_, x, _, o| o[0] = 2.0 * x[0], |_, _, _, o| o[0] = 0.0)
            .control_box(ControlBox::new(vec![0.0], vec![0.0]).unwrap())
            .build()
            .unwrap();
        let g = UniformGrid::new(0.0, 10.0, 10).unwrap();
        let p = ParameterSignal::constant(g.clone(), &[]);
        let u = ControlSignal::constant(g.clone(), &[0.0], prob.control_box());
        let err = propagate_state(&prob, &p, &u, &[10.0], &g, Method::Euler, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. } | Error::Eval { .. }));
    }
}
