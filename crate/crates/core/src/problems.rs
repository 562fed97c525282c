//! Built-in problem registry.
//!
//! | key          | n | m | l | notes                                              |
//! |--------------|---|---|---|----------------------------------------------------|
//! | `lqr-smoke`  | 1 | 1 | 0 | `ẋ = u`, cost `x(1)²/2 + ∫u²/2`; optimum `u ≡ -1/2` |
//! | `lqr-decay`  | 1 | 1 | 0 | `ẋ = -x + u`, same cost; closed-form optimum        |
//! | `sharpness`  | 2 | 1 | 1 | `ẋ¹ = p x²`, `ẋ² = u`, cost `x¹(1) - x²(1)`          |
//! | `spacecraft` | 2 | 2 | 1 | spin stabilization with `|u|` fuel cost, split form |

use crate::error::{Error, Result};
use crate::grid::{ParameterSignal, UniformGrid};
use crate::problem::{ControlBox, ProblemDef};

pub const KEYS: &[&str] = &["lqr-smoke", "lqr-decay", "sharpness", "spacecraft"];

pub const SPACECRAFT_HORIZON: f64 = 4.0 * std::f64::consts::PI;
pub const SPACECRAFT_ALPHA: f64 = 0.25;
pub const SPACECRAFT_BOUND: f64 = 0.2;

/// Drift coefficient of `lqr-decay`.
pub const DECAY_RATE: f64 = -1.0;

/// A problem together with the data that makes it a concrete instance.
#[derive(Clone, Debug)]
pub struct Registered {
    pub problem: ProblemDef,
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Constant value of the true parameter `p̂`.
    pub p_hat: Vec<f64>,
}

impl Registered {
    /// `p̂` as a signal on `grid`.
    pub fn p_hat_signal(&self, intervals: usize) -> Result<ParameterSignal> {
        let grid = UniformGrid::new(0.0, self.horizon, intervals)?;
        Ok(ParameterSignal::constant(grid, &self.p_hat))
    }
}

pub fn by_key(key: &str) -> Result<Registered> {
    let (problem, x0, horizon, p_hat) = match key {
        "lqr-smoke" => (lqr_smoke(), vec![1.0], 1.0, vec![]),
        "lqr-decay" => (lqr_decay(), vec![1.0], 1.0, vec![]),
        "sharpness" => (sharpness(), vec![0.0, 0.0], 1.0, vec![1.0]),
        "spacecraft" => (spacecraft(), vec![1.0, 1.0], SPACECRAFT_HORIZON, vec![0.0]),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(Registered { problem, x0, horizon, p_hat })
}

fn quadratic_lqr(name: &str, drift: f64) -> ProblemDef {
    ProblemDef::builder(name, 1, 1, 0)
        .dynamics(move |_, x, u, o| o[0] = drift * x[0] + u[0], move |_, _, _, o| o[0] = drift, |_, _, _, o| o[0] = 1.0)
        .running_cost(|_, _, u| 0.5 * u[0] * u[0], |_, _, _, o| o[0] = 0.0, |_, _, u, o| o[0] = u[0])
        .terminal_cost(|x| 0.5 * x[0] * x[0], |x, o| o[0] = x[0])
        .terminal_hessian(|_, o| o[0] = 1.0)
        .hamiltonian_hessians(|_, _, _, _, o| o[0] = 0.0, |_, _, _, _, o| o[0] = 0.0, |_, _, _, _, o| o[0] = 1.0)
        .control_box(ControlBox::new(vec![-10.0], vec![10.0]).expect("static box"))
        .lipschitz(1.0 + drift.abs())
        .build()
        .expect("static problem")
}

/// `min x(1)²/2 + ∫₀¹ u²/2`, `ẋ = u`, `x(0) = 1`, `u ∈ [-10, 10]`.
pub fn lqr_smoke() -> ProblemDef {
    quadratic_lqr("lqr-smoke", 0.0)
}

/// `min x(1)²/2 + ∫₀¹ u²/2`, `ẋ = -x + u`, `x(0) = 1`, `u ∈ [-10, 10]`.
///
/// Unlike `lqr-smoke`, its Euler transcription is not exact, so it carries a
/// genuine `O(h)` discretization error.
pub fn lqr_decay() -> ProblemDef {
    quadratic_lqr("lqr-decay", DECAY_RATE)
}

/// Closed-form optimum of `lqr-decay` on `[0, 1]` from `x(0) = 1`.
#[derive(Clone, Copy, Debug)]
pub struct DecayOptimum {
    /// `λ(1) = x(1)`.
    pub terminal: f64,
}

impl DecayOptimum {
    pub fn new() -> Self {
        let a = DECAY_RATE;
        let terminal = a.exp() / (1.0 + ((2.0 * a).exp() - 1.0) / (2.0 * a));
        Self { terminal }
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.terminal * (DECAY_RATE * (1.0 - t)).exp()
    }

    pub fn control(&self, t: f64) -> f64 {
        -self.lambda(t)
    }

    pub fn state(&self, t: f64) -> f64 {
        let a = DECAY_RATE;
        (a * t).exp() - self.terminal * (a * (t + 1.0)).exp() * (1.0 - (-2.0 * a * t).exp()) / (2.0 * a)
    }

    /// `∫ₐᵇ u(t) dt`.
    pub fn control_integral(&self, a: f64, b: f64) -> f64 {
        // λ(t) = c e^{r(1-t)} integrates to -(c/r) e^{r(1-t)}.
        let r = DECAY_RATE;
        let prim = |t: f64| -(self.terminal / r) * (r * (1.0 - t)).exp();
        -(prim(b) - prim(a))
    }
}

impl Default for DecayOptimum {
    fn default() -> Self {
        Self::new()
    }
}

/// `min x¹(1) - x²(1)`, `ẋ¹ = p x²`, `ẋ² = u`, `x(0) = 0`, `u ∈ [-1, 1]`.
pub fn sharpness() -> ProblemDef {
    ProblemDef::builder("sharpness", 2, 1, 1)
        .dynamics(
            |p, x, u, o| {
                o[0] = p[0] * x[1];
                o[1] = u[0];
            },
            |p, _, _, o| o.copy_from_slice(&[0.0, p[0], 0.0, 0.0]),
            |_, _, _, o| o.copy_from_slice(&[0.0, 1.0]),
        )
        .terminal_cost(|x| x[0] - x[1], |_, o| o.copy_from_slice(&[1.0, -1.0]))
        .terminal_hessian(|_, o| o.fill(0.0))
        .hamiltonian_hessians(|_, _, _, _, o| o.fill(0.0), |_, _, _, _, o| o.fill(0.0), |_, _, _, _, o| o.fill(0.0))
        .control_box(ControlBox::new(vec![-1.0], vec![1.0]).expect("static box"))
        .lipschitz(2.0)
        .affine()
        .build()
        .expect("static problem")
}

/// Split-control spacecraft problem:
/// `min |x(T)|² + α ∫ (u₁ + u₂)`, `ẋ₁ = x₂ + p`, `ẋ₂ = -sin x₁ + u₁ - u₂`,
/// `0 ≤ u₁, u₂ ≤ a`, with `T = 4π`, `α = 0.25`, `a = 0.2`.
pub fn spacecraft() -> ProblemDef {
    let alpha = SPACECRAFT_ALPHA;
    ProblemDef::builder("spacecraft", 2, 2, 1)
        .dynamics(
            |p, x, u, o| {
                o[0] = x[1] + p[0];
                o[1] = -x[0].sin() + u[0] - u[1];
            },
            |_, x, _, o| o.copy_from_slice(&[0.0, 1.0, -x[0].cos(), 0.0]),
            |_, _, _, o| o.copy_from_slice(&[0.0, 0.0, 1.0, -1.0]),
        )
        .running_cost(move |_, _, u| alpha * (u[0] + u[1]), |_, _, _, o| o.fill(0.0), move |_, _, _, o| o.fill(alpha))
        .terminal_cost(
            |x| x[0] * x[0] + x[1] * x[1],
            |x, o| {
                o[0] = 2.0 * x[0];
                o[1] = 2.0 * x[1];
            },
        )
        .terminal_hessian(|_, o| o.copy_from_slice(&[2.0, 0.0, 0.0, 2.0]))
        .hamiltonian_hessians(
            |_, x, lam, _, o| o.copy_from_slice(&[lam[1] * x[0].sin(), 0.0, 0.0, 0.0]),
            |_, _, _, _, o| o.fill(0.0),
            |_, _, _, _, o| o.fill(0.0),
        )
        .control_box(ControlBox::new(vec![0.0, 0.0], vec![SPACECRAFT_BOUND, SPACECRAFT_BOUND]).expect("static box"))
        .affine()
        .build()
        .expect("static problem")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_derivatives, grad_u_h, hamiltonian};

    #[test]
    fn registry_round_trip() {
        for key in KEYS {
            let r = by_key(key).unwrap();
            assert_eq!(r.problem.name(), *key);
            assert_eq!(r.x0.len(), r.problem.n());
            assert_eq!(r.p_hat.len(), r.problem.l());
        }
        assert!(matches!(by_key("nope"), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn all_registered_derivatives_check_out() {
        for key in KEYS {
            let r = by_key(key).unwrap();
            let report = check_derivatives(&r.problem, 100, 5);
            assert!(report.pass(), "{key}: {report:?}");
        }
    }

    #[test]
    fn sharpness_hamiltonian() {
        let prob = sharpness();
        let (p, x, lam, u) = ([1.7], [0.3, -0.4], [0.9, -2.0], [0.6]);
        let h = hamiltonian(&prob, &p, &x, &lam, &u).unwrap();
        assert_eq!(h, 0.9 * 1.7 * -0.4 + -2.0 * 0.6);
        assert_eq!(grad_u_h(&prob, &p, &x, &lam, &u).unwrap(), vec![-2.0]);
    }

    #[test]
    fn spacecraft_hamiltonian_matches_hand_composition() {
        let prob = spacecraft();
        let h = hamiltonian(&prob, &[0.0], &[1.0, 1.0], &[0.0, 1.0], &[0.2, 0.0]).unwrap();
        let want = 0.05 + (-(1.0f64).sin() + 0.2);
        assert!((h - want).abs() < 1e-15, "{h} vs {want}");
    }

    #[test]
    fn spacecraft_control_gradient() {
        let prob = spacecraft();
        let lam = [0.3, -0.7];
        let g = grad_u_h(&prob, &[0.02], &[0.5, -0.1], &lam, &[0.1, 0.05]).unwrap();
        assert_eq!(g, vec![SPACECRAFT_ALPHA + lam[1], SPACECRAFT_ALPHA - lam[1]]);
        // Finite differences of H in u.
        for i in 0..2 {
            let mut up = [0.1, 0.05];
            let mut dn = up;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (hamiltonian(&prob, &[0.02], &[0.5, -0.1], &lam, &up).unwrap()
                - hamiltonian(&prob, &[0.02], &[0.5, -0.1], &lam, &dn).unwrap())
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn decay_optimum_satisfies_pontryagin() {
        let opt = DecayOptimum::new();
        assert!((opt.state(0.0) - 1.0).abs() < 1e-15);
        assert!((opt.state(1.0) - opt.terminal).abs() < 1e-14);
        // ẋ = -x - λ by central differences.
        for &t in &[0.1, 0.5, 0.9] {
            let d = (opt.state(t + 1e-6) - opt.state(t - 1e-6)) / 2e-6;
            assert!((d - (-opt.state(t) + opt.control(t))).abs() < 1e-8);
        }
        let q = opt.control_integral(0.2, 0.7);
        let mid: f64 =
            (0..10000).map(|i| opt.control(0.2 + (i as f64 + 0.5) * 0.5 / 10000.0)).sum::<f64>() * 0.5 / 10000.0;
        assert!((q - mid).abs() < 1e-9);
    }
}
