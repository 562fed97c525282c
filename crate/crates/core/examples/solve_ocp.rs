//! Solve one open-loop problem and certify the result by its residual.
//!
//! `cargo run --release --example solve_ocp -- spacecraft 640`

use mpc_lab::problems;
use mpc_lab::solver::{solve_ocp, SolveConfig};
use mpc_lab::UniformGrid;

fn main() -> mpc_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let key = args.next().unwrap_or_else(|| "spacecraft".into());
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(320);

    let reg = problems::by_key(&key)?;
    let grid = UniformGrid::new(0.0, reg.horizon, n)?;
    let p = reg.p_hat_signal(n)?;
    let out = solve_ocp(&reg.problem, &p, &grid, &reg.x0, &SolveConfig::projected_gradient(1e-8, 20_000), None)?;

    let r = &out.residual;
    println!("{key} on {n} intervals: objective {:.8}", out.objective);
    println!("  iterations {} converged {}", out.iterations, out.converged);
    println!(
        "  residual |xi|_1 {:.2e} |nu| {:.2e} |eta|_1 {:.2e} |pi| {:.2e} |rho|_inf {:.2e}",
        r.xi_l1(),
        euclid(&r.nu),
        r.eta_l1(),
        euclid(&r.pi),
        r.rho_linf()
    );
    println!("  z-norm {:.3e}", r.z_norm());
    Ok(())
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
