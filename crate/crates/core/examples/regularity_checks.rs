//! Sampled regularity probes on a coercive and on a bang-bang problem.

use mpc_lab::mpc::reference_solution;
use mpc_lab::problems;
use mpc_lab::regularity::{
    box_edges, check_b1, check_c1, check_c2, check_lemma2, extract_gamma, random_perturbations, RegularityReport,
    DEFAULT_ZERO_TOL,
};
use mpc_lab::solver::{switching_function, SolveConfig};

fn show(r: &RegularityReport) {
    println!("  {:?}: estimate {:.4e} pass {}", r.condition, r.estimate, r.pass);
    if let Some(w) = r.witnesses.first() {
        println!("    worst: {} ({:.4e})", w.description, w.value);
    }
}

fn main() -> mpc_lab::Result<()> {
    let cfg = SolveConfig::projected_gradient(1e-9, 50_000);
    for (key, n) in [("lqr-smoke", 100), ("spacecraft", 320)] {
        let reg = problems::by_key(key)?;
        let p = reg.p_hat_signal(n)?;
        let reference = reference_solution(&reg.problem, &p, &reg.x0, n, &cfg)?;
        println!("{key}:");
        show(&check_b1(&reg.problem, &reference, &p, 64, 1)?);
        show(&check_c2(&reg.problem, &reference, &p, 64, 1)?);
        if !reg.problem.is_affine() {
            continue;
        }
        let sigma = switching_function(&reg.problem, &p, &reference)?;
        let edges = box_edges(reg.problem.control_box());
        let ex = extract_gamma(&sigma, &edges, DEFAULT_ZERO_TOL);
        println!("  switching times {:?}", ex.gamma.points());
        show(&check_c1(&sigma, &ex, 4.0 * reference.grid().h(), &edges)?);
        let deltas = random_perturbations(sigma.grid(), reg.problem.m(), 32, 0.01, 2)?;
        let kappas: Vec<f64> = (0..40).map(|i| 0.25 * f64::from(i + 1)).collect();
        show(&check_lemma2(reg.problem.control_box(), &sigma, &ex.gamma, &deltas, 0.02, &kappas, 4)?);
    }
    Ok(())
}
