//! Coercive regime: with exact data the MPC error shrinks like h, and with
//! injected errors it stays proportional to the averaged error ℰ.

use mpc_lab::mpc::{
    compare_to_reference, reference_solution, run_mpc, BoundInputs, ErrorModel, Measurement, Prediction,
};
use mpc_lab::problems;
use mpc_lab::solver::SolveConfig;
use mpc_lab::GammaSet;

fn main() -> mpc_lab::Result<()> {
    let reg = problems::by_key("lqr-decay")?;
    let cfg = SolveConfig::projected_gradient(1e-10, 2000);
    let reference = reference_solution(&reg.problem, &reg.p_hat_signal(1600)?, &reg.x0, 1600, &cfg)?;
    let bounds = BoundInputs { c0: 1.0, lipschitz: 1.0 };

    for (label, model) in [
        ("exact", ErrorModel::exact()),
        (
            "noisy",
            ErrorModel { measurement: Measurement::Uniform { bound: 1e-3 }, prediction: Prediction::Exact, seed: 11 },
        ),
    ] {
        println!("{label}:");
        let mut last: Option<f64> = None;
        for n in [25, 50, 100, 200] {
            let p_hat = reg.p_hat_signal(n)?;
            let mut res = run_mpc(&reg.problem, &p_hat, &reg.x0, n, &model, &cfg, 10)?;
            let rep = compare_to_reference(&reg.problem, &mut res, &reference, &GammaSet::empty(), bounds)?;
            let order = last.map(|l| (l / rep.lhs).log2());
            println!(
                "  N = {n:>4}  lhs {:.3e}  E {:.3e}  lhs/(E + h) {:.3}  order {}",
                rep.lhs,
                rep.e_avg,
                rep.lhs / (rep.e_avg + rep.h),
                order.map_or("-".into(), |o| format!("{o:.2}"))
            );
            last = Some(rep.lhs);
        }
    }
    Ok(())
}
