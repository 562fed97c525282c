//! The sharpness example: a single prediction error of size 2h flips the
//! first control piece, so the control error is of order √ℰ, not ℰ.

use mpc_lab::scenario::{scenario_sharpness, scenario_sharpness_with};

fn main() -> mpc_lab::Result<()> {
    let ns = [4, 8, 16, 32, 64, 128];
    println!("{:>5} {:>10} {:>12} {:>12} {:>10}", "N", "u on [0,h]", "|u - û|_1", "E", "ratio");
    for row in scenario_sharpness(&ns)? {
        println!(
            "{:>5} {:>10} {:>12.6} {:>12.3e} {:>10.6} {}",
            row.n,
            row.first_piece,
            row.u_l1,
            row.e_avg,
            row.ratio,
            if row.pass() { "" } else { "FAIL" }
        );
    }

    // Without the perturbation MPC reproduces the optimum exactly.
    for row in scenario_sharpness_with(&[16], false)? {
        println!("exact predictions, N = {}: |u - û|_1 = {}", row.n, row.u_l1);
    }
    Ok(())
}
