//! The spacecraft sweep with random measurement and prediction errors.
//!
//! `cargo run --release --example table1 -- <seed> [solver refinement]`

use mpc_lab::scenario::{scenario_spacecraft, TABLE1_N};

fn main() -> mpc_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let refinement: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let table = scenario_spacecraft(&TABLE1_N, seed, refinement)?;
    println!(
        "seed {seed}, reference objective {:.6} ({} intervals)",
        table.reference_objective, table.reference_intervals
    );
    println!("{:>5} {:>10} {:>8} {:>10} {:>8}", "N", "objective", "RE", "E_avg", "lhs");
    for r in &table.rows {
        println!("{:>5} {:>10.6} {:>8.4} {:>10.6} {:>8.4}", r.n, r.objective, r.re, r.e_avg, r.lhs);
    }
    for (n, msg) in table.failures() {
        eprintln!("N = {n} failed: {msg}");
    }
    Ok(())
}
