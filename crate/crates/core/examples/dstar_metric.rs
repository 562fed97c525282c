//! The switching-aware distance d*: a control that switches slightly late is
//! far from the original in the sup norm but close in d*.

use mpc_lab::metrics::{dist_l1, dstar, gamma_const, norm_linf};
use mpc_lab::{GammaSet, PiecewiseConstant, UniformGrid};

fn bang(grid: &UniformGrid, switch: f64) -> mpc_lab::Result<PiecewiseConstant> {
    PiecewiseConstant::from_fn(grid.clone(), 1, |t| vec![if t < switch { -1.0 } else { 1.0 }])
}

fn main() -> mpc_lab::Result<()> {
    let grid = UniformGrid::new(0.0, 1.0, 1000)?;
    let u = bang(&grid, 0.5)?;
    let gamma = GammaSet::new(vec![0.5])?;
    let gamma_bound = gamma_const(1.0, gamma.len(), 2.0);
    println!("{:>8} {:>10} {:>10} {:>10} {:>12}", "delay", "sup", "L1", "d*", "γ·d* ≥ L1");
    for delay in [0.0, 0.001, 0.01, 0.05, 0.2] {
        let v = bang(&grid, 0.5 + delay)?;
        let diff =
            PiecewiseConstant::new(grid.clone(), 1, u.values().iter().zip(v.values()).map(|(a, b)| a - b).collect())?;
        let (d, l1) = (dstar(&u, &v, &gamma)?, dist_l1(&u, &v)?);
        println!(
            "{delay:>8} {:>10.4} {:>10.4} {:>10.4} {:>12}",
            norm_linf(&diff),
            l1,
            d,
            gamma_bound * d >= l1 - 1e-12
        );
    }
    Ok(())
}
