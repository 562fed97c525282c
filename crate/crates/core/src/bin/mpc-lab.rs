use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpc_lab::metrics::{dstar, GammaSet};
use mpc_lab::mpc::reference_solution;
use mpc_lab::problems;
use mpc_lab::regularity::{
    box_edges, check_b1, check_c1, check_c2, check_lemma2, extract_gamma, random_perturbations, RegularityReport,
    DEFAULT_ZERO_TOL,
};
use mpc_lab::scenario::{self, ScenarioSpec, TABLE1_N};
use mpc_lab::solver::{solve_ocp, switching_function, SolveConfig};
use mpc_lab::{Error, UniformGrid};

#[derive(Parser)]
#[command(name = "mpc-lab", version, about = "Shrinking-horizon MPC experiments and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ProjectedGradient,
    BangBang,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the open-loop problem once and print objective and residual.
    Solve {
        #[arg(long)]
        problem: String,
        #[arg(long = "N", default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value_t = Mode::ProjectedGradient)]
        mode: Mode,
        /// Write the optimal control as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario file.
    MpcRun {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the table output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe B1, C1, C2 and structural stability along a reference optimum.
    Regularity {
        #[arg(long)]
        problem: String,
        #[arg(long = "N", default_value_t = 160)]
        n: usize,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Window `η₀` for C1 in mesh steps.
        #[arg(long, default_value_t = 4)]
        window: usize,
    },
    /// The sharpness example; exits with 4 when an assertion fails.
    Sharpness {
        #[arg(long = "N", value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
        n: Vec<usize>,
    },
    /// The spacecraft sweep as CSV (N, objective, RE, E_avg, lhs).
    Table1 {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "N", value_delimiter = ',', default_values_t = TABLE1_N)]
        n: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 10)]
        plant_substeps: usize,
        #[arg(long, default_value_t = 1)]
        solver_refinement: usize,
    },
    /// The metric d* between two control CSV files.
    Dstar {
        #[arg(long)]
        u1: PathBuf,
        #[arg(long)]
        u2: PathBuf,
        /// Comma-separated switching times; empty for the sup norm.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
    },
}

/// Exit code 4.
struct AssertionFailed(String);

enum Failure {
    Lib(Error),
    /// Exit code 3 without a library error, e.g. failed sweep cells.
    Numerical(String),
    Assertion(AssertionFailed),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(AssertionFailed(msg))) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            let config = matches!(
                e,
                Error::InvalidConfig(_)
                    | Error::UnknownProblem(_)
                    | Error::GridMismatch(_)
                    | Error::Io(_)
                    | Error::Json(_)
                    | Error::Csv(_)
                    | Error::NotAffine(_)
            );
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}

fn print_report(r: &RegularityReport) {
    println!("{}", serde_json::to_string(r).expect("reports serialize"));
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve { problem, n, tol, max_iters, mode, out } => {
            let reg = problems::by_key(&problem)?;
            let cfg = match mode {
                Mode::ProjectedGradient => SolveConfig::projected_gradient(tol, max_iters),
                Mode::BangBang => SolveConfig::bang_bang(tol, max_iters),
            };
            let p = reg.p_hat_signal(n)?;
            let grid = UniformGrid::new(0.0, reg.horizon, n)?;
            let sol = solve_ocp(&reg.problem, &p, &grid, &reg.x0, &cfg, None)?;
            println!("objective {:.12e}", sol.objective);
            println!("residual {:.3e}", sol.residual.z_norm());
            println!("iterations {}", sol.iterations);
            println!("converged {}", sol.converged);
            if let Some(path) = out {
                scenario::write_control_csv(sol.triple.u.as_piecewise(), &path)?;
            }
            Ok(())
        }
        Command::MpcRun { scenario: path, seed, out } => {
            let mut spec = ScenarioSpec::from_path(&path)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if out.is_some() {
                spec.outputs.table = out;
            }
            let table = scenario::run_scenario(&spec)?;
            if spec.outputs.table.is_none() {
                print!("{}", table.to_csv());
            }
            report_failures(&table)
        }
        Command::Regularity { problem, n, tol, samples, seed, window } => {
            let reg = problems::by_key(&problem)?;
            let p = reg.p_hat_signal(n)?;
            let reference =
                reference_solution(&reg.problem, &p, &reg.x0, n, &SolveConfig::projected_gradient(tol, 50_000))?;
            print_report(&check_b1(&reg.problem, &reference, &p, samples, seed)?);
            print_report(&check_c2(&reg.problem, &reference, &p, samples, seed)?);
            if !reg.problem.is_affine() {
                eprintln!("C1 and structural stability apply to control-affine problems only");
                return Ok(());
            }
            let sigma = switching_function(&reg.problem, &p, &reference)?;
            let edges = box_edges(reg.problem.control_box());
            let extraction = extract_gamma(&sigma, &edges, DEFAULT_ZERO_TOL);
            let h = reference.grid().h();
            print_report(&check_c1(&sigma, &extraction, window as f64 * h, &edges)?);
            let sup = (0..=n).map(|k| sigma.node(k).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            let eps = 0.05 * sup;
            let perturbations = random_perturbations(sigma.grid(), reg.problem.m(), samples, 0.5 * eps, seed)?;
            let kappas: Vec<f64> = (-4..=12).map(|i| 2f64.powi(i)).collect();
            let lemma2 =
                check_lemma2(reg.problem.control_box(), &sigma, &extraction.gamma, &perturbations, eps, &kappas, 4)?;
            print_report(&lemma2);
            Ok(())
        }
        Command::Sharpness { n } => {
            let rows = scenario::scenario_sharpness(&n)?;
            println!("N,h,first_piece,u_l1,E_avg,ratio,pass");
            for r in &rows {
                println!(
                    "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
                    r.n,
                    r.h,
                    r.first_piece,
                    r.u_l1,
                    r.e_avg,
                    r.ratio,
                    r.pass()
                );
            }
            let failed: Vec<String> =
                rows.iter().flat_map(|r| r.failures.iter().map(move |f| format!("N={}: {f}", r.n))).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Assertion(AssertionFailed(failed.join("; "))))
            }
        }
        Command::Table1 { seed, n, out, tol, plant_substeps, solver_refinement } => {
            let mut spec = ScenarioSpec::spacecraft(&n, seed);
            spec.solver.tol_residual = tol;
            spec.plant_substeps = plant_substeps;
            spec.solver_refinement = solver_refinement;
            spec.outputs.table = out.clone();
            let table = scenario::run_scenario(&spec)?;
            if out.is_none() {
                print!("{}", table.to_csv());
            }
            eprintln!(
                "reference objective {:.6} on {} intervals",
                table.reference_objective, table.reference_intervals
            );
            report_failures(&table)
        }
        Command::Dstar { u1, u2, gamma } => {
            let a = scenario::read_control_csv(&u1)?;
            let b = scenario::read_control_csv(&u2)?;
            let gamma = GammaSet::new(gamma)?;
            println!("{:.16e}", dstar(&a, &b, &gamma)?);
            Ok(())
        }
    }
}

fn report_failures(table: &scenario::SweepTable) -> Result<(), Failure> {
    let mut failed = false;
    for (n, msg) in table.failures() {
        eprintln!("N={n}: {msg}");
        failed = true;
    }
    if failed {
        Err(Failure::Numerical("some sweep cells failed".into()))
    } else {
        Ok(())
    }
}
