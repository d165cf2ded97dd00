//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a verification check failed or the solver did not
//! converge, 2 input or parse error.

pub mod format;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::corpus::{self, CorpusEntry};
use crate::exprdsl::Expr;
use crate::lift::lift_problem;
use crate::model::{build_lattice, to_f64, validate_problem, ControlSignal, Piecewise, ProblemDef};
use crate::simsteps::{cost_delayed, integrate_dde, IntegratorConfig};
use crate::sufficiency::{verify_all, CandidateSolution, Convention, VerifyOptions};
use crate::transcribe::{solve, Init, SolveOptions};

use format::{parse_candidate, parse_problem, trajectory_csv, write_candidate, write_problem, VerifySettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "delayoc", version, about = "Optimal control with commensurable state and control delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a problem and print its delay lattice.
    Check {
        /// Problem file, or `@name` for a built-in problem.
        problem: String,
    },
    /// Print the wiring table of the stacked problem.
    Lift { problem: String },
    /// Integrate the delayed system and write the trajectory as CSV.
    Simulate {
        problem: String,
        /// Candidate file (its open-loop control), `@name`, or `zero`.
        #[arg(long)]
        control: String,
        /// RK4 steps per lattice interval.
        #[arg(long, default_value_t = 128)]
        step: usize,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Check the Hamilton–Jacobi sufficient condition for a candidate.
    Verify {
        problem: String,
        candidate: String,
        #[arg(long)]
        convention: Option<Convention>,
        #[arg(long)]
        tol_hj: Option<f64>,
        #[arg(long)]
        tol_max: Option<f64>,
        #[arg(long)]
        tol_cost: Option<f64>,
        /// Maximisation box for unbounded control components.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        r#box: Option<Vec<f64>>,
        /// Sample points per lattice interval.
        #[arg(long, default_value_t = 32)]
        density: usize,
    },
    /// Solve by single shooting and write the trajectory as CSV.
    Solve {
        problem: String,
        /// Control samples per lattice interval.
        #[arg(long, default_value_t = 16)]
        q: usize,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Start from a seeded random point instead of zero.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "solution.csv")]
        out: PathBuf,
    },
    /// Built-in problems: list, reproduce, or export to files.
    Example {
        name: Option<String>,
        /// Recompute every reference value and verify the candidate.
        #[arg(long)]
        run_all: bool,
        /// Write `<name>.toml` and `<name>.candidate.toml` into this directory.
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct InputError(String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type Outcome = Result<i32, InputError>;

fn entry(name: &str) -> Result<CorpusEntry, InputError> {
    corpus::by_name(name)
        .ok_or_else(|| InputError(format!("unknown example `{name}` (available: {})", corpus::names().join(", "))))
}

fn read(path: &str) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|e| InputError(format!("{path}: {e}")))
}

fn load_problem(arg: &str) -> Result<ProblemDef, InputError> {
    let problem = match arg.strip_prefix('@') {
        Some(name) => entry(name)?.problem,
        None => parse_problem(&read(arg)?).map_err(|e| InputError(format!("{arg}: {e}")))?,
    };
    let diags = validate_problem(&problem);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| format!("{arg}: {d}")).collect();
        return Err(InputError(lines.join("\n")));
    }
    Ok(problem)
}

fn load_candidate(arg: &str, p: &ProblemDef) -> Result<(CandidateSolution, VerifySettings), InputError> {
    match arg.strip_prefix('@') {
        Some(name) => {
            let e = entry(name)?;
            let settings = VerifySettings::from_options(&e.verify);
            let cand = e.candidate.ok_or_else(|| InputError(format!("example `{name}` has no candidate")))?;
            Ok((cand, settings))
        }
        None => {
            let file = parse_candidate(&read(arg)?, p.n, p.m).map_err(|e| InputError(format!("{arg}: {e}")))?;
            Ok((file.candidate, file.settings))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), InputError> {
    std::fs::write(path, text).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn check(out: &mut dyn Write, problem: &str) -> Outcome {
    let p = load_problem(problem)?;
    writeln!(out, "{}", build_lattice(&p)?)?;
    Ok(EXIT_OK)
}

fn lift(out: &mut dyn Write, problem: &str) -> Outcome {
    let p = load_problem(problem)?;
    let lp = lift_problem(&p, &build_lattice(&p)?)?;
    write!(out, "{}", lp.wiring_report())?;
    Ok(EXIT_OK)
}

fn simulate(out: &mut dyn Write, problem: &str, control: &str, step: usize, path: &Path) -> Outcome {
    let p = load_problem(problem)?;
    let lattice = build_lattice(&p)?;
    let cfg = IntegratorConfig::new(step)?;
    let body = if control == "zero" {
        Piecewise::single(&["t"], p.a, p.b, vec![Expr::num(0.0); p.m])?
    } else {
        load_candidate(control, &p)?.0.u_star
    };
    let u = ControlSignal::from_pieces(&p.psi, p.a_f64(), to_f64(p.s), body)?;
    let traj = integrate_dde(&p, &lattice, &u, &cfg)?;
    let cost = cost_delayed(&p, &lattice, &traj, &u, &cfg)?;
    write_file(path, &trajectory_csv(&traj, &u)?)?;
    writeln!(out, "cost = {cost:.12}")?;
    writeln!(out, "wrote {} rows to {}", traj.len(), path.display())?;
    Ok(EXIT_OK)
}

struct VerifyFlags {
    convention: Option<Convention>,
    tol_hj: Option<f64>,
    tol_max: Option<f64>,
    tol_cost: Option<f64>,
    search_box: Option<Vec<f64>>,
    density: usize,
}

fn verify(out: &mut dyn Write, problem: &str, candidate: &str, flags: VerifyFlags) -> Outcome {
    let p = load_problem(problem)?;
    let (mut cand, settings) = load_candidate(candidate, &p)?;
    let mut opts = VerifyOptions { density: flags.density, ..VerifyOptions::default() };
    settings.apply(&mut opts);
    VerifySettings {
        convention: flags.convention,
        tol_hj: flags.tol_hj,
        tol_max: flags.tol_max,
        tol_cost: flags.tol_cost,
        search_box: None,
    }
    .apply(&mut opts);
    for tol in [opts.tol_hj, opts.tol_max, opts.tol_cost] {
        if !(tol > 0.0) {
            return Err(InputError("tolerances must be positive".into()));
        }
    }
    if flags.density == 0 {
        return Err(InputError("density must be positive".into()));
    }
    if let Some(b) = flags.search_box {
        if b[0] > b[1] {
            return Err(InputError("search box is empty".into()));
        }
        cand.search_box = Some((b[0], b[1]));
        opts.search_box = Some((b[0], b[1]));
    }
    let report = verify_all(&p, &cand, &opts)?;
    writeln!(out, "{report}")?;
    if opts.convention == Convention::Auto && report.maximality_convention_used == Convention::Minus {
        writeln!(
            out,
            "note: auto picked the minus convention (eta = -dS/dx); the costate sign is ambiguous and plus gave a worst gap of {:.6e}",
            report.maximality_other_gap.unwrap_or(f64::NAN)
        )?;
    }
    writeln!(out)?;
    for (k, v) in report.key_values() {
        writeln!(out, "{k}={v}")?;
    }
    Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn solve_cmd(out: &mut dyn Write, problem: &str, opts: SolveOptions, path: &Path) -> Outcome {
    let p = load_problem(problem)?;
    let res = solve(&p, &opts)?;
    write_file(path, &trajectory_csv(&res.trajectory, &res.control)?)?;
    writeln!(out, "q = {}", res.q)?;
    writeln!(out, "substeps = {}", res.substeps)?;
    writeln!(out, "iterations = {}", res.iterations)?;
    writeln!(out, "converged = {}", res.converged)?;
    writeln!(out, "cost = {:.12}", res.cost)?;
    writeln!(out, "objective = {:.12}", res.history.last().copied().unwrap_or(f64::NAN))?;
    writeln!(out, "stationarity = {:.6e}", res.stationarity)?;
    writeln!(out, "terminal_residual = {:.6e}", res.terminal_residual)?;
    writeln!(out, "wrote {} rows to {}", res.trajectory.len(), path.display())?;
    Ok(if res.converged { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn example(out: &mut dyn Write, name: Option<&str>, run_all: bool, export: Option<&Path>) -> Outcome {
    let Some(name) = name else {
        for e in corpus::all() {
            writeln!(out, "{:<12} {}", e.name, e.title)?;
        }
        return Ok(EXIT_OK);
    };
    let e = entry(name)?;
    let mut code = EXIT_OK;
    if let Some(dir) = export {
        std::fs::create_dir_all(dir).map_err(|err| InputError(format!("{}: {err}", dir.display())))?;
        let problem_path = dir.join(format!("{}.toml", e.name));
        write_file(&problem_path, &write_problem(&e.problem))?;
        writeln!(out, "wrote {}", problem_path.display())?;
        if let Some(c) = &e.candidate {
            let cand_path = dir.join(format!("{}.candidate.toml", e.name));
            write_file(&cand_path, &write_candidate(c, &VerifySettings::from_options(&e.verify)))?;
            writeln!(out, "wrote {}", cand_path.display())?;
        }
    }
    if run_all {
        let rows = e.reproduce();
        writeln!(out, "{}: {}", e.name, e.title)?;
        let wk = rows.iter().map(|r| r.key.len()).max().unwrap_or(0).max(3);
        let we = rows.iter().map(|r| r.expected.len()).max().unwrap_or(0).max(8);
        let wg = rows.iter().map(|r| r.got.len()).max().unwrap_or(0).max(3);
        writeln!(out, "{:<wk$}  {:<we$}  {:<wg$}  result  note", "key", "expected", "got")?;
        for r in &rows {
            let verdict = if r.pass { "PASS" } else { "FAIL" };
            writeln!(out, "{:<wk$}  {:<we$}  {:<wg$}  {:<6}  {}", r.key, r.expected, r.got, verdict, r.note)?;
        }
        let passed = rows.iter().filter(|r| r.pass).count();
        writeln!(out, "{passed}/{} passed", rows.len())?;
        if passed != rows.len() {
            code = EXIT_CHECK_FAILED;
        }
    }
    if export.is_none() && !run_all {
        writeln!(out, "{:<12} {}", e.name, e.title)?;
        writeln!(out, "lattice: {}", e.lattice)?;
        writeln!(out, "use --run-all to reproduce or --export DIR to write files")?;
    }
    Ok(code)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    match cli.command {
        Command::Check { problem } => check(out, &problem),
        Command::Lift { problem } => lift(out, &problem),
        Command::Simulate { problem, control, step, out: path } => simulate(out, &problem, &control, step, &path),
        Command::Verify { problem, candidate, convention, tol_hj, tol_max, tol_cost, r#box, density } => verify(
            out,
            &problem,
            &candidate,
            VerifyFlags { convention, tol_hj, tol_max, tol_cost, search_box: r#box, density },
        ),
        Command::Solve { problem, q, max_iter, tol, seed, out: path } => {
            let init = seed.map_or(Init::Zero, Init::Random);
            let opts = SolveOptions { q, max_iter, tolerance: tol, init, ..SolveOptions::default() };
            solve_cmd(out, &problem, opts, &path)
        }
        Command::Example { name, run_all, export } => example(out, name.as_deref(), run_all, export.as_deref()),
    }
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_INPUT
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(InputError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INPUT
        }
    }
}
