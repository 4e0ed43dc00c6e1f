//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{check_assumptions_seeded, verify_zero_convexity};
use crate::error::Error;
use crate::homotopy::{homotopy_solve, HomotopyOptions, PathRecord};
use crate::ipm::SolverOptions;
use crate::nlp::ParametricNlp;
use crate::output::{write_diagnostics_file, write_solution_file, write_svg_file};
use crate::problem::{example_document, load_problem, ProblemDocument};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_PATH_FAILURE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "channel-homotopy", version, about = "Optimal control of open-channel flow by homotopy continuation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the problem described by a JSON document.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve the bundled example channel.
    Example {
        /// Only print the assumption report.
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the assumptions and the convexity of the linear model.
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 0.1)]
    pub theta_step: f64,
    /// Keep the θ increment fixed.
    #[arg(long)]
    pub no_adapt: bool,
    #[arg(long, default_value_t = 0.1)]
    pub mu_init: f64,
    /// Barrier parameter at which warm-started frames begin (default: mu-init).
    #[arg(long)]
    pub warm_mu: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub mu_factor: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub mu_min: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value = "solution.csv")]
    pub output: PathBuf,
    #[arg(long, default_value = "diagnostics.csv")]
    pub diagnostics: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Seed of the random sample points used by the checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RunArgs {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            mu_init: self.mu_init,
            mu_factor: self.mu_factor,
            mu_min: self.mu_min,
            tol: self.tol,
            ..SolverOptions::default()
        }
    }

    pub fn homotopy_options(&self) -> HomotopyOptions {
        HomotopyOptions {
            theta_step: self.theta_step,
            theta_step_min: HomotopyOptions::default().theta_step_min.min(self.theta_step),
            adaptive: !self.no_adapt,
            warm_mu: self.warm_mu,
            record_diagnostics: true,
        }
    }
}

/// Builds the problem and runs the assumption and convexity checks, printing
/// both reports. Returns the problem when every check passes.
fn checked_problem(doc: &ProblemDocument, seed: u64, out: &mut dyn Write) -> Result<ParametricNlp, i32> {
    let nlp = doc
        .to_problem()
        .and_then(|p| ParametricNlp::build(&p))
        .map_err(|e| {
            let _ = writeln!(out, "error: {e}");
            EXIT_REJECTED
        })?;
    let report = check_assumptions_seeded(&nlp, seed);
    let _ = writeln!(out, "{report}");
    if !report.passed() {
        return Err(EXIT_REJECTED);
    }
    match verify_zero_convexity(&nlp, seed) {
        Ok(z) => {
            let _ = writeln!(
                out,
                "zero-convexity: {} (constraint curvature {:.3e}, objective min diagonal {:.3e})",
                if z.passed() { "pass" } else { "FAIL" },
                z.constraint_curvature,
                z.objective_min_diagonal
            );
            if !z.passed() {
                return Err(EXIT_REJECTED);
            }
        }
        Err(e) => {
            let _ = writeln!(out, "zero-convexity: FAIL ({e})");
            return Err(EXIT_REJECTED);
        }
    }
    Ok(nlp)
}

fn write_outputs(nlp: &ParametricNlp, path: &PathRecord, run: &RunArgs, out: &mut dyn Write) -> Result<(), i32> {
    let result = write_solution_file(&run.output, nlp, path)
        .and_then(|_| write_diagnostics_file(&run.diagnostics, path))
        .and_then(|_| match &run.plot {
            Some(p) => write_svg_file(p, nlp, path),
            None => Ok(()),
        });
    result.map_err(|e| {
        let _ = writeln!(out, "error: {e}");
        EXIT_IO
    })
}

fn solve_document(doc: &ProblemDocument, run: &RunArgs, out: &mut dyn Write) -> i32 {
    let nlp = match checked_problem(doc, run.seed, out) {
        Ok(nlp) => nlp,
        Err(code) => return code,
    };
    let solver = run.solver_options();
    let homotopy = run.homotopy_options();
    if let Err(e) = solver.validate().and_then(|_| homotopy.validate()) {
        let _ = writeln!(out, "error: {e}");
        return EXIT_REJECTED;
    }
    match homotopy_solve(&nlp, &solver, &homotopy) {
        Ok(path) => {
            if let Err(code) = write_outputs(&nlp, &path, run, out) {
                return code;
            }
            let last = path.last().expect("complete path");
            let min_sv = path
                .entries
                .iter()
                .filter_map(|e| e.min_singular_value)
                .reduce(f64::min);
            let _ = writeln!(
                out,
                "solved {} frames, {} Newton iterations; objective at theta = 1: {:.6e}; smallest KKT singular value {}",
                path.entries.len(),
                path.entries.iter().map(|e| e.newton_iters).sum::<usize>(),
                last.objective,
                min_sv.map_or("n/a".to_string(), |v| format!("{v:.3e}"))
            );
            let _ = writeln!(
                out,
                "wrote {} and {}",
                run.output.display(),
                run.diagnostics.display()
            );
            EXIT_SUCCESS
        }
        Err(Error::PathFailure(failure)) => {
            let _ = writeln!(out, "error: {failure}");
            if !failure.partial.entries.is_empty() {
                if let Err(code) = write_outputs(&nlp, &failure.partial, run, out) {
                    return code;
                }
            }
            EXIT_PATH_FAILURE
        }
        Err(e @ Error::Assumption { .. }) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_REJECTED
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_PATH_FAILURE
        }
    }
}

fn load(file: &Path, out: &mut dyn Write) -> Result<ProblemDocument, i32> {
    load_problem(file).map_err(|e| {
        let _ = writeln!(out, "error: {}: {e}", file.display());
        match e {
            Error::Io(_) => EXIT_IO,
            _ => EXIT_REJECTED,
        }
    })
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Solve { file, run } => match load(&file, out) {
            Ok(doc) => solve_document(&doc, &run, out),
            Err(code) => code,
        },
        Command::Example { check: true, run } => {
            let doc = example_document();
            match doc.to_problem().and_then(|p| ParametricNlp::build(&p)) {
                Ok(nlp) => {
                    let _ = writeln!(out, "{}", check_assumptions_seeded(&nlp, run.seed));
                    EXIT_SUCCESS
                }
                Err(e) => {
                    let _ = writeln!(out, "error: {e}");
                    EXIT_REJECTED
                }
            }
        }
        Command::Example { check: false, run } => solve_document(&example_document(), &run, out),
        Command::Check { file, seed } => match load(&file, out) {
            Ok(doc) => match checked_problem(&doc, seed, out) {
                Ok(_) => EXIT_SUCCESS,
                Err(code) => code,
            },
            Err(code) => code,
        },
    }
}
