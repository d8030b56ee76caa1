//! The `phasefd` command line: `gen`, `solve` and `eval`.
//!
//! Exit codes: 0 success, 2 bad flags, 3 invalid input or I/O failure,
//! 4 solver precondition failure.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use phasefd::evaluation::{self, SyntheticSpec};
use phasefd::io::{self, PhaseDocument};
use phasefd::{solve, FreezeSpec, GibbsMode, SolveError, SolverConfig, Sparsity};
use serde::Serialize;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "phasefd", version, about = "Shift-aware demixing of diffraction pattern libraries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Factorize an instance and write the solution document.
    Solve(SolveArgs),
    /// Generate a synthetic ternary instance and its ground truth.
    Gen(GenArgs),
    /// Score a solution against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Number of basis patterns.
    #[arg(long)]
    pub k: usize,
    /// Number of shift copies.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// L1 weight on activations; the bare flag means 0.35.
    #[arg(long, num_args = 0..=1, default_value_t = 0.0, default_missing_value = "0.35", value_parser = non_negative)]
    pub sparsity: f64,
    #[arg(long, default_value = "off", value_parser = parse_gibbs)]
    pub gibbs: GibbsMode,
    #[arg(long, default_value_t = 3)]
    pub nel: usize,
    #[arg(long, default_value_t = phasefd::model::DEFAULT_CONV_GAP)]
    pub conv_gap: f64,
    #[arg(long, default_value_t = phasefd::model::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Freeze document with masks, pinned values and initial values.
    #[arg(long)]
    pub freeze: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub peaks: usize,
    /// Lattice divisions per simplex edge.
    #[arg(long, default_value_t = 15)]
    pub grid: usize,
    /// Number of q bins.
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 1.5)]
    pub q_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub q_max: f64,
    #[arg(long, default_value_t = 1.0, value_parser = at_least_one)]
    pub alloy_max: f64,
    #[arg(long, default_value_t = 0.012)]
    pub peak_width: f64,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance document path.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth document path.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Solution document (a ground-truth document is also accepted).
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub nel: usize,
    #[arg(long, default_value_t = phasefd::model::PRESENCE_THRESHOLD, value_parser = non_negative)]
    pub threshold: f64,
}

/// Printed by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub matched_l2: f64,
    pub gibbs: f64,
}

fn parse_gibbs(s: &str) -> Result<GibbsMode, String> {
    s.parse()
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err("must be a finite value >= 0".into())
    }
}

fn at_least_one(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 1.0 {
        Ok(v)
    } else {
        Err("must be >= 1".into())
    }
}

/// An error paired with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INVALID, error: error.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = match e {
            SolveError::Model(_) | SolveError::Resample(_) | SolveError::Dimension(_) => EXIT_INVALID,
            _ => EXIT_SOLVER,
        };
        Failure { code, error: e.into() }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

pub fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Solve(args) => {
            let solution = run_solve(args)?;
            println!(
                "final loss {:.10e} after {} iterations{}",
                solution.final_loss(),
                solution.iterations,
                if solution.converged { "" } else { " (not converged)" }
            );
            Ok(())
        }
        Command::Gen(args) => {
            let n = run_gen(args)?;
            println!("wrote {n} samples to {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let report = run_eval(args)?;
            println!("{}", serde_json::to_string(&report).map_err(Failure::invalid)?);
            Ok(())
        }
    }
}

pub fn solve_config(args: &SolveArgs) -> SolverConfig {
    SolverConfig {
        m: args.m,
        sparsity: Sparsity::Uniform(args.sparsity),
        conv_gap: args.conv_gap,
        max_iters: args.max_iters,
        seed: args.seed,
        n_el: args.nel,
        gibbs: args.gibbs,
        ..SolverConfig::new(args.k)
    }
}

pub fn run_solve(args: &SolveArgs) -> Result<phasefd::Solution, Failure> {
    let instance = io::read_instance(&args.instance).map_err(Failure::invalid)?;
    let freeze = match &args.freeze {
        Some(path) => io::read_freeze(path).map_err(Failure::invalid)?,
        None => FreezeSpec::default(),
    };
    let solution = solve(&instance, &solve_config(args), &freeze)?;
    io::write_solution(&args.out, &solution).map_err(Failure::invalid)?;
    Ok(solution)
}

pub fn synthetic_spec(args: &GenArgs) -> SyntheticSpec {
    SyntheticSpec {
        k: args.k,
        peaks_per_phase: args.peaks,
        grid_per_edge: args.grid,
        n_q: args.n,
        q_min: args.q_min,
        q_max: args.q_max,
        alloy_max: args.alloy_max,
        peak_width: args.peak_width,
        noise_sigma: args.noise,
        seed: args.seed,
    }
}

/// Returns the number of samples written.
pub fn run_gen(args: &GenArgs) -> Result<usize, Failure> {
    let (instance, truth) = evaluation::generate(&synthetic_spec(args)).map_err(Failure::invalid)?;
    io::write_instance(&args.out, &instance).map_err(Failure::invalid)?;
    io::write_truth(&args.truth, &truth).map_err(Failure::invalid)?;
    Ok(instance.n_samples())
}

pub fn run_eval(args: &EvalArgs) -> Result<EvalReport, Failure> {
    let truth = io::read_truth(&args.truth).map_err(Failure::invalid)?;
    let report = match io::read_phase_document(&args.solution).map_err(Failure::invalid)? {
        PhaseDocument::Solution(solution) => EvalReport {
            matched_l2: evaluation::matched_l2(&solution, &truth).map_err(Failure::invalid)?,
            gibbs: evaluation::gibbs_percentage(&solution, args.nel, args.threshold),
        },
        PhaseDocument::Truth(model) => EvalReport {
            matched_l2: evaluation::matched_l2_signals(&model.signals, &truth.signals, truth.intensity_total)
                .map_err(Failure::invalid)?,
            gibbs: evaluation::gibbs_fraction(&model.presence(args.threshold), args.nel),
        },
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("phasefd").chain(args.iter().copied()))
    }

    #[test]
    fn solve_defaults() {
        let cli = parse(&["solve", "--instance", "i.json", "--k", "3", "--out", "s.json"]).unwrap();
        let Command::Solve(args) = cli.command else { panic!() };
        let config = solve_config(&args);
        assert_eq!(config.m, 1);
        assert_eq!(config.sparsity, Sparsity::Uniform(0.0));
        assert_eq!(config.gibbs, GibbsMode::Off);
        assert_eq!(config.conv_gap, 2e-5);
    }

    #[test]
    fn bare_sparsity_flag_uses_default_strength() {
        let cli = parse(&["solve", "--instance", "i", "--k", "3", "--sparsity", "--out", "o"]).unwrap();
        let Command::Solve(args) = cli.command else { panic!() };
        assert_eq!(args.sparsity, 0.35);
        let cli = parse(&["solve", "--instance", "i", "--k", "3", "--sparsity", "0.1", "--out", "o"]).unwrap();
        let Command::Solve(args) = cli.command else { panic!() };
        assert_eq!(args.sparsity, 0.1);
    }

    #[test]
    fn flag_errors_exit_2() {
        assert_eq!(parse(&["solve", "--k", "3", "--out", "o"]).unwrap_err().exit_code(), 2);
        assert_eq!(
            parse(&["gen", "--alloy-max", "0.9", "--out", "a", "--truth", "b"]).unwrap_err().exit_code(),
            2
        );
        assert_eq!(
            parse(&["solve", "--instance", "i", "--k", "3", "--gibbs", "maybe", "--out", "o"])
                .unwrap_err()
                .exit_code(),
            2
        );
    }
}
