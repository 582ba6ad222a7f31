//! Command-line front end: ingest a game description, validate it, solve for
//! the common-information equilibrium, audit the result by simulation and
//! deviation testing, and emit machine-readable JSON reports.
//!
//! Exit codes: 0 success, 2 input error (missing or malformed description,
//! failed validation), 3 equilibrium existence failure at some stage (the
//! report is still written, with that stage's condition diagnostics
//! embedded), 4 strategy-dependent beliefs without `--assume-independence`.
//! Logging is keyed to the `CIMPE_LOG` environment variable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cimpe_core::belief::{mix_seed, IndependenceReport};
use cimpe_core::examples;
use cimpe_core::induction::{solve_cimpe, EquilibriumSolution, SolveError, SolveOptions};
use cimpe_core::info::{build_info_maps, InfoMaps};
use cimpe_core::json::{spec_from_json, spec_to_json, MatrixDoc};
use cimpe_core::linalg::Vector;
use cimpe_core::model::{validate_spec, GameSpec, ValidateOptions, ValidationReport};
use cimpe_core::stage_game::ConditionReport;
use cimpe_core::verifier::{
    closed_form_costs, deviation_test, realize_control_laws, simulate, write_trajectories,
    CostEstimate,
};

#[derive(Parser)]
#[command(
    name = "cimpe",
    version,
    about = "Equilibrium solver for two-controller linear-quadratic-Gaussian dynamic games \
             with asymmetric information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a game description for structural and semantic problems.
    Validate {
        /// Path to the game description (JSON).
        spec: PathBuf,
    },
    /// Solve for the equilibrium and write a report.
    Solve {
        /// Path to the game description (JSON).
        spec: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proceed even if the belief recursion is strategy-dependent.
        #[arg(long)]
        assume_independence: bool,
        /// Seed for the strategy-independence spot checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve, then audit the equilibrium by closed-form evaluation,
    /// Monte-Carlo simulation and deviation testing.
    Verify {
        /// Path to the game description (JSON).
        spec: PathBuf,
        /// Monte-Carlo sample count.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Base seed; every derived stream is a fixed function of it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random deviation directions per controller.
        #[arg(long, default_value_t = 200)]
        deviations: usize,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proceed even if the belief recursion is strategy-dependent.
        #[arg(long)]
        assume_independence: bool,
        /// Also write simulated trajectories to this CSV file.
        #[arg(long)]
        dump_csv: Option<PathBuf>,
    },
    /// Print a bundled example game description as JSON.
    Example {
        /// One of: six, no-sharing, global-local, existence-failure.
        name: String,
        /// Write the description here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---- report ---------------------------------------------------------------------

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct StageFailure {
    stage: usize,
    condition: ConditionReport,
}

#[derive(Serialize)]
struct ControllerStageReport {
    obs_gain: MatrixDoc,
    mean_gain: MatrixDoc,
    intercept: MatrixDoc,
    law_private_gain: MatrixDoc,
    law_common_gain: MatrixDoc,
    law_intercept: MatrixDoc,
}

#[derive(Serialize)]
struct StageReport {
    stage: usize,
    condition: ConditionReport,
    conditioning_warning: Option<f64>,
    controllers: [ControllerStageReport; 2],
}

#[derive(Serialize)]
struct ValueReport {
    phi: MatrixDoc,
    xi: MatrixDoc,
    upsilon: f64,
}

#[derive(Serialize)]
struct SolutionReport {
    expected_costs: [f64; 2],
    stages: Vec<StageReport>,
    /// Value quadratics in the belief mean, stages `1..T`.
    values: Vec<[ValueReport; 2]>,
    /// Belief covariances, stages `1..T`.
    belief_covariances: Vec<MatrixDoc>,
}

#[derive(Serialize)]
struct CostReport {
    closed_form: [f64; 2],
    simulated: CostEstimate,
    deviation_improvements: [f64; 2],
    deviation_directions: usize,
    deviation_magnitude: f64,
}

#[derive(Serialize)]
struct RunReport {
    tool: ToolInfo,
    spec_sha256: String,
    seed: u64,
    validation: ValidationReport,
    independence: Option<IndependenceReport>,
    existence_failure: Option<StageFailure>,
    solution: Option<SolutionReport>,
    cost_estimates: Option<CostReport>,
    timing_seconds: f64,
}

impl RunReport {
    fn new(digest: String, seed: u64, validation: ValidationReport) -> Self {
        RunReport {
            tool: ToolInfo { name: "cimpe", version: env!("CARGO_PKG_VERSION") },
            spec_sha256: digest,
            seed,
            validation,
            independence: None,
            existence_failure: None,
            solution: None,
            cost_estimates: None,
            timing_seconds: 0.0,
        }
    }
}

fn vector_doc(v: &Vector) -> MatrixDoc {
    MatrixDoc { rows: v.len(), cols: 1, data: v.iter().cloned().collect() }
}

fn solution_report(
    maps: &InfoMaps,
    solution: &EquilibriumSolution,
) -> SolutionReport {
    let profile = realize_control_laws(maps, solution);
    let stages = solution
        .stage_solutions
        .iter()
        .enumerate()
        .map(|(idx, sol)| StageReport {
            stage: idx + 1,
            condition: solution.condition_reports[idx].clone(),
            conditioning_warning: sol.conditioning_warning,
            controllers: [0, 1].map(|i| {
                let law = &profile.laws[i][idx];
                ControllerStageReport {
                    obs_gain: MatrixDoc::from(&sol.obs_gain[i]),
                    mean_gain: MatrixDoc::from(&sol.mean_gain[i]),
                    intercept: vector_doc(&sol.intercept[i]),
                    law_private_gain: MatrixDoc::from(&law.gain_private),
                    law_common_gain: MatrixDoc::from(&law.gain_common),
                    law_intercept: vector_doc(&law.intercept),
                }
            }),
        })
        .collect();
    let values = solution
        .values
        .iter()
        .map(|pair| {
            [0, 1].map(|i| ValueReport {
                phi: MatrixDoc::from(&pair[i].phi),
                xi: MatrixDoc::from(&pair[i].xi),
                upsilon: pair[i].upsilon,
            })
        })
        .collect();
    SolutionReport {
        expected_costs: solution.expected_costs,
        stages,
        values,
        belief_covariances: solution.chain.sigma.iter().map(MatrixDoc::from).collect(),
    }
}

// ---- plumbing -------------------------------------------------------------------

const EXIT_INPUT: u8 = 2;
const EXIT_EXISTENCE: u8 = 3;
const EXIT_DEPENDENT: u8 = 4;

fn emit(report: &RunReport, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<(GameSpec, String), String> {
    let bytes =
        fs::read(path).map_err(|err| format!("cannot read {}: {err}", path.display()))?;
    let digest = format!("{:x}", Sha256::digest(&bytes));
    let text = String::from_utf8(bytes)
        .map_err(|err| format!("{} is not UTF-8: {err}", path.display()))?;
    let spec =
        spec_from_json(&text).map_err(|err| format!("{}: {err}", path.display()))?;
    Ok((spec, digest))
}

/// Validates and reports; `Err` carries the exit code for input failures.
fn checked_validation(spec: &GameSpec) -> Result<ValidationReport, String> {
    let report = validate_spec(spec, ValidateOptions::default()).map_err(|err| err.to_string())?;
    if !report.passed() {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err(format!("validation failed: {}", names.join(", ")));
    }
    Ok(report)
}

/// Runs the solve pipeline and classifies failures into exit codes; on the
/// existence path the partially filled report is still emitted.
fn run_solve(
    spec: &GameSpec,
    maps: &InfoMaps,
    report: &mut RunReport,
    options: &SolveOptions,
) -> Result<EquilibriumSolution, u8> {
    match solve_cimpe(spec, options) {
        Ok(solution) => {
            report.independence = Some(solution.independence.clone());
            report.solution = Some(solution_report(maps, &solution));
            Ok(solution)
        }
        Err(SolveError::DependentBeliefs { report: independence }) => {
            eprintln!(
                "beliefs are strategy-dependent (max covariance deviation {:.3e}, \
                 max mean deviation {:.3e}); pass --assume-independence to proceed anyway",
                independence.max_sigma_deviation, independence.max_mean_deviation
            );
            report.independence = Some(independence);
            Err(EXIT_DEPENDENT)
        }
        Err(SolveError::Existence { stage, report: condition }) => {
            eprintln!("stage {stage}: no unique equilibrium (rho(K1) = {:.6})", condition.rho_k1);
            report.existence_failure = Some(StageFailure { stage, condition });
            Err(EXIT_EXISTENCE)
        }
        Err(err @ SolveError::StageGame { .. }) => {
            eprintln!("{err}");
            Err(EXIT_EXISTENCE)
        }
        Err(err) => {
            eprintln!("{err}");
            Err(EXIT_INPUT)
        }
    }
}

fn example_spec(name: &str) -> Option<GameSpec> {
    match name {
        "six" => Some(examples::two_channel_spec()),
        "no-sharing" => Some(examples::two_channel_no_sharing_spec()),
        "global-local" => Some(examples::global_local_spec(7)),
        "existence-failure" => Some(examples::existence_failure_spec()),
        _ => None,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate { spec } => {
            let (game, _) = match load_spec(&spec) {
                Ok(loaded) => loaded,
                Err(message) => {
                    eprintln!("{message}");
                    return Ok(EXIT_INPUT);
                }
            };
            let report = match validate_spec(&game, ValidateOptions::default()) {
                Ok(report) => report,
                Err(err) => {
                    eprintln!("{err}");
                    return Ok(EXIT_INPUT);
                }
            };
            for check in &report.checks {
                let mark = if check.passed { "ok  " } else { "FAIL" };
                println!("{mark} {}: {}", check.name, check.detail);
            }
            Ok(if report.passed() { 0 } else { EXIT_INPUT })
        }

        Command::Solve { spec, out, assume_independence, seed } => {
            let started = Instant::now();
            let (game, digest) = match load_spec(&spec) {
                Ok(loaded) => loaded,
                Err(message) => {
                    eprintln!("{message}");
                    return Ok(EXIT_INPUT);
                }
            };
            let validation = match checked_validation(&game) {
                Ok(validation) => validation,
                Err(message) => {
                    eprintln!("{message}");
                    return Ok(EXIT_INPUT);
                }
            };
            let maps = build_info_maps(&game)?;
            let mut report = RunReport::new(digest, seed, validation);
            let options =
                SolveOptions { assume_independence, seed, ..SolveOptions::default() };
            let code = match run_solve(&game, &maps, &mut report, &options) {
                Ok(_) => 0,
                Err(code) => code,
            };
            report.timing_seconds = started.elapsed().as_secs_f64();
            emit(&report, out.as_deref())?;
            Ok(code)
        }

        Command::Verify { spec, samples, seed, deviations, out, assume_independence, dump_csv } => {
            let started = Instant::now();
            let (game, digest) = match load_spec(&spec) {
                Ok(loaded) => loaded,
                Err(message) => {
                    eprintln!("{message}");
                    return Ok(EXIT_INPUT);
                }
            };
            let validation = match checked_validation(&game) {
                Ok(validation) => validation,
                Err(message) => {
                    eprintln!("{message}");
                    return Ok(EXIT_INPUT);
                }
            };
            let maps = build_info_maps(&game)?;
            let mut report = RunReport::new(digest, seed, validation);
            let options =
                SolveOptions { assume_independence, seed, ..SolveOptions::default() };
            let solution = match run_solve(&game, &maps, &mut report, &options) {
                Ok(solution) => solution,
                Err(code) => {
                    report.timing_seconds = started.elapsed().as_secs_f64();
                    emit(&report, out.as_deref())?;
                    return Ok(code);
                }
            };

            let profile = realize_control_laws(&maps, &solution);
            let magnitude = 1e-2;
            let improvements = [1u8, 2].map(|controller| {
                deviation_test(
                    &game,
                    &maps,
                    &profile,
                    controller,
                    deviations,
                    magnitude,
                    mix_seed(seed, 1000 + controller as u64),
                )
            });
            report.cost_estimates = Some(CostReport {
                closed_form: closed_form_costs(&game, &maps, &profile),
                simulated: simulate(&game, &maps, &profile, samples, seed),
                deviation_improvements: improvements,
                deviation_directions: deviations,
                deviation_magnitude: magnitude,
            });
            if let Some(path) = dump_csv {
                let mut file = fs::File::create(&path)?;
                write_trajectories(&game, &maps, &profile, samples, seed, &mut file)?;
            }
            report.timing_seconds = started.elapsed().as_secs_f64();
            emit(&report, out.as_deref())?;
            Ok(0)
        }

        Command::Example { name, out } => match example_spec(&name) {
            Some(game) => {
                let text = spec_to_json(&game);
                match out {
                    Some(path) => fs::write(path, text + "\n")?,
                    None => println!("{text}"),
                }
                Ok(0)
            }
            None => {
                eprintln!(
                    "unknown example {name:?}; available: six, no-sharing, global-local, \
                     existence-failure"
                );
                Ok(EXIT_INPUT)
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CIMPE_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
