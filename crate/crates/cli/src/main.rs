//! `dkyp`: synthesize, verify and simulate distributed estimators from a
//! TOML configuration.

mod commands;
mod exit;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dkyp_core::report::Method;

#[derive(Parser)]
#[command(name = "dkyp", version, about = "Distributed circle-criterion estimator synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Intuitive,
    TwoStep,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Intuitive => Method::Intuitive,
            MethodArg::TwoStep => Method::TwoStep,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the LMI design problem and write gains plus certificate.
    Synthesize {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "two-step")]
        method: MethodArg,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Re-check a synthesis report independently of the solver.
    Verify {
        report: PathBuf,
        /// Also write the verification results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Samples of the frequency sweep.
        #[arg(long, default_value_t = 500)]
        grid_points: usize,
    },
    /// Simulate plant and estimators with the gains of a report.
    Simulate {
        config: PathBuf,
        report: PathBuf,
        /// Scenario names from the config; all of them when omitted.
        #[arg(long)]
        scenario: Vec<String>,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
        /// Overrides the step size of every selected scenario.
        #[arg(long)]
        dt: Option<f64>,
        /// Overrides the horizon of every selected scenario.
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Print a human-readable summary of a synthesis report.
    Report { report: PathBuf },
    /// Run the six-state ring example end to end and check every expectation.
    ReproducePaper {
        #[arg(long, default_value = "reproduction")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synthesize { config, method, out } => commands::synthesize(&config, method.into(), &out),
        Command::Verify {
            report,
            out,
            grid_points,
        } => commands::verify(&report, out.as_deref(), grid_points),
        Command::Simulate {
            config,
            report,
            scenario,
            out,
            dt,
            t_final,
        } => commands::simulate(&config, &report, &scenario, &out, dt, t_final),
        Command::Report { report } => commands::show_report(&report),
        Command::ReproducePaper { out } => reproduce::run(&out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
