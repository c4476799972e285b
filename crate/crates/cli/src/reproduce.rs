use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use dkyp_core::analysis::{KYP_EQ_TOL, KYP_LYAP_TOL};
use dkyp_core::config::{RunConfig, SIX_STATE_RING};
use dkyp_core::report::{Method, SynthesisReport};
use dkyp_core::sim::RunSummary;

use crate::commands::{prepare, print_run, print_synthesis, print_verification, read_report, run_scenarios, run_synthesis, run_verification};
use crate::exit::{CliError, CliResult, NEGATIVE, SUCCESS};

const DECAY_SCENARIO: &str = "nominal-decay";
const NOISE_SCENARIO: &str = "disturbed";

#[derive(Debug, Serialize)]
struct Expectation {
    name: &'static str,
    expected: &'static str,
    observed: String,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Summary {
    expectations: Vec<Expectation>,
    elapsed_seconds: f64,
    pass: bool,
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn save(report: &SynthesisReport, path: &Path) -> Result<(), CliError> {
    report
        .write(path)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn decay_expectation(s: Option<&RunSummary>) -> Expectation {
    let (observed, pass) = match s {
        Some(s) => {
            let fit = s.fit.as_ref();
            let pass = s.settling_time.is_some_and(|t| t <= s.t_final)
                && fit.is_some_and(|f| f.rate < 0.0 && f.r_squared > 0.9);
            (
                format!(
                    "settled at t = {}, rate {}, r^2 {}",
                    s.settling_time.map_or("never".into(), |t| format!("{t:.3}")),
                    fit.map_or("n/a".into(), |f| format!("{:.4}", f.rate)),
                    fit.map_or("n/a".into(), |f| format!("{:.4}", f.r_squared)),
                ),
                pass,
            )
        }
        None => ("scenario did not run".into(), false),
    };
    Expectation {
        name: "error decay",
        expected: "every |e_k| < 1e-3 |e_k(0)| by t_final; fit rate < 0, r^2 > 0.9",
        observed,
        pass,
    }
}

fn bound_expectation(s: Option<&RunSummary>) -> Expectation {
    let (observed, pass) = match s {
        Some(s) => {
            let p = &s.performance;
            (
                format!("ratio (N gamma^2) {:.4e}, ratio (gamma^2) {:.4e}", p.ratio_n, p.ratio_1),
                p.certified && p.ratio_n < 1.0,
            )
        }
        None => ("scenario did not run".into(), false),
    };
    Expectation {
        name: "energy bound",
        expected: "cost / (N gamma^2 |w|^2 + I0) < 1",
        observed,
        pass,
    }
}

pub fn run(out: &Path) -> CliResult {
    let started = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| CliError::usage(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("config.toml"), SIX_STATE_RING)?;
    let (rc, loaded) = prepare(RunConfig::six_state_ring())?;
    let mut expectations = Vec::new();

    println!("== block-diagonal design");
    let (intuitive, _, code) = run_synthesis(&rc, &loaded, Method::Intuitive)?;
    save(&intuitive, &out.join("intuitive.json"))?;
    print_synthesis(&intuitive);
    let witnessed = intuitive.runs.iter().any(|r| r.summary.witness_verified == Some(true));
    expectations.push(Expectation {
        name: "block-diagonal design infeasible",
        expected: "infeasible with a verified phase-1 witness",
        observed: format!("{:?}, witness {}", intuitive.outcome, if witnessed { "verified" } else { "missing" }),
        pass: code == NEGATIVE && witnessed,
    });

    println!("== two-step design");
    let (two_step, _, code) = run_synthesis(&rc, &loaded, Method::TwoStep)?;
    let report_path = out.join("two-step.json");
    save(&two_step, &report_path)?;
    print_synthesis(&two_step);
    expectations.push(Expectation {
        name: "two-step design feasible",
        expected: "gains and certificate returned",
        observed: format!("{:?} in {:.1} s", two_step.outcome, two_step.elapsed_seconds),
        pass: code == SUCCESS,
    });

    let mut decay = None;
    let mut noise = None;
    if code == SUCCESS {
        let (_, contents) = read_report(&report_path)?;
        let specs: Vec<_> = loaded
            .scenarios
            .iter()
            .filter(|s| s.name == DECAY_SCENARIO || s.name == NOISE_SCENARIO)
            .cloned()
            .collect();
        let sim_dir = out.join("sim");
        let (verification, runs) = std::thread::scope(|s| {
            let v = s.spawn(|| run_verification(&contents, 500));
            let r = run_scenarios(&contents, &specs, &sim_dir, loaded.csv_stride);
            (v.join().unwrap_or_else(|_| Err(CliError::usage("verification thread panicked"))), r)
        });

        println!("== verification");
        let (observed, pass) = match &verification {
            Ok(v) => {
                print_verification(v);
                let text = serde_json::to_string_pretty(v).map_err(|e| CliError::usage(e.to_string()))?;
                write(&out.join("verification.json"), &(text + "\n"))?;
                (
                    format!(
                        "lambda_min(P) {:.3e}, lambda_max {:.3e}, equality residual {:.3e}, all mandatory checks {}",
                        v.global_p_min_eig,
                        v.kyp.lyap_max_eig,
                        v.kyp.eq_residual,
                        if v.pass { "pass" } else { "FAIL" }
                    ),
                    v.pass
                        && v.global_p_min_eig > 0.0
                        && v.kyp.lyap_max_eig <= KYP_LYAP_TOL
                        && v.kyp.eq_residual <= KYP_EQ_TOL,
                )
            }
            Err(e) => (format!("verification failed: {}", e.message), false),
        };
        expectations.push(Expectation {
            name: "certificate sound",
            expected: "global P > 0, KYP conditions within 1e-6 / 1e-8",
            observed,
            pass,
        });

        println!("== simulation");
        match runs {
            Ok(runs) => {
                for (s, _) in &runs {
                    print_run(s);
                }
                decay = runs.iter().find(|(s, _)| s.name == DECAY_SCENARIO).map(|(s, _)| s.clone());
                noise = runs.iter().find(|(s, _)| s.name == NOISE_SCENARIO).map(|(s, _)| s.clone());
            }
            Err(e) if e.code == crate::exit::USAGE => return Err(e),
            Err(e) => println!("simulation failed: {}", e.message),
        }
    } else {
        expectations.push(Expectation {
            name: "certificate sound",
            expected: "global P > 0, KYP conditions within 1e-6 / 1e-8",
            observed: "no certificate".into(),
            pass: false,
        });
    }
    expectations.push(decay_expectation(decay.as_ref()));
    expectations.push(bound_expectation(noise.as_ref()));

    let pass = expectations.iter().all(|e| e.pass);
    let summary = Summary {
        expectations,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        pass,
    };
    let mut md = String::from("| expectation | expected | observed | result |\n|---|---|---|---|\n");
    for e in &summary.expectations {
        writeln!(md, "| {} | {} | {} | {} |", e.name, e.expected, e.observed, if e.pass { "pass" } else { "FAIL" }).unwrap();
    }
    writeln!(md, "\nTotal time: {:.1} s", summary.elapsed_seconds).unwrap();
    write(&out.join("summary.md"), &md)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::usage(e.to_string()))?;
    write(&out.join("summary.json"), &(text + "\n"))?;

    println!("== summary");
    print!("{md}");
    if !pass {
        let failed: Vec<&str> = summary.expectations.iter().filter(|e| !e.pass).map(|e| e.name).collect();
        eprintln!("unmet expectations: {}", failed.join(", "));
        return Ok(NEGATIVE);
    }
    Ok(SUCCESS)
}
