use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dkyp_core::analysis::{verify_design, FrequencyGrid, VerificationReport};
use dkyp_core::config::{Loaded, RunConfig, ScenarioSpec};
use dkyp_core::linalg::{lambda_max, lambda_min, spectral_norm, symmetrize};
use dkyp_core::model::{validate_iqc, validate_sector, EstimatorGains};
use dkyp_core::report::{
    CertificateRecord, GainsRecord, Method, Outcome, RunRecord, SynthesisReport, SYNTHESIS_REPORT_FORMAT,
};
use dkyp_core::sim::{gnuplot_script, run, RunSummary, SimScenario};
use dkyp_core::synthesis::{intuitive_design, two_step_synthesis, Design, LyapunovCertificate};
use dkyp_core::Error;

use crate::exit::{code_for, CliError, CliResult, NEGATIVE, NUMERICAL, SUCCESS, USAGE};

/// Parses a config, applies solver overrides from the environment and
/// builds the derived objects.
pub fn load_config(path: &Path) -> Result<(RunConfig, Loaded), CliError> {
    let rc = RunConfig::from_path(path).map_err(|e| CliError::usage(e.to_string()))?;
    prepare(rc)
}

pub fn prepare(mut rc: RunConfig) -> Result<(RunConfig, Loaded), CliError> {
    rc.solver = rc
        .solver
        .clone()
        .with_env_overrides()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let loaded = rc.load().map_err(|e| CliError::usage(e.to_string()))?;
    Ok((rc, loaded))
}

fn model_warnings(loaded: &Loaded) -> Vec<String> {
    let mut out = Vec::new();
    let model = &loaded.model;
    if loaded.synthesis.w_defaulted {
        out.push("no weights given; W_k = I assumed".into());
    }
    if model.r() > 0 {
        match validate_sector(model, &loaded.sample_box, loaded.samples) {
            Ok(r) if !r.ok => out.push(format!(
                "phi is not monotone on the sample box (worst violation {:.3e})",
                r.worst_violation
            )),
            Err(e) => out.push(format!("sector check skipped: {e}")),
            _ => {}
        }
    }
    if model.r_tilde() > 0 {
        match validate_iqc(model, &loaded.sample_box, loaded.samples) {
            Ok(r) if !r.ok => out.push("theta violates the Lipschitz bound on the sample box".into()),
            Err(e) => out.push(format!("Lipschitz check skipped: {e}")),
            _ => {}
        }
    }
    out
}

/// Runs one synthesis method and packages the result. The exit code is
/// `SUCCESS`, `NEGATIVE` or `NUMERICAL`.
pub fn run_synthesis(rc: &RunConfig, loaded: &Loaded, method: Method) -> Result<(SynthesisReport, Option<Design>, u8), CliError> {
    let started = Instant::now();
    let result = match method {
        Method::Intuitive => intuitive_design(&loaded.model, &loaded.graph, &loaded.synthesis),
        Method::TwoStep => two_step_synthesis(&loaded.model, &loaded.graph, &loaded.synthesis),
    };
    let elapsed_seconds = started.elapsed().as_secs_f64();
    let mut report = SynthesisReport {
        format: SYNTHESIS_REPORT_FORMAT.into(),
        method,
        outcome: Outcome::Feasible,
        message: String::new(),
        w_defaulted: loaded.synthesis.w_defaulted,
        gamma: loaded.synthesis.gamma,
        gamma_achieved: None,
        gains: None,
        certificate: None,
        runs: Vec::new(),
        warnings: model_warnings(loaded),
        elapsed_seconds,
        config: rc.clone(),
    };
    let to_runs = |runs: &[(String, dkyp_core::synthesis::SolveSummary)]| {
        runs.iter()
            .map(|(stage, summary)| RunRecord {
                stage: stage.clone(),
                summary: summary.clone(),
            })
            .collect()
    };
    match result {
        Ok(design) => {
            report.message = "feasible".into();
            report.gamma_achieved = Some(design.gamma_achieved);
            report.gains = Some(GainsRecord::from_gains(&design.gains));
            report.certificate = Some(CertificateRecord::from_certificate(&design.cert));
            report.runs = to_runs(&design.runs);
            Ok((report, Some(design), SUCCESS))
        }
        Err(e @ Error::Synthesis { .. }) => {
            let code = code_for(&e);
            report.outcome = if code == NEGATIVE {
                Outcome::Infeasible
            } else {
                Outcome::NumericalFailure
            };
            report.message = e.to_string();
            if let Error::Synthesis { runs, .. } = &e {
                report.runs = to_runs(runs);
            }
            Ok((report, None, code))
        }
        Err(e) => {
            let code = code_for(&e);
            if code == USAGE {
                return Err(e.into());
            }
            report.outcome = if code == NEGATIVE {
                Outcome::Infeasible
            } else {
                Outcome::NumericalFailure
            };
            report.message = e.to_string();
            Ok((report, None, code))
        }
    }
}

fn write_report(report: &SynthesisReport, out: &Path) -> Result<(), CliError> {
    report
        .write(out)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", out.display())))
}

pub fn print_synthesis(report: &SynthesisReport) {
    println!("method:  {}", report.method);
    println!("outcome: {:?}", report.outcome);
    if !report.message.is_empty() && report.outcome != Outcome::Feasible {
        println!("reason:  {}", report.message);
    }
    for r in &report.runs {
        let s = &r.summary;
        print!(
            "  {:<10} {:<18} iterations {:>3}+{:<3} max eig {:>10.3e}",
            r.stage,
            s.status.to_string(),
            s.phase1_iterations,
            s.phase2_iterations,
            s.max_lmi_eigenvalue
        );
        if let Some(b) = s.witness_bound {
            print!("  witness bound {b:.3e} ({})", if s.witness_verified == Some(true) { "verified" } else { "unverified" });
        }
        println!();
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("time:    {:.1} s", report.elapsed_seconds);
}

pub fn synthesize(config: &Path, method: Method, out: &Path) -> CliResult {
    let (rc, loaded) = load_config(config)?;
    let (report, _, code) = run_synthesis(&rc, &loaded, method)?;
    write_report(&report, out)?;
    print_synthesis(&report);
    println!("report:  {}", out.display());
    Ok(code)
}

/// Model, gains and certificate of a feasible report.
pub struct ReportContents {
    pub loaded: Loaded,
    pub gains: EstimatorGains,
    pub cert: Option<LyapunovCertificate>,
    pub gamma: f64,
}

pub fn read_report(path: &Path) -> Result<(SynthesisReport, ReportContents), CliError> {
    let report = SynthesisReport::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let loaded = report
        .config
        .load()
        .map_err(|e| CliError::usage(format!("{}: embedded config: {e}", path.display())))?;
    if report.gains.is_none() {
        return Err(CliError {
            code: NEGATIVE,
            message: format!("{}: report has no gains (outcome {:?})", path.display(), report.outcome),
        });
    }
    let contents = contents_for(&report, loaded).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((report, contents))
}

fn contents_for(report: &SynthesisReport, loaded: Loaded) -> Result<ReportContents, Error> {
    let q: Vec<usize> = (1..=loaded.model.node_count()).map(|k| loaded.model.q(k)).collect();
    let gains = report.gains(loaded.model.n(), &q)?;
    let cert = match &report.certificate {
        Some(_) => Some(report.certificate()?),
        None => None,
    };
    let gamma = report.gamma_achieved.unwrap_or(report.gamma);
    Ok(ReportContents {
        loaded,
        gains,
        cert,
        gamma,
    })
}

pub fn run_verification(c: &ReportContents, grid_points: usize) -> Result<VerificationReport, CliError> {
    let cert = c.cert.as_ref().ok_or_else(|| CliError {
        code: NEGATIVE,
        message: "report has no certificate".into(),
    })?;
    let grid = FrequencyGrid {
        points: grid_points.max(2),
        ..FrequencyGrid::default()
    };
    let l = &c.loaded;
    verify_design(&l.model, &l.graph, &l.synthesis, &c.gains, cert, &grid).map_err(|e| CliError {
        code: if code_for(&e) == USAGE { USAGE } else { NUMERICAL },
        message: e.to_string(),
    })
}

pub fn print_verification(v: &VerificationReport) {
    println!("{:<30} {:<10} {:<6} detail", "check", "kind", "result");
    for c in &v.checks {
        println!(
            "{:<30} {:<10} {:<6} {}",
            c.name,
            if c.mandatory { "mandatory" } else { "diagnostic" },
            if c.pass { "pass" } else { "FAIL" },
            c.detail
        );
    }
    for c in v.checks.iter().filter(|c| !c.mandatory && !c.pass) {
        println!("warning: diagnostic '{}' failed ({})", c.name, c.detail);
    }
    for w in &v.warnings {
        println!("warning: {w}");
    }
    println!("verdict: {}", if v.pass { "pass" } else { "FAIL" });
}

pub fn verify(report: &Path, out: Option<&Path>, grid_points: usize) -> CliResult {
    let (_, contents) = read_report(report)?;
    let v = run_verification(&contents, grid_points)?;
    print_verification(&v);
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::usage(e.to_string()))?;
        std::fs::write(out, text + "\n").map_err(|e| CliError::usage(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(if v.pass { SUCCESS } else { NEGATIVE })
}

/// Output files of one simulated scenario.
pub struct ScenarioFiles {
    pub csv: PathBuf,
    pub metrics: PathBuf,
    pub script: PathBuf,
}

fn simulate_one(c: &ReportContents, spec: &ScenarioSpec, out: &Path, stride: usize) -> Result<(RunSummary, ScenarioFiles), CliError> {
    let l = &c.loaded;
    let sc = SimScenario {
        model: l.model.clone(),
        graph: l.graph.clone(),
        gains: c.gains.clone(),
        x0: spec.x0.clone(),
        xhat0: spec.xhat0.clone(),
        disturbance: spec.disturbance.clone(),
        t_final: spec.t_final,
        dt: spec.dt,
        w: l.synthesis.w.clone(),
        gamma: c.gamma,
        certificate: c.cert.clone(),
    };
    let result = run(&sc).map_err(|e| match e {
        Error::Divergence { time } => CliError {
            code: NEGATIVE,
            message: format!("scenario {}: integration diverged at t = {time}", spec.name),
        },
        other => CliError {
            code: code_for(&other),
            message: format!("scenario {}: {other}", spec.name),
        },
    })?;
    let summary = RunSummary::new(&spec.name, &sc, &result);
    let files = ScenarioFiles {
        csv: out.join(format!("{}.csv", spec.name)),
        metrics: out.join(format!("{}.metrics.json", spec.name)),
        script: out.join(format!("{}.gp", spec.name)),
    };
    let io = |p: &Path, e: std::io::Error| CliError::usage(format!("cannot write {}: {e}", p.display()));
    let file = File::create(&files.csv).map_err(|e| io(&files.csv, e))?;
    let mut w = BufWriter::new(file);
    result
        .write_csv(&mut w, stride)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", files.csv.display())))?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::usage(e.to_string()))?;
    std::fs::write(&files.metrics, text + "\n").map_err(|e| io(&files.metrics, e))?;
    let script = gnuplot_script(&format!("{}.csv", spec.name), l.model.n(), l.graph.node_count(), &spec.name);
    std::fs::write(&files.script, script).map_err(|e| io(&files.script, e))?;
    Ok((summary, files))
}

/// Runs the scenarios concurrently. The first failure in scenario order
/// wins.
pub fn run_scenarios(
    c: &ReportContents,
    specs: &[ScenarioSpec],
    out: &Path,
    stride: usize,
) -> Result<Vec<(RunSummary, ScenarioFiles)>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::usage(format!("cannot create {}: {e}", out.display())))?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| s.spawn(move || simulate_one(c, spec, out, stride)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::usage("simulation thread panicked"))))
            .collect()
    });
    results.into_iter().collect()
}

pub fn print_run(s: &RunSummary) {
    let p = &s.performance;
    println!("scenario {}:", s.name);
    match s.settling_time {
        Some(t) => println!("  errors below 1e-3 of initial after t = {t:.3}"),
        None => println!("  errors did not settle below 1e-3 of initial"),
    }
    match &s.fit {
        Some(f) => println!("  decay fit: rate {:.4}, r^2 {:.4}", f.rate, f.r_squared),
        None => println!("  decay fit: {}", s.fit_error.as_deref().unwrap_or("unavailable")),
    }
    println!(
        "  cost {:.4e}, disturbance energy {:.4e}, I0 {:.4e}{}",
        p.error_cost,
        p.disturbance_energy,
        p.i0,
        if p.certified { "" } else { " (bound not certified)" }
    );
    println!("  ratio (N gamma^2) {:.4e}, ratio (gamma^2) {:.4e}", p.ratio_n, p.ratio_1);
}

pub fn simulate(
    config: &Path,
    report: &Path,
    names: &[String],
    out: &Path,
    dt: Option<f64>,
    t_final: Option<f64>,
) -> CliResult {
    let (_, loaded) = load_config(config)?;
    let (_, mut contents) = read_report(report)?;
    contents
        .gains
        .validate(&loaded.model, &loaded.graph)
        .map_err(|e| CliError::usage(format!("report does not fit the config: {e}")))?;
    if let Some(cert) = &contents.cert {
        cert.validate(&loaded.graph)
            .map_err(|e| CliError::usage(format!("report does not fit the config: {e}")))?;
        if cert.dims().iter().any(|&d| d != loaded.model.n()) {
            return Err(CliError::usage("report certificate does not fit the config"));
        }
    }
    let mut specs: Vec<ScenarioSpec> = if names.is_empty() {
        loaded.scenarios.clone()
    } else {
        names
            .iter()
            .map(|n| {
                loaded
                    .scenarios
                    .iter()
                    .find(|s| &s.name == n)
                    .cloned()
                    .ok_or_else(|| CliError::usage(format!("unknown scenario {n}")))
            })
            .collect::<Result<_, _>>()?
    };
    for s in &mut specs {
        if let Some(v) = dt {
            s.dt = v;
        }
        if let Some(v) = t_final {
            s.t_final = v;
        }
    }
    let stride = loaded.csv_stride;
    contents.loaded = loaded;
    let runs = run_scenarios(&contents, &specs, out, stride)?;
    for (s, files) in &runs {
        print_run(s);
        println!("  wrote {}", files.csv.display());
    }
    Ok(SUCCESS)
}

pub fn show_report(path: &Path) -> CliResult {
    let report = SynthesisReport::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    print_synthesis(&report);
    println!("gamma:   {}{}", report.gamma, match report.gamma_achieved {
        Some(g) if g != report.gamma => format!(" (achieved {g})"),
        _ => String::new(),
    });
    if report.w_defaulted {
        println!("weights: W_k = I (default)");
    }
    let Ok(loaded) = report.config.load() else {
        return Err(CliError::usage("embedded config is invalid"));
    };
    if report.gains.is_some() {
        let c = contents_for(&report, loaded).map_err(|e| CliError::usage(e.to_string()))?;
        println!("{:<6} {:>12} {:>12} {:>12} {:>12}", "node", "|L_k|", "max |K_kj|", "lmin(P_k)", "lmax(P_k)");
        for k in 1..=c.loaded.graph.node_count() {
            let kmax = c
                .gains
                .k
                .iter()
                .filter(|((a, _), _)| *a == k)
                .map(|(_, m)| spectral_norm(m))
                .fold(0.0, f64::max);
            let (lo, hi) = c.cert.as_ref().map_or((f64::NAN, f64::NAN), |cert| {
                let p = symmetrize(&cert.p[k - 1]);
                (lambda_min(&p), lambda_max(&p))
            });
            println!(
                "{:<6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                k,
                spectral_norm(&c.gains.l[k - 1]),
                kmax,
                lo,
                hi
            );
        }
    }
    Ok(SUCCESS)
}
