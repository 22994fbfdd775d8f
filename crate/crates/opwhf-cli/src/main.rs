//! `opwhf` command-line front end.
//!
//! Exit codes: 0 success (certified), 1 invalid input, 2 I/O failure,
//! 3 converged but not certified, 4 not converged or initialization failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use opwhf::analysis::{
    compare_joint_separate, control_mode_map, three_point_estimate, AnalysisError, GeometryLaw, ParamBox,
    SensitivityQuery, UncertaintySpec,
};
use opwhf::model::{load_scenario, validate_scenario, LoadError, Scenario};
use opwhf::physics::{eval_all_residuals, Solution};
use opwhf::scheduler::{solve_opwhf, Outcome, SchedError, SolverOptions};

#[derive(Parser)]
#[command(name = "opwhf", about = "Joint power, water and heat scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario for structural problems.
    Validate(Common),
    /// Solve the joint schedule and write solution.json, trace.jsonl, residuals.json.
    Solve(Common),
    /// Solve jointly and separately, write compare.csv.
    Compare(Common),
    /// Control-mode map over pipe length and diameter, write modemap.csv.
    Sensitivity(SensitivityArgs),
    /// Three-point uncertainty study, write uncertainty.csv.
    Uncertainty(UncertaintyArgs),
    /// Check a solution file against the physics oracle.
    ValidateSolution(ValidateSolutionArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// JSON file mirroring the solver options; flags override it.
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Recorded in artifact headers; every command is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    tol_outer: Option<f64>,
    #[arg(long)]
    tol_inner: Option<f64>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    common: Common,
    /// JSON SensitivityQuery; the built-in reference query otherwise.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    resolution: usize,
    #[arg(long, default_value_t = 20.0)]
    length_min: f64,
    #[arg(long, default_value_t = 400.0)]
    length_max: f64,
    #[arg(long, default_value_t = 0.2)]
    diameter_min: f64,
    #[arg(long, default_value_t = 1.2)]
    diameter_max: f64,
    /// Constant of the friction law F = k·L/D⁵.
    #[arg(long)]
    law_k: Option<f64>,
}

#[derive(Args)]
struct UncertaintyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated relative deviations, applied to all four inputs.
    #[arg(long, default_value = "0")]
    levels: String,
}

#[derive(Args)]
struct ValidateSolutionArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    solution: PathBuf,
}

/// A failure with the exit code it maps to.
struct Fail {
    code: u8,
    message: String,
}

impl Fail {
    fn new(code: u8, message: impl Into<String>) -> Fail {
        Fail { code, message: message.into() }
    }
    fn io(path: &Path, e: std::io::Error) -> Fail {
        Fail::new(2, format!("{}: {e}", path.display()))
    }
}

impl From<SchedError> for Fail {
    fn from(e: SchedError) -> Fail {
        let code = match e {
            SchedError::Load(_) | SchedError::Invalid(_) | SchedError::Options(_) => 1,
            _ => 4,
        };
        Fail::new(code, e.to_string())
    }
}

impl From<AnalysisError> for Fail {
    fn from(e: AnalysisError) -> Fail {
        match e {
            AnalysisError::Scheduler(s) => s.into(),
            AnalysisError::Query(_) | AnalysisError::Spec(_) | AnalysisError::NonpositiveFlow(_) => Fail::new(1, e.to_string()),
            other => Fail::new(4, other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::io(path, e))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), Fail> {
    fs::create_dir_all(dir).map_err(|e| Fail::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Fail::io(&path, e))
}

fn scenario(c: &Common) -> Result<Scenario, Fail> {
    let path = c.scenario.as_ref().ok_or_else(|| Fail::new(1, "--scenario is required"))?;
    let text = read(path)?;
    let s = load_scenario(&text).map_err(|e: LoadError| Fail::new(1, e.to_string()))?;
    let report = validate_scenario(&s);
    if !report.is_clean() {
        let lines: Vec<String> = report.findings.iter().map(|f| format!("{}: {}", f.code, f.message)).collect();
        return Err(Fail::new(1, lines.join("\n")));
    }
    Ok(s)
}

fn options(c: &Common) -> Result<SolverOptions, Fail> {
    let mut o = match &c.options {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Fail::new(1, format!("{}: {e}", p.display())))?,
        None => SolverOptions::default(),
    };
    if let Some(v) = c.max_outer {
        o.max_outer = v;
    }
    if let Some(v) = c.tol_outer {
        o.eps_outer = v;
    }
    if let Some(v) = c.tol_inner {
        o.eps_inner = v;
    }
    o.check().map_err(Fail::from)?;
    Ok(o)
}

fn outcome_code(o: &Outcome) -> u8 {
    match (o.converged, o.certified) {
        (true, true) => 0,
        (true, false) => 3,
        (false, _) => 4,
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn cmd_validate(c: &Common) -> Result<u8, Fail> {
    scenario(c)?;
    println!("scenario is valid");
    Ok(0)
}

fn cmd_solve(c: &Common) -> Result<u8, Fail> {
    let s = scenario(c)?;
    let opts = options(c)?;
    let start = Instant::now();
    let out = solve_opwhf(&s, &opts)?;
    let timings: Vec<_> = out.trace.records.iter().map(|r| json!({ "m": r.m, "timing": r.timing })).collect();
    let header = json!({
        "header": {
            "created_unix_s": unix_now(),
            "wall_s": start.elapsed().as_secs_f64(),
            "seed": c.seed,
            "stage_timings": timings,
        }
    });
    let mut trace = header.to_string();
    trace.push('\n');
    trace.push_str(&out.trace.to_jsonl(false));
    write(&c.out, "trace.jsonl", &trace)?;
    let sol = serde_json::to_string_pretty(&out.solution).expect("solution serializes");
    write(&c.out, "solution.json", &sol)?;
    write(&c.out, "residuals.json", &out.residuals.to_json())?;
    println!(
        "objective {:.6} after {} outer iterations, converged {}, certified {} (max residual {:.3e})",
        out.objective,
        out.trace.len(),
        out.converged,
        out.certified,
        out.residuals.max_rel()
    );
    Ok(outcome_code(&out))
}

fn cmd_compare(c: &Common) -> Result<u8, Fail> {
    let s = scenario(c)?;
    let opts = options(c)?;
    let b = compare_joint_separate(&s, &opts)?;
    write(&c.out, "compare.csv", &b.to_csv())?;
    println!("separate {:.6}, joint {:.6}", b.separate.total, b.joint.total);
    Ok(if b.separate_certified && b.joint_certified { 0 } else { 3 })
}

fn cmd_sensitivity(a: &SensitivityArgs) -> Result<u8, Fail> {
    let query = match &a.query {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Fail::new(1, format!("{}: {e}", p.display())))?,
        None => SensitivityQuery::default(),
    };
    let bx = ParamBox { length: (a.length_min, a.length_max), diameter: (a.diameter_min, a.diameter_max) };
    let law = a.law_k.map(|k| GeometryLaw { k }).unwrap_or_default();
    let map = control_mode_map(&query, &bx, &law, a.resolution)?;
    write(&a.common.out, "modemap.csv", &map.to_csv())?;
    println!("{} grid points, critical friction factors {:.6e} and {:.6e}", map.points.len(), map.critical.0, map.critical.1);
    Ok(0)
}

fn cmd_uncertainty(a: &UncertaintyArgs) -> Result<u8, Fail> {
    let s = scenario(&a.common)?;
    let opts = options(&a.common)?;
    let levels: Vec<f64> = a
        .levels
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Fail::new(1, format!("level {v:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("sigma_pv,sigma_p,sigma_w,sigma_h,mean_objective,std_objective,deviation\n");
    for level in levels {
        let u = UncertaintySpec::uniform(level);
        let est = three_point_estimate(&s, &u, |sc| solve_opwhf(sc, &opts).map(|o| o.objective).map_err(|e| e.to_string()))?;
        let pct = (est.relative_std * 100.0 * 1e4).round() / 1e4;
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{}%\n",
            u.sigma_pv, u.sigma_p, u.sigma_w, u.sigma_h, est.mean, est.std, pct
        ));
        println!("sigma {level}: deviation {pct}%");
    }
    write(&a.common.out, "uncertainty.csv", &csv)?;
    Ok(0)
}

fn cmd_validate_solution(a: &ValidateSolutionArgs) -> Result<u8, Fail> {
    let s = scenario(&a.common)?;
    let opts = options(&a.common)?;
    let x: Solution = serde_json::from_str(&read(&a.solution)?).map_err(|e| Fail::new(1, format!("{}: {e}", a.solution.display())))?;
    let r = eval_all_residuals(&s, &x).map_err(|e| Fail::new(1, e.to_string()))?;
    write(&a.common.out, "residuals.json", &r.to_json())?;
    let failing = r.failing(opts.certify_tol);
    if failing.is_empty() {
        println!("all residual families within {:e}", opts.certify_tol);
        Ok(0)
    } else {
        println!("families above {:e}: {}", opts.certify_tol, failing.join(", "));
        Ok(3)
    }
}

fn main() -> ExitCode {
    // usage errors are invalid input; exit code 2 is reserved for I/O
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Uncertainty(a) => cmd_uncertainty(a),
        Command::ValidateSolution(a) => cmd_validate_solution(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
