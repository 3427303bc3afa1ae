//! `coopeig` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use coopeig::acceptance::{self, Overrides, CRITERIA};
use coopeig::analysis::{self, FrequencyLimit, ScanTable};
use coopeig::config::{load_config, Config};
use coopeig::model::{block_decompose, System};
use coopeig::optimize::{self, OptimizeOptions};
use coopeig::spectra::{self, EigenOptions, ZOptions};
use coopeig::Error;

const SCHEMA_VERSION: &str = "1";
const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "coopeig", version, about = "Principal eigenvalues of periodic cooperative parabolic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default, Serialize)]
struct Common {
    /// Tilt parameter.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    z: f64,
    /// Space nodes per period (1 selects ODE mode).
    #[arg(long)]
    nx: Option<usize>,
    /// Time samples per period.
    #[arg(long)]
    nt: Option<usize>,
    /// Implicit Euler steps per period.
    #[arg(long)]
    substeps: Option<usize>,
    /// Power-iteration drift tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; JSON goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for scans.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone, Debug, Serialize)]
struct WithConfig {
    /// Config file, or `bundled:NAME` for a bundled one.
    config: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum LimitKind {
    Diffusion,
    Vanishing,
    Frequency,
}

#[derive(Subcommand)]
enum Command {
    /// Principal eigenpair at one tilt.
    Eigen(WithConfig),
    /// Eigenvalue over a tilt grid.
    Zscan {
        #[command(flatten)]
        cfg: WithConfig,
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        zmin: f64,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        zmax: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Maximum over the tilt.
    Maximize(WithConfig),
    /// Dirichlet eigenvalues on growing windows.
    Dirichlet {
        #[command(flatten)]
        cfg: WithConfig,
        /// Half widths in periods; defaults to the scan values or 1,2,4,8,16.
        #[arg(long, value_delimiter = ',')]
        half_widths: Vec<f64>,
    },
    /// Block decomposition and block eigenvalues.
    Blocks(WithConfig),
    /// Concavity along the coupling path to `scan.coupling1`.
    Concavity(WithConfig),
    /// Diffusion, vanishing-viscosity or frequency limit scans.
    Limits {
        #[command(flatten)]
        cfg: WithConfig,
        #[arg(long, value_enum)]
        kind: LimitKind,
    },
    /// Explicit upper bounds.
    Bounds(WithConfig),
    /// Minimum of the Rayleigh quotient (self-adjoint specs).
    Rayleigh {
        #[command(flatten)]
        cfg: WithConfig,
        /// Replace the coupling by its symmetric part first.
        #[arg(long)]
        symmetrize: bool,
    },
    /// Karlin scan over the `decomposition` section.
    Karlin(WithConfig),
    /// Eigenvalue derivative along `scan.direction_field`.
    Derivative(WithConfig),
    /// Optimal permutation-valued mutation field.
    OptimizeMutation {
        #[command(flatten)]
        cfg: WithConfig,
        /// Single-cell local search instead of enumeration.
        #[arg(long)]
        local_search: bool,
    },
    /// Rearrangement comparison.
    Rearrange(WithConfig),
    /// Run the acceptance suite on the bundled corpus.
    VerifyAll {
        #[command(flatten)]
        common: Common,
        /// Run only this criterion.
        #[arg(long)]
        criterion: Option<usize>,
    },
}

enum Failure {
    Core(Error),
    Acceptance(usize),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::Schema(_) => "SCHEMA_ERROR",
        e if e.is_input_error() => "VALIDATION_ERROR",
        _ => "NUMERICAL_ERROR",
    }
}

/// Report files of one run.
struct Output {
    command: String,
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Output {
    fn new(command: &str, common: &Common) -> Result<Self, Failure> {
        if let Some(d) = &common.out {
            fs::create_dir_all(d)?;
        }
        Ok(Output { command: command.into(), dir: common.out.clone(), files: Vec::new() })
    }

    fn json(&mut self, result: impl Serialize) -> Result<(), Failure> {
        let record = json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "manifest": MANIFEST,
            "result": serde_json::to_value(result).map_err(|e| Failure::Io(e.to_string()))?,
        });
        let text = serde_json::to_string_pretty(&record).map_err(|e| Failure::Io(e.to_string()))? + "\n";
        match &self.dir {
            Some(d) => {
                let name = format!("{}.json", self.command);
                fs::write(d.join(&name), text)?;
                self.files.push(name);
            }
            None => print!("{text}"),
        }
        Ok(())
    }

    fn csv(&mut self, suffix: &str, text: &str) -> Result<(), Failure> {
        if let Some(d) = &self.dir {
            let name = format!("{}{suffix}.csv", self.command);
            fs::write(d.join(&name), text)?;
            self.files.push(name);
        }
        Ok(())
    }

    fn manifest(&self, config: Option<&str>, options: &Common, extra: Value, started: Instant) -> Result<(), Failure> {
        let Some(d) = &self.dir else { return Ok(()) };
        let m = json!({
            "schema_version": SCHEMA_VERSION,
            "config": config,
            "command": self.command,
            "options": options,
            "extra": extra,
            "output_directory": d,
            "files": self.files,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        });
        fs::write(d.join(MANIFEST), serde_json::to_string_pretty(&m).map_err(|e| Failure::Io(e.to_string()))? + "\n")?;
        Ok(())
    }
}

fn read_config(src: &str, common: &Common) -> Result<Config, Failure> {
    let cfg = match src.strip_prefix("bundled:") {
        Some(name) => acceptance::bundled_config(name)?,
        None => {
            let p = Path::new(src);
            if !p.exists() {
                return Err(Error::Schema(format!("config file {src} not found")).into());
            }
            load_config(p)?
        }
    };
    Ok(cfg.with_grid(common.nt, common.nx))
}

fn eigen_options(cfg: &Config, common: &Common) -> EigenOptions {
    let mut o = cfg.eigen_options();
    if let Some(m) = common.substeps {
        o.substeps = m;
    }
    if let Some(t) = common.tol {
        o.tol = t;
    }
    o
}

fn scan_values(cfg: &Config, fallback: &[f64]) -> Vec<f64> {
    if cfg.scan.values.is_empty() {
        fallback.to_vec()
    } else {
        cfg.scan.values.clone()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn run_with_config(
    name: &str,
    wc: &WithConfig,
    body: impl FnOnce(&Config, &System, &EigenOptions, &mut Output) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = read_config(&wc.config, &wc.common)?;
    let sys = cfg.system()?;
    let opts = eigen_options(&cfg, &wc.common);
    let mut out = Output::new(name, &wc.common)?;
    body(&cfg, &sys, &opts, &mut out)?;
    out.manifest(Some(&wc.config), &wc.common, json!({ "numerics": opts }), started)
}

fn scan_output(out: &mut Output, table: &ScanTable, report: impl Serialize) -> Result<(), Failure> {
    out.csv("", &table.to_csv())?;
    out.json(report)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eigen(wc) => run_with_config("eigen", &wc, |_, sys, opts, out| out.json(spectra::principal_eigenpair(sys, wc.common.z, opts)?)),
        Command::Zscan { cfg: wc, zmin, zmax, points } => run_with_config("zscan", &wc, |_, sys, opts, out| {
            let zs = linspace(zmin, zmax, points);
            let vals: Vec<(f64, f64)> = spectra::lambda_z_scan(sys, &zs, opts)?.iter().map(|r| (r.z, r.lambda)).collect();
            let table = ScanTable::new("z", &vals, None, None);
            scan_output(out, &table, &table)
        }),
        Command::Maximize(wc) => {
            run_with_config("maximize", &wc, |_, sys, opts, out| out.json(spectra::lambda_one(sys, &ZOptions::default(), opts)?))
        }
        Command::Dirichlet { cfg: wc, half_widths } => run_with_config("dirichlet", &wc, |cfg, sys, opts, out| {
            let rs = if half_widths.is_empty() { scan_values(cfg, &[1.0, 2.0, 4.0, 8.0, 16.0]) } else { half_widths.clone() };
            let vals = rs.iter().map(|r| Ok((*r, spectra::dirichlet_eigenvalue(sys, *r, opts)?.lambda))).collect::<Result<Vec<_>, Error>>()?;
            let table = ScanTable::new("R", &vals, None, None);
            scan_output(out, &table, &table)
        }),
        Command::Blocks(wc) => run_with_config("blocks", &wc, |_, sys, opts, out| {
            let bs = block_decompose(sys);
            let ext = if bs.count() > 1 { Some(spectra::reducible_extension(&sys.with_reducible(true), &ZOptions::default(), opts)?) } else { None };
            out.json(json!({ "structure": bs, "blocks": bs.blocks(), "extension": ext }))
        }),
        Command::Concavity(wc) => run_with_config("concavity", &wc, |cfg, sys, opts, out| {
            let l1 = cfg.path_endpoint()?.ok_or_else(|| Error::Schema("scan.coupling1 missing".into()))?;
            let sys1 = sys.with_coupling(l1);
            sys1.validate()?;
            let grid = scan_values(cfg, &linspace(0.0, 1.0, 11));
            let rep = analysis::concavity_in_l(sys, &sys1, &grid, wc.common.z, opts)?;
            scan_output(out, &rep.table, &rep)
        }),
        Command::Limits { cfg: wc, kind } => run_with_config("limits", &wc, |cfg, sys, opts, out| {
            let tol = cfg.scan.tolerance;
            let table = match kind {
                LimitKind::Diffusion => analysis::diffusion_scan(sys, &scan_values(cfg, &[1.0, 10.0, 100.0, 1000.0]), tol, opts)?,
                LimitKind::Vanishing => analysis::vanishing_scan(sys, &scan_values(cfg, &[1.0, 0.1, 0.01]), tol, opts)?,
                LimitKind::Frequency => {
                    let dir = match cfg.scan.direction.as_deref() {
                        Some("to_zero") => FrequencyLimit::ToZero,
                        Some("to_infinity") | None => FrequencyLimit::ToInfinity,
                        Some(other) => return Err(Error::Schema(format!("scan.direction must be to_zero or to_infinity, got {other}")).into()),
                    };
                    let fallback: &[f64] = if dir == FrequencyLimit::ToZero { &[1.0, 0.1, 0.01] } else { &[1.0, 10.0, 100.0] };
                    analysis::frequency_scan(sys, &scan_values(cfg, fallback), dir, tol, opts)?
                }
            };
            scan_output(out, &table, &table)
        }),
        Command::Bounds(wc) => run_with_config("bounds", &wc, |_, sys, opts, out| out.json(analysis::bounds_report(sys, wc.common.z, opts)?)),
        Command::Rayleigh { cfg: wc, symmetrize } => run_with_config("rayleigh", &wc, |_, sys, _, out| {
            let target = if symmetrize { analysis::symmetrized(sys) } else { sys.clone() };
            out.json(json!({ "symmetrized": symmetrize, "rayleigh": analysis::variational_rayleigh(&target)? }))
        }),
        Command::Karlin(wc) => run_with_config("karlin", &wc, |cfg, sys, opts, out| {
            let dec = cfg.decomposition()?.ok_or_else(|| Error::Schema("decomposition section missing".into()))?;
            let grid = scan_values(cfg, &linspace(0.1, 1.0, 10));
            let rep = optimize::karlin_scan(sys, &dec, &grid, opts)?;
            scan_output(out, &rep.table, &rep)
        }),
        Command::Derivative(wc) => run_with_config("derivative", &wc, |cfg, sys, opts, out| {
            let dl = cfg.direction_field()?.ok_or_else(|| Error::Schema("scan.direction_field missing".into()))?;
            let d = optimize::eigen_derivative(sys, wc.common.z, &dl, opts)?;
            out.json(json!({ "z": wc.common.z, "derivative": d }))
        }),
        Command::OptimizeMutation { cfg: wc, local_search } => run_with_config("optimize-mutation", &wc, |cfg, sys, opts, out| {
            let (tmpl, obj) = cfg.mutation_template()?.ok_or_else(|| Error::Schema("mutation section missing".into()))?;
            let oo = OptimizeOptions { z: wc.common.z, seed: wc.common.seed.unwrap_or(0), local_search, ..Default::default() };
            out.json(optimize::optimize_mutation(sys, &tmpl, obj, &oo, opts)?)
        }),
        Command::Rearrange(wc) => run_with_config("rearrange", &wc, |_, sys, opts, out| out.json(optimize::rearrange(sys, opts)?)),
        Command::VerifyAll { common, criterion } => verify_all(&common, criterion),
    }
}

fn verify_all(common: &Common, only: Option<usize>) -> Result<(), Failure> {
    let started = Instant::now();
    let ov = Overrides { nx: common.nx, nt: common.nt, substeps: common.substeps, tol: common.tol, seed: common.seed };
    let ids: Vec<usize> = match only {
        Some(id) if (1..=CRITERIA).contains(&id) => vec![id],
        Some(id) => return Err(Error::Schema(format!("criterion must be in 1..={CRITERIA}, got {id}")).into()),
        None => (1..=CRITERIA).collect(),
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = acceptance::run_criterion(id, &ov);
        eprintln!("{}", o.line());
        outcomes.push(o);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let mut out = Output::new("verify-all", common)?;
    let mut csv = String::from("criterion,title,verdict,seconds\n");
    for o in &outcomes {
        csv.push_str(&format!("AC{:02},{},{},{}\n", o.id, o.title, if o.passed { "PASS" } else { "FAIL" }, o.seconds));
    }
    out.csv("", &csv)?;
    // timings stay out of the JSON record so reruns compare byte for byte
    let table: Vec<Value> = outcomes
        .iter()
        .map(|o| json!({ "id": o.id, "title": o.title, "passed": o.passed, "checks": o.checks, "error": o.error }))
        .collect();
    out.json(json!({ "criteria": table, "failed": failed }))?;
    if let Some(d) = &common.out {
        let mut script = String::from("#!/bin/sh\n# Re-run each acceptance criterion on its own.\nset -e\n");
        for o in &outcomes {
            script.push_str(&format!("coopeig verify-all --criterion {} --out \"${{1:-.}}/AC{:02}\"\n", o.id, o.id));
        }
        fs::write(d.join("reproduce.sh"), script)?;
        for (name, text) in acceptance::BUNDLED {
            fs::create_dir_all(d.join("configs"))?;
            fs::write(d.join("configs").join(format!("{name}.toml")), text)?;
        }
        out.files.push("reproduce.sh".into());
    }
    out.manifest(None, common, json!({ "criterion": only }), started)?;
    if failed > 0 {
        Err(Failure::Acceptance(failed))
    } else {
        Ok(())
    }
}

fn failure_record(code: &str, category: &str, message: &str) {
    let rec = json!({ "schema_version": SCHEMA_VERSION, "error": { "code": code, "category": category, "message": message } });
    eprintln!("{rec}");
}

fn jobs(cli: &Cli) -> Option<usize> {
    match &cli.command {
        Command::Eigen(w) | Command::Maximize(w) | Command::Blocks(w) | Command::Concavity(w) | Command::Bounds(w) => w.common.jobs,
        Command::Karlin(w) | Command::Derivative(w) | Command::Rearrange(w) => w.common.jobs,
        Command::Zscan { cfg, .. } | Command::Dirichlet { cfg, .. } | Command::Limits { cfg, .. } => cfg.common.jobs,
        Command::Rayleigh { cfg, .. } | Command::OptimizeMutation { cfg, .. } => cfg.common.jobs,
        Command::VerifyAll { common, .. } => common.jobs,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = jobs(&cli) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            failure_record(e.code(), category(&e), &e.to_string());
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
        Err(Failure::Acceptance(n)) => {
            failure_record("ACCEPTANCE_FAILURE", "ACCEPTANCE", &format!("{n} criteria failed"));
            ExitCode::from(4)
        }
        Err(Failure::Io(m)) => {
            failure_record("IO_ERROR", "SCHEMA_ERROR", &m);
            ExitCode::from(2)
        }
    }
}
