//! Experiment driver. Every command resolves its flags into a flat config,
//! runs, prints a JSON report, and — when `--out` is given — writes its data
//! files next to `<stem>.config.json` and `<stem>.report.json`. `replay`
//! re-runs a saved config.
//!
//! Exit codes: 0 pass, 2 statistical failure, 1 usage or runtime error.

pub mod spec;

use clap::{Args, CommandFactory, Parser, Subcommand};
use entropic_flow::cov::cov_mc_test;
use entropic_flow::dirichlet::{default_truncation, limit_checks, moment_checks, sample_circle, sample_path, BetaParam};
use entropic_flow::homeo::{brownian_increments, entropic_start, sde_step, summability_report, FourierFamily, SdeConfig};
use entropic_flow::ibp::ibp_mc_test;
use entropic_flow::path::Domain;
use entropic_flow::rng::{replicate, RngStream};
use entropic_flow::wasserstein::{report_from_paths, simulate_path, BasisFamily, WdExperiment};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA: u32 = 1;
pub const THREADS_ENV: &str = "ENTROPIC_FLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "entropic-flow", about = "Samplers and verification experiments for the entropic measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    /// Draw Dirichlet-process paths
    Sample(SampleArgs),
    /// Mean and variance of g(t) against t and t(1-t)/(1+beta)
    Moments(MomentsArgs),
    /// Small- and large-beta limit checks
    Limits(LimitsArgs),
    /// Monte Carlo check of the change-of-variable formula
    VerifyCov(VerifyCovArgs),
    /// Monte Carlo check of integration by parts
    VerifyIbp(VerifyIbpArgs),
    /// Simulate the Fourier-driven flow of circle homeomorphisms
    SimulateFlow(SimulateFlowArgs),
    /// Simulate the finite-dimensional Wasserstein diffusion
    SimulateWd(SimulateWdArgs),
    /// Re-run a saved config
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DomainArg {
    Interval,
    Circle,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Interval => Domain::Interval,
            DomainArg::Circle => Domain::Circle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write values at M cell midpoints instead of the jump list
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_enum, default_value_t = DomainArg::Interval)]
    pub domain: DomainArg,
    /// Stick-breaking truncation; default keeps remaining mass below 1e-8
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MomentsArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub times: Vec<f64>,
    /// Pass band in standard errors
    #[arg(long, default_value_t = 3.0)]
    pub k_se: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LimitsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,1,1000")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub z_max: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerifyCovArgs {
    #[arg(long)]
    pub beta: f64,
    /// identity | sine:a=A,j=J | circle-sine:a=A,j=J | logistic:c=C
    #[arg(long)]
    pub map: String,
    /// one | g_half | syl:x,… | zyl:cos:K | cyl:cos:K
    #[arg(long, default_value = "g_half")]
    pub test_fn: String,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DomainArg::Interval)]
    pub domain: DomainArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerifyIbpArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub u: String,
    #[arg(long)]
    pub v: String,
    /// poly:EXPR | poly:c0,c1,… | sin:k=K,a=A | bump:j=J
    #[arg(long)]
    pub phi: String,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateFlowArgs {
    #[arg(long, default_value_t = 1.5)]
    pub s: f64,
    #[arg(long, default_value_t = 9)]
    pub n_basis: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub drift: Switch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a CSV row every this many steps
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateWdArgs {
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    #[arg(long, default_value_t = 16)]
    pub n_basis: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.05)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ridge parameter; default 1e-6·tr(Φ)/n at every step
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Martingale increments are regressed over blocks of this many steps
    #[arg(long, default_value_t = 50)]
    pub block_steps: usize,
    /// Snapshot every this many steps in the per-path CSVs
    #[arg(long, default_value_t = 50)]
    pub every: usize,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, PartialEq)]
pub struct ReplayArgs {
    /// A `<stem>.config.json` written by an earlier run
    pub config: PathBuf,
    /// Override the output location
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<entropic_flow::Error> for Failure {
    fn from(e: entropic_flow::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

/// A completed run: the report body and whether every check passed.
struct Run {
    body: Value,
    pass: bool,
    csv: Vec<(PathBuf, Vec<u8>)>,
}

impl Command {
    fn out(&self) -> Option<&Path> {
        match self {
            Command::Sample(a) => a.out.as_deref(),
            Command::Moments(a) => a.out.as_deref(),
            Command::Limits(a) => a.out.as_deref(),
            Command::VerifyCov(a) => a.out.as_deref(),
            Command::VerifyIbp(a) => a.out.as_deref(),
            Command::SimulateFlow(a) => a.out.as_deref(),
            Command::SimulateWd(a) => a.out.as_deref(),
            Command::Replay(a) => a.out.as_deref(),
        }
    }

    fn set_out(&mut self, out: Option<PathBuf>) {
        match self {
            Command::Sample(a) => a.out = out,
            Command::Moments(a) => a.out = out,
            Command::Limits(a) => a.out = out,
            Command::VerifyCov(a) => a.out = out,
            Command::VerifyIbp(a) => a.out = out,
            Command::SimulateFlow(a) => a.out = out,
            Command::SimulateWd(a) => a.out = out,
            Command::Replay(a) => a.out = out,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Moments(_) => "moments",
            Command::Limits(_) => "limits",
            Command::VerifyCov(_) => "verify-cov",
            Command::VerifyIbp(_) => "verify-ibp",
            Command::SimulateFlow(_) => "simulate-flow",
            Command::SimulateWd(_) => "simulate-wd",
            Command::Replay(_) => "replay",
        }
    }

    /// Directory-valued `--out` (one file per path) rather than a file stem.
    fn out_is_dir(&self) -> bool {
        matches!(self, Command::SimulateWd(_))
    }
}

fn beta(b: f64) -> Outcome<BetaParam> {
    BetaParam::new(b).map_err(|e| Failure::Usage(e.to_string()))
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Outcome<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))
}

fn grid_header(lead: &[&str], m: usize) -> Vec<String> {
    lead.iter().map(|s| s.to_string()).chain((0..m).map(|j| format!("g{j}"))).collect()
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports are plain data")
}

fn run_sample(a: &SampleArgs) -> Outcome<Run> {
    let beta = beta(a.beta)?;
    if a.n == 0 || a.grid == Some(0) {
        return usage("--n and --grid must be positive");
    }
    let k = a.truncation.unwrap_or_else(|| default_truncation(beta, 1e-8));
    let paths = replicate(a.seed, 0, a.n, |r, _| match a.domain {
        DomainArg::Interval => (0.0, sample_path(beta, k, r)),
        DomainArg::Circle => {
            let c = sample_circle(beta, k, r);
            (c.shift(), c.path().clone())
        }
    });
    let (header, rows): (Vec<String>, Vec<Vec<String>>) = match a.grid {
        Some(m) => (
            grid_header(&["path", "shift"], m),
            paths
                .iter()
                .enumerate()
                .map(|(i, (shift, g))| {
                    let mut row = vec![i.to_string(), shift.to_string()];
                    row.extend((0..m).map(|j| g.eval((j as f64 + 0.5) / m as f64).expect("t in [0,1)").to_string()));
                    row
                })
                .collect(),
        ),
        None => (
            vec!["path".into(), "shift".into(), "location".into(), "height".into()],
            paths
                .iter()
                .enumerate()
                .flat_map(|(i, (shift, g))| g.jumps().map(move |(l, h)| vec![i.to_string(), shift.to_string(), l.to_string(), h.to_string()]).collect::<Vec<_>>())
                .collect(),
        ),
    };
    let jumps: usize = paths.iter().map(|(_, g)| g.len()).sum();
    let mid: Vec<f64> = paths.iter().map(|(_, g)| g.eval(0.5).expect("t in [0,1)")).collect();
    let body = json!({
        "truncation": k,
        "paths": a.n,
        "mean_jumps": jumps as f64 / a.n as f64,
        "mean_g_half": mid.iter().sum::<f64>() / a.n as f64,
    });
    let csv = match &a.out {
        Some(p) => vec![(p.clone(), csv_bytes(&header, rows)?)],
        None => Vec::new(),
    };
    Ok(Run { body, pass: true, csv })
}

fn run_moments(a: &MomentsArgs) -> Outcome<Run> {
    for &b in &a.beta {
        beta(b)?;
    }
    let rows = moment_checks(&a.beta, &a.times, a.n, a.seed, a.k_se)?;
    let pass = rows.iter().all(|r| r.pass);
    Ok(Run { body: json!({ "rows": rows }), pass, csv: Vec::new() })
}

fn run_limits(a: &LimitsArgs) -> Outcome<Run> {
    let rows = limit_checks(&a.beta, a.t, a.n, a.seed, a.z_max)?;
    let pass = rows.iter().all(|r| r.pass);
    Ok(Run { body: json!({ "rows": rows }), pass, csv: Vec::new() })
}

fn run_verify_cov(a: &VerifyCovArgs) -> Outcome<Run> {
    let h = spec::parse_map(&a.map).map_err(Failure::Usage)?;
    let u = spec::parse_cylinder(&a.test_fn).map_err(Failure::Usage)?;
    let rep = cov_mc_test(&u, h, beta(a.beta)?, a.domain.into(), a.n, a.seed)?;
    Ok(Run { pass: rep.pass, body: to_value(&rep), csv: Vec::new() })
}

fn run_verify_ibp(a: &VerifyIbpArgs) -> Outcome<Run> {
    let u = spec::parse_cylinder(&a.u).map_err(Failure::Usage)?;
    let v = spec::parse_cylinder(&a.v).map_err(Failure::Usage)?;
    let phi = spec::parse_field(&a.phi).map_err(Failure::Usage)?;
    let rep = ibp_mc_test(&u, &v, phi, beta(a.beta)?, a.n, a.seed)?;
    Ok(Run { pass: rep.pass, body: to_value(&rep), csv: Vec::new() })
}

fn run_simulate_flow(a: &SimulateFlowArgs) -> Outcome<Run> {
    let b = beta(a.beta)?;
    if a.grid == 0 || a.every == 0 {
        return usage("--grid and --every must be positive");
    }
    let family = FourierFamily::new(a.s, a.n_basis)?;
    let cfg = SdeConfig { dt: a.dt, drift: a.drift == Switch::On, beta: a.beta };
    let mut rng = RngStream::new(a.seed, 0).rng();
    let mut state = entropic_start(b, a.grid, &mut rng);
    let mut rows = Vec::new();
    let snap = |state: &entropic_flow::homeo::FlowState| {
        let mut row = vec![state.steps.to_string(), state.time.to_string()];
        row.extend(state.values.iter().map(|v| v.to_string()));
        row
    };
    rows.push(snap(&state));
    for step in 1..=a.steps {
        let dw = brownian_increments(family.len(), a.dt, &mut rng);
        sde_step(&mut state, &family, &cfg, &dw)?;
        if step % a.every == 0 || step == a.steps {
            rows.push(snap(&state));
        }
    }
    let body = json!({
        "steps": state.steps,
        "time": state.time,
        "violations": state.violations,
        "summability": summability_report(&family),
    });
    let csv = match &a.out {
        Some(p) => vec![(p.clone(), csv_bytes(&grid_header(&["step", "time"], a.grid), rows)?)],
        None => Vec::new(),
    };
    Ok(Run { body, pass: true, csv })
}

fn run_simulate_wd(a: &SimulateWdArgs) -> Outcome<Run> {
    beta(a.beta)?;
    if a.every == 0 {
        return usage("--every must be positive");
    }
    let exp = WdExperiment {
        beta: a.beta,
        grid: a.grid,
        n_basis: a.n_basis,
        dt: a.dt,
        horizon: a.horizon,
        paths: a.paths,
        seed: a.seed,
        lambda: a.lambda,
        block_steps: a.block_steps,
        ..Default::default()
    };
    if a.grid < 2 || a.n_basis == 0 || a.paths < 2 || !(a.dt > 0.0) || !(a.horizon >= 0.0) {
        return usage("simulate-wd needs --grid >= 2, --n-basis >= 1, --paths >= 2, --dt > 0, --horizon >= 0");
    }
    let basis = BasisFamily::sine(a.n_basis)?;
    let keep = a.out.is_some();
    let runs = replicate(exp.seed, 0, exp.paths, |r, _| {
        let mut rows = Vec::new();
        let res = simulate_path(&exp, &basis, r, |step, st| {
            if keep && (step % a.every == 0 || step == exp.steps()) {
                let mut row = vec![step.to_string(), st.time.to_string()];
                row.extend(st.values.iter().map(|v| v.to_string()));
                rows.push(row);
            }
        });
        res.map(|p| (p, rows))
    });
    let mut paths = Vec::with_capacity(runs.len());
    let mut csv = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        let (p, rows) = run?;
        if let Some(dir) = &a.out {
            csv.push((dir.join(format!("path_{i:05}.csv")), csv_bytes(&grid_header(&["step", "time"], a.grid), rows)?));
        }
        paths.push(p);
    }
    let rep = report_from_paths(&exp, &basis, &paths)?;
    let body = json!({
        "martingale_z": rep.martingales.iter().map(|m| m.z_intercept.abs().max(m.z_slope.abs())).collect::<Vec<_>>(),
        "mean_z": rep.martingales.iter().map(|m| m.z_mean).collect::<Vec<_>>(),
        "qv_ratio": rep.martingales.iter().map(|m| m.qv_ratio).collect::<Vec<_>>(),
        "stationarity_p": rep.stationarity_p_min,
        "violations": rep.violations,
        "clamps": rep.clamps,
        "detail": rep,
    });
    let pass = body["detail"]["pass_martingale"] == true && body["detail"]["pass_qv"] == true && body["detail"]["pass_stationarity"] == true;
    Ok(Run { body, pass, csv })
}

fn execute(cmd: &Command) -> Outcome<Run> {
    match cmd {
        Command::Sample(a) => run_sample(a),
        Command::Moments(a) => run_moments(a),
        Command::Limits(a) => run_limits(a),
        Command::VerifyCov(a) => run_verify_cov(a),
        Command::VerifyIbp(a) => run_verify_ibp(a),
        Command::SimulateFlow(a) => run_simulate_flow(a),
        Command::SimulateWd(a) => run_simulate_wd(a),
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    }
}

fn load_config(r: &ReplayArgs) -> Outcome<Command> {
    let text = fs::read_to_string(&r.config).map_err(|e| Failure::Usage(format!("{}: {e}", r.config.display())))?;
    let mut cmd: Command = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", r.config.display())))?;
    if r.out.is_some() {
        cmd.set_out(r.out.clone());
    }
    Ok(cmd)
}

/// `<stem>.config.json` and `<stem>.report.json` next to a file output, or
/// inside a directory output.
fn sidecars(cmd: &Command, out: &Path) -> (PathBuf, PathBuf) {
    if cmd.out_is_dir() {
        (out.join("config.json"), out.join("summary.json"))
    } else {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = out.parent().unwrap_or(Path::new(""));
        (dir.join(format!("{stem}.config.json")), dir.join(format!("{stem}.report.json")))
    }
}

// the output location is not part of a run's configuration, so a replay
// into another place writes identical bytes
fn config_value(cmd: &Command) -> Value {
    let mut cfg = cmd.clone();
    cfg.set_out(None);
    let mut cfg = to_value(&cfg);
    if let Value::Object(m) = &mut cfg {
        m.remove("out");
    }
    cfg
}

fn report(cmd: &Command, run: &Run) -> Value {
    let cfg = config_value(cmd);
    let mut obj = match &run.body {
        Value::Object(m) => m.clone(),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("result".into(), other.clone());
            m
        }
    };
    obj.insert("schema".into(), json!(SCHEMA));
    obj.insert("command".into(), json!(cmd.name()));
    obj.insert("config".into(), cfg);
    obj.insert("pass".into(), json!(run.pass));
    Value::Object(obj)
}

fn write_outputs(cmd: &Command, run: &Run, report: &Value) -> Outcome<()> {
    let Some(out) = cmd.out() else { return Ok(()) };
    if cmd.out_is_dir() {
        fs::create_dir_all(out)?;
    } else if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    for (path, bytes) in &run.csv {
        fs::write(path, bytes)?;
    }
    let (cfg_path, rep_path) = sidecars(cmd, out);
    fs::write(cfg_path, serde_json::to_string_pretty(&config_value(cmd)).expect("plain data") + "\n")?;
    let text = serde_json::to_string_pretty(report).expect("plain data") + "\n";
    // a report-only command writes its report at the requested path itself
    if run.csv.is_empty() && !cmd.out_is_dir() {
        fs::write(out, &text)?;
    }
    fs::write(rep_path, text)?;
    Ok(())
}

/// Flags of every command as JSON, printed with usage errors.
pub fn schema_dump() -> Value {
    let cli = Cli::command();
    let mut cmds = serde_json::Map::new();
    for sub in cli.get_subcommands() {
        let mut flags = serde_json::Map::new();
        for arg in sub.get_arguments() {
            let name = arg.get_long().map(|l| format!("--{l}")).unwrap_or_else(|| arg.get_id().to_string());
            let default: Vec<String> = arg.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect();
            flags.insert(
                name,
                json!({
                    "required": arg.is_required_set(),
                    "default": if default.is_empty() { Value::Null } else { json!(default.join(",")) },
                    "help": arg.get_help().map(|h| h.to_string()),
                }),
            );
        }
        cmds.insert(sub.get_name().to_string(), json!({ "about": sub.get_about().map(|a| a.to_string()), "flags": flags }));
    }
    json!({ "schema": SCHEMA, "commands": cmds, "env": { THREADS_ENV: "worker count (default: available parallelism)" } })
}

fn thread_pool() -> Outcome<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return usage(format!("{THREADS_ENV} must be a positive integer, got `{s}`")),
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Failure::Runtime(e.to_string()))
}

/// Run with explicit output streams; returns the exit code.
pub fn run_with<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            let _ = writeln!(stderr, "{}", serde_json::to_string_pretty(&schema_dump()).expect("plain data"));
            return 1;
        }
    };
    let result = (|| -> Outcome<bool> {
        let cmd = match &cli.command {
            Command::Replay(r) => load_config(r)?,
            c => c.clone(),
        };
        let pool = thread_pool()?;
        let run = pool.install(|| execute(&cmd))?;
        let rep = report(&cmd, &run);
        write_outputs(&cmd, &run, &rep)?;
        let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&rep).expect("plain data"));
        Ok(run.pass)
    })();
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "usage error: {m}");
            let _ = writeln!(stderr, "{}", serde_json::to_string_pretty(&schema_dump()).expect("plain data"));
            1
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            1
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
