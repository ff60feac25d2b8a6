//! Command-line front end: run configuration, the five commands, and their file formats.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::gains::{self, GainBound, GainKind, Provenance, StabilityCertificate, Verdict};
use crate::linalg::{self, CMat, CVec};
use crate::modal_core::{self, ModalSystem, SpectrumPartition, StateSpaceSystem};
use crate::plants::{self, BoundaryLiftData, SourceProfile};
use crate::sim_oracle;
use crate::synthesis::{self, ObserverController, SynthesisOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_INFINITE_UNSTABLE: i32 = 3;
pub const EXIT_NO_CERTIFICATE: i32 = 4;
pub const EXIT_SYNTHESIS: i32 = 5;
pub const EXIT_DIMENSION: i32 = 6;

#[derive(Parser, Debug)]
#[command(name = "modalstab", version, about = "Stabilization analysis, synthesis and certification for modal PDE plants")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub margin_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub pbh_tol: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub skip_fraction: Option<f64>,
    #[arg(long = "n-max", global = true)]
    pub n_max: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Spectrum partition and modewise stabilizability/detectability.
    Analyze,
    /// Observer-based controller plus small-gain certificate.
    Synthesize,
    /// Re-certify an existing controller file against the plant.
    Certify,
    /// Closed-loop simulation with an existing controller file.
    Simulate,
    /// Certificate data over a list of truncation orders.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Heat,
    HeatBoundary,
    Wave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(rename = "type")]
    pub kind: PlantKind,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub f: SourceProfile,
    #[serde(rename = "N_max", default = "default_n_max")]
    pub n_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_grid: Option<Vec<f64>>,
}

fn default_n_max() -> usize {
    64
}
fn default_margin() -> f64 {
    -1e-9
}
fn default_margin_fraction() -> f64 {
    0.5
}
fn default_pbh_tol() -> f64 {
    synthesis::PBH_TOL
}
fn default_max_halvings() -> u32 {
    60
}
fn default_horizon() -> f64 {
    10.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_skip() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSpec,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_margin_fraction")]
    pub margin_fraction: f64,
    #[serde(default = "default_pbh_tol")]
    pub pbh_tol: f64,
    #[serde(default = "default_max_halvings")]
    pub max_halvings: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_skip")]
    pub skip_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
    fn schema(message: impl Into<String>) -> Self {
        Self::new(EXIT_SCHEMA, message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(exit_code(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_IO, e.to_string())
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfiniteUnstablePart { .. } | Error::MarginViolation { .. } | Error::TailUnstable(_) => EXIT_INFINITE_UNSTABLE,
        Error::CertificateNotFound(_) | Error::NotReachable { .. } => EXIT_NO_CERTIFICATE,
        Error::NotStabilizable(_) | Error::NotDetectable(_) | Error::RiccatiDivergence(_) | Error::NotHurwitz { .. } => EXIT_SYNTHESIS,
        Error::DimensionMismatch(_) | Error::UnstableModeDiscarded { .. } => EXIT_DIMENSION,
        Error::InvalidArgument(_) | Error::NoAdmissibleParameter(_) | Error::KernelResonance { .. } => EXIT_SCHEMA,
        _ => EXIT_IO,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::schema(format!("config: {e}")))?;
        Ok(cfg)
    }

    fn apply_overrides(&mut self, cli: &Cli) {
        let pairs = [
            (&mut self.margin, cli.margin),
            (&mut self.margin_fraction, cli.margin_fraction),
            (&mut self.pbh_tol, cli.pbh_tol),
            (&mut self.horizon, cli.horizon),
            (&mut self.dt, cli.dt),
            (&mut self.skip_fraction, cli.skip_fraction),
        ];
        for (slot, v) in pairs {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(n) = cli.n_max {
            self.plant.n_max = n;
        }
    }

    /// Fills grid defaults so the printed configuration is complete.
    fn resolve(&mut self) {
        if self.plant.kind == PlantKind::HeatBoundary && self.plant.a_grid.is_none() {
            self.plant.a_grid = Some(plants::default_lift_grid(self.plant.b));
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = &self.plant;
        let bad = |m: String| Err(CliError::schema(m));
        if !p.b.is_finite() {
            return bad(format!("plant.b must be finite, got {}", p.b));
        }
        match (p.kind, p.kappa) {
            (PlantKind::Wave, None) => return bad("plant.kappa is required for wave plants".into()),
            (PlantKind::Wave, Some(k)) if !k.is_finite() => return bad("plant.kappa must be finite".into()),
            (PlantKind::Heat | PlantKind::HeatBoundary, Some(_)) => return bad("plant.kappa is only valid for wave plants".into()),
            _ => {}
        }
        if p.a_grid.is_some() && p.kind != PlantKind::HeatBoundary {
            return bad("plant.a_grid is only valid for heat_boundary plants".into());
        }
        if let Some(g) = &p.a_grid {
            if g.is_empty() || g.iter().any(|a| !(*a > p.b) || !a.is_finite()) {
                return bad("plant.a_grid must be a nonempty list of finite values above b".into());
            }
        }
        if p.n_max < 1 {
            return bad("plant.N_max must be at least 1".into());
        }
        p.f.validate().map_err(|e| CliError::schema(format!("plant.f: {e}")))?;
        if !(self.margin < 0.0) {
            return bad(format!("margin must be negative, got {}", self.margin));
        }
        if !(self.margin_fraction > 0.0 && self.margin_fraction < 1.0) {
            return bad(format!("margin_fraction must lie in (0, 1), got {}", self.margin_fraction));
        }
        if !(self.pbh_tol > 0.0 && self.pbh_tol < 1.0) {
            return bad(format!("pbh_tol must lie in (0, 1), got {}", self.pbh_tol));
        }
        if let Some(g) = &self.beta_grid {
            if g.is_empty() || g.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
                return bad("beta_grid must be a nonempty list of positive values".into());
            }
        }
        if let Some(l) = &self.n_list {
            if l.is_empty() {
                return bad("N_list must not be empty".into());
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.dt > 0.0 && self.dt <= self.horizon) {
            return bad(format!("need 0 < dt <= horizon, got dt = {}, horizon = {}", self.dt, self.horizon));
        }
        if !(0.0..1.0).contains(&self.skip_fraction) {
            return bad(format!("skip_fraction must lie in [0, 1), got {}", self.skip_fraction));
        }
        if let Some(x0) = &self.x0 {
            if x0.iter().any(|v| !v.is_finite()) {
                return bad("x0 entries must be finite".into());
            }
        }
        Ok(())
    }

    fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            margin: self.margin,
            margin_fraction: self.margin_fraction,
            max_halvings: self.max_halvings,
            pbh_tol: self.pbh_tol,
            beta_grid: self.beta_grid.clone(),
        }
    }
}

/// Builds the modal plant; boundary-input plants also return their lift data.
pub fn build_plant(spec: &PlantSpec) -> crate::Result<(ModalSystem, Option<BoundaryLiftData>)> {
    match spec.kind {
        PlantKind::Heat => Ok((plants::build_heat(spec.b, &spec.f, spec.n_max)?, None)),
        PlantKind::Wave => Ok((plants::build_wave(spec.b, spec.kappa.unwrap_or(0.0), &spec.f, spec.n_max)?, None)),
        PlantKind::HeatBoundary => {
            let grid = spec.a_grid.clone().unwrap_or_else(|| plants::default_lift_grid(spec.b));
            let a = plants::search_lift_parameter(spec.b, &spec.f, &grid, spec.n_max)?;
            let (sys, data) = plants::build_heat_boundary(spec.b, &spec.f, a, spec.n_max)?;
            Ok((sys, Some(data)))
        }
    }
}

// ---------------------------------------------------------------- JSON output

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = "  ".repeat(indent + 1);
    let close = "  ".repeat(indent);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                out.push_str(&n.to_string());
            } else {
                out.push_str(&fmt_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(|i| !i.is_array() && !i.is_object()) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad);
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{close}]");
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                let _ = write!(out, "{pad}{}: ", Value::String(k.clone()));
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{close}}}");
        }
    }
}

/// Pretty JSON with every float printed to 17 significant digits; non-finite floats become `null`.
pub fn to_json_string(v: &Value) -> String {
    let mut s = String::new();
    write_value(&mut s, v, 0);
    s.push('\n');
    s
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn complex_json(z: Complex64) -> Value {
    json!({"re": num(z.re), "im": num(z.im)})
}

/// Row-major arrays; entries are plain numbers when the matrix is real to `1e-10`.
pub fn matrix_json(m: &CMat) -> Value {
    let real = linalg::imag_residue(m) < 1e-10;
    Value::Array(
        (0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| if real { num(m[(i, j)].re) } else { complex_json(m[(i, j)]) }).collect())).collect(),
    )
}

fn entry_from_json(v: &Value) -> Option<Complex64> {
    match v {
        Value::Number(n) => n.as_f64().map(|x| Complex64::new(x, 0.0)),
        Value::Object(o) if o.len() == 2 => Some(Complex64::new(o.get("re")?.as_f64()?, o.get("im")?.as_f64()?)),
        _ => None,
    }
}

/// Reads a matrix written by [`matrix_json`]; `rows`/`cols` are needed for empty dimensions.
pub fn matrix_from_json(v: &Value, name: &str, rows: usize, cols: usize) -> CliResult<CMat> {
    let bad = || CliError::schema(format!("{name}: expected a {rows}x{cols} array of numbers or {{re, im}} objects"));
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.len() != rows {
        return Err(bad());
    }
    let mut m = CMat::zeros(rows, cols);
    for (i, row) in arr.iter().enumerate() {
        let row = row.as_array().ok_or_else(bad)?;
        if row.len() != cols {
            return Err(bad());
        }
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = entry_from_json(e).ok_or_else(bad)?;
        }
    }
    Ok(m)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

// ---------------------------------------------------------------- file formats

fn tail_json(t: &modal_core::TailModel) -> Value {
    json!({
        "decay_alpha": num(t.decay_alpha),
        "input_norm": num(t.input_norm),
        "output_graph_norm": num(t.output_graph_norm),
        "amplitude_a": num(t.amplitude_a),
    })
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Certified => "Certified",
        Verdict::Failed => "Failed",
    }
}

/// Flat certificate document.
pub fn certificate_json(c: &StabilityCertificate, n_u: usize, n_r: usize) -> Value {
    json!({
        "beta": num(c.beta),
        "product": num(c.product),
        "gain_R": num(c.gain_r.value),
        "gain_tail": num(c.gain_tail.value),
        "is_R": num(c.is_r.value),
        "is_tail": num(c.is_tail.value),
        "N": c.truncation_n,
        "n_u": n_u,
        "n_r": n_r,
        "verdict": verdict_str(c.verdict),
        "diagnostics": c.diagnostics,
    })
}

/// A controller as read back from disk.
#[derive(Debug, Clone)]
pub struct ControllerFile {
    pub system: StateSpaceSystem,
    pub k_u: Option<CMat>,
    pub l_u: Option<CMat>,
    pub n_u: Option<usize>,
    pub certificate_beta: Option<f64>,
}

pub fn controller_json(ctrl: &ObserverController, cert: &StabilityCertificate, epsilon: f64) -> Value {
    json!({
        "format": "observer_controller",
        "dims": {"n_u": ctrl.n_u, "n_r": ctrl.n_r, "m": ctrl.g.nrows(), "p": ctrl.f.ncols()},
        "E": matrix_json(&ctrl.e),
        "F": matrix_json(&ctrl.f),
        "G": matrix_json(&ctrl.g),
        "K_u": matrix_json(&ctrl.k_u),
        "L_u": matrix_json(&ctrl.l_u),
        "design": {
            "feedback_abscissa": num(ctrl.feedback_abscissa),
            "observer_abscissa": num(ctrl.observer_abscissa),
            "feedback_riccati_residual": num(ctrl.feedback_residual),
            "observer_riccati_residual": num(ctrl.observer_residual),
            "certificate_beta": num(cert.beta),
            "epsilon": num(epsilon),
            "N": cert.truncation_n,
        },
    })
}

fn read_usize(o: &Map<String, Value>, key: &str) -> CliResult<usize> {
    o.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| CliError::schema(format!("controller dims.{key} missing or not a nonnegative integer")))
}

pub fn parse_controller(text: &str) -> CliResult<ControllerFile> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::schema(format!("controller file: {e}")))?;
    let o = v.as_object().ok_or_else(|| CliError::schema("controller file must be a JSON object"))?;
    let known = ["format", "dims", "E", "F", "G", "K_u", "L_u", "design"];
    if let Some(k) = o.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(CliError::schema(format!("controller file: unknown field {k}")));
    }
    let format = o.get("format").and_then(Value::as_str).unwrap_or("state_space");
    if format != "observer_controller" && format != "state_space" {
        return Err(CliError::schema(format!("controller file: unknown format {format}")));
    }
    let dims = o.get("dims").and_then(Value::as_object).ok_or_else(|| CliError::schema("controller dims missing"))?;
    let (m, p) = (read_usize(dims, "m")?, read_usize(dims, "p")?);
    let q = match (dims.get("n"), dims.get("n_u"), dims.get("n_r")) {
        (Some(n), _, _) => n.as_u64().ok_or_else(|| CliError::schema("dims.n must be an integer"))? as usize,
        _ => read_usize(dims, "n_u")? + read_usize(dims, "n_r")?,
    };
    let get = |key: &str| o.get(key).ok_or_else(|| CliError::schema(format!("controller file: {key} missing")));
    let e = matrix_from_json(get("E")?, "E", q, q)?;
    let f = matrix_from_json(get("F")?, "F", q, p)?;
    let g = matrix_from_json(get("G")?, "G", m, q)?;
    let system = StateSpaceSystem::strictly_proper(e, f, g).map_err(|e| CliError::schema(e.to_string()))?;
    let (mut k_u, mut l_u, mut n_u) = (None, None, None);
    if format == "observer_controller" {
        let nu = read_usize(dims, "n_u")?;
        k_u = Some(matrix_from_json(get("K_u")?, "K_u", m, nu)?);
        l_u = Some(matrix_from_json(get("L_u")?, "L_u", nu, p)?);
        n_u = Some(nu);
    }
    let certificate_beta = o.get("design").and_then(|d| d.get("certificate_beta")).and_then(Value::as_f64);
    Ok(ControllerFile { system, k_u, l_u, n_u, certificate_beta })
}

// ---------------------------------------------------------------- commands

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::schema("--config <path> is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    cfg.apply_overrides(cli);
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments, runs the command, prints errors, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_SCHEMA } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    if cli.print_config {
        let v = serde_json::to_value(&cfg).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        print!("{}", to_json_string(&v));
        return Ok(());
    }
    match cli.command {
        Command::Analyze => cmd_analyze(&cfg, &cli.out),
        Command::Synthesize => cmd_synthesize(&cfg, &cli.out),
        Command::Certify => cmd_certify(&cfg, &cli.out),
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Sweep => cmd_sweep(&cfg, &cli.out),
    }
}

fn write_json_file(dir: &Path, name: &str, v: &Value) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, to_json_string(v).as_bytes())?;
    Ok(path)
}

fn lift_json(data: &BoundaryLiftData) -> Value {
    json!({
        "a": num(data.a),
        "h_at_0": num(data.h_at_0),
        "C_g1": num(data.c_g1),
        "kernel_mode": data.kernel_mode,
        "constraints": data.constraint_report.entries.iter().map(|e| json!({
            "description": e.description,
            "k": e.k,
            "value": num(e.value),
            "passed": e.passed,
        })).collect::<Vec<_>>(),
        "constraint_tolerance": num(data.constraint_report.tolerance),
    })
}

/// Analysis document: spectrum partition plus modewise Hautus verdicts.
pub fn analysis_report(cfg: &RunConfig) -> crate::Result<Value> {
    let (sys, lift) = build_plant(&cfg.plant)?;
    let part = modal_core::partition_spectrum(&sys, cfg.margin)?;
    let report = synthesis::check_modes(&sys, cfg.pbh_tol)?;
    let modes: Vec<Value> = report
        .blocks
        .iter()
        .map(|bc| {
            let blk = sys.block(bc.label).expect("reported block exists");
            json!({
                "label": bc.label,
                "eigenvalues": bc.eigenvalues.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
                "input_coefficients": matrix_json(&blk.input_row),
                "output_coefficients": matrix_json(&blk.output_col),
                "stabilizable": bc.stabilizable,
                "detectable": bc.detectable,
                "control_margin": num(bc.control_margin),
                "observe_margin": num(bc.observe_margin),
            })
        })
        .collect();
    let verdict = match (report.stabilizable, report.detectable) {
        (true, true) => "pass",
        (false, true) => "not-stabilizable",
        (true, false) => "not-detectable",
        (false, false) => "not-stabilizable-not-detectable",
    };
    let mut doc = json!({
        "plant": cfg.plant.kind,
        "finite_unstable_part": true,
        "stabilizable": report.stabilizable,
        "detectable": report.detectable,
        "verdict": verdict,
        "offending_modes": {"stabilizable": report.offending_stabilizable, "detectable": report.offending_detectable},
        "unstable_modes": part.unstable_indices,
        "unstable_dim": part.unstable_dim,
        "retained_stable_modes": part.retained_stable_indices.len(),
        "margin_omega": num(part.margin_omega),
        "tail": tail_json(&part.tail),
        "modes": modes,
    });
    if let Some(data) = lift {
        doc["lift"] = lift_json(&data);
    }
    Ok(doc)
}

fn cmd_analyze(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let doc = analysis_report(cfg)?;
    let path = write_json_file(out, "analysis.json", &doc)?;
    println!(
        "verdict: {} ({} unstable modes) -> {}",
        doc["verdict"].as_str().unwrap_or("?"),
        doc["unstable_modes"].as_array().map_or(0, Vec::len),
        path.display()
    );
    Ok(())
}

fn cmd_synthesize(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (sys, _) = build_plant(&cfg.plant)?;
    let res = synthesis::synthesize(&sys, &cfg.synthesis_options());
    let outcome = match res {
        Ok(o) => o,
        Err(Error::CertificateNotFound(msg)) => {
            return Err(CliError::new(EXIT_NO_CERTIFICATE, format!("certificate not found: {msg}")));
        }
        Err(e) => return Err(e.into()),
    };
    let ctrl = &outcome.controller;
    let mut doc = controller_json(ctrl, &outcome.certificate, outcome.epsilon);
    doc["design"]["search"] = json!(outcome.certificate.diagnostics);
    let text = to_json_string(&doc);
    // the certificate on disk is exactly what `certify` derives from the controller file
    let file = parse_controller(&text)?;
    let (cert, n_u, n_r) = certify_controller(cfg, &sys, &outcome.partition, &file)?;
    if cert.verdict != Verdict::Certified {
        return Err(CliError::new(EXIT_NO_CERTIFICATE, format!("exported controller does not re-certify: {}", cert.diagnostics.join("; "))));
    }
    write_atomic(&out.join("controller.json"), text.as_bytes())?;
    let path = write_json_file(out, "certificate.json", &certificate_json(&cert, n_u, n_r))?;
    println!("{}: N = {}, beta = {:e}, product = {:e} -> {}", verdict_str(cert.verdict), cert.truncation_n, cert.beta, cert.product, path.display());
    Ok(())
}

fn controller_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.controller_file.clone().unwrap_or_else(|| out.join("controller.json"))
}

fn load_controller(cfg: &RunConfig, out: &Path) -> CliResult<ControllerFile> {
    let path = controller_path(cfg, out);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::new(EXIT_IO, format!("cannot read controller {}: {e}", path.display())))?;
    parse_controller(&text)
}

fn check_io_dims(sys: &ModalSystem, ctrl: &StateSpaceSystem) -> CliResult<()> {
    if ctrl.input_dim() != sys.output_dim || ctrl.output_dim() != sys.input_dim {
        return Err(CliError::new(
            EXIT_DIMENSION,
            format!(
                "controller maps {} outputs to {} inputs; plant has {} outputs and {} inputs",
                ctrl.input_dim(),
                ctrl.output_dim(),
                sys.output_dim,
                sys.input_dim
            ),
        ));
    }
    Ok(())
}

fn failed_certificate(n: usize, reason: String) -> StabilityCertificate {
    let inf = |kind, sm, prov| GainBound::new(0.0, f64::INFINITY, kind, sm, prov);
    StabilityCertificate {
        beta: 0.0,
        gain_r: inf(GainKind::IO, (0, 1), Provenance::LemmaStrong),
        is_r: inf(GainKind::IS, (0, 1), Provenance::LemmaStrong),
        gain_tail: inf(GainKind::IO, (1, 0), Provenance::LemmaWeak),
        is_tail: inf(GainKind::IS, (1, 1), Provenance::LemmaWeak),
        product: f64::INFINITY,
        truncation_n: n,
        verdict: Verdict::Failed,
        diagnostics: vec![reason],
    }
}

/// Re-derives the certificate of an arbitrary controller file from scratch.
pub fn certify_controller(
    cfg: &RunConfig,
    sys: &ModalSystem,
    part: &SpectrumPartition,
    file: &ControllerFile,
) -> CliResult<(StabilityCertificate, usize, usize)> {
    check_io_dims(sys, &file.system)?;
    let q = file.system.state_dim();
    let mut dim = 0;
    let n = (0..=sys.blocks().len())
        .find(|&n| {
            if n > 0 {
                dim += sys.blocks()[n - 1].dim();
            }
            dim == q
        })
        .ok_or_else(|| CliError::new(EXIT_DIMENSION, format!("no truncation of the plant has state dimension {q}")))?;
    let (truncated, tail) = match modal_core::truncate(sys, n) {
        Ok(t) => t,
        Err(Error::UnstableModeDiscarded { label }) => {
            let c = failed_certificate(n, format!("controller dimension {q} leaves unstable block {label} unobserved"));
            return Ok((c, 0, q));
        }
        Err(e) => return Err(e.into()),
    };
    let n_u = part.unstable_dim;
    let mut diag = Vec::new();
    let observer_form = match (&file.k_u, &file.l_u, file.n_u) {
        (Some(k), Some(l), Some(nu)) if nu == n_u => synthesis::assemble_controller(&truncated, n_u, k, l).ok().filter(|(e, f, g)| {
            let scale = 1.0 + e.norm() + f.norm() + g.norm();
            (e - &file.system.a).norm() + (f - &file.system.b).norm() + (g - &file.system.c).norm() <= 1e-12 * scale
        }),
        _ => None,
    };
    let r = if observer_form.is_some() {
        let (k, l) = (file.k_u.as_ref().expect("checked"), file.l_u.as_ref().expect("checked"));
        diag.push("observer form recognized: reduced R-system".to_string());
        let a_u = truncated.a.view((0, 0), (n_u, n_u)).into_owned();
        synthesis::reduced_r_system(&a_u, &truncated.b.rows(0, n_u).into_owned(), &truncated.c.columns(0, n_u).into_owned(), k, l)
    } else {
        diag.push("general controller: full R-system on the truncated plant".to_string());
        synthesis::general_r_system(&truncated, &file.system).and_then(|r| {
            let (s, _) = linalg::spectral_abscissa_of(&r.a)?;
            if r.state_dim() > 0 && !(s < 0.0) {
                return Err(Error::NotHurwitz { abscissa: s });
            }
            Ok(r)
        })
    };
    let (n_u_out, n_r_out) = if observer_form.is_some() { (n_u, q - n_u) } else { (0, q) };
    let mut cert = match r {
        Ok(r) => match gains::search_certificate_on(&r, &tail, n, cfg.margin_fraction, cfg.beta_grid.as_deref()) {
            Ok(c) => c,
            Err(e @ (Error::NotHurwitz { .. } | Error::LyapunovSolveFailed(_) | Error::CertificateNotFound(_))) => failed_certificate(n, e.to_string()),
            Err(e) => return Err(e.into()),
        },
        Err(e @ Error::NotHurwitz { .. }) => failed_certificate(n, format!("closed loop through the retained plant is not Hurwitz: {e}")),
        Err(e) => return Err(e.into()),
    };
    diag.append(&mut cert.diagnostics);
    cert.diagnostics = diag;
    Ok((cert, n_u_out, n_r_out))
}

fn cmd_certify(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (sys, _) = build_plant(&cfg.plant)?;
    let part = modal_core::partition_spectrum(&sys, cfg.margin)?;
    let file = load_controller(cfg, out)?;
    let (cert, n_u, n_r) = certify_controller(cfg, &sys, &part, &file)?;
    let path = write_json_file(out, "certificate.json", &certificate_json(&cert, n_u, n_r))?;
    println!("{}: N = {}, product = {:e} -> {}", verdict_str(cert.verdict), cert.truncation_n, cert.product, path.display());
    if cert.verdict == Verdict::Failed {
        return Err(CliError::new(EXIT_NO_CERTIFICATE, cert.diagnostics.join("; ")));
    }
    Ok(())
}

/// Simulation summary and trajectory for the full resolved plant under a controller file.
pub fn simulate_report(cfg: &RunConfig, sys: &ModalSystem, file: &ControllerFile) -> CliResult<(Value, sim_oracle::Trajectory)> {
    check_io_dims(sys, &file.system)?;
    let plant = sys.dense_prefix(sys.blocks().len());
    let n = plant.state_dim();
    let x0 = match &cfg.x0 {
        Some(v) if v.len() != n => {
            return Err(CliError::new(EXIT_DIMENSION, format!("x0 has {} entries, plant has {n} states", v.len())));
        }
        Some(v) => CVec::from_iterator(n, v.iter().map(|x| linalg::re(*x))),
        None => CVec::from_element(n, linalg::ONE),
    };
    let w0 = CVec::zeros(file.system.state_dim());
    let traj = sim_oracle::simulate_closed_loop(&plant, &file.system, &x0, &w0, cfg.horizon, cfg.dt)?;
    let m = modal_core::close_loop_direct(&plant, &file.system)?;
    let (abscissa, witness) = sim_oracle::spectral_abscissa(&m)?;
    let rate = match sim_oracle::estimate_decay_rate(&traj, cfg.skip_fraction) {
        Ok(r) => num(r),
        Err(Error::DegenerateTrajectory) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "horizon": num(cfg.horizon),
        "dt": num(cfg.dt),
        "samples": traj.len(),
        "plant_dim": n,
        "controller_dim": file.system.state_dim(),
        "decay_rate": rate,
        "skip_fraction": num(cfg.skip_fraction),
        "spectral_abscissa": num(abscissa),
        "abscissa_eigenvalue": complex_json(witness),
        "certificate_beta": file.certificate_beta.map_or(Value::Null, num),
        "initial_state_norm": num(traj.states[0].norm()),
        "final_state_norm": num(traj.final_state().norm()),
    });
    Ok((summary, traj))
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (sys, _) = build_plant(&cfg.plant)?;
    let file = load_controller(cfg, out)?;
    let (summary, traj) = simulate_report(cfg, &sys, &file)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    write_atomic(&out.join("trajectory.csv"), &csv)?;
    let path = write_json_file(out, "simulation.json", &summary)?;
    println!(
        "decay rate {} vs spectral abscissa {} -> {}",
        summary["decay_rate"].as_f64().map_or("n/a".into(), |r| format!("{r:e}")),
        summary["spectral_abscissa"].as_f64().map_or("n/a".into(), |r| format!("{r:e}")),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub certificate: StabilityCertificate,
}

/// Certificates of the fixed observer gains over each truncation order in `ns`.
pub fn sweep_rows(cfg: &RunConfig, sys: &ModalSystem, ns: &[usize]) -> CliResult<Vec<SweepRow>> {
    let part = modal_core::partition_spectrum(sys, cfg.margin)?;
    let report = synthesis::check_modes(sys, cfg.pbh_tol)?;
    if !report.stabilizable {
        return Err(Error::NotStabilizable(report.offending_stabilizable).into());
    }
    if !report.detectable {
        return Err(Error::NotDetectable(report.offending_detectable).into());
    }
    let n_u_blocks = part.unstable_count();
    if let Some(bad) = ns.iter().find(|&&n| n < n_u_blocks || n > sys.blocks().len()) {
        return Err(CliError::schema(format!("N = {bad} outside the admissible range {n_u_blocks}..={}", sys.blocks().len())));
    }
    let (unstable, _) = modal_core::truncate(sys, n_u_blocks)?;
    let base = synthesis::synthesize_controller(&part, &unstable)?;
    let r = synthesis::controller_r_system(&base, &unstable)?;
    ns.par_iter()
        .map(|&n| {
            let (_, tail) = modal_core::truncate(sys, n)?;
            let certificate = gains::search_certificate_on(&r, &tail, n, cfg.margin_fraction, cfg.beta_grid.as_deref())?;
            Ok(SweepRow { n, certificate })
        })
        .collect::<crate::Result<Vec<_>>>()
        .map_err(CliError::from)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("N,beta,tail_gain,gain_R,product,verdict\n");
    for r in rows {
        let c = &r.certificate;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.n,
            fmt_float(c.beta),
            fmt_float(c.gain_tail.value),
            fmt_float(c.gain_r.value),
            fmt_float(c.product),
            verdict_str(c.verdict)
        );
    }
    s
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (sys, _) = build_plant(&cfg.plant)?;
    let ns: Vec<usize> = match &cfg.n_list {
        Some(l) => l.clone(),
        None => (sys.unstable_block_count().max(1)..=sys.blocks().len()).collect(),
    };
    let rows = sweep_rows(cfg, &sys, &ns)?;
    let path = out.join("sweep.csv");
    write_atomic(&path, sweep_csv(&rows).as_bytes())?;
    let first = rows.iter().find(|r| r.certificate.verdict == Verdict::Certified).map(|r| r.n);
    println!("{} rows, first certified N = {} -> {}", rows.len(), first.map_or("none".into(), |n| n.to_string()), path.display());
    Ok(())
}
