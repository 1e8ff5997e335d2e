//! Run configuration, result files and SVG charts.
//!
//! Configs are JSON with a `schema_version` field. Angles in config and
//! report files are degrees; trajectory logs are radians.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cable::{CableGeometry, CompliancePolicy, JOINT_LIMIT_DEG};
use crate::environment::{DEFAULT_MU, DEFAULT_PEG_COUNT, DEFAULT_Y_LINE, PEG_RADIUS};
use crate::gait::GaitParams;
use crate::harness::{
    Aggregate, ExperimentKind, HarnessError, Setup, Stat, SweepResult, TraceRecord, TrialSpec, FLAT_SWEEP_G,
    GAIT_SWEEP_G, GAIT_SWEEP_SHAPES, GAIT_SWEEP_SPACING, N_INITIAL_CONDITIONS, SPACINGS, SPACING_SWEEP_G,
};
use crate::kinematics::RobotConfig;
use crate::metrics::TRAVERSE_TIMEOUT_CYCLES;
use crate::solver::SolverParams;

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 12] = [
    "label",
    "G",
    "spacing_m",
    "ic_index",
    "success",
    "failure_mode",
    "cycles_to_traverse",
    "displacement_per_cycle_m",
    "speed_bl_per_cycle",
    "work_J",
    "cot",
    "reorientation_deg",
];

pub const AGGREGATES_HEADER: [&str; 23] = [
    "group",
    "G",
    "spacing_m",
    "amp_h_deg",
    "xi_h",
    "wavelength_m",
    "trials",
    "successes",
    "traverse_probability",
    "displacement_per_cycle_m_mean",
    "displacement_per_cycle_m_std",
    "speed_bl_per_cycle_mean",
    "speed_bl_per_cycle_std",
    "cot_mean",
    "cot_std",
    "work_J_mean",
    "work_J_std",
    "cycles_to_traverse_mean",
    "cycles_to_traverse_std",
    "cycles_to_traverse_n",
    "reorientation_deg_mean",
    "reorientation_deg_std",
    "reorientation_deg_n",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("config value out of range: {0}")]
    Range(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("no {wanted} chart for a {found} experiment")]
    MismatchedExperiment { wanted: &'static str, found: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

/// Gait in file units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    pub amp_h_deg: f64,
    pub xi_h: f64,
    pub amp_v_deg: f64,
    pub xi_v: f64,
    /// Temporal frequency (cycles/s).
    pub omega: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig::from(&GaitParams::default())
    }
}

impl From<&GaitParams> for GaitConfig {
    fn from(g: &GaitParams) -> Self {
        Self {
            amp_h_deg: g.amp_h.to_degrees(),
            xi_h: g.xi_h,
            amp_v_deg: g.amp_v.to_degrees(),
            xi_v: g.xi_v,
            omega: g.omega,
        }
    }
}

impl GaitConfig {
    pub fn params(&self) -> GaitParams {
        GaitParams::new(self.amp_h_deg.to_radians(), self.xi_h, self.amp_v_deg.to_radians(), self.xi_v, self.omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CableConfig {
    pub l1: f64,
    pub l2: f64,
    /// Slack coefficient (m/rad).
    pub l0: f64,
    pub alpha_limit_deg: f64,
}

impl Default for CableConfig {
    fn default() -> Self {
        let c = CableGeometry::default();
        Self { l1: c.l1, l2: c.l2, l0: c.l0, alpha_limit_deg: JOINT_LIMIT_DEG }
    }
}

impl CableConfig {
    pub fn geometry(&self) -> CableGeometry {
        CableGeometry { l1: self.l1, l2: self.l2, l0: self.l0, alpha_limit: self.alpha_limit_deg.to_radians() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceConfig {
    /// G values to run; defaults depend on the experiment.
    pub g: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub mu: f64,
    pub peg_count: usize,
    pub peg_radius: f64,
    /// y of the peg row on the board (m).
    pub y_line: f64,
    pub spacings: Vec<f64>,
    pub n_initial_conditions: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            peg_count: DEFAULT_PEG_COUNT,
            peg_radius: PEG_RADIUS,
            y_line: DEFAULT_Y_LINE,
            spacings: SPACINGS.to_vec(),
            n_initial_conditions: N_INITIAL_CONDITIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSweepConfig {
    /// (A_H in degrees, xi_H) pairs.
    pub shapes: Vec<(f64, f64)>,
    pub spacing: f64,
}

impl Default for GaitSweepConfig {
    fn default() -> Self {
        Self { shapes: GAIT_SWEEP_SHAPES.to_vec(), spacing: GAIT_SWEEP_SPACING }
    }
}

/// The trial run by the `run` command and the `single` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleConfig {
    pub g: f64,
    /// Peg spacing; open field when absent.
    pub spacing: Option<f64>,
    pub ic_index: usize,
    pub max_cycles: usize,
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self { g: 1.0, spacing: None, ic_index: 0, max_cycles: TRAVERSE_TIMEOUT_CYCLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub gait: GaitConfig,
    #[serde(default)]
    pub cable: CableConfig,
    #[serde(default)]
    pub compliance: ComplianceConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub gait_sweep: GaitSweepConfig,
    #[serde(default)]
    pub single: SingleConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        let mut c = Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            output_dir: default_output_dir(),
            seed: 0,
            trace: false,
            robot: RobotConfig::default(),
            gait: GaitConfig::default(),
            cable: CableConfig::default(),
            compliance: ComplianceConfig::default(),
            environment: EnvironmentConfig::default(),
            solver: SolverParams::default(),
            gait_sweep: GaitSweepConfig::default(),
            single: SingleConfig::default(),
        };
        c.resolve_defaults();
        c
    }

    fn resolve_defaults(&mut self) {
        if self.compliance.g.is_none() {
            self.compliance.g = Some(match self.experiment {
                ExperimentKind::FlatSweep => FLAT_SWEEP_G.to_vec(),
                ExperimentKind::SpacingSweep => SPACING_SWEEP_G.to_vec(),
                ExperimentKind::GaitSweep => GAIT_SWEEP_G.to_vec(),
                ExperimentKind::Single => vec![self.single.g],
            });
        }
    }

    pub fn g_grid(&self) -> &[f64] {
        self.compliance.g.as_deref().unwrap_or(&[])
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let range = |m: String| Err(ConfigError::Range(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version { found: self.schema_version });
        }
        let g_max = CompliancePolicy::MAX_G;
        let gs = self.g_grid();
        if gs.is_empty() {
            return range("compliance.g must not be empty".into());
        }
        for &g in gs.iter().chain([self.single.g].iter()) {
            if !(0.0..=g_max).contains(&g) {
                return range(format!("G = {g} outside [0, {g_max}]"));
            }
        }
        self.robot.validate().map_err(ConfigError::Range)?;
        self.solver.validate().map_err(ConfigError::Range)?;
        let cable = self.cable.geometry();
        cable.validate().map_err(|e| ConfigError::Range(e.to_string()))?;
        self.gait.params().validate(cable.alpha_limit).map_err(|e| ConfigError::Range(e.to_string()))?;
        for (a, xi) in &self.gait_sweep.shapes {
            let g = GaitParams { amp_h: a.to_radians(), xi_h: *xi, ..self.gait.params() };
            g.validate(cable.alpha_limit).map_err(|e| ConfigError::Range(format!("gait_sweep.shapes: {e}")))?;
        }
        let env = &self.environment;
        if !(env.mu > 0.0) {
            return range("environment.mu must be positive".into());
        }
        if env.peg_count < 2 || !(env.peg_radius > 0.0) {
            return range("environment needs at least two pegs of positive radius".into());
        }
        if env.n_initial_conditions < 1 {
            return range("environment.n_initial_conditions must be at least 1".into());
        }
        let extra = [self.gait_sweep.spacing];
        for &d in env.spacings.iter().chain(extra.iter()).chain(self.single.spacing.iter()) {
            if !(d > 2.0 * env.peg_radius) {
                return range(format!("spacing {d} m must exceed the peg diameter"));
            }
        }
        if self.single.max_cycles < 1 {
            return range("single.max_cycles must be at least 1".into());
        }
        Ok(())
    }

    pub fn setup(&self) -> Setup {
        Setup {
            robot: self.robot.clone(),
            cable: self.cable.geometry(),
            gait: self.gait.params(),
            solver: self.solver,
            mu: self.environment.mu,
            peg_count: self.environment.peg_count,
            peg_radius: self.environment.peg_radius,
            y_line: self.environment.y_line,
            seed: self.seed,
            trace: self.trace,
        }
    }

    /// Trials of the configured experiment.
    pub fn trial_specs(&self) -> Result<Vec<TrialSpec>, HarnessError> {
        let setup = self.setup();
        let n_ic = self.environment.n_initial_conditions;
        match self.experiment {
            ExperimentKind::FlatSweep => Ok(setup.flat_sweep(self.g_grid())),
            ExperimentKind::SpacingSweep => setup.spacing_sweep(&self.environment.spacings, self.g_grid(), n_ic),
            ExperimentKind::GaitSweep => setup.gait_sweep(&self.gait_sweep.shapes, self.gait_sweep.spacing, self.g_grid(), n_ic),
            ExperimentKind::Single => Ok(vec![self.single_spec()?]),
        }
    }

    /// The trial described by the `single` section.
    pub fn single_spec(&self) -> Result<TrialSpec, HarnessError> {
        let setup = self.setup();
        let s = &self.single;
        let mut spec = match s.spacing {
            None => setup.flat_sweep(&[s.g]).remove(0),
            Some(d) => {
                let n_ic = self.environment.n_initial_conditions.max(s.ic_index + 1);
                setup
                    .spacing_sweep(&[d], &[s.g], n_ic)?
                    .into_iter()
                    .nth(s.ic_index)
                    .ok_or_else(|| HarnessError::Config("single.ic_index out of range".into()))?
            }
        };
        spec.max_cycles = s.max_cycles;
        spec.label = format!("single-{}", spec.label);
        spec.group = spec.label.clone();
        spec.trace = true;
        Ok(spec)
    }

    /// Canonical JSON with every default written out.
    pub fn echo(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Schema {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.resolve_defaults();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, Box<dyn std::error::Error + Send + Sync>> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    Ok(parse_config(&text)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_cols(s: &Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [s.mean.to_string(), s.std.to_string()],
        None => [String::new(), String::new()],
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })
}

/// Write results, aggregates, trajectories and the config echo into `dir`.
pub fn write_results(sweep: &SweepResult, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IoError::Csv { path: p, source }
    };
    let mut w = csv_writer(&path)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err(&path))?;
    for r in &sweep.rows {
        w.write_record([
            r.label.clone(),
            r.g.to_string(),
            opt(r.spacing),
            r.ic_index.map(|k| k.to_string()).unwrap_or_default(),
            r.success.to_string(),
            r.failure_mode.as_str().to_string(),
            opt(r.cycles_to_traverse),
            opt(r.displacement_per_cycle),
            opt(r.speed_bl_per_cycle),
            r.work_total.to_string(),
            opt(r.cot),
            opt(r.reorientation),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(fs_err(&path))?;
    written.push(path);

    let path = dir.join("aggregates.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(AGGREGATES_HEADER).map_err(csv_err(&path))?;
    for a in &sweep.aggregates {
        let mut rec = vec![
            a.group.clone(),
            a.g.to_string(),
            opt(a.spacing),
            a.amp_h_deg.to_string(),
            a.xi_h.to_string(),
            opt(a.wavelength),
            a.trials.to_string(),
            a.successes.to_string(),
            opt(a.traverse_probability),
        ];
        for s in [&a.displacement_per_cycle, &a.speed_bl_per_cycle, &a.cot, &a.work] {
            rec.extend(stat_cols(s));
        }
        rec.extend(stat_cols(&a.cycles_to_traverse));
        rec.push(a.cycles_to_traverse.as_ref().map(|s| s.n).unwrap_or(0).to_string());
        rec.extend(stat_cols(&a.reorientation));
        rec.push(a.reorientation.as_ref().map(|s| s.n).unwrap_or(0).to_string());
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(fs_err(&path))?;
    written.push(path);

    for (label, trace) in &sweep.traces {
        let path = dir.join(format!("trajectory-{label}.jsonl"));
        fs::write(&path, trajectory_jsonl(label, trace)).map_err(fs_err(&path))?;
        written.push(path);
    }

    let path = dir.join("config.echo");
    fs::write(&path, config.echo()).map_err(fs_err(&path))?;
    written.push(path);
    Ok(written)
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    label: &'a str,
    units: TraceUnits,
    steps: usize,
}

#[derive(Serialize)]
struct TraceUnits {
    t: &'static str,
    base: &'static str,
    alpha: &'static str,
    slip_total: &'static str,
    work_increment: &'static str,
}

/// One header line followed by one JSON record per step.
pub fn trajectory_jsonl(label: &str, trace: &[TraceRecord]) -> String {
    let header = TraceHeader {
        label,
        units: TraceUnits { t: "s", base: "x m, y m, theta rad", alpha: "rad", slip_total: "m", work_increment: "J" },
        steps: trace.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Read `aggregates.csv` back.
pub fn read_aggregates(path: &Path) -> Result<Vec<Aggregate>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
    let bad = |m: String| IoError::Parse { path: path.to_path_buf(), message: m };
    let headers = r.headers().map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?.clone();
    if headers.iter().ne(AGGREGATES_HEADER.iter().copied()) {
        return Err(bad("unexpected aggregates header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
        let f = |i: usize| -> Result<Option<f64>, IoError> {
            let s = &rec[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?} in column {}", AGGREGATES_HEADER[i])))
        };
        let req = |i: usize| f(i)?.ok_or_else(|| bad(format!("missing {}", AGGREGATES_HEADER[i])));
        let stat = |i: usize, n: usize| -> Result<Option<Stat>, IoError> {
            Ok(match (f(i)?, f(i + 1)?) {
                (Some(mean), Some(std)) => Some(Stat { mean, std, n }),
                _ => None,
            })
        };
        let trials = req(6)? as usize;
        out.push(Aggregate {
            group: rec[0].to_string(),
            g: req(1)?,
            spacing: f(2)?,
            amp_h_deg: req(3)?,
            xi_h: req(4)?,
            wavelength: f(5)?,
            trials,
            successes: req(7)? as usize,
            traverse_probability: f(8)?,
            displacement_per_cycle: stat(9, trials)?,
            speed_bl_per_cycle: stat(11, trials)?,
            cot: stat(13, trials)?,
            work: stat(15, trials)?,
            cycles_to_traverse: stat(17, req(19)? as usize)?,
            reorientation: stat(20, req(22)? as usize)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- charts

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#c0392b", "#2471a3", "#229954", "#7d3c98"];

fn n(v: f64) -> String {
    format!("{v:.2}")
}

/// Rounded axis range with a little headroom.
fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let (lo, hi) = if (hi - lo).abs() < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Axes {
    x: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64, range: (f64, f64)) -> f64 {
        H - BOTTOM - (y - range.0) / (range.1 - range.0) * (H - TOP - BOTTOM)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, n(W / 2.0), escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(s: &mut String, xlabel: &str, ylabel: &str, color: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        n(x0),
        n(y0),
        n(x0),
        n(y1),
        n(x1),
        n(y1)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, n((x0 + x1) / 2.0), n(H - 18.0), escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" fill="{color}" transform="rotate(-90 18 {})">{}</text>"#,
        n((y0 + y1) / 2.0),
        n((y0 + y1) / 2.0),
        escape(ylabel)
    );
}

fn x_ticks(s: &mut String, ax: &Axes, ticks: &[(f64, String)]) {
    for (x, label) in ticks {
        let px = ax.px(*x);
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, n(px), n(H - BOTTOM), n(H - BOTTOM + 5.0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, n(px), n(H - BOTTOM + 18.0), escape(label));
    }
}

fn y_ticks(s: &mut String, ax: &Axes, range: (f64, f64), right: bool, color: &str) {
    let xa = if right { W - RIGHT } else { LEFT };
    if right {
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, n(xa), n(TOP), n(H - BOTTOM));
    }
    for k in 0..=4 {
        let v = range.0 + (range.1 - range.0) * k as f64 / 4.0;
        let py = ax.py(v, range);
        let (x2, tx, anchor) = if right { (xa + 5.0, xa + 8.0, "start") } else { (xa - 5.0, xa - 8.0, "end") };
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>"#, n(xa), n(py), n(x2));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="{anchor}" fill="{color}">{}</text>"#, n(tx), n(py + 4.0), format_tick(v));
    }
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, entries: &[(String, &str)]) {
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * k as f64;
        let x = W - RIGHT - 110.0;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, n(x), n(y - 9.0));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, n(x + 14.0), n(y), escape(label));
    }
}

/// Polyline with markers and optional error bars.
fn series(s: &mut String, ax: &Axes, range: (f64, f64), pts: &[(f64, f64, f64)], color: &str) {
    let path: Vec<String> = pts.iter().map(|(x, y, _)| format!("{},{}", n(ax.px(*x)), n(ax.py(*y, range)))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
    for (x, y, e) in pts {
        let (px, py) = (ax.px(*x), ax.py(*y, range));
        if *e > 0.0 {
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="{color}"/>"#,
                n(px),
                n(ax.py(y - e, range)),
                n(ax.py(y + e, range))
            );
        }
        let _ = writeln!(s, r#"<circle class="point" cx="{}" cy="{}" r="4" fill="{color}"/>"#, n(px), n(py));
    }
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Speed and cost of transport against G on two y axes.
pub fn fig5(aggs: &[Aggregate]) -> String {
    let mut rows: Vec<&Aggregate> = aggs.iter().collect();
    rows.sort_by(|a, b| a.g.total_cmp(&b.g));
    let speed: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|a| a.displacement_per_cycle.as_ref().map(|s| (a.g, s.mean, s.std)))
        .collect();
    let cot: Vec<(f64, f64, f64)> = rows.iter().filter_map(|a| a.cot.as_ref().map(|s| (a.g, s.mean, s.std))).collect();
    let xs = bounds(rows.iter().map(|a| &a.g));
    let ax = Axes { x: nice_range(xs.0, xs.1) };
    let r1 = nice_range(0.0, bounds(speed.iter().map(|p| &p.1)).1);
    let r2 = nice_range(0.0, bounds(cot.iter().map(|p| &p.1)).1);
    let mut s = svg_open("Flat-ground speed and cost of transport");
    frame(&mut s, "generalized compliance G", "displacement (m/cycle)", PALETTE[0]);
    let _ = writeln!(
        s,
        r#"<text x="{0}" y="{1}" text-anchor="middle" fill="{2}" transform="rotate(90 {0} {1})">cost of transport</text>"#,
        n(W - 18.0),
        n((TOP + H - BOTTOM) / 2.0),
        PALETTE[1]
    );
    x_ticks(&mut s, &ax, &rows.iter().map(|a| (a.g, format!("{:.2}", a.g))).collect::<Vec<_>>());
    y_ticks(&mut s, &ax, r1, false, PALETTE[0]);
    y_ticks(&mut s, &ax, r2, true, PALETTE[1]);
    series(&mut s, &ax, r1, &speed, PALETTE[0]);
    series(&mut s, &ax, r2, &cot, PALETTE[1]);
    legend(&mut s, &[("speed".into(), PALETTE[0]), ("cost of transport".into(), PALETTE[1])]);
    s.push_str("</svg>\n");
    s
}

fn distinct_g(aggs: &[Aggregate]) -> Vec<f64> {
    let mut gs: Vec<f64> = aggs.iter().map(|a| a.g).collect();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    gs
}

/// Traverse probability against spacing over displayed wavelength, one
/// series per G.
pub fn fig6c(aggs: &[Aggregate]) -> String {
    let gs = distinct_g(aggs);
    let point = |a: &Aggregate| match (a.spacing, a.wavelength, a.traverse_probability) {
        (Some(d), Some(l), Some(p)) => Some((d / l, p, 0.0)),
        _ => None,
    };
    let xs = bounds(aggs.iter().filter_map(point).map(|p| p.0).collect::<Vec<_>>().iter());
    let ax = Axes { x: nice_range(xs.0, xs.1) };
    let r = (0.0, 1.0);
    let mut s = svg_open("Traverse probability");
    frame(&mut s, "obstacle spacing / wavelength", "traverse probability", "black");
    let mut ticks: Vec<(f64, String)> = aggs.iter().filter_map(point).map(|p| (p.0, format!("{:.2}", p.0))).collect();
    ticks.sort_by(|a, b| a.0.total_cmp(&b.0));
    ticks.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9);
    x_ticks(&mut s, &ax, &ticks);
    y_ticks(&mut s, &ax, r, false, "black");
    let mut entries = Vec::new();
    for (k, g) in gs.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64, f64)> = aggs.iter().filter(|a| a.g == *g).filter_map(point).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series(&mut s, &ax, r, &pts, color);
        entries.push((format!("G = {g:.2}"), color));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per category, one bar per G.
fn grouped_bars(title: &str, ylabel: &str, cats: &[(String, Vec<(f64, Option<(f64, f64)>)>)], fixed_max: Option<f64>) -> String {
    let gs: Vec<f64> = {
        let mut v: Vec<f64> = cats.iter().flat_map(|c| c.1.iter().map(|b| b.0)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let top = fixed_max.unwrap_or_else(|| {
        cats.iter().flat_map(|c| c.1.iter().filter_map(|b| b.1.map(|(m, e)| m + e))).fold(0.0, f64::max)
    });
    let r = if fixed_max.is_some() { (0.0, top) } else { (0.0, if top > 0.0 { top * 1.1 } else { 1.0 }) };
    let ax = Axes { x: (0.0, cats.len().max(1) as f64) };
    let mut s = svg_open(title);
    frame(&mut s, "", ylabel, "black");
    y_ticks(&mut s, &ax, r, false, "black");
    let slot = (W - LEFT - RIGHT) / cats.len().max(1) as f64;
    let bw = slot * 0.7 / gs.len().max(1) as f64;
    for (ci, (label, bars)) in cats.iter().enumerate() {
        let x0 = LEFT + slot * ci as f64 + slot * 0.15;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, n(LEFT + slot * (ci as f64 + 0.5)), n(H - BOTTOM + 18.0), escape(label));
        for (g, val) in bars {
            let k = gs.iter().position(|x| x == g).unwrap_or(0);
            let color = PALETTE[k % PALETTE.len()];
            let x = x0 + bw * k as f64;
            match val {
                Some((m, e)) => {
                    let y = ax.py(*m, r);
                    let _ = writeln!(
                        s,
                        r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                        n(x),
                        n(y),
                        n(bw * 0.9),
                        n(H - BOTTOM - y)
                    );
                    if *e > 0.0 {
                        let cx = x + bw * 0.45;
                        let _ = writeln!(
                            s,
                            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#,
                            n(cx),
                            n(ax.py((m - e).max(r.0), r)),
                            n(ax.py((m + e).min(r.1.max(m + e)), r))
                        );
                    }
                }
                None => {
                    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">n/a</text>"#, n(x + bw * 0.45), n(H - BOTTOM - 4.0));
                }
            }
        }
    }
    let entries: Vec<(String, &str)> = gs.iter().enumerate().map(|(k, g)| (format!("G = {g:.2}"), PALETTE[k % PALETTE.len()])).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Pool the successful-trial statistic of several groups sharing one G.
fn pooled(stats: &[&Stat]) -> Option<(f64, f64)> {
    let total: usize = stats.iter().map(|s| s.n).sum();
    if total == 0 {
        return None;
    }
    let mean = stats.iter().map(|s| s.mean * s.n as f64).sum::<f64>() / total as f64;
    if total == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = stats
        .iter()
        .map(|s| (s.n as f64 - 1.0) * s.std * s.std + s.n as f64 * (s.mean - mean).powi(2))
        .sum();
    Some((mean, (ss / (total as f64 - 1.0)).sqrt()))
}

fn per_g_bars(aggs: &[Aggregate], pick: fn(&Aggregate) -> &Option<Stat>) -> Vec<(String, Vec<(f64, Option<(f64, f64)>)>)> {
    let gs = distinct_g(aggs);
    let bars = gs
        .iter()
        .map(|g| {
            let stats: Vec<&Stat> = aggs.iter().filter(|a| a.g == *g).filter_map(|a| pick(a).as_ref()).collect();
            (*g, pooled(&stats))
        })
        .collect();
    vec![("all spacings".to_string(), bars)]
}

/// Mean cycles to traverse over successful trials, per G.
pub fn fig6e(aggs: &[Aggregate]) -> String {
    grouped_bars("Cycles to traverse (successful trials)", "cycles", &per_g_bars(aggs, |a| &a.cycles_to_traverse), None)
}

/// Mean reorientation over successful trials, per G.
pub fn fig6f(aggs: &[Aggregate]) -> String {
    grouped_bars("Reorientation (successful trials)", "reorientation (deg)", &per_g_bars(aggs, |a| &a.reorientation), None)
}

/// Traverse probability per gait shape and G.
pub fn fig6d(aggs: &[Aggregate]) -> String {
    let mut shapes: Vec<(f64, f64, Option<f64>)> = aggs.iter().map(|a| (a.amp_h_deg, a.xi_h, a.wavelength)).collect();
    shapes.sort_by(|a, b| b.0.total_cmp(&a.0));
    shapes.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    let cats: Vec<(String, Vec<(f64, Option<(f64, f64)>)>)> = shapes
        .iter()
        .map(|(amp, xi, lambda)| {
            let label = match lambda {
                Some(l) => format!("{amp:.1} deg, xi {xi:.2} (lambda {:.0} cm)", l * 100.0),
                None => format!("{amp:.1} deg, xi {xi:.2}"),
            };
            let bars = aggs
                .iter()
                .filter(|a| a.amp_h_deg == *amp && a.xi_h == *xi)
                .map(|a| (a.g, a.traverse_probability.map(|p| (p, 0.0))))
                .collect();
            (label, bars)
        })
        .collect();
    grouped_bars("Traverse probability by gait", "traverse probability", &cats, Some(1.0))
}

/// Charts for an experiment from its aggregates.
pub fn plots_for(experiment: ExperimentKind, aggs: &[Aggregate]) -> Result<Vec<(&'static str, String)>, IoError> {
    let mismatch = |wanted| IoError::MismatchedExperiment { wanted, found: experiment.as_str().to_string() };
    if aggs.is_empty() {
        return Err(IoError::MismatchedExperiment { wanted: "any", found: "empty".into() });
    }
    match experiment {
        ExperimentKind::FlatSweep => Ok(vec![("fig5.svg", fig5(aggs))]),
        ExperimentKind::SpacingSweep => {
            Ok(vec![("fig6c.svg", fig6c(aggs)), ("fig6e.svg", fig6e(aggs)), ("fig6f.svg", fig6f(aggs))])
        }
        ExperimentKind::GaitSweep => Ok(vec![("fig6d.svg", fig6d(aggs))]),
        ExperimentKind::Single => Err(mismatch("sweep")),
    }
}

/// Write the charts matching the sweep's experiment into `dir`.
pub fn emit_plots(sweep: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let charts = plots_for(sweep.experiment, &sweep.aggregates)?;
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut out = Vec::new();
    for (name, svg) in charts {
        let path = dir.join(name);
        fs::write(&path, svg).map_err(fs_err(&path))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(r#"{"schema_version": 1, "experiment": "flat_sweep"}"#).unwrap();
        assert_eq!(cfg.g_grid(), &FLAT_SWEEP_G);
        assert_eq!(cfg.gait.amp_h_deg, 75.0);
        assert_eq!(cfg.robot, RobotConfig::default());
        let echo = cfg.echo();
        assert!(echo.contains("\"amp_v_deg\": 25.0"));
        assert!(echo.contains("\"contact_threshold\": 0.005"));
    }

    #[test]
    fn negative_compliance_is_range_error() {
        let e = parse_config(r#"{"schema_version": 1, "experiment": "flat_sweep", "compliance": {"g": [-0.1]}}"#);
        assert!(matches!(e, Err(ConfigError::Range(_))));
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "{\n  \"schema_version\": 1,\n  \"experiment\": \"flat_sweep\",\n  \"colour\": 3\n}";
        match parse_config(text) {
            Err(ConfigError::Schema { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected schema error, got {other:?}"),
        }
        let nested = r#"{"schema_version": 1, "experiment": "flat_sweep", "gait": {"amp_h": 75}}"#;
        assert!(matches!(parse_config(nested), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        assert!(matches!(
            parse_config(r#"{"schema_version": 2, "experiment": "single"}"#),
            Err(ConfigError::Version { found: 2 })
        ));
    }

    #[test]
    fn empty_sweep_has_no_chart() {
        assert!(matches!(plots_for(ExperimentKind::FlatSweep, &[]), Err(IoError::MismatchedExperiment { .. })));
    }
}
