//! Trials, heading calibration and the three experiment batteries.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cable::{lateral_interval, AngleInterval, CableGeometry, CompliancePolicy};
use crate::environment::{make_peg_row, EnvError, Environment};
use crate::gait::{displayed_wavelength, joint_commands, GaitParams};
use crate::kinematics::{BodyState, Pose2, RobotConfig};
use crate::metrics::{
    cost_of_transport, displacement_per_cycle, reorientation, FailureMode, TraverseMonitor, TrialResult,
    TRAVERSE_TIMEOUT_CYCLES,
};
use crate::solver::{solve_step, SolverError, SolverParams};

/// COM distance before the obstacle line at the start of a trial (m).
pub const STANDOFF: f64 = 0.9;
/// Open-field cycles used to measure the drift direction.
pub const CALIBRATION_CYCLES: usize = 3;
pub const FLAT_SWEEP_G: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
pub const SPACINGS: [f64; 5] = [0.60, 0.65, 0.70, 0.75, 0.80];
pub const SPACING_SWEEP_G: [f64; 3] = [0.0, 0.5, 1.0];
pub const GAIT_SWEEP_G: [f64; 2] = [0.0, 1.0];
pub const GAIT_SWEEP_SPACING: f64 = 0.70;
/// (A_H in degrees, xi_H) for the gait battery.
pub const GAIT_SWEEP_SHAPES: [(f64, f64); 3] = [(82.5, 1.1), (75.0, 1.0), (67.5, 0.9)];
pub const FLAT_CYCLES: usize = 2;
pub const N_INITIAL_CONDITIONS: usize = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FlatSweep,
    SpacingSweep,
    GaitSweep,
    Single,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::FlatSweep => "flat_sweep",
            ExperimentKind::SpacingSweep => "spacing_sweep",
            ExperimentKind::GaitSweep => "gait_sweep",
            ExperimentKind::Single => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub gait: GaitParams,
    pub g: f64,
    pub env: Environment,
    pub initial_pose: Pose2,
    /// Cycles to simulate; on a peg row the trial may end earlier.
    pub max_cycles: usize,
    pub solver: SolverParams,
    pub robot: RobotConfig,
    pub cable: CableGeometry,
    pub seed: u64,
    pub label: String,
    /// Aggregation key; trials sharing it differ only in initial condition.
    pub group: String,
    pub ic_index: Option<usize>,
    pub trace: bool,
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.max_cycles < 1 {
            return bad("max_cycles must be at least 1".into());
        }
        if !(0.0..=CompliancePolicy::MAX_G).contains(&self.g) {
            return bad(format!("G = {} outside [0, {}]", self.g, CompliancePolicy::MAX_G));
        }
        self.robot.validate().map_err(HarnessError::Config)?;
        self.cable.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.gait.validate(self.cable.alpha_limit).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.solver.validate().map_err(HarnessError::Config)?;
        if !(self.env.mu > 0.0) {
            return bad("friction coefficient must be positive".into());
        }
        Ok(())
    }
}

/// One step of a trajectory log; angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub phase: f64,
    pub base: [f64; 3],
    pub alpha: Vec<f64>,
    pub contacts: Vec<usize>,
    pub slip_total: f64,
    pub work_increment: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub trace: Vec<TraceRecord>,
    /// States at each completed cycle boundary, starting with the initial state.
    pub cycle_states: Vec<BodyState>,
    pub final_state: BodyState,
    pub max_kkt_residual: f64,
    pub steps: usize,
    pub error: Option<SolverError>,
}

/// Joint intervals for the lateral joints at a command, per-plane order.
pub fn joint_intervals(
    cable: &CableGeometry,
    policy: &CompliancePolicy,
    gait: &GaitParams,
    alpha_h: &[f64],
) -> Result<Vec<AngleInterval>, SolverError> {
    alpha_h
        .iter()
        .map(|&a| {
            lateral_interval(cable, policy, gait.amp_h.abs(), a).map_err(|e| SolverError::InvalidInput(e.to_string()))
        })
        .collect()
}

/// Initial state: commanded shape at t = 0 resting at `pose`.
pub fn initial_state(robot: &RobotConfig, gait: &GaitParams, pose: Pose2) -> BodyState {
    let cmd = joint_commands(gait, robot, 0.0);
    BodyState::new(robot, 0.0, pose, cmd.joint_angles(robot))
}

pub fn run_trial(spec: &TrialSpec) -> TrialOutcome {
    let robot = &spec.robot;
    let params = &spec.solver;
    let spc = params.steps_per_cycle;
    let period = spec.gait.period();
    let policy = CompliancePolicy::new(spec.g);
    let total_steps = spec.max_cycles * spc;

    let mut state = initial_state(robot, &spec.gait, spec.initial_pose);
    let mut monitor = TraverseMonitor::new(&spec.env, spc, spec.max_cycles);
    let mut cycle_states = vec![state.clone()];
    let mut cycle_work = vec![0.0];
    let mut trace = Vec::new();
    let mut work = 0.0;
    let mut slip_total = 0.0;
    let mut max_kkt: f64 = 0.0;
    let mut verdict = None;
    let mut error = None;
    let mut steps = 0;

    for s in 1..=total_steps {
        let t = s as f64 * period / spc as f64;
        let cmd = joint_commands(&spec.gait, robot, t);
        let step = joint_intervals(&spec.cable, &policy, &spec.gait, &cmd.alpha_h)
            .and_then(|iv| solve_step(robot, &state, &cmd, &iv, &spec.env, params));
        let sol = match step {
            Ok(sol) => sol,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        steps = s;
        work += sol.work_increment;
        *cycle_work.last_mut().unwrap() += sol.work_increment;
        slip_total += sol.slip_total();
        max_kkt = max_kkt.max(sol.kkt_residual);
        if spec.trace {
            let b = sol.new_state.base;
            trace.push(TraceRecord {
                t,
                phase: cmd.phase,
                base: [b.x, b.y, b.theta],
                alpha: sol.new_state.alpha.clone(),
                contacts: sol.new_state.contacts.clone(),
                slip_total: sol.slip_total(),
                work_increment: sol.work_increment,
                kkt_residual: sol.kkt_residual,
            });
        }
        state = sol.new_state;
        if s % spc == 0 {
            cycle_states.push(state.clone());
            cycle_work.push(0.0);
        }
        if let Some(m) = monitor.as_mut() {
            if let Some(v) = m.observe(s, &state) {
                verdict = Some(v);
                break;
            }
        }
    }

    let complete = cycle_states.len() - 1;
    let disp = displacement_per_cycle(&cycle_states, robot).ok();
    let cot = disp.and_then(|d| {
        let w: f64 = cycle_work[..complete].iter().sum();
        cost_of_transport(w, robot.mass_total, d * complete as f64).ok()
    });

    let (success, failure_mode, cycles_to_traverse) = match (&error, verdict, monitor.is_some()) {
        (Some(SolverError::Jammed { .. }), _, _) => (false, FailureMode::Jam, None),
        (Some(_), _, _) => (false, FailureMode::Solver, None),
        (None, Some(v), _) => (v.success, v.failure_mode, v.cycles_to_traverse),
        (None, None, true) => (false, FailureMode::Timeout, None),
        (None, None, false) => (false, FailureMode::None, None),
    };
    let mut headings = cycle_states.clone();
    if steps % spc != 0 || headings.len() == 1 {
        headings.push(state.clone());
    }
    let reo = if monitor.is_some() { reorientation(&headings).ok() } else { None };
    let spacing = spec.env.spacing();
    let result = TrialResult {
        label: spec.label.clone(),
        g: spec.g,
        spacing,
        ic_index: spec.ic_index,
        success,
        failure_mode,
        cycles_to_traverse,
        displacement_per_cycle: disp,
        speed_bl_per_cycle: disp.map(|d| d / robot.total_length),
        work_total: work,
        cot,
        reorientation: reo,
        slip_total,
        trace_ref: if spec.trace { format!("trajectory-{}.jsonl", spec.label) } else { String::new() },
    };
    TrialOutcome { result, trace, cycle_states, final_state: state, max_kkt_residual: max_kkt, steps, error }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Angle from the tail-to-head axis to the open-field COM drift, in (-pi, pi].
pub fn calibrate_heading(
    gait: &GaitParams,
    g: f64,
    robot: &RobotConfig,
    cable: &CableGeometry,
    solver: &SolverParams,
    mu: f64,
) -> Result<f64, HarnessError> {
    let spec = TrialSpec {
        gait: *gait,
        g,
        env: Environment::flat(mu),
        initial_pose: Pose2::new(0.0, 0.0, 0.0),
        max_cycles: CALIBRATION_CYCLES,
        solver: *solver,
        robot: robot.clone(),
        cable: *cable,
        seed: 0,
        label: "calibration".into(),
        group: "calibration".into(),
        ic_index: None,
        trace: false,
    };
    let out = run_trial(&spec);
    if let Some(e) = out.error {
        return Err(e.into());
    }
    let first = &out.cycle_states[0];
    let last = out.cycle_states.last().unwrap();
    let drift = last.com() - first.com();
    Ok(wrap_angle(drift.y.atan2(drift.x) - first.heading()))
}

/// Starting poses in front of a peg row: the COM sits `STANDOFF` before the
/// line with evenly spread lateral offsets over one spacing, and the body is
/// turned so its open-field drift heads straight at the line.
pub fn initial_conditions(
    env: &Environment,
    n: usize,
    calibration: f64,
    robot: &RobotConfig,
    gait: &GaitParams,
) -> Result<Vec<Pose2>, HarnessError> {
    let y_line = env.obstacle_line.ok_or_else(|| HarnessError::Config("environment has no obstacle line".into()))?;
    let spacing = env.spacing().ok_or_else(|| HarnessError::Config("peg row needs two pegs".into()))?;
    let center = env.row_center().unwrap_or_else(Vector2::zeros);
    let reference = initial_state(robot, gait, Pose2::new(0.0, 0.0, 0.0));
    let theta = wrap_angle(PI / 2.0 - calibration - reference.heading());
    let com = initial_state(robot, gait, Pose2::new(0.0, 0.0, theta)).com();
    Ok(lateral_offsets(spacing, n)
        .into_iter()
        .map(|dx| Pose2::new(center.x + dx - com.x, y_line - STANDOFF - com.y, theta))
        .collect())
}

/// Offsets spanning `[-d/2, d/2]`; a single condition sits at 0.
pub fn lateral_offsets(spacing: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|k| -spacing / 2.0 + spacing * k as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation; `None` without data.
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub g: f64,
    pub spacing: Option<f64>,
    pub amp_h_deg: f64,
    pub xi_h: f64,
    /// Displayed wavelength of the group's gait (m).
    pub wavelength: Option<f64>,
    pub trials: usize,
    pub successes: usize,
    pub traverse_probability: Option<f64>,
    pub displacement_per_cycle: Option<Stat>,
    pub speed_bl_per_cycle: Option<Stat>,
    pub cot: Option<Stat>,
    pub work: Option<Stat>,
    /// Over successful trials only.
    pub cycles_to_traverse: Option<Stat>,
    /// Over successful trials only.
    pub reorientation: Option<Stat>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub experiment: ExperimentKind,
    pub rows: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
    /// Trajectory logs keyed by label, for traced trials.
    pub traces: BTreeMap<String, Vec<TraceRecord>>,
    /// Largest KKT residual over every step of every trial.
    pub max_kkt_residual: f64,
}

impl SweepResult {
    pub fn aggregate(&self, group: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group)
    }

    /// Traverse probability of the cell at `spacing` and `g` (any gait).
    pub fn traverse_probability(&self, spacing: f64, g: f64) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.spacing.is_some_and(|s| (s - spacing).abs() < 1e-9) && (a.g - g).abs() < 1e-9)
            .and_then(|a| a.traverse_probability)
    }
}

/// Run trials on a pool of `parallelism` threads and aggregate them in
/// label order.
pub fn run_sweep(experiment: ExperimentKind, specs: &[TrialSpec], parallelism: usize) -> Result<SweepResult, HarnessError> {
    if specs.is_empty() {
        return Err(HarnessError::Config("sweep has no trials".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut outcomes: Vec<(TrialSpec, TrialOutcome)> =
        pool.install(|| specs.par_iter().map(|s| (s.clone(), run_trial(s))).collect());
    outcomes.sort_by(|a, b| a.0.label.cmp(&b.0.label));

    let mut groups: BTreeMap<String, Vec<&(TrialSpec, TrialOutcome)>> = BTreeMap::new();
    for o in &outcomes {
        groups.entry(o.0.group.clone()).or_default().push(o);
    }
    let aggregates = groups
        .iter()
        .map(|(group, members)| {
            let spec = &members[0].0;
            let rows: Vec<&TrialResult> = members.iter().map(|m| &m.1.result).collect();
            let collect = |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Option<Stat> {
                Stat::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<f64>>())
            };
            let with_line = spec.env.obstacle_line.is_some();
            let successes = rows.iter().filter(|r| r.success).count();
            Aggregate {
                group: group.clone(),
                g: spec.g,
                spacing: spec.env.spacing(),
                amp_h_deg: spec.gait.amp_h.to_degrees(),
                xi_h: spec.gait.xi_h,
                wavelength: displayed_wavelength(&spec.gait, &spec.robot).ok(),
                trials: rows.len(),
                successes,
                traverse_probability: with_line.then(|| successes as f64 / rows.len() as f64),
                displacement_per_cycle: collect(&|r| r.displacement_per_cycle),
                speed_bl_per_cycle: collect(&|r| r.speed_bl_per_cycle),
                cot: collect(&|r| r.cot),
                work: collect(&|r| Some(r.work_total)),
                cycles_to_traverse: collect(&|r| r.cycles_to_traverse),
                reorientation: collect(&|r| if r.success { r.reorientation } else { None }),
            }
        })
        .collect();

    let max_kkt_residual = outcomes.iter().map(|o| o.1.max_kkt_residual).fold(0.0, f64::max);
    let mut traces = BTreeMap::new();
    let mut rows = Vec::with_capacity(outcomes.len());
    for (spec, out) in outcomes {
        if spec.trace {
            traces.insert(spec.label.clone(), out.trace);
        }
        rows.push(out.result);
    }
    Ok(SweepResult { experiment, rows, aggregates, traces, max_kkt_residual })
}

/// Settings shared by every trial of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub robot: RobotConfig,
    pub cable: CableGeometry,
    pub gait: GaitParams,
    pub solver: SolverParams,
    pub mu: f64,
    pub peg_count: usize,
    pub peg_radius: f64,
    pub y_line: f64,
    pub seed: u64,
    pub trace: bool,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            robot: RobotConfig::default(),
            cable: CableGeometry::default(),
            gait: GaitParams::default(),
            solver: SolverParams::default(),
            mu: crate::environment::DEFAULT_MU,
            peg_count: crate::environment::DEFAULT_PEG_COUNT,
            peg_radius: crate::environment::PEG_RADIUS,
            y_line: crate::environment::DEFAULT_Y_LINE,
            seed: 0,
            trace: false,
        }
    }
}

impl Setup {
    fn spec(&self, gait: GaitParams, g: f64, env: Environment, pose: Pose2, max_cycles: usize) -> TrialSpec {
        TrialSpec {
            gait,
            g,
            env,
            initial_pose: pose,
            max_cycles,
            solver: self.solver,
            robot: self.robot.clone(),
            cable: self.cable,
            seed: self.seed,
            label: String::new(),
            group: String::new(),
            ic_index: None,
            trace: self.trace,
        }
    }

    pub fn calibrate(&self, gait: &GaitParams, g: f64) -> Result<f64, HarnessError> {
        calibrate_heading(gait, g, &self.robot, &self.cable, &self.solver, self.mu)
    }

    /// Open-field trials over the compliance grid.
    pub fn flat_sweep(&self, gs: &[f64]) -> Vec<TrialSpec> {
        gs.iter()
            .map(|&g| {
                let mut s = self.spec(self.gait, g, Environment::flat(self.mu), Pose2::new(0.0, 0.0, 0.0), FLAT_CYCLES);
                s.label = format!("flat-g{g:.2}");
                s.group = s.label.clone();
                s
            })
            .collect()
    }

    /// Peg-row trials for every (spacing, G, initial condition). The heading
    /// calibration is measured once per (gait, G).
    pub fn obstacle_trials(
        &self,
        prefix: &str,
        gait: &GaitParams,
        spacings: &[f64],
        gs: &[f64],
        n_ic: usize,
    ) -> Result<Vec<TrialSpec>, HarnessError> {
        let mut specs = Vec::new();
        for &g in gs {
            let calibration = self.calibrate(gait, g)?;
            for &d in spacings {
                let env = make_peg_row(d, self.peg_count, self.y_line, self.peg_radius)?.with_friction(self.mu);
                let poses = initial_conditions(&env, n_ic, calibration, &self.robot, gait)?;
                let group = format!("{prefix}-s{:.2}-g{g:.2}", d);
                for (k, pose) in poses.into_iter().enumerate() {
                    let mut s = self.spec(*gait, g, env.clone(), pose, TRAVERSE_TIMEOUT_CYCLES);
                    s.label = format!("{group}-ic{k}");
                    s.group = group.clone();
                    s.ic_index = Some(k);
                    specs.push(s);
                }
            }
        }
        Ok(specs)
    }

    pub fn spacing_sweep(&self, spacings: &[f64], gs: &[f64], n_ic: usize) -> Result<Vec<TrialSpec>, HarnessError> {
        self.obstacle_trials("spacing", &self.gait, spacings, gs, n_ic)
    }

    pub fn gait_sweep(&self, shapes: &[(f64, f64)], spacing: f64, gs: &[f64], n_ic: usize) -> Result<Vec<TrialSpec>, HarnessError> {
        let mut specs = Vec::new();
        for &(amp_deg, xi) in shapes {
            let gait = GaitParams { amp_h: amp_deg.to_radians(), xi_h: xi, ..self.gait };
            let prefix = format!("gait-a{amp_deg:.1}-x{xi:.2}");
            specs.extend(self.obstacle_trials(&prefix, &gait, &[spacing], gs, n_ic)?);
        }
        Ok(specs)
    }
}
