//! Reported quantities: displacement per cycle, cost of transport, traverse
//! success and reorientation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;
use crate::kinematics::{BodyState, RobotConfig};
use crate::GRAVITY;

/// Below this COM progress per cycle a trial counts as jammed (m).
pub const JAM_THRESHOLD: f64 = 0.02;
/// Cycles allowed before a traverse attempt times out.
pub const TRAVERSE_TIMEOUT_CYCLES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("history shorter than one gait cycle")]
    TooShort,
    #[error("cost of transport undefined for zero displacement")]
    ZeroDisplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    None,
    Timeout,
    Jam,
    /// The step solver failed for a reason other than a jam.
    Solver,
}

impl FailureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::Timeout => "timeout",
            FailureMode::Jam => "jam",
            FailureMode::Solver => "solver",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub label: String,
    pub g: f64,
    pub spacing: Option<f64>,
    pub ic_index: Option<usize>,
    pub success: bool,
    pub failure_mode: FailureMode,
    pub cycles_to_traverse: Option<f64>,
    pub displacement_per_cycle: Option<f64>,
    pub speed_bl_per_cycle: Option<f64>,
    pub work_total: f64,
    pub cot: Option<f64>,
    pub reorientation: Option<f64>,
    /// Total slip of stuck contacts over the trial (m).
    pub slip_total: f64,
    pub trace_ref: String,
}

/// Mean marker displacement per cycle, averaged across cycles. `samples`
/// holds states at consecutive cycle boundaries.
pub fn displacement_per_cycle(samples: &[BodyState], robot: &RobotConfig) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    let per_cycle: Vec<f64> = samples
        .windows(2)
        .map(|w| {
            let a = w[0].markers(robot);
            let b = w[1].markers(robot);
            a.iter().zip(&b).map(|(p, q)| (q - p).norm()).sum::<f64>() / a.len() as f64
        })
        .collect();
    Ok(per_cycle.iter().sum::<f64>() / per_cycle.len() as f64)
}

/// Mean marker displacement between the first and last sample.
pub fn net_displacement(first: &BodyState, last: &BodyState, robot: &RobotConfig) -> f64 {
    let a = first.markers(robot);
    let b = last.markers(robot);
    a.iter().zip(&b).map(|(p, q)| (q - p).norm()).sum::<f64>() / a.len() as f64
}

/// Work per unit weight and distance.
pub fn cost_of_transport(work: f64, mass: f64, displacement: f64) -> Result<f64, MetricsError> {
    if !(displacement > 0.0) {
        return Err(MetricsError::ZeroDisplacement);
    }
    Ok(work / (mass * GRAVITY * displacement))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraverseOutcome {
    pub success: bool,
    pub cycles_to_traverse: Option<f64>,
    pub failure_mode: FailureMode,
    /// Index into the history where the trial was decided.
    pub decided_at: usize,
}

/// Incremental traverse judge, fed one step at a time.
#[derive(Debug, Clone)]
pub struct TraverseMonitor {
    y_line: f64,
    steps_per_cycle: usize,
    max_cycles: usize,
    last_boundary_com: Option<nalgebra::Vector2<f64>>,
}

impl TraverseMonitor {
    pub fn new(env: &Environment, steps_per_cycle: usize, max_cycles: usize) -> Option<Self> {
        env.obstacle_line.map(|y_line| Self { y_line, steps_per_cycle, max_cycles, last_boundary_com: None })
    }

    pub fn cleared(&self, state: &BodyState) -> bool {
        state.frames.iter().all(|f| f.position.y > self.y_line)
    }

    /// Verdict after `step` steps, or `None` while the trial continues.
    pub fn observe(&mut self, step: usize, state: &BodyState) -> Option<TraverseOutcome> {
        if self.cleared(state) {
            return Some(TraverseOutcome {
                success: true,
                cycles_to_traverse: Some(step as f64 / self.steps_per_cycle as f64),
                failure_mode: FailureMode::None,
                decided_at: step,
            });
        }
        if step % self.steps_per_cycle == 0 {
            let com = state.com();
            if let Some(prev) = self.last_boundary_com {
                if (com - prev).norm() < JAM_THRESHOLD {
                    return Some(TraverseOutcome {
                        success: false,
                        cycles_to_traverse: None,
                        failure_mode: FailureMode::Jam,
                        decided_at: step,
                    });
                }
            }
            self.last_boundary_com = Some(com);
            if step >= self.max_cycles * self.steps_per_cycle {
                return Some(TraverseOutcome {
                    success: false,
                    cycles_to_traverse: None,
                    failure_mode: FailureMode::Timeout,
                    decided_at: step,
                });
            }
        }
        None
    }
}

/// Judge a complete history sampled every step (index = step number).
pub fn traverse_check(
    history: &[BodyState],
    env: &Environment,
    steps_per_cycle: usize,
    max_cycles: usize,
) -> Option<TraverseOutcome> {
    let mut monitor = TraverseMonitor::new(env, steps_per_cycle, max_cycles)?;
    for (step, state) in history.iter().enumerate() {
        if let Some(v) = monitor.observe(step, state) {
            return Some(v);
        }
    }
    let last = history.len().saturating_sub(1);
    Some(TraverseOutcome { success: false, cycles_to_traverse: None, failure_mode: FailureMode::Timeout, decided_at: last })
}

/// Unsigned change of the tail-to-head heading (degrees). `samples` are
/// taken at equal gait phase; the heading is unwrapped between samples.
pub fn reorientation(samples: &[BodyState]) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    let mut total = 0.0;
    let mut last = samples[0].heading();
    for s in &samples[1..] {
        let h = s.heading();
        let mut d = h - last;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d <= -PI {
            d += 2.0 * PI;
        }
        total += d;
        last = h;
    }
    Ok(total.abs().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::make_peg_row;
    use crate::kinematics::Pose2;

    fn shape() -> Vec<f64> {
        (0..11).map(|i| 0.6 * (i as f64 * 0.8).sin()).collect()
    }

    fn state(robot: &RobotConfig, pose: Pose2) -> BodyState {
        BodyState::new(robot, 0.0, pose, shape())
    }

    #[test]
    fn rigid_translation_displacement() {
        let robot = RobotConfig::default();
        let samples: Vec<BodyState> = (0..4).map(|k| state(&robot, Pose2::new(0.4 * k as f64, 0.0, 0.3))).collect();
        assert!((displacement_per_cycle(&samples, &robot).unwrap() - 0.4).abs() < 1e-12);
        let still: Vec<BodyState> = (0..3).map(|_| state(&robot, Pose2::new(1.0, 2.0, 0.3))).collect();
        assert_eq!(displacement_per_cycle(&still, &robot).unwrap(), 0.0);
        assert_eq!(displacement_per_cycle(&still[..1], &robot), Err(MetricsError::TooShort));
    }

    #[test]
    fn cot_identities() {
        assert!((cost_of_transport(29.43, 3.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cost_of_transport(0.0, 3.0, 0.5).unwrap(), 0.0);
        assert_eq!(cost_of_transport(1.0, 3.0, 0.0), Err(MetricsError::ZeroDisplacement));
        let base = cost_of_transport(2.0, 3.0, 0.7).unwrap();
        assert!((cost_of_transport(4.0, 3.0, 0.7).unwrap() - 2.0 * base).abs() < 1e-15);
        assert!((cost_of_transport(2.0, 3.0, 1.4).unwrap() - 0.5 * base).abs() < 1e-15);
    }

    #[test]
    fn rotation_reorientation() {
        let robot = RobotConfig::default();
        let rotated: Vec<BodyState> = (0..4).map(|k| state(&robot, Pose2::new(0.0, 0.0, 0.1 + (10.0 * k as f64).to_radians()))).collect();
        assert!((reorientation(&rotated).unwrap() - 30.0).abs() < 1e-9);
        let moved: Vec<BodyState> = (0..4).map(|k| state(&robot, Pose2::new(0.3 * k as f64, 0.1, 0.1))).collect();
        assert!(reorientation(&moved).unwrap().abs() < 1e-9);
    }

    #[test]
    fn synthetic_crossing_succeeds_at_two_cycles() {
        let robot = RobotConfig::default();
        let env = make_peg_row(0.7, 4, 0.0, 0.025).unwrap();
        let spc = 10;
        // Body parallel to x, sliding +y by 1 m per cycle from y = -1.5.
        let history: Vec<BodyState> = (0..=50)
            .map(|s| state(&robot, Pose2::new(-0.6, -1.5 + s as f64 / spc as f64, 0.0)))
            .collect();
        let ymax_rel = history[0].frames.iter().map(|f| f.position.y).fold(f64::INFINITY, f64::min) + 1.5;
        let out = traverse_check(&history, &env, spc, 10).unwrap();
        assert!(out.success);
        let expected = ((1.5 - ymax_rel) * spc as f64).floor() + 1.0;
        assert_eq!(out.cycles_to_traverse, Some(expected / spc as f64));
    }

    #[test]
    fn straight_crossing_takes_two_cycles() {
        let robot = RobotConfig::default();
        let env = make_peg_row(0.7, 4, 0.0, 0.025).unwrap();
        let spc = 4;
        let straight = vec![0.0; 11];
        // Straight body along x at y = -0.9 + 0.5 * step / spc reaches y > 0 at 2 cycles exactly.
        let history: Vec<BodyState> = (0..=12)
            .map(|s| BodyState::new(&robot, 0.0, Pose2::new(-0.6, -0.9 + 0.5 * s as f64 / spc as f64 + 1e-9, 0.0), straight.clone()))
            .collect();
        let out = traverse_check(&history, &env, spc, 10).unwrap();
        assert!(out.success);
        assert_eq!(out.cycles_to_traverse, Some(2.0));
    }

    #[test]
    fn oscillation_in_place_is_jam() {
        let robot = RobotConfig::default();
        let env = make_peg_row(0.7, 4, 0.0, 0.025).unwrap();
        let spc = 8;
        let history: Vec<BodyState> = (0..=10 * spc)
            .map(|s| state(&robot, Pose2::new(0.0, -0.8 + 0.05 * (s as f64).sin(), 0.0)))
            .collect();
        let out = traverse_check(&history, &env, spc, 10).unwrap();
        assert!(!out.success);
        assert_eq!(out.failure_mode, FailureMode::Jam);
    }
}
