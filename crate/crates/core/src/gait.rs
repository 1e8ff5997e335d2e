//! Two-wave sidewinding template.
//!
//! Horizontal and vertical joints each carry a travelling sine wave indexed
//! per plane; the vertical wave lags the horizontal one by a quarter period.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{body_chain, RobotConfig};

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("laid-out body shape self-intersects (segments {0} and {1})")]
    ShapeDegenerate(usize, usize),
    #[error("invalid gait parameter: {0}")]
    Invalid(String),
}

/// Amplitudes (rad), spatial frequencies and temporal frequency (cycles/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub amp_h: f64,
    pub xi_h: f64,
    pub amp_v: f64,
    pub xi_v: f64,
    pub omega: f64,
    /// Lag of the vertical wave behind the horizontal one; always pi/2.
    pub phase_offset: f64,
}

impl Default for GaitParams {
    /// A_H = 75 deg, xi_H = 1, A_V = 25 deg, xi_V = 1, 0.25 cycles/s.
    fn default() -> Self {
        Self::new(75f64.to_radians(), 1.0, 25f64.to_radians(), 1.0, 0.25)
    }
}

impl GaitParams {
    pub fn new(amp_h: f64, xi_h: f64, amp_v: f64, xi_v: f64, omega: f64) -> Self {
        Self { amp_h, xi_h, amp_v, xi_v, omega, phase_offset: FRAC_PI_2 }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.omega
    }

    /// Same gait with the horizontal wave mirrored.
    pub fn mirrored(&self) -> Self {
        Self { amp_h: -self.amp_h, ..*self }
    }

    pub fn validate(&self, joint_limit: f64) -> Result<(), GaitError> {
        let bad = |m: &str| Err(GaitError::Invalid(m.to_string()));
        if !(self.amp_h > 0.0 && self.amp_h < joint_limit) {
            return bad("A_H must lie in (0, joint limit)");
        }
        if !(self.amp_v > 0.0 && self.amp_v < joint_limit) {
            return bad("A_V must lie in (0, joint limit)");
        }
        if !(self.xi_h > 0.0 && self.xi_v > 0.0 && self.omega > 0.0) {
            return bad("spatial and temporal frequencies must be positive");
        }
        if self.phase_offset != FRAC_PI_2 {
            return bad("phase offset between waves is fixed at pi/2");
        }
        Ok(())
    }
}

/// Commanded joint angles at one instant, per plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandFrame {
    pub t: f64,
    /// Gait phase in [0, 1).
    pub phase: f64,
    pub alpha_h: Vec<f64>,
    pub alpha_v: Vec<f64>,
}

impl CommandFrame {
    /// Commands laid out in global joint order.
    pub fn joint_angles(&self, robot: &RobotConfig) -> Vec<f64> {
        let mut alpha = vec![0.0; robot.n_joints()];
        for (a, j) in self.alpha_h.iter().zip(robot.lateral_joints()) {
            alpha[j] = *a;
        }
        for (a, j) in self.alpha_v.iter().zip(robot.vertical_joint_slots()) {
            alpha[j] = *a;
        }
        alpha
    }
}

pub fn gait_phase(gait: &GaitParams, t: f64) -> f64 {
    let p = (gait.omega * t).fract();
    if p < 0.0 {
        p + 1.0
    } else {
        p
    }
}

fn wave(amp: f64, xi: f64, i: usize, n: usize, phase: f64, lag: f64) -> f64 {
    amp * (2.0 * PI * xi * i as f64 / n as f64 - 2.0 * PI * phase - lag).sin()
}

/// Joint commands at time `t`. Joints are indexed 1..N within each plane.
pub fn joint_commands(gait: &GaitParams, robot: &RobotConfig, t: f64) -> CommandFrame {
    commands_at_phase(gait, robot, t, gait_phase(gait, t))
}

fn commands_at_phase(gait: &GaitParams, robot: &RobotConfig, t: f64, phase: f64) -> CommandFrame {
    let nh = robot.n_lateral();
    let nv = robot.n_vertical();
    CommandFrame {
        t,
        phase,
        alpha_h: (1..=nh).map(|i| wave(gait.amp_h, gait.xi_h, i, nh, phase, 0.0)).collect(),
        alpha_v: (1..=nv)
            .map(|i| wave(gait.amp_v, gait.xi_v, i, nv, phase, gait.phase_offset))
            .collect(),
    }
}

/// Planar centreline at t = 0 with vertical joints straightened: head tip,
/// then alternating module centres and joint pivots, then tail tip.
fn planar_centreline(gait: &GaitParams, robot: &RobotConfig) -> Vec<Vector2<f64>> {
    let mut cmd = commands_at_phase(gait, robot, 0.0, 0.0);
    cmd.alpha_v.iter_mut().for_each(|a| *a = 0.0);
    let chain = body_chain(robot, &cmd.joint_angles(robot));
    let half = robot.module_length / 2.0;
    let n = chain.centers.len();
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push((chain.centers[0] + chain.rotations[0].column(0) * half).xy());
    for m in 0..n {
        pts.push(chain.centers[m].xy());
        if m + 1 < n {
            pts.push(chain.pivots[m].xy());
        }
    }
    pts.push((chain.centers[n - 1] - chain.rotations[n - 1].column(0) * half).xy());
    pts
}

fn segments_cross(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, d: Vector2<f64>) -> bool {
    let orient = |p: Vector2<f64>, q: Vector2<f64>, r: Vector2<f64>| (q - p).perp(&(r - p));
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn point_at(pts: &[Vector2<f64>], arc: &[f64], s: f64) -> Vector2<f64> {
    let k = arc.partition_point(|&a| a <= s).clamp(1, pts.len() - 1);
    let span = arc[k] - arc[k - 1];
    let f = if span > 0.0 { ((s - arc[k - 1]) / span).clamp(0.0, 1.0) } else { 0.0 };
    pts[k - 1] + (pts[k] - pts[k - 1]) * f
}

/// Chord spanned by one spatial period of the horizontal wave.
///
/// For `xi_h > 1` this is the distance between the head tip and the point one
/// period (total length / xi_h of arc) further down the body. For
/// `xi_h <= 1` the body holds at most one period, so the tip-to-tip chord is
/// stretched to a full period by dividing by `xi_h`.
pub fn displayed_wavelength(gait: &GaitParams, robot: &RobotConfig) -> Result<f64, GaitError> {
    if !(gait.xi_h > 0.0) {
        return Err(GaitError::Invalid("xi_H must be positive".into()));
    }
    let pts = planar_centreline(gait, robot);
    for i in 0..pts.len() - 1 {
        for j in i + 2..pts.len() - 1 {
            if segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return Err(GaitError::ShapeDegenerate(i, j));
            }
        }
    }
    let mut arc = vec![0.0];
    for w in pts.windows(2) {
        arc.push(arc.last().unwrap() + (w[1] - w[0]).norm());
    }
    let length = *arc.last().unwrap();
    let first = pts[0];
    if gait.xi_h <= 1.0 {
        Ok((pts[pts.len() - 1] - first).norm() / gait.xi_h)
    } else {
        Ok((point_at(&pts, &arc, length / gait.xi_h) - first).norm())
    }
}
