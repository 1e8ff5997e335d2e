//! Flat frictional board with an optional row of rigid pegs.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::ModuleFrame;

/// Pegboard dimensions (m).
pub const BOARD_LENGTH: f64 = 2.4;
pub const BOARD_WIDTH: f64 = 1.2;
/// Radius of the PVC pegs (m).
pub const PEG_RADIUS: f64 = 0.025;
pub const DEFAULT_PEG_COUNT: usize = 4;
/// Obstacle line on the board, measured from its centre (m).
pub const DEFAULT_Y_LINE: f64 = 0.3;
pub const DEFAULT_MU: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("peg row spanning {span:.3} m does not fit the board")]
    BoundsExceeded { span: f64 },
    #[error("invalid peg row: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peg {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Peg {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }
}

/// Axis-aligned rectangle (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    /// Board centred on the origin, long side along x.
    pub fn board() -> Self {
        Self {
            min: [-BOARD_LENGTH / 2.0, -BOARD_WIDTH / 2.0],
            max: [BOARD_LENGTH / 2.0, BOARD_WIDTH / 2.0],
        }
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        let tol = 1e-9;
        (self.min[0] - tol..=self.max[0] + tol).contains(&p.x)
            && (self.min[1] - tol..=self.max[1] + tol).contains(&p.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub mu: f64,
    pub pegs: Vec<Peg>,
    pub bounds: Bounds,
    /// y coordinate of the line through the peg centres.
    pub obstacle_line: Option<f64>,
}

impl Environment {
    pub fn flat(mu: f64) -> Self {
        Self { mu, pegs: Vec::new(), bounds: Bounds::board(), obstacle_line: None }
    }

    pub fn with_friction(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Centre-to-centre spacing of a peg row.
    pub fn spacing(&self) -> Option<f64> {
        (self.pegs.len() >= 2).then(|| self.pegs[1].center[0] - self.pegs[0].center[0])
    }

    /// Centre of the peg row.
    pub fn row_center(&self) -> Option<Vector2<f64>> {
        (!self.pegs.is_empty()).then(|| {
            self.pegs.iter().map(Peg::center).sum::<Vector2<f64>>() / self.pegs.len() as f64
        })
    }
}

/// A single row of equally spaced pegs, centred on the board.
pub fn make_peg_row(spacing: f64, count: usize, y_line: f64, radius: f64) -> Result<Environment, EnvError> {
    if count < 2 {
        return Err(EnvError::Invalid("a row needs at least two pegs".into()));
    }
    if !(radius > 0.0) || !(spacing > 2.0 * radius) {
        return Err(EnvError::Invalid(format!(
            "spacing {spacing} m must exceed the peg diameter {}",
            2.0 * radius
        )));
    }
    let bounds = Bounds::board();
    let span = spacing * (count - 1) as f64;
    let pegs: Vec<Peg> = (0..count)
        .map(|k| Peg { center: [-span / 2.0 + k as f64 * spacing, y_line], radius })
        .collect();
    if !pegs.iter().all(|p| bounds.contains(p.center())) {
        return Err(EnvError::BoundsExceeded { span });
    }
    Ok(Environment { mu: DEFAULT_MU, pegs, bounds, obstacle_line: Some(y_line) })
}

/// Signed clearance between a module and a peg; negative means overlap.
pub fn clearance(module: Vector2<f64>, module_radius: f64, peg: &Peg) -> f64 {
    (module - peg.center()).norm() - (module_radius + peg.radius)
}

/// Clearances indexed `[module][peg]`. Pegs are taller than any lift, so
/// every module is checked.
pub fn clearances(frames: &[ModuleFrame], env: &Environment, module_radius: f64) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| env.pegs.iter().map(|p| clearance(f.planar(), module_radius, p)).collect())
        .collect()
}
