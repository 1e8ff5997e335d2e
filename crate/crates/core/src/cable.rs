//! Bilateral cable geometry and the compliance command policy.
//!
//! Each lateral joint is spanned by a left and a right cable. A cable only
//! constrains the joint while it is taut, so a commanded cable length turns
//! into a one-sided bound on the joint angle. Both bounds together give the
//! admissible interval the joint may occupy under external load.
//!
//! Sign convention: positive angles bend right, shortening the right cable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack below this length difference counts as taut (m).
const TAUT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CableError {
    #[error("admissible interval inverted: [{min}, {max}] rad")]
    InvertedInterval { min: f64, max: f64 },
    #[error("invalid cable geometry: {0}")]
    Invalid(String),
}

/// Mechanical joint stop (deg).
pub const JOINT_LIMIT_DEG: f64 = 105.0;

/// Cable attachment geometry of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableGeometry {
    /// Lateral offset of the attachment from the joint axis (m).
    pub l1: f64,
    /// Longitudinal offset of the attachment from the joint axis (m).
    pub l2: f64,
    /// Slack coefficient (m/rad).
    pub l0: f64,
    /// Mechanical joint stop (rad).
    pub alpha_limit: f64,
}

impl Default for CableGeometry {
    fn default() -> Self {
        Self { l1: 0.020, l2: 0.030, l0: 0.0418, alpha_limit: JOINT_LIMIT_DEG.to_radians() }
    }
}

impl CableGeometry {
    /// Distance from the joint axis to an attachment point.
    pub fn radius(&self) -> f64 {
        self.l1.hypot(self.l2)
    }

    /// Angular position of the attachment relative to the body axis.
    pub fn phi(&self) -> f64 {
        (self.l1 / self.l2).atan()
    }

    /// Longest length either cable can reach.
    pub fn max_length(&self) -> f64 {
        2.0 * self.radius()
    }

    pub fn validate(&self) -> Result<(), CableError> {
        if !(self.l1 > 0.0 && self.l2 > 0.0 && self.l0 > 0.0) {
            return Err(CableError::Invalid("L1, L2 and l0 must be positive".into()));
        }
        if !(self.radius() < self.l0) {
            return Err(CableError::Invalid(
                "attachment radius must stay below l0 for commands to stay admissible".into(),
            ));
        }
        let lim = 2.0 * self.phi() + std::f64::consts::FRAC_PI_2;
        if !(self.alpha_limit > 0.0 && self.alpha_limit < lim) {
            return Err(CableError::Invalid(format!(
                "joint limit must lie in (0, {:.3}) rad",
                lim
            )));
        }
        Ok(())
    }
}

/// Left and right cable lengths that hold the joint rigidly at `alpha`.
pub fn taut_lengths(geom: &CableGeometry, alpha: f64) -> (f64, f64) {
    let r2 = 2.0 * geom.radius();
    let phi = geom.phi();
    (r2 * (-alpha / 2.0 + phi).cos(), r2 * (alpha / 2.0 + phi).cos())
}

/// Generalised compliance of the lateral joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompliancePolicy {
    pub g: f64,
}

impl CompliancePolicy {
    pub const MAX_G: f64 = 1.5;

    pub fn new(g: f64) -> Self {
        Self { g }
    }

    /// Vertical joints never loosen their cables.
    pub fn rigid() -> Self {
        Self { g: 0.0 }
    }

    /// Angle at which each cable switches between taut and slack.
    pub fn gamma(&self, amp_h: f64) -> f64 {
        (2.0 * self.g - 1.0) * amp_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableCommand {
    pub left: f64,
    pub right: f64,
    pub alpha_cmd: f64,
}

/// Cable lengths commanded for a lateral joint following `alpha_cmd`.
///
/// A cable is pulled taut only while the command sits beyond the switching
/// angle on its side; otherwise it is paid out in proportion to how far the
/// command is from that angle.
pub fn commanded_lengths(
    geom: &CableGeometry,
    policy: &CompliancePolicy,
    amp_h: f64,
    alpha_cmd: f64,
) -> CableCommand {
    let gamma = policy.gamma(amp_h);
    let knee = amp_h.min(gamma);
    let (taut_left, taut_right) = taut_lengths(geom, alpha_cmd);
    let left = if alpha_cmd <= -gamma {
        taut_left
    } else {
        taut_lengths(geom, -knee).0 + geom.l0 * (gamma + alpha_cmd)
    };
    let right = if alpha_cmd >= gamma {
        taut_right
    } else {
        taut_lengths(geom, knee).1 + geom.l0 * (gamma - alpha_cmd)
    };
    CableCommand { left, right, alpha_cmd }
}

/// Closed interval of joint angles (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleInterval {
    pub min: f64,
    pub max: f64,
}

impl AngleInterval {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn pinned(at: f64) -> Self {
        Self { min: at, max: at }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_pinned(&self) -> bool {
        self.min == self.max
    }

    pub fn contains(&self, a: f64) -> bool {
        self.min <= a && a <= self.max
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }

    pub fn is_subset_of(&self, other: &AngleInterval) -> bool {
        other.min <= self.min && self.max <= other.max
    }
}

/// Joint angles reachable without stretching either cable.
///
/// The left cable lengthens with the angle, so its length caps the angle
/// from above; the right cable caps it from below. A cable at least as long
/// as `2R` never goes taut and only the mechanical stop binds.
pub fn admissible_interval(geom: &CableGeometry, cmd: &CableCommand) -> Result<AngleInterval, CableError> {
    let r2 = geom.max_length();
    let phi = geom.phi();
    let lim = geom.alpha_limit;
    let (taut_left, taut_right) = taut_lengths(geom, cmd.alpha_cmd);

    let max = if (cmd.left - taut_left).abs() <= TAUT_TOL {
        cmd.alpha_cmd
    } else if cmd.left >= r2 {
        lim
    } else {
        lim.min(2.0 * (phi - (cmd.left / r2).acos()))
    };
    let min = if (cmd.right - taut_right).abs() <= TAUT_TOL {
        cmd.alpha_cmd
    } else if cmd.right >= r2 {
        -lim
    } else {
        (-lim).max(2.0 * ((cmd.right / r2).acos() - phi))
    };
    if min > max {
        return Err(CableError::InvertedInterval { min, max });
    }
    Ok(AngleInterval { min, max })
}

/// Interval for one lateral joint under the policy.
pub fn lateral_interval(
    geom: &CableGeometry,
    policy: &CompliancePolicy,
    amp_h: f64,
    alpha_cmd: f64,
) -> Result<AngleInterval, CableError> {
    admissible_interval(geom, &commanded_lengths(geom, policy, amp_h, alpha_cmd))
}
