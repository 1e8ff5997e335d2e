//! One quasi-static step of the robot.
//!
//! Decision variables are the planar head pose and the free lateral joint
//! angles. The step minimises
//!
//! ```text
//! sum_{j in S} w_j |p_j - p_j^prev|^2
//!   + w_track sum_i (a_i - a_i^target)^2 + w_prev sum_i (a_i - a_i^prev)^2
//! ```
//!
//! where `S` are modules in contact both before and after the step, subject
//! to each joint staying in its admissible interval and every module staying
//! clear of every peg. The problem is solved by Gauss–Newton steps whose
//! subproblems are inequality-constrained least-squares problems
//! ([`crate::lsq::solve_lsi`]), re-linearising the pegs each iteration.
//! Contacts that slide further than the slip tolerance are down-weighted and
//! the step is solved again.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cable::AngleInterval;
use crate::environment::{clearance, Environment};
use crate::gait::CommandFrame;
use crate::kinematics::{body_chain, BodyState, Pose2, RestingShape, RobotConfig, Support};
use crate::lsq::{solve_lsi, LsiError};
use crate::GRAVITY;

/// Weight pulling every module toward its previous planar position. Only
/// matters when fewer than two modules stick.
pub const BASE_REGULARIZATION: f64 = 1e-6;
/// Pegs further than this from a module are left out of the subproblem (m).
const PEG_ACTIVATION: f64 = 0.15;
const MAX_NEWTON_ITERS: usize = 60;
/// Re-solves allowed when the solved shape changes the predicted contact set.
const MAX_CONTACT_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub w_stick: f64,
    pub w_track: f64,
    pub w_prev: f64,
    /// Per-step slip beyond which a contact counts as sliding (m).
    pub slip_tolerance: f64,
    pub slip_downweight: f64,
    pub max_slip_iters: usize,
    pub max_peg_iters: usize,
    pub kkt_tol: f64,
    /// Largest accepted peg overlap (m).
    pub penetration_tol: f64,
    pub steps_per_cycle: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            w_stick: 1.0,
            w_track: 0.01,
            w_prev: 0.001,
            slip_tolerance: 0.002,
            slip_downweight: 0.1,
            max_slip_iters: 5,
            max_peg_iters: 10,
            kkt_tol: 1e-8,
            penetration_tol: 0.0005,
            steps_per_cycle: 200,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_stick > 0.0 && self.w_track > 0.0 && self.w_prev > 0.0) {
            return Err("solver weights must be positive".into());
        }
        if !(self.w_track < self.w_stick && self.w_prev < self.w_stick) {
            return Err("tracking and regularisation weights must stay below w_stick".into());
        }
        if !(self.slip_downweight > 0.0 && self.slip_downweight <= 1.0) {
            return Err("solver.slip_downweight must lie in (0, 1]".into());
        }
        if self.max_slip_iters < 1 || self.max_peg_iters < 1 || self.steps_per_cycle < 1 {
            return Err("solver iteration counts must be at least 1".into());
        }
        if !(self.kkt_tol > 0.0 && self.penetration_tol > 0.0 && self.slip_tolerance > 0.0) {
            return Err("solver tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no KKT point within tolerance at t = {t:.4} s (residual {kkt_residual:.3e} after {iterations} iterations)")]
    NonConvergence { t: f64, kkt_residual: f64, iterations: usize },
    #[error("peg contact cannot be resolved at t = {t:.4} s (penetration {penetration:.3e} m)")]
    Jammed { t: f64, penetration: f64 },
    #[error("invalid step input: {0}")]
    InvalidInput(String),
}

/// Contact force a peg exerts on a module (model units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PegForce {
    pub module: usize,
    pub peg: usize,
    /// Unit normal pointing from the peg to the module.
    pub normal: [f64; 2],
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct StepSolution {
    pub new_state: BodyState,
    /// Planar slip of each stuck module over the step (m).
    pub slip: Vec<(usize, f64)>,
    pub stick_set: Vec<usize>,
    /// Members of the stick set that were down-weighted as sliding.
    pub sliding: Vec<usize>,
    /// Multipliers of joint-interval constraints followed by peg constraints.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub work_increment: f64,
    pub peg_forces: Vec<PegForce>,
    pub iterations: usize,
}

impl StepSolution {
    pub fn slip_total(&self) -> f64 {
        self.slip.iter().map(|(_, s)| s).sum()
    }
}

/// Friction dissipated over a step with the weight shared evenly by the
/// contacting modules.
pub fn work_increment(sol: &StepSolution, env: &Environment, robot: &RobotConfig) -> f64 {
    friction_work(&sol.slip, sol.new_state.contacts.len(), env.mu, robot.mass_total)
}

fn friction_work(slip: &[(usize, f64)], n_contacts: usize, mu: f64, mass: f64) -> f64 {
    if n_contacts == 0 {
        return 0.0;
    }
    let normal = mass * GRAVITY / n_contacts as f64;
    slip.iter().map(|(_, s)| mu * normal * s).sum()
}

/// Fully specified least-squares problem for one step.
#[derive(Debug, Clone)]
pub struct StepProblem<'a> {
    pub robot: &'a RobotConfig,
    pub env: &'a Environment,
    /// Joint angles with pinned joints at their final values.
    pub alpha_fixed: Vec<f64>,
    /// Global indices of the free lateral joints.
    pub free: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Projected commands of the free joints.
    pub target: Vec<f64>,
    pub prev_alpha: Vec<f64>,
    pub prev_pose: Pose2,
    /// Planar module positions before the step.
    pub prev_positions: Vec<Vector2<f64>>,
    /// Stuck modules, their anchor positions and weights.
    pub anchors: Vec<(usize, Vector2<f64>, f64)>,
    pub w_track: f64,
    pub w_prev: f64,
    /// Contribution of pinned joints to the tracking and regularisation terms.
    pub pinned_cost: f64,
    pub up: nalgebra::Vector3<f64>,
    /// Support element held fixed while the problem is solved.
    pub support: Support,
}

struct Linearization {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    constraints: DMatrix<f64>,
    /// Constraint values at the linearisation point; feasible when >= 0.
    values: DVector<f64>,
    /// (module, peg, unit normal) for each peg row.
    peg_rows: Vec<(usize, usize, Vector2<f64>)>,
}

impl StepProblem<'_> {
    pub fn n_vars(&self) -> usize {
        3 + self.free.len()
    }

    pub fn alpha(&self, q: &[f64]) -> Vec<f64> {
        let mut alpha = self.alpha_fixed.clone();
        for (k, &j) in self.free.iter().enumerate() {
            alpha[j] = q[3 + k];
        }
        alpha
    }

    pub fn shape(&self, q: &[f64]) -> RestingShape {
        RestingShape::with_support(body_chain(self.robot, &self.alpha(q)), self.up, self.support)
    }

    /// Full step objective including the base regulariser.
    pub fn objective(&self, q: &[f64]) -> f64 {
        let pose = Pose2::new(q[0], q[1], q[2]);
        let pos = self.shape(q).planar_positions(&pose);
        let mut f = self.pinned_cost;
        for &(m, anchor, w) in &self.anchors {
            f += w * (pos[m] - anchor).norm_squared();
        }
        for k in 0..self.free.len() {
            let a = q[3 + k];
            f += self.w_track * (a - self.target[k]).powi(2) + self.w_prev * (a - self.prev_alpha[k]).powi(2);
        }
        f + BASE_REGULARIZATION * pos.iter().zip(&self.prev_positions).map(|(p, o)| (p - o).norm_squared()).sum::<f64>()
    }

    pub fn positions(&self, q: &[f64]) -> Vec<Vector2<f64>> {
        self.shape(q).planar_positions(&Pose2::new(q[0], q[1], q[2]))
    }

    /// Smallest module-peg clearance.
    pub fn min_clearance(&self, q: &[f64]) -> f64 {
        let r = self.robot.module_radius;
        self.positions(q)
            .iter()
            .flat_map(|p| self.env.pegs.iter().map(move |peg| clearance(*p, r, peg)))
            .fold(f64::INFINITY, f64::min)
    }

    fn linearize(&self, q: &[f64]) -> Linearization {
        let nv = self.n_vars();
        let pose = Pose2::new(q[0], q[1], q[2]);
        let shape = self.shape(q);
        let (pos, pjac) = shape.planar_jacobian(&pose, &self.free);
        let nf = self.free.len();
        let rows = 2 * self.anchors.len() + 2 * nf + 2 * pos.len();
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, nv);
        let mut row = 0;
        for &(m, anchor, w) in &self.anchors {
            let sw = w.sqrt();
            let d = pos[m] - anchor;
            for axis in 0..2 {
                r[row] = sw * d[axis];
                for v in 0..nv {
                    jac[(row, v)] = sw * pjac[m][v][axis];
                }
                row += 1;
            }
        }
        let (st, sp) = (self.w_track.sqrt(), self.w_prev.sqrt());
        for k in 0..nf {
            let a = q[3 + k];
            r[row] = st * (a - self.target[k]);
            jac[(row, 3 + k)] = st;
            r[row + 1] = sp * (a - self.prev_alpha[k]);
            jac[(row + 1, 3 + k)] = sp;
            row += 2;
        }
        let sb = BASE_REGULARIZATION.sqrt();
        for (m, p) in pos.iter().enumerate() {
            let d = p - self.prev_positions[m];
            for axis in 0..2 {
                r[row] = sb * d[axis];
                for v in 0..nv {
                    jac[(row, v)] = sb * pjac[m][v][axis];
                }
                row += 1;
            }
        }

        // Joint intervals, then pegs within reach.
        let mut a_rows: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        for k in 0..nf {
            let mut lo = vec![0.0; nv];
            lo[3 + k] = 1.0;
            a_rows.push(lo);
            values.push(q[3 + k] - self.lower[k]);
            let mut hi = vec![0.0; nv];
            hi[3 + k] = -1.0;
            a_rows.push(hi);
            values.push(self.upper[k] - q[3 + k]);
        }
        let mut peg_rows = Vec::new();
        let radius = self.robot.module_radius;
        for (m, p) in pos.iter().enumerate() {
            for (k, peg) in self.env.pegs.iter().enumerate() {
                let c = clearance(*p, radius, peg);
                if c > PEG_ACTIVATION {
                    continue;
                }
                let d = p - peg.center();
                let dn = d.norm();
                let n = if dn > 1e-12 { d / dn } else { Vector2::new(1.0, 0.0) };
                a_rows.push((0..nv).map(|v| n.dot(&pjac[m][v])).collect());
                values.push(c);
                peg_rows.push((m, k, n));
            }
        }
        let constraints = DMatrix::from_fn(a_rows.len(), nv, |i, j| a_rows[i][j]);
        Linearization { residual: r, jacobian: jac, constraints, values: DVector::from_vec(values), peg_rows }
    }

    fn clamp_box(&self, q: &mut [f64]) {
        for k in 0..self.free.len() {
            q[3 + k] = q[3 + k].clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Converged point of a [`StepProblem`].
#[derive(Debug, Clone)]
pub struct ProblemSolution {
    pub q: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub peg_forces: Vec<PegForce>,
}

/// Solve a step problem from the starting point `q0`.
pub fn solve_problem(problem: &StepProblem, q0: &[f64], params: &SolverParams, t: f64) -> Result<ProblemSolution, SolverError> {
    let mut q = q0.to_vec();
    problem.clamp_box(&mut q);
    let mut last_residual = f64::INFINITY;
    for it in 0..MAX_NEWTON_ITERS {
        let lin = problem.linearize(&q);
        let h = lin.jacobian.transpose() * &lin.jacobian * 2.0;
        let g = lin.jacobian.transpose() * &lin.residual * 2.0;
        let b = -&lin.values;
        let sol = match solve_lsi(&h, &g, &lin.constraints, &b) {
            Ok(s) => s,
            Err(LsiError::Infeasible) => {
                return Err(SolverError::Jammed { t, penetration: (-problem.min_clearance(&q)).max(0.0) })
            }
            Err(LsiError::NotConvex) => {
                return Err(SolverError::NonConvergence { t, kkt_residual: f64::NAN, iterations: it })
            }
        };
        let lambda = &sol.multipliers;
        let stationarity = (&g - lin.constraints.transpose() * lambda).amax();
        let mut residual = stationarity;
        for i in 0..lambda.len() {
            residual = residual.max((lambda[i] * lin.values[i]).abs()).max(-lin.values[i]);
        }
        last_residual = residual;
        if residual <= params.kkt_tol {
            let n_box = 2 * problem.free.len();
            let peg_forces = lin
                .peg_rows
                .iter()
                .enumerate()
                .filter(|(i, _)| lambda[n_box + i] > 0.0)
                .map(|(i, &(module, peg, n))| PegForce {
                    module,
                    peg,
                    normal: [n.x, n.y],
                    magnitude: lambda[n_box + i],
                })
                .collect();
            return Ok(ProblemSolution {
                q,
                multipliers: lambda.iter().copied().collect(),
                kkt_residual: residual,
                iterations: it,
                peg_forces,
            });
        }
        for (qi, zi) in q.iter_mut().zip(sol.z.iter()) {
            *qi += zi;
        }
        problem.clamp_box(&mut q);
    }
    let penetration = -problem.min_clearance(&q);
    if penetration > params.penetration_tol {
        return Err(SolverError::Jammed { t, penetration });
    }
    Err(SolverError::NonConvergence { t, kkt_residual: last_residual, iterations: MAX_NEWTON_ITERS })
}

fn contact_set(robot: &RobotConfig, shape: &RestingShape) -> Vec<usize> {
    shape
        .heights()
        .iter()
        .enumerate()
        .filter(|(_, &h)| h < robot.contact_threshold)
        .map(|(i, _)| i)
        .collect()
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|m| b.contains(m)).collect()
}

/// Advance the robot by one step.
///
/// `intervals` holds one admissible interval per lateral joint in per-plane
/// order; vertical joints are set to `cmd.alpha_v` exactly.
pub fn solve_step(
    robot: &RobotConfig,
    prev: &BodyState,
    cmd: &CommandFrame,
    intervals: &[AngleInterval],
    env: &Environment,
    params: &SolverParams,
) -> Result<StepSolution, SolverError> {
    let lateral = robot.lateral_joints();
    if intervals.len() != lateral.len() || cmd.alpha_h.len() != lateral.len() {
        return Err(SolverError::InvalidInput("one interval and command per lateral joint".into()));
    }
    if cmd.alpha_v.len() != robot.n_vertical() {
        return Err(SolverError::InvalidInput("one command per vertical joint".into()));
    }

    let mut alpha_pred = prev.alpha.clone();
    for (a, j) in cmd.alpha_v.iter().zip(robot.vertical_joint_slots()) {
        alpha_pred[j] = *a;
    }
    let mut free = Vec::new();
    let (mut lower, mut upper, mut target, mut prev_free) = (vec![], vec![], vec![], vec![]);
    let mut pinned_cost = 0.0;
    for (k, &j) in lateral.iter().enumerate() {
        let iv = intervals[k];
        let projected = iv.clamp(cmd.alpha_h[k]);
        if iv.is_pinned() {
            alpha_pred[j] = iv.min;
            pinned_cost += params.w_prev * (iv.min - prev.alpha[j]).powi(2);
        } else {
            alpha_pred[j] = iv.clamp(prev.alpha[j]);
            free.push(j);
            lower.push(iv.min);
            upper.push(iv.max);
            target.push(projected);
            prev_free.push(prev.alpha[j]);
        }
    }

    let prev_pos = prev.planar_positions();
    let mut q: Vec<f64> = [prev.base.x, prev.base.y, prev.base.theta]
        .into_iter()
        .chain(free.iter().map(|&j| alpha_pred[j]))
        .collect();

    let mut guess = RestingShape::new(robot, &alpha_pred);
    let mut outcome = None;
    for _ in 0..MAX_CONTACT_ROUNDS {
        let current = contact_set(robot, &guess);
        let stick = sorted_intersection(&prev.contacts, &current);
        let mut problem = StepProblem {
            robot,
            env,
            alpha_fixed: alpha_pred.clone(),
            free: free.clone(),
            lower: lower.clone(),
            upper: upper.clone(),
            target: target.clone(),
            prev_alpha: prev_free.clone(),
            prev_pose: prev.base,
            prev_positions: prev_pos.clone(),
            anchors: stick.iter().map(|&m| (m, prev_pos[m], params.w_stick)).collect(),
            w_track: params.w_track,
            w_prev: params.w_prev,
            pinned_cost,
            up: guess.up,
            support: guess.support,
        };

        let mut sliding: Vec<usize> = Vec::new();
        let mut sol = solve_problem(&problem, &q, params, cmd.t)?;
        let mut total_iters = sol.iterations;
        for _ in 1..params.max_slip_iters {
            let pos = problem.positions(&sol.q);
            let newly: Vec<usize> = problem
                .anchors
                .iter()
                .filter(|(m, anchor, _)| !sliding.contains(m) && (pos[*m] - anchor).norm() > params.slip_tolerance)
                .map(|(m, _, _)| *m)
                .collect();
            if newly.is_empty() {
                break;
            }
            for a in problem.anchors.iter_mut().filter(|a| newly.contains(&a.0)) {
                a.2 *= params.slip_downweight;
            }
            sliding.extend(newly);
            sliding.sort_unstable();
            sol = solve_problem(&problem, &sol.q, params, cmd.t)?;
            total_iters += sol.iterations;
        }
        q = sol.q.clone();
        let alpha = problem.alpha(&q);
        let fresh = RestingShape::new(robot, &alpha);
        let settled = fresh.support == guess.support && sorted_intersection(&prev.contacts, &contact_set(robot, &fresh)) == stick;
        outcome = Some((problem, sol, stick, sliding, total_iters, alpha));
        if settled {
            break;
        }
        guess = fresh;
    }
    let (problem, sol, stick, sliding, iterations, alpha) = outcome.expect("at least one contact round");

    let shape = problem.shape(&sol.q);
    let pose = Pose2::new(sol.q[0], sol.q[1], sol.q[2]);
    let new_state = BodyState::from_shape(robot, cmd.t, pose, alpha, &shape);
    let new_pos = new_state.planar_positions();
    let slip: Vec<(usize, f64)> = stick.iter().map(|&m| (m, (new_pos[m] - prev_pos[m]).norm())).collect();
    let objective = problem.objective(&sol.q);
    let mut step = StepSolution {
        new_state,
        slip,
        stick_set: stick,
        sliding,
        multipliers: sol.multipliers,
        kkt_residual: sol.kkt_residual,
        objective,
        work_increment: 0.0,
        peg_forces: sol.peg_forces,
        iterations,
    };
    step.work_increment = work_increment(&step, env, robot);
    Ok(step)
}
