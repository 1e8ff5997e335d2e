//! Kinematic chain of the robot: module layout, forward kinematics, resting
//! orientation on flat ground, and contact extraction.
//!
//! The chain is composed head to tail in a body frame attached to the head
//! module (x forward, y left, z up). Lateral joints turn the body about the
//! frame's vertical, vertical joints pitch it, so every module's attitude is
//! a yaw followed by a pitch. The body is then rested on the ground: the
//! facet of the module centres' lower convex hull that lies under the centre
//! of mass becomes level, the head module's forward axis fixes yaw, and the
//! planar base pose places the result.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Tolerance on point-above-plane tests when searching support facets.
const HULL_TOL: f64 = 1e-10;
/// Facets steeper than this (cosine to the reference up axis) are rejected.
const MIN_SUPPORT_COS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Lateral,
    Vertical,
}

/// Physical layout of the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub n_modules: usize,
    /// Module length (m).
    pub module_length: f64,
    /// Module radius (m).
    pub module_radius: f64,
    /// Head tip to tail tip with a straight body (m).
    pub total_length: f64,
    /// 1-based global indices of vertical bending joints.
    pub vertical_joints: Vec<usize>,
    /// Total mass (kg).
    pub mass_total: f64,
    /// Contact threshold on module bottom height (m).
    pub contact_threshold: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            n_modules: 12,
            module_length: 0.10,
            module_radius: 0.0375,
            total_length: 1.31,
            vertical_joints: vec![3, 6, 9],
            mass_total: 3.0,
            contact_threshold: 0.005,
        }
    }
}

impl RobotConfig {
    pub fn n_joints(&self) -> usize {
        self.n_modules - 1
    }

    /// Gap inserted at every joint so that the chain spans `total_length`.
    pub fn joint_gap(&self) -> f64 {
        if self.n_modules < 2 {
            return 0.0;
        }
        (self.total_length - self.module_length * self.n_modules as f64)
            / (self.n_modules - 1) as f64
    }

    /// Distance between neighbouring module centres.
    pub fn link_spacing(&self) -> f64 {
        self.module_length + self.joint_gap()
    }

    /// Kind of the 0-based global joint `j`.
    pub fn joint_kind(&self, j: usize) -> JointKind {
        if self.vertical_joints.contains(&(j + 1)) {
            JointKind::Vertical
        } else {
            JointKind::Lateral
        }
    }

    /// 0-based global indices of the lateral joints, head to tail.
    pub fn lateral_joints(&self) -> Vec<usize> {
        (0..self.n_joints())
            .filter(|&j| self.joint_kind(j) == JointKind::Lateral)
            .collect()
    }

    /// 0-based global indices of the vertical joints, head to tail.
    pub fn vertical_joint_slots(&self) -> Vec<usize> {
        (0..self.n_joints())
            .filter(|&j| self.joint_kind(j) == JointKind::Vertical)
            .collect()
    }

    pub fn n_lateral(&self) -> usize {
        self.n_joints() - self.n_vertical()
    }

    pub fn n_vertical(&self) -> usize {
        self.vertical_joint_slots().len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_modules < 2 {
            return Err("robot.n_modules must be at least 2".into());
        }
        if !(self.module_length > 0.0 && self.module_radius > 0.0) {
            return Err("robot module dimensions must be positive".into());
        }
        if self.joint_gap() < 0.0 {
            return Err("robot.total_length shorter than the modules it contains".into());
        }
        if let Some(&j) = self
            .vertical_joints
            .iter()
            .find(|&&j| j == 0 || j > self.n_joints())
        {
            return Err(format!("robot.vertical_joints entry {j} is not a joint index"));
        }
        if !(self.mass_total > 0.0) {
            return Err("robot.mass_total must be positive".into());
        }
        if !(self.contact_threshold > 0.0) {
            return Err("robot.contact_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Planar pose of the head module.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotate(&self, v: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn transform(&self, v: Vector2<f64>) -> Vector2<f64> {
        self.rotate(v) + self.translation()
    }
}

/// World pose of one module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleFrame {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl ModuleFrame {
    pub fn planar(&self) -> Vector2<f64> {
        self.position.xy()
    }

    /// Unit forward axis of the module in the world.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }
}

/// Chain composed in the head-attached body frame.
#[derive(Debug, Clone)]
pub struct BodyChain {
    pub centers: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    /// Joint pivot points; `pivots[j]` sits between modules `j` and `j + 1`.
    pub pivots: Vec<Vector3<f64>>,
    half: f64,
    kinds: Vec<JointKind>,
}

impl BodyChain {
    pub fn com(&self) -> Vector3<f64> {
        self.centers.iter().sum::<Vector3<f64>>() / self.centers.len() as f64
    }

    /// Unit forward axis of module `m`.
    pub fn forward(&self, m: usize) -> Vector3<f64> {
        self.rotations[m].column(0).into_owned()
    }

    /// Sensitivity of every module centre to joint `j` (zero upstream).
    pub fn center_derivatives(&self, j: usize) -> Vec<Vector3<f64>> {
        let n = self.centers.len();
        let mut out = vec![Vector3::zeros(); n];
        // Derivative of each downstream forward axis.
        let dfwd = |k: usize| -> Vector3<f64> {
            let f = self.forward(k);
            match self.kinds[j] {
                JointKind::Lateral => Vector3::z().cross(&f),
                JointKind::Vertical => {
                    // Pitching rotates the axis within its vertical plane.
                    let horiz = f.xy().norm();
                    let heading = f.xy() / horiz;
                    Vector3::new(f.z * heading.x, f.z * heading.y, -horiz)
                }
            }
        };
        let mut acc = Vector3::zeros();
        for m in j + 1..n {
            let df = dfwd(m);
            out[m] = acc - df * self.half;
            acc -= df * (2.0 * self.half);
        }
        out
    }
}

/// Compose the chain. Lateral joints turn the body about the vertical of
/// the head frame; vertical joints pitch it about the module's horizontal
/// lateral axis, so each module's attitude is a yaw followed by a pitch.
pub fn body_chain(robot: &RobotConfig, alpha: &[f64]) -> BodyChain {
    assert_eq!(alpha.len(), robot.n_joints(), "one angle per joint");
    let half = robot.link_spacing() / 2.0;
    let attitude = |yaw: f64, pitch: f64| {
        Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner()
            * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch).into_inner()
    };
    let (mut yaw, mut pitch) = (0.0, 0.0);
    let mut rot = Matrix3::identity();
    let mut center = Vector3::zeros();
    let mut chain = BodyChain {
        centers: vec![center],
        rotations: vec![rot],
        pivots: Vec::with_capacity(alpha.len()),
        half,
        kinds: (0..alpha.len()).map(|j| robot.joint_kind(j)).collect(),
    };
    for (j, &a) in alpha.iter().enumerate() {
        let pivot = center - rot.column(0) * half;
        match robot.joint_kind(j) {
            JointKind::Lateral => yaw += a,
            JointKind::Vertical => pitch += a,
        }
        rot = attitude(yaw, pitch);
        center = pivot - rot.column(0) * half;
        chain.pivots.push(pivot);
        chain.centers.push(center);
        chain.rotations.push(rot);
    }
    chain
}

/// Mean module up axis.
pub fn up_reference(chain: &BodyChain) -> Vector3<f64> {
    chain
        .rotations
        .iter()
        .map(|r| r.column(2).into_owned())
        .sum::<Vector3<f64>>()
        .normalize()
}

/// Which module centres carry the body when it rests on flat ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Facet([usize; 3]),
    Edge([usize; 2]),
    Vertex(usize),
}

/// Ground-plane frame expressed in the body frame: `u`, `w` span the ground
/// and `n` is the upward normal.
#[derive(Debug, Clone, Copy)]
pub struct Leveling {
    pub u: Vector3<f64>,
    pub w: Vector3<f64>,
    pub n: Vector3<f64>,
}

impl Leveling {
    pub fn from_normal(n: Vector3<f64>) -> Self {
        let x = Vector3::x();
        let u = (x - n * n.dot(&x)).normalize();
        Self { u, w: n.cross(&u), n }
    }

    pub fn planar(&self, c: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.u.dot(c), self.w.dot(c))
    }

    pub fn height(&self, c: &Vector3<f64>) -> f64 {
        self.n.dot(c)
    }

    /// Rotation taking body-frame vectors into the levelled frame.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[self.u.transpose(), self.w.transpose(), self.n.transpose()])
    }
}

fn facet_normal(centers: &[Vector3<f64>], [a, b, c]: [usize; 3], up: &Vector3<f64>) -> Option<Vector3<f64>> {
    let m = (centers[b] - centers[a]).cross(&(centers[c] - centers[a]));
    let norm = m.norm();
    if norm < 1e-9 {
        return None;
    }
    let n = m / norm;
    Some(if n.dot(up) < 0.0 { -n } else { n })
}

fn edge_normal(centers: &[Vector3<f64>], [a, b]: [usize; 2], up: &Vector3<f64>) -> Option<Vector3<f64>> {
    let v = centers[b] - centers[a];
    let len = v.norm();
    if len < 1e-9 {
        return None;
    }
    let e = v / len;
    let k = up - e * up.dot(&e);
    let kn = k.norm();
    (kn > MIN_SUPPORT_COS).then(|| k / kn)
}

fn all_above(centers: &[Vector3<f64>], origin: &Vector3<f64>, n: &Vector3<f64>) -> bool {
    centers.iter().all(|c| n.dot(&(c - origin)) >= -HULL_TOL)
}

fn inside_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> bool {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    let s = (d11 * d20 - d01 * d21) / den;
    let t = (d00 * d21 - d01 * d20) / den;
    let tol = 1e-12;
    s >= -tol && t >= -tol && s + t <= 1.0 + tol
}

impl Support {
    /// Lower-hull element under the centre of mass (projected along its own
    /// normal). Ties between coplanar facets resolve lexicographically.
    pub fn select(chain: &BodyChain, up: &Vector3<f64>) -> Support {
        let cs = &chain.centers;
        let com = chain.com();
        let n = cs.len();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let Some(nrm) = facet_normal(cs, [a, b, c], up) else { continue };
                    if nrm.dot(up) < MIN_SUPPORT_COS || !all_above(cs, &cs[a], &nrm) {
                        continue;
                    }
                    let proj = com - nrm * nrm.dot(&(com - cs[a]));
                    if inside_triangle(&proj, &cs[a], &cs[b], &cs[c]) {
                        return Support::Facet([a, b, c]);
                    }
                }
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                let Some(nrm) = edge_normal(cs, [a, b], up) else { continue };
                if !all_above(cs, &cs[a], &nrm) {
                    continue;
                }
                let v = cs[b] - cs[a];
                let s = v.dot(&(com - cs[a])) / v.norm_squared();
                if (-1e-12..=1.0 + 1e-12).contains(&s) {
                    return Support::Edge([a, b]);
                }
            }
        }
        let lowest = (0..n)
            .min_by(|&i, &j| up.dot(&cs[i]).total_cmp(&up.dot(&cs[j])))
            .unwrap_or(0);
        Support::Vertex(lowest)
    }

    pub fn normal(&self, chain: &BodyChain, up: &Vector3<f64>) -> Vector3<f64> {
        let cs = &chain.centers;
        match *self {
            Support::Facet(ids) => facet_normal(cs, ids, up).unwrap_or(*up),
            Support::Edge(ids) => edge_normal(cs, ids, up).unwrap_or(*up),
            Support::Vertex(_) => *up,
        }
    }

    /// Derivative of the support normal given derivatives of all centres.
    pub fn normal_derivative(&self, chain: &BodyChain, dcenters: &[Vector3<f64>], up: &Vector3<f64>) -> Vector3<f64> {
        let cs = &chain.centers;
        match *self {
            Support::Facet([a, b, c]) => {
                let e1 = cs[b] - cs[a];
                let e2 = cs[c] - cs[a];
                let mut m = e1.cross(&e2);
                let mut dm = (dcenters[b] - dcenters[a]).cross(&e2) + e1.cross(&(dcenters[c] - dcenters[a]));
                if m.dot(up) < 0.0 {
                    m = -m;
                    dm = -dm;
                }
                let norm = m.norm();
                if norm < 1e-9 {
                    return Vector3::zeros();
                }
                let n = m / norm;
                (dm - n * n.dot(&dm)) / norm
            }
            Support::Edge([a, b]) => {
                let v = cs[b] - cs[a];
                let len = v.norm();
                let e = v / len;
                let dv = dcenters[b] - dcenters[a];
                let de = (dv - e * e.dot(&dv)) / len;
                let k = up - e * up.dot(&e);
                let kn = k.norm();
                if kn <= MIN_SUPPORT_COS {
                    return Vector3::zeros();
                }
                let n = k / kn;
                let dk = -(e * up.dot(&de) + de * up.dot(&e));
                (dk - n * n.dot(&dk)) / kn
            }
            Support::Vertex(_) => Vector3::zeros(),
        }
    }
}

/// Derivatives of the levelling frame for a normal derivative `dn`.
fn leveling_derivative(lv: &Leveling, dn: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let x = Vector3::x();
    let a = x - lv.n * lv.n.dot(&x);
    let an = a.norm();
    let da = -(lv.n * x.dot(dn) + dn * lv.n.dot(&x));
    let du = (da - lv.u * lv.u.dot(&da)) / an;
    let dw = dn.cross(&lv.u) + lv.n.cross(&du);
    (du, dw)
}

/// Body configuration resting on flat ground, before planar placement.
#[derive(Debug, Clone)]
pub struct RestingShape {
    pub chain: BodyChain,
    pub up: Vector3<f64>,
    pub support: Support,
    pub leveling: Leveling,
}

impl RestingShape {
    pub fn new(robot: &RobotConfig, alpha: &[f64]) -> Self {
        let chain = body_chain(robot, alpha);
        let up = up_reference(&chain);
        let support = Support::select(&chain, &up);
        Self::with_support(chain, up, support)
    }

    /// Rest on a prescribed support element instead of searching for one.
    pub fn with_support(chain: BodyChain, up: Vector3<f64>, support: Support) -> Self {
        let leveling = Leveling::from_normal(support.normal(&chain, &up));
        Self { chain, up, support, leveling }
    }

    /// Module centre heights above the lowest centre.
    pub fn heights(&self) -> Vec<f64> {
        let h: Vec<f64> = self.chain.centers.iter().map(|c| self.leveling.height(c)).collect();
        let min = h.iter().copied().fold(f64::INFINITY, f64::min);
        h.into_iter().map(|v| v - min).collect()
    }

    pub fn frames(&self, robot: &RobotConfig, pose: &Pose2) -> Vec<ModuleFrame> {
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), pose.theta).into_inner();
        let place = yaw * self.leveling.matrix();
        let heights = self.heights();
        self.chain
            .centers
            .iter()
            .zip(&self.chain.rotations)
            .zip(heights)
            .map(|((c, r), h)| {
                let p = place * c;
                ModuleFrame {
                    position: Vector3::new(p.x + pose.x, p.y + pose.y, h + robot.module_radius),
                    rotation: place * r,
                }
            })
            .collect()
    }

    /// Planar world positions of all module centres.
    pub fn planar_positions(&self, pose: &Pose2) -> Vec<Vector2<f64>> {
        self.chain.centers.iter().map(|c| pose.transform(self.leveling.planar(c))).collect()
    }

    /// Planar positions together with their derivatives with respect to
    /// `(x, y, theta, alpha[free[0]], alpha[free[1]], ...)`. The support
    /// element is held fixed.
    pub fn planar_jacobian(&self, pose: &Pose2, free: &[usize]) -> (Vec<Vector2<f64>>, Vec<Vec<Vector2<f64>>>) {
        let positions = self.planar_positions(pose);
        let nv = 3 + free.len();
        let mut jac = vec![vec![Vector2::zeros(); nv]; positions.len()];
        for (m, p) in positions.iter().enumerate() {
            let rel = p - pose.translation();
            jac[m][0] = Vector2::new(1.0, 0.0);
            jac[m][1] = Vector2::new(0.0, 1.0);
            jac[m][2] = Vector2::new(-rel.y, rel.x);
        }
        for (k, &j) in free.iter().enumerate() {
            let dc = self.chain.center_derivatives(j);
            let dn = self.support.normal_derivative(&self.chain, &dc, &self.up);
            let (du, dw) = leveling_derivative(&self.leveling, &dn);
            for (m, c) in self.chain.centers.iter().enumerate() {
                let local = Vector2::new(du.dot(c) + self.leveling.u.dot(&dc[m]), dw.dot(c) + self.leveling.w.dot(&dc[m]));
                jac[m][3 + k] = pose.rotate(local);
            }
        }
        (positions, jac)
    }
}

/// World frames of all modules for a planar head pose and joint angles.
pub fn forward_kinematics(robot: &RobotConfig, pose: &Pose2, alpha: &[f64]) -> Vec<ModuleFrame> {
    RestingShape::new(robot, alpha).frames(robot, pose)
}

/// Bottom heights relative to the lowest module and the modules whose
/// bottom lies below `threshold`.
pub fn ground_contact(frames: &[ModuleFrame], module_radius: f64, threshold: f64) -> (Vec<usize>, Vec<f64>) {
    let bottoms: Vec<f64> = frames.iter().map(|f| f.position.z - module_radius).collect();
    let min = bottoms.iter().copied().fold(f64::INFINITY, f64::min);
    let heights: Vec<f64> = bottoms.iter().map(|b| b - min).collect();
    let contacts = heights
        .iter()
        .enumerate()
        .filter(|(_, &h)| h < threshold)
        .map(|(i, _)| i)
        .collect();
    (contacts, heights)
}

/// Snapshot of the robot at one instant.
#[derive(Debug, Clone)]
pub struct BodyState {
    pub t: f64,
    pub base: Pose2,
    /// Joint angles in global order (rad).
    pub alpha: Vec<f64>,
    pub frames: Vec<ModuleFrame>,
    pub contacts: Vec<usize>,
    pub heights: Vec<f64>,
}

impl BodyState {
    pub fn new(robot: &RobotConfig, t: f64, base: Pose2, alpha: Vec<f64>) -> Self {
        let shape = RestingShape::new(robot, &alpha);
        Self::from_shape(robot, t, base, alpha, &shape)
    }

    pub fn from_shape(robot: &RobotConfig, t: f64, base: Pose2, alpha: Vec<f64>, shape: &RestingShape) -> Self {
        let frames = shape.frames(robot, &base);
        let (contacts, heights) = ground_contact(&frames, robot.module_radius, robot.contact_threshold);
        Self { t, base, alpha, frames, contacts, heights }
    }

    pub fn planar_positions(&self) -> Vec<Vector2<f64>> {
        self.frames.iter().map(ModuleFrame::planar).collect()
    }

    /// Mean of the module centres in the plane.
    pub fn com(&self) -> Vector2<f64> {
        self.frames.iter().map(ModuleFrame::planar).sum::<Vector2<f64>>() / self.frames.len() as f64
    }

    /// Planar head tip (front face of the head module).
    pub fn head_tip(&self, robot: &RobotConfig) -> Vector2<f64> {
        let head = &self.frames[0];
        (head.position + head.forward() * (robot.module_length / 2.0)).xy()
    }

    /// 12 module centres followed by the head tip.
    pub fn markers(&self, robot: &RobotConfig) -> Vec<Vector2<f64>> {
        let mut m = self.planar_positions();
        m.push(self.head_tip(robot));
        m
    }

    /// Planar direction of the tail-to-head vector (rad).
    pub fn heading(&self) -> f64 {
        let d = self.frames[0].planar() - self.frames[self.frames.len() - 1].planar();
        d.y.atan2(d.x)
    }
}
