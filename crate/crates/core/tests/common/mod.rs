//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sidewinder::cable::CableGeometry;
use sidewinder::environment::{clearance, Bounds, Environment, Peg};
use sidewinder::kinematics::{Pose2, RestingShape, RobotConfig};
use sidewinder::solver::StepProblem;

fn rot2(a: f64, v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(a.cos() * v.x - a.sin() * v.y, a.sin() * v.x + a.cos() * v.y)
}

/// Cable lengths from attachment coordinates: the joint axis at the origin,
/// the upstream module along -x and the downstream one rotated by `alpha`.
pub fn oracle_lengths(g: &CableGeometry, alpha: f64) -> (f64, f64) {
    let left = (rot2(alpha, Vector2::new(g.l2, -g.l1)) - Vector2::new(-g.l2, -g.l1)).norm();
    let right = (rot2(alpha, Vector2::new(g.l2, g.l1)) - Vector2::new(-g.l2, g.l1)).norm();
    (left, right)
}

pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn small_robot() -> RobotConfig {
    RobotConfig {
        n_modules: 4,
        total_length: 0.43,
        vertical_joints: vec![],
        ..RobotConfig::default()
    }
}

pub struct Instance {
    pub robot: RobotConfig,
    pub env: Environment,
    pub alpha0: Vec<f64>,
    pub target: Vec<f64>,
}

/// Head and first module stick while the tracking term swings the tail into
/// a peg placed where the commanded shape would put the last module.
pub fn instance(offset: Vector2<f64>, target: [f64; 3]) -> Instance {
    let robot = small_robot();
    let alpha0 = vec![0.3, -0.2, 0.1];
    let pose = Pose2::new(0.0, 0.0, 0.0);
    let tail = RestingShape::new(&robot, &target).planar_positions(&pose)[3];
    let c = tail + offset;
    let env = Environment {
        mu: 0.7,
        pegs: vec![Peg { center: [c.x, c.y], radius: 0.025 }],
        bounds: Bounds::board(),
        obstacle_line: None,
    };
    Instance { robot, env, alpha0, target: target.to_vec() }
}

pub fn problem(inst: &Instance) -> StepProblem<'_> {
    let shape = RestingShape::new(&inst.robot, &inst.alpha0);
    let pose = Pose2::new(0.0, 0.0, 0.0);
    let prev = shape.planar_positions(&pose);
    StepProblem {
        robot: &inst.robot,
        env: &inst.env,
        alpha_fixed: inst.alpha0.clone(),
        free: vec![0, 1, 2],
        lower: inst.alpha0.iter().map(|a| a - 0.6).collect(),
        upper: inst.alpha0.iter().map(|a| a + 0.6).collect(),
        target: inst.target.clone(),
        prev_alpha: inst.alpha0.clone(),
        prev_pose: pose,
        prev_positions: prev.clone(),
        anchors: vec![(0, prev[0], 1.0), (1, prev[1], 1.0)],
        w_track: 0.01,
        w_prev: 0.001,
        pinned_cost: 0.0,
        up: shape.up,
        support: shape.support,
    }
}

/// Random sampling of the feasible set followed by a penalty-method
/// refinement. Returns the refined point and its objective; the point may
/// penetrate a peg by a negligible amount.
pub fn brute_force(p: &StepProblem, q0: &[f64], seed: u64) -> (Vec<f64>, f64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let start = p.positions(q0);
    let same_side = |q: &[f64]| {
        p.positions(q).iter().zip(&start).all(|(now, was)| {
            p.env.pegs.iter().all(|peg| (now - peg.center()).dot(&(was - peg.center())) > 0.0)
        })
    };
    let feasible = |q: &[f64]| {
        (0..3).all(|k| q[3 + k] >= p.lower[k] && q[3 + k] <= p.upper[k])
            && p.min_clearance(q) >= 0.0
            && same_side(q)
    };
    let mut samples: Vec<(f64, Vec<f64>)> = Vec::new();
    for _ in 0..20_000 {
        let mut q = q0.to_vec();
        q[0] += rng.gen_range(-0.05..0.05);
        q[1] += rng.gen_range(-0.05..0.05);
        q[2] += rng.gen_range(-0.3..0.3);
        for k in 0..3 {
            q[3 + k] = rng.gen_range(p.lower[k]..p.upper[k]);
        }
        if feasible(&q) {
            samples.push((p.objective(&q), q));
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.truncate(8);

    // Exterior penalty on peg penetration and the joint box with a growing
    // weight, each stage minimised by BFGS on central-difference gradients.
    let radius = p.robot.module_radius;
    let mut best = (f64::INFINITY, Vec::new());
    for (_, mut q) in samples {
        for stage in 0..5 {
            let mu = 10f64.powi(4 + 2 * stage);
            let merit = |q: &[f64]| {
                let pen: f64 = p
                    .positions(q)
                    .iter()
                    .flat_map(|x| p.env.pegs.iter().map(move |peg| clearance(*x, radius, peg).min(0.0).powi(2)))
                    .sum();
                let out: f64 = (0..3)
                    .map(|k| (p.lower[k] - q[3 + k]).max(0.0).powi(2) + (q[3 + k] - p.upper[k]).max(0.0).powi(2))
                    .sum();
                p.objective(q) + mu * (pen + out)
            };
            q = bfgs(&merit, q);
        }
        let f = p.objective(&q);
        if same_side(&q) && p.min_clearance(&q) > -1e-9 && f < best.0 {
            best = (f, q);
        }
    }
    (best.1, best.0)
}


fn gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-7 * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Quasi-Newton minimisation with an Armijo backtracking line search.
pub fn bfgs(f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> Vec<f64> {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut fx = f(x.as_slice());
    let mut g = gradient(f, x.as_slice());
    let mut h = DMatrix::<f64>::identity(n, n) * 1e-3;
    for _ in 0..500 {
        let mut d = -(&h * &g);
        if d.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n) * 1e-3;
            d = -(&h * &g);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * t;
            let fnew = f(xn.as_slice());
            if fnew <= fx + 1e-4 * t * d.dot(&g) {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = gradient(f, xn.as_slice());
        let sv = &xn - &x;
        let yv = &gn - &g;
        let sy = sv.dot(&yv);
        if sy > 1e-18 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &sv * yv.transpose() * rho;
            h = &a * &h * a.transpose() + &sv * sv.transpose() * rho;
        }
        let done = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1e-6) || sv.amax() < 1e-13;
        x = xn;
        fx = fnew;
        g = gn;
        if done {
            break;
        }
    }
    x.as_slice().to_vec()
}
