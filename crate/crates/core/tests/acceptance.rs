//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so that every criterion is evaluated and reported
//! even when an earlier one fails. The process exits non-zero on failures
//! only when `ACCEPTANCE_STRICT=1` is set.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{bisect, brute_force, instance, oracle_lengths, problem};
use nalgebra::Vector2;

use sidewinder::cable::{commanded_lengths, lateral_interval, taut_lengths, CableGeometry, CompliancePolicy};
use sidewinder::gait::{displayed_wavelength, joint_commands, GaitParams};
use sidewinder::harness::{run_sweep, run_trial, ExperimentKind, Setup, SweepResult, GAIT_SWEEP_SHAPES, SPACINGS};
use sidewinder::io::{self, RunConfig};
use sidewinder::kinematics::RobotConfig;
use sidewinder::solver::{solve_problem, SolverParams};

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}: {detail}");
        self.lines.push((id.to_string(), ok));
    }
}

fn deg(d: f64) -> f64 {
    d.to_radians()
}

/// Worker threads for the batteries; at least four so the serial
/// comparison exercises real concurrency.
fn parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(4)
}

fn criterion_1(r: &mut Report) {
    let t0 = Instant::now();
    let geom = CableGeometry::default();
    let mut taut_err: f64 = 0.0;
    for k in -105..=105 {
        let a = deg(k as f64);
        let (l, rr) = taut_lengths(&geom, a);
        let (ol, or) = oracle_lengths(&geom, a);
        taut_err = taut_err.max((l - ol).abs()).max((rr - or).abs());
    }
    let lim = geom.alpha_limit;
    let turn = 2.0 * geom.phi();
    let mut inv_err: f64 = 0.0;
    for gi in 0..=6 {
        let policy = CompliancePolicy::new(0.25 * gi as f64);
        for amp_deg in [67.5, 75.0, 82.5] {
            let amp = deg(amp_deg);
            for k in -82..=82 {
                let a = deg(k as f64).clamp(-amp, amp);
                let cmd = commanded_lengths(&geom, &policy, amp, a);
                let iv = lateral_interval(&geom, &policy, amp, a).unwrap();
                let (tl, tr) = taut_lengths(&geom, a);
                if (cmd.left - tl).abs() > 1e-12 && cmd.left < geom.max_length() {
                    let root = bisect(|x| oracle_lengths(&geom, x).0 - cmd.left, -lim, turn);
                    inv_err = inv_err.max((iv.max - root.min(lim)).abs());
                }
                if (cmd.right - tr).abs() > 1e-12 && cmd.right < geom.max_length() {
                    let root = bisect(|x| oracle_lengths(&geom, x).1 - cmd.right, -turn, lim);
                    inv_err = inv_err.max((iv.min - root.max(-lim)).abs());
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "1 geometry exactness",
        taut_err <= 1e-12 && inv_err <= 1e-9 && secs < 1.0,
        format!("taut error {taut_err:.1e} m (<= 1e-12), inverse error {inv_err:.1e} rad (<= 1e-9), {secs:.2} s"),
    );
}

fn criterion_2(r: &mut Report) {
    let t0 = Instant::now();
    let geom = CableGeometry::default();
    let amp = deg(75.0);

    let mut pinned = true;
    let mut one_sided = true;
    for k in -75..=75 {
        let a = deg(k as f64);
        let rigid = lateral_interval(&geom, &CompliancePolicy::new(0.0), amp, a).unwrap();
        pinned &= rigid.min == a && rigid.max == a;
        let half = lateral_interval(&geom, &CompliancePolicy::new(0.5), amp, a).unwrap();
        one_sided &= match k {
            k if k > 0 => half.min == a && half.max > a,
            k if k < 0 => half.max == a && half.min < a,
            _ => half.contains(a),
        };
    }
    let mut spec = Setup::default().flat_sweep(&[0.0]).remove(0);
    spec.trace = true;
    let out = run_trial(&spec);
    let mut track_err: f64 = 0.0;
    for rec in &out.trace {
        let cmd = joint_commands(&spec.gait, &spec.robot, rec.t).joint_angles(&spec.robot);
        for (x, c) in rec.alpha.iter().zip(&cmd) {
            track_err = track_err.max((x - c).abs());
        }
    }
    let tracked = out.error.is_none() && track_err <= 1e-6;

    let mut nested = true;
    let mut cases = 0;
    for amp_deg in [67.5, 75.0, 82.5] {
        let amp = deg(amp_deg);
        for k in -82..=82 {
            let a = deg(k as f64).clamp(-amp, amp);
            let mut prev = lateral_interval(&geom, &CompliancePolicy::new(0.0), amp, a).unwrap();
            for gi in 1..=30 {
                let cur = lateral_interval(&geom, &CompliancePolicy::new(0.05 * gi as f64), amp, a).unwrap();
                nested &= prev.min >= cur.min - 1e-12 && prev.max <= cur.max + 1e-12;
                prev = cur;
                cases += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "2a rigid regime",
        pinned && tracked,
        format!("intervals degenerate: {pinned}; max |alpha - command| over a 2-cycle G = 0 trial {track_err:.1e} rad (<= 1e-6)"),
    );
    r.check("2b directional regime", one_sided, format!("G = 0.5 one-sided with tight bound at command: {one_sided}"));
    r.check(
        "2c interval nesting",
        nested && secs < 10.0,
        format!("{cases} (G, G + 0.05) pairs nested: {nested}; {secs:.2} s"),
    );
}

fn criterion_3(r: &mut Report, flat: &SweepResult, spacing_a: &[(String, Vec<u8>)], spacing_serial: &[(String, Vec<u8>)]) {
    let t0 = Instant::now();
    let kkt = flat.max_kkt_residual;
    let mut worst: f64 = 0.0;
    let mut converged = true;
    let cases = [
        (Vector2::new(0.0, 0.0), [0.3, 0.4, 0.6]),
        (Vector2::new(0.03, -0.02), [0.5, 0.2, 0.4]),
        (Vector2::new(-0.02, 0.01), [0.1, 0.6, 0.5]),
        (Vector2::new(0.3, 0.3), [0.1, 0.1, -0.3]),
    ];
    for (seed, (offset, target)) in cases.iter().enumerate() {
        let inst = instance(*offset, *target);
        let p = problem(&inst);
        let q0: Vec<f64> = [0.0, 0.0, 0.0].iter().chain(inst.alpha0.iter()).copied().collect();
        match solve_problem(&p, &q0, &SolverParams::default(), 0.0) {
            Ok(sol) => {
                let (_, f_oracle) = brute_force(&p, &q0, seed as u64 + 1);
                worst = worst.max((p.objective(&sol.q) - f_oracle).abs());
            }
            Err(_) => converged = false,
        }
    }
    let identical = spacing_a == spacing_serial;
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "3 solver correctness",
        kkt <= 1e-8 && converged && worst <= 1e-6 && identical,
        format!(
            "max KKT residual over the flat sweep {kkt:.1e} (<= 1e-8); brute-force objective gap {worst:.1e} (<= 1e-6) on {} instances; parallel 1 vs {} byte-identical: {identical}; oracle {secs:.1} s",
            cases.len(),
            parallelism()
        ),
    );
}

fn criterion_4(r: &mut Report, flat: &SweepResult, secs: f64) {
    let get = |g: f64| flat.aggregates.iter().find(|a| (a.g - g).abs() < 1e-9).unwrap();
    let disp = |g: f64| get(g).displacement_per_cycle.as_ref().map(|s| s.mean).unwrap_or(f64::NAN);
    let cot = |g: f64| get(g).cot.as_ref().map(|s| s.mean).unwrap_or(f64::NAN);
    let (d0, d1, d15) = (disp(0.0), disp(1.0), disp(1.5));
    r.check(
        "4a displacement ordering",
        d0 > d1 && d1 > d15,
        format!("disp(G=0) {d0:.3} > disp(G=1) {d1:.3} > disp(G=1.5) {d15:.3} m/cycle ({secs:.1} s sweep)"),
    );
    r.check(
        "4b displacement at G = 0",
        (d0 - 0.476).abs() <= 0.3 * 0.476,
        format!("{d0:.3} m/cycle within 0.476 +/- 30% [0.333, 0.619]"),
    );
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
    let cots: Vec<f64> = grid.iter().map(|&g| cot(g)).collect();
    let nonincreasing = cots[..5].windows(2).all(|w| w[1] <= w[0]);
    let argmin = cots.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| grid[i]).unwrap();
    let listing: Vec<String> = grid.iter().zip(&cots).map(|(g, c)| format!("{g}: {c:.3}")).collect();
    r.check(
        "4c cost of transport trend",
        nonincreasing && argmin == 1.0 && secs < 300.0,
        format!("non-increasing over G <= 1: {nonincreasing}; grid minimum at G = {argmin}; cot [{}]", listing.join(", ")),
    );
}

fn probability(sweep: &SweepResult, spacing: f64, g: f64) -> f64 {
    sweep.traverse_probability(spacing, g).unwrap_or(f64::NAN)
}

fn criterion_5(r: &mut Report, sweep: &SweepResult, secs: f64) {
    let mut dominates = true;
    let mut cells = Vec::new();
    for &d in &SPACINGS {
        let (p0, p5, p1) = (probability(sweep, d, 0.0), probability(sweep, d, 0.5), probability(sweep, d, 1.0));
        dominates &= p1 >= p0;
        cells.push(format!("{:.0} cm: {p0:.1}/{p5:.1}/{p1:.1}", d * 100.0));
    }
    let (p0, p1) = (probability(sweep, 0.70, 0.0), probability(sweep, 0.70, 1.0));
    r.check(
        "5 obstacle battery",
        dominates && p1 >= 0.6 && p0 <= 0.2 && secs < 1200.0,
        format!(
            "P(G=1) >= P(G=0) at every spacing: {dominates}; at 70 cm P(G=1) = {p1:.1} (>= 0.6), P(G=0) = {p0:.1} (<= 0.2); P for G = 0/0.5/1 [{}]; {secs:.1} s",
            cells.join(", ")
        ),
    );
}

fn success_mean(sweep: &SweepResult, g: f64, pick: fn(&sidewinder::TrialResult) -> Option<f64>) -> (f64, usize) {
    let v: Vec<f64> = sweep.rows.iter().filter(|t| t.success && (t.g - g).abs() < 1e-9).filter_map(pick).collect();
    let n = v.len();
    (if n > 0 { v.iter().sum::<f64>() / n as f64 } else { f64::NAN }, n)
}

fn criterion_6(r: &mut Report, sweep: &SweepResult) {
    let (c0, n0) = success_mean(sweep, 0.0, |t| t.cycles_to_traverse);
    let (c5, _) = success_mean(sweep, 0.5, |t| t.cycles_to_traverse);
    let (c1, n1) = success_mean(sweep, 1.0, |t| t.cycles_to_traverse);
    let (o0, _) = success_mean(sweep, 0.0, |t| t.reorientation);
    let (o5, _) = success_mean(sweep, 0.5, |t| t.reorientation);
    let (o1, _) = success_mean(sweep, 1.0, |t| t.reorientation);
    r.check(
        "6a cycles-to-traverse ordering",
        c1 < c0,
        format!("mean over successes G=1 {c1:.2} (n={n1}) < G=0 {c0:.2} (n={n0}); G=0.5 {c5:.2}"),
    );
    r.check(
        "6b reorientation ordering",
        o1 < o0,
        format!("mean over successes G=1 {o1:.1} deg < G=0 {o0:.1} deg; G=0.5 {o5:.1} deg"),
    );
}

fn criterion_7(r: &mut Report, sweep: &SweepResult, secs: f64) {
    let mut ok = secs < 900.0;
    let mut cells = Vec::new();
    for (amp, xi) in GAIT_SWEEP_SHAPES {
        let p = |g: f64| {
            sweep
                .aggregates
                .iter()
                .find(|a| (a.amp_h_deg - amp).abs() < 1e-9 && (a.xi_h - xi).abs() < 1e-9 && (a.g - g).abs() < 1e-9)
                .and_then(|a| a.traverse_probability)
                .unwrap_or(f64::NAN)
        };
        let (p0, p1) = (p(0.0), p(1.0));
        ok &= p1 >= 0.6 && p1 > p0;
        cells.push(format!("({amp}, {xi}): P(G=0) {p0:.1}, P(G=1) {p1:.1}"));
    }
    r.check("7 gait robustness", ok, format!("need P(G=1) >= 0.6 and > P(G=0): [{}]; {secs:.1} s", cells.join("; ")));
}

fn criterion_8(r: &mut Report) {
    let robot = RobotConfig::default();
    let base = GaitParams::default();
    let mut ok = true;
    let mut cells = Vec::new();
    for ((amp, xi), want) in GAIT_SWEEP_SHAPES.iter().zip([0.79, 0.91, 1.04]) {
        let g = GaitParams { amp_h: deg(*amp), xi_h: *xi, ..base };
        let l = displayed_wavelength(&g, &robot).unwrap_or(f64::NAN);
        ok &= (l - want).abs() <= 0.1 * want;
        cells.push(format!("({amp}, {xi}): {:.1} cm vs {:.0} cm", l * 100.0, want * 100.0));
    }
    r.check("8 displayed wavelength", ok, format!("+/- 10%: [{}]", cells.join("; ")));
}

fn criterion_9(r: &mut Report) {
    let t0 = Instant::now();
    let a = run_trial(&Setup::default().flat_sweep(&[1.0]).remove(0)).result;
    let mut heavy = Setup { robot: RobotConfig { mass_total: 6.0, ..RobotConfig::default() }, ..Setup::default() };
    heavy.trace = false;
    let b = run_trial(&heavy.flat_sweep(&[1.0]).remove(0)).result;
    let (ca, cb) = (a.cot.unwrap_or(f64::NAN), b.cot.unwrap_or(f64::NAN));
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "9 mass cancellation",
        (ca - cb).abs() <= 1e-12 && secs < 60.0,
        format!("cot 3 kg {ca:.15} vs 6 kg {cb:.15} (|diff| {:.1e} <= 1e-12)", (ca - cb).abs()),
    );
}

/// Run an experiment, write its tables and charts and return the bytes of
/// every file produced.
fn run_to_files(cfg: &RunConfig, parallel: usize, dir: &Path) -> (SweepResult, Vec<(String, Vec<u8>)>) {
    let specs = cfg.trial_specs().expect("trial specs");
    let sweep = run_sweep(cfg.experiment, &specs, parallel).expect("sweep runs");
    io::write_results(&sweep, cfg, dir).expect("results written");
    io::emit_plots(&sweep, dir).expect("plots written");
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    (sweep, files)
}

fn report_files(files: &[(String, Vec<u8>)]) -> Vec<(String, Vec<u8>)> {
    files
        .iter()
        .filter(|(n, _)| n == "results.csv" || n.ends_with(".svg"))
        .cloned()
        .collect()
}

fn main() {
    let mut r = Report { lines: Vec::new() };
    let n = parallelism();
    let tmp = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };

    criterion_1(&mut r);
    criterion_2(&mut r);

    let t = Instant::now();
    let (flat, _) = run_to_files(&RunConfig::new(ExperimentKind::FlatSweep), n, &sub("flat"));
    let flat_secs = t.elapsed().as_secs_f64();

    let spacing_cfg = RunConfig::new(ExperimentKind::SpacingSweep);
    let t = Instant::now();
    let (spacing, files_a) = run_to_files(&spacing_cfg, n, &sub("spacing-a"));
    let spacing_secs = t.elapsed().as_secs_f64();
    let (_, files_b) = run_to_files(&spacing_cfg, n, &sub("spacing-b"));
    let (_, files_serial) = run_to_files(&spacing_cfg, 1, &sub("spacing-serial"));

    criterion_3(&mut r, &flat, &files_a, &files_serial);
    criterion_4(&mut r, &flat, flat_secs);
    criterion_5(&mut r, &spacing, spacing_secs);
    criterion_6(&mut r, &spacing);

    let t = Instant::now();
    let (gait, _) = run_to_files(&RunConfig::new(ExperimentKind::GaitSweep), n, &sub("gait"));
    criterion_7(&mut r, &gait, t.elapsed().as_secs_f64());

    criterion_8(&mut r);
    criterion_9(&mut r);

    let (a, b) = (report_files(&files_a), report_files(&files_b));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    r.check(
        "10 determinism",
        a == b && names.len() == 4,
        format!("two full spacing sweeps byte-identical over {}: {}", names.join(", "), a == b),
    );

    let passed = r.lines.iter().filter(|l| l.1).count();
    println!("acceptance: {passed}/{} checks passed", r.lines.len());
    if passed < r.lines.len() {
        let failed: Vec<&str> = r.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
        println!("failing: {}", failed.join(", "));
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
