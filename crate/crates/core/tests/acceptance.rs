//! Acceptance report: one PASS/FAIL line per criterion, then the test fails
//! if any line failed. Run with `--nocapture` to see the report.

use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tacse3_core::contact::{ContactPoint, ContactPointSet, SensorIntrinsics};
use tacse3_core::experiments::{
    calibrate_gains, calibrated_pair, disturbance_demo, final_increment, geometry_sweep, median,
    residual_demo, rotation_script, rotation_sweep, run_tracker, translation_drift_pair,
    DisturbanceScenario, RunSettings, SWEEP_RATE_DEG, TASK_PROFILES,
};
use tacse3_core::field::{nhhd, FlowField};
use tacse3_core::format::FieldSequence;
use tacse3_core::grid::Grid;
use tacse3_core::se3::{compose, exp_step, hat, rotation_log, Pose, Twist};
use tacse3_core::sim::{render_sequence, Geometry, MotionScript, SceneConfig};
use tacse3_core::twist::{
    build_constraints, estimate_rotation_shear, solve_twist_coupled, ConstraintMode, EstimatorMode,
};

const NOISE_FRACTION: f64 = 0.05;
const SEEDS: u64 = 20;

struct Report {
    lines: Vec<(String, bool, String)>,
}

impl Report {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), ok, detail));
    }
}

fn seeds() -> Vec<u64> {
    (1..=SEEDS).collect()
}

fn series_exp(xi: &Twist<f64>, dt: f64, terms: usize) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(hat(&xi.omega) * dt));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(xi.trans * dt));
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..terms {
        term = term * m / k as f64;
        sum += term;
    }
    sum
}

fn homogeneous(p: &Pose<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.pos);
    m
}

fn random_twist(rng: &mut ChaCha8Rng) -> Twist<f64> {
    Twist::from_array(std::array::from_fn(|k| {
        let s = if k < 3 { 1.5 } else { 4.0 };
        rng.random_range(-s..s)
    }))
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_series, mut worst_inv) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let xi = random_twist(&mut rng);
        let dt = rng.random_range(0.0..1.0);
        let closed = homogeneous(&exp_step(&xi, dt));
        worst_series = worst_series.max((closed - series_exp(&xi, dt, 30)).abs().max());
        let (a, b) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let split = compose(&exp_step(&xi, a), &exp_step(&xi, b));
        worst_inv = worst_inv.max((homogeneous(&split) - homogeneous(&exp_step(&xi, a + b))).abs().max());
        let back = compose(&exp_step(&xi, dt), &exp_step(&xi, -dt));
        worst_inv = worst_inv.max((homogeneous(&back) - Matrix4::identity()).abs().max());
        let p = exp_step(&xi, dt);
        worst_inv = worst_inv.max(p.orthogonality_residual()).max((p.rot.determinant() - 1.0).abs());
    }
    let elapsed = start.elapsed();
    r.record(
        "1 SE(3) kernel",
        worst_series <= 1e-10 && worst_inv <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("series dev {worst_series:.2e} (≤1e-10), invariants {worst_inv:.2e} (≤1e-9), {elapsed:.2?} (<1 s)"),
    );
}

fn analytic(n: usize, f: impl Fn(f64, f64) -> [f64; 2]) -> FlowField<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    FlowField::from_grid(Grid::from_fn(n, n, |i, j| f((i as f64 - c) / c, (j as f64 - c) / c)))
}

fn sup(g: &Grid<[f64; 2]>, margin: usize) -> f64 {
    let (w, h) = g.dims();
    let mut m: f64 = 0.0;
    for j in margin..h - margin {
        for i in margin..w - margin {
            let v = g.get(i, j);
            m = m.max(v[0].abs()).max(v[1].abs());
        }
    }
    m
}

fn criterion_2(r: &mut Report) {
    let cases: [(&str, fn(f64, f64) -> [f64; 2], bool); 2] = [
        ("curl-free", |x, y| [2.0 * x + 0.1 * y.powi(3), 2.0 * y + 0.3 * x * y * y], true),
        ("divergence-free", |x, y| [-y, x], false),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, f, curl_free) in cases {
        let flow = analytic(64, f);
        let scale = sup(&flow.grid, 0);
        let start = Instant::now();
        let c = nhhd(&flow).expect("nhhd");
        let elapsed = start.elapsed();
        let wrong = if curl_free { sup(&c.r, 1) } else { sup(&c.d, 1) } / scale;
        let mut recon: f64 = 0.0;
        for ((w, d), (rr, k)) in flow
            .grid
            .as_slice()
            .iter()
            .zip(c.d.as_slice())
            .zip(c.r.as_slice().iter().zip(c.k.as_slice()))
        {
            for a in 0..2 {
                recon = recon.max((d[a] + rr[a] + k[a] - w[a]).abs());
            }
        }
        ok &= wrong <= 1e-3 && recon <= 1e-12 && elapsed < Duration::from_secs(1);
        details.push(format!("{name}: wrong {wrong:.2e} (≤1e-3), recon {recon:.1e}, {elapsed:.2?}"));
    }
    r.record("2 NHHD", ok, details.join("; "));
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(0.0..1.5),
            )
        })
        .collect()
}

fn criterion_3(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut xi = random_twist(&mut rng);
        xi.trans.z = 0.0;
        let n = rng.random_range(4..40);
        let pts = random_points(&mut rng, n)
            .into_iter()
            .map(|q| ContactPoint { q, v: xi.velocity_at(&q) })
            .collect();
        let sys = build_constraints(&ContactPointSet::new(pts), ConstraintMode::Planar).expect("rows");
        let sol = solve_twist_coupled(&sys, 1e-10).expect("solve");
        let (a, b) = (sol.twist.to_array(), xi.to_array());
        let err: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err / norm);
    }
    r.record(
        "3 exact twist recovery",
        worst <= 1e-8,
        format!("worst relative error {worst:.2e} over 1000 twists (≤1e-8)"),
    );
}

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(3..60);
        let qs = random_points(&mut rng, n);
        let vs: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0))
            .collect();
        let c = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);
        let set = |off: Vector3<f64>| {
            ContactPointSet::new(qs.iter().zip(&vs).map(|(q, v)| ContactPoint { q: *q, v: v + off }).collect())
        };
        let a = estimate_rotation_shear(&set(Vector3::zeros()), 3, 1e-10).expect("fit").omega;
        let b = estimate_rotation_shear(&set(c), 3, 1e-10).expect("fit").omega;
        let scale = 1.0 + a.norm() + c.norm();
        worst = worst.max((a - b).norm() / scale);
    }
    r.record(
        "4 decoupling invariance",
        worst <= 1e-12,
        format!("worst |Δω| / (1 + |ω| + |c|) = {worst:.2e} over 1000 cases (≤1e-12)"),
    );
}

fn noisy_sphere() -> SceneConfig {
    SceneConfig::default().with_noise_fraction(NOISE_FRACTION)
}

/// Returns the noisy sweep medians for the monotonicity invariant.
fn criterion_5(r: &mut Report) -> Vec<[f64; 3]> {
    let angles = [30.0, 60.0, 90.0];
    let clean = SceneConfig::default();
    let mut settings = RunSettings::default();
    settings.gains = calibrate_gains(&clean, &settings).expect("calibration");
    let rows = rotation_sweep(&clean, &settings, &[0, 1, 2], &angles, &[7], 1).expect("noise-free sweep");
    let clean_worst = rows.iter().map(|r| r.max_err_deg).fold(0.0, f64::max);

    let scene = noisy_sphere();
    let mut settings = RunSettings::default();
    settings.gains = calibrate_gains(&scene, &settings).expect("calibration");
    let targets = [3.0, 7.0, 12.0];
    let mut ok = clean_worst <= 0.5;
    let mut medians = Vec::new();
    let mut parts = vec![format!("noise-free worst {clean_worst:.3}° (≤0.5°)")];
    for axis in 0..3 {
        let start = Instant::now();
        let rows = rotation_sweep(&scene, &settings, &[axis], &angles, &seeds(), 1).expect("noisy sweep");
        let elapsed = start.elapsed();
        let m = [rows[0].median_err_deg, rows[1].median_err_deg, rows[2].median_err_deg];
        ok &= m.iter().zip(&targets).all(|(v, t)| v <= t) && elapsed < Duration::from_secs(60);
        parts.push(format!(
            "{} medians {:.3}/{:.3}/{:.3}° (≤3/7/12°) in {:.1?} (<60 s)",
            rows[0].axis, m[0], m[1], m[2], elapsed
        ));
        medians.push(m);
    }
    r.record("5 closed-loop rotation tracking", ok, parts.join("; "));
    medians
}

fn criterion_6(r: &mut Report) {
    let scene = noisy_sphere();
    let (single, dual) = calibrated_pair(&scene, EstimatorMode::Decoupled, 5).expect("calibration");
    let mut pairs = Vec::new();
    for seed in seeds() {
        pairs.push(translation_drift_pair(&scene, &single, &dual, seed).expect("translation run"));
    }
    let wins = pairs.iter().filter(|(s, d)| d < s).count();
    let ms = median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let md = median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let frac = wins as f64 / pairs.len() as f64;
    r.record(
        "6 dual-sensor ambiguity reduction",
        frac >= 0.95 && md <= 0.5 * ms,
        format!(
            "dual < single in {wins}/{} runs (≥95%), median drift single {ms:.3}° dual {md:.4}° (dual ≤ ½ single)",
            pairs.len()
        ),
    );
}

fn criterion_7(r: &mut Report) {
    let base = SceneConfig::default();
    let width_mm = base.width as f64 / base.intrinsics.kappa_x;
    let q = 0.25 * width_mm;
    let offsets = [
        [q, 0.0],
        [-q, 0.0],
        [0.0, 0.75 * q],
        [0.0, -0.75 * q],
        [0.73 * q, -0.49 * q],
        [-0.91 * q, 0.62 * q],
    ];
    let settings = RunSettings::default();
    let estimate = |offset: [f64; 2], axis: usize| -> Vector3<f64> {
        let scene = SceneConfig {
            patch_offset: offset,
            ..base
        };
        let script = rotation_script(axis, 30.0, SWEEP_RATE_DEG, settings.window);
        let sim = render_sequence(&scene, &script, 11).expect("render");
        assert!(sim.contact_lost_at.is_none(), "patch left the sensor at offset {offset:?}");
        let run = run_tracker(&sim, settings.tracker_config(&scene)).expect("track");
        rotation_log(&final_increment(&run.estimate).rot)
    };
    let (mut worst_dir, mut worst_mag) = (0.0f64, 0.0f64);
    for axis in 0..3 {
        let reference = estimate([0.0, 0.0], axis);
        for off in offsets {
            let w = estimate(off, axis);
            let cos = (w.dot(&reference) / (w.norm() * reference.norm())).clamp(-1.0, 1.0);
            worst_dir = worst_dir.max(cos.acos().to_degrees());
            worst_mag = worst_mag.max((w.norm() / reference.norm() - 1.0).abs());
        }
    }
    r.record(
        "7 frame equivariance",
        worst_dir <= 1.0 && worst_mag <= 0.02,
        format!(
            "offsets up to ±{q:.1} mm: worst direction change {worst_dir:.4}° (≤1°), magnitude {:.3}% (≤2%)",
            100.0 * worst_mag
        ),
    );
}

fn criterion_8(r: &mut Report) {
    let clean = SceneConfig::default();
    let mut settings = RunSettings::default();
    settings.gains = calibrate_gains(&clean, &settings).expect("calibration");
    let nf = disturbance_demo(&DisturbanceScenario::new(clean, settings, 2, 20.0, 1)).expect("demo");
    let (rows, _) = residual_demo(&noisy_sphere(), 5, &seeds(), 1).expect("residual demo");
    let mut ordering = true;
    let mut parts = Vec::new();
    for (task, _) in TASK_PROFILES {
        let rate = |setting: &str| {
            rows.iter()
                .find(|r| r.task == task && r.setting == setting)
                .map(|r| r.success_rate)
                .expect("row")
        };
        let (base, corr) = (rate("base"), rate("base+correction"));
        ordering &= corr >= base;
        parts.push(format!("{task} {:.0}%→{:.0}%", 100.0 * base, 100.0 * corr));
    }
    let ok = ordering && nf.error_corrected_deg <= 2.0 && (nf.error_uncorrected_deg - 20.0).abs() <= 1.0;
    r.record(
        "8 residual demo",
        ok,
        format!(
            "success without→with correction: {} (with ≥ without); noise-free 20° z: corrected {:.3}° (≤2°), uncorrected {:.2}° (≈20°)",
            parts.join(", "),
            nf.error_corrected_deg,
            nf.error_uncorrected_deg
        ),
    );
}

fn criterion_9(r: &mut Report) {
    let dir = std::env::temp_dir().join(format!("tacse3-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let small = SensorIntrinsics {
        kappa_x: 6.0,
        kappa_y: 6.5,
        i0: 79.5,
        j0: 59.5,
        ..SensorIntrinsics::default()
    };
    let configs: [(&str, SceneConfig); 3] = [
        ("single", SceneConfig::default().with_noise_fraction(0.05)),
        (
            "dual",
            SceneConfig {
                dual: true,
                ..SceneConfig::default()
            },
        ),
        (
            "single-small",
            SceneConfig {
                width: 160,
                height: 120,
                intrinsics: small,
                geometry: Geometry::from_name("cylinder").expect("geometry"),
                ..SceneConfig::default()
            }
            .with_noise_fraction(0.02),
        ),
    ];
    let mut files = 0;
    let mut ok = true;
    for (name, scene) in configs {
        for k in 0..4u64 {
            let script = MotionScript::new(120.0).rotation((k % 3) as usize, 2.0, 0.05);
            let sim = render_sequence(&scene, &script, 100 + k).expect("render");
            let seq = FieldSequence::from_frames(&sim.frames, vec![scene.intrinsics; scene.sensor_count()], 120.0)
                .expect("sequence");
            let path = dir.join(format!("{name}-{k}.tfs"));
            seq.save(&path).expect("write");
            let back = FieldSequence::load(&path).expect("read");
            let same_bits = back.frames.iter().flatten().zip(seq.frames.iter().flatten()).all(|(a, b)| {
                a.timestamp.to_bits() == b.timestamp.to_bits()
                    && a.grid
                        .as_slice()
                        .iter()
                        .zip(b.grid.as_slice())
                        .all(|(p, q)| p.iter().zip(q).all(|(x, y)| x.to_bits() == y.to_bits()))
            });
            let bytes = std::fs::read(&path).expect("read bytes");
            ok &= same_bits && back.header == seq.header && back.encode().expect("encode") == bytes;
            files += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    r.record(
        "9 file-format round trip",
        ok && files >= 10,
        format!("{files} files over 3 sensor configurations, bit-exact: {ok}"),
    );
}

fn criterion_10(r: &mut Report) {
    let scene = noisy_sphere();
    let geometries: Vec<Geometry> = Geometry::NAMES
        .iter()
        .map(|n| Geometry::from_name(n).expect("geometry"))
        .collect();
    let rows = geometry_sweep(&scene, &geometries, 30.0, &seeds(), 5, 1).expect("geometry sweep");
    let ok = rows.len() == 4 && rows.iter().all(|r| r.median_err_deg <= 4.0);
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{} ({}) {:.3}°", r.object, r.axes, r.median_err_deg))
        .collect();
    r.record("10 geometry sweep", ok, format!("median errors {} (≤4°)", parts.join(", ")));
}

#[test]
fn acceptance() {
    println!();
    let mut r = Report { lines: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    let medians = criterion_5(&mut r);
    criterion_6(&mut r);
    criterion_7(&mut r);
    criterion_8(&mut r);
    criterion_9(&mut r);
    criterion_10(&mut r);

    let monotone = medians.iter().all(|m| m[2] >= m[0]);
    let detail: Vec<String> = medians
        .iter()
        .zip(["rx", "ry", "rz"])
        .map(|(m, a)| format!("{a} {:.3}° → {:.3}°", m[0], m[2]))
        .collect();
    r.record(
        "invariant: error grows with angle",
        monotone,
        format!("median at 90° ≥ median at 30°: {}", detail.join(", ")),
    );

    let failed: Vec<&str> = r.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!("{} of {} checks passed", r.lines.len() - failed.len(), r.lines.len());
    assert!(failed.is_empty(), "failed: {failed:?}");
}
