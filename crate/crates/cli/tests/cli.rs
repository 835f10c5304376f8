use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tacse3_core::format::{write_pgm, FieldSequence};
use tacse3_core::grid::Grid;
use tacse3_core::se3::{geodesic_angle, TimedTrajectory};
use tacse3_core::TrajectoryF64;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tacse3"));
    c.env_remove("TACSE3_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tacse3-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    run(bin().arg("simulate").args(extra).arg("--out").arg(&out));
    out
}

fn final_angle(csv: &Path) -> f64 {
    let t = TrajectoryF64::read_csv(std::fs::File::open(csv).map(std::io::BufReader::new).unwrap()).unwrap();
    let last = t.increments().last().unwrap().rot;
    geodesic_angle(&nalgebra::Matrix3::identity(), &last)
}

fn estimate(input: &Path, out: &Path, extra: &[&str]) -> Output {
    run(bin().arg("estimate").arg("--in").arg(input).arg("--out").arg(out).args(extra))
}

#[test]
fn simulate_is_deterministic_and_sized() {
    let dir = scratch("determinism");
    let args = ["--geometry", "sphere", "--motion", "rz:30:1.0", "--seed", "7", "--noise", "0.05", "--no-calibrate"];
    let a = simulate(&dir, "a.tfs", &args);
    let b = simulate(&dir, "b.tfs", &args);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let seq = FieldSequence::load(&a).unwrap();
    assert_eq!(seq.frame_count(), 120);
    assert_eq!(seq.header.sensor_count, 1);
    let gt = dir.join("a.tfs.gt.csv");
    assert_eq!(std::fs::read_to_string(gt).unwrap().lines().count(), 121);

    let d = simulate(&dir, "d.tfs", &["--motion", "rest:0.05", "--dual", "--no-calibrate"]);
    assert_eq!(FieldSequence::load(&d).unwrap().header.sensor_count, 2);
}

#[test]
fn seed_env_overrides_flag() {
    let dir = scratch("seed-env");
    let common = ["--motion", "rest:0.05", "--noise", "0.05", "--no-calibrate"];
    let a = simulate(&dir, "a.tfs", &[&common[..], &["--seed", "5"]].concat());
    let b = dir.join("b.tfs");
    run(bin()
        .env("TACSE3_SEED", "5")
        .arg("simulate")
        .args(common)
        .args(["--seed", "9", "--out"])
        .arg(&b));
    let c = simulate(&dir, "c.tfs", &[&common[..], &["--seed", "9"]].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn zero_motion_estimates_identity() {
    let dir = scratch("zero");
    let f = simulate(&dir, "z.tfs", &["--motion", "rest:0.2", "--no-calibrate"]);
    let traj = dir.join("z.csv");
    let diag = dir.join("z.jsonl");
    estimate(&f, &traj, &["--diagnostics", diag.to_str().unwrap()]);
    let text = std::fs::read_to_string(&traj).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    for r in rows {
        let q: Vec<f64> = r.split(',').skip(1).take(4).map(|v| v.parse().unwrap()).collect();
        assert_eq!(q, vec![1.0, 0.0, 0.0, 0.0], "{r}");
    }
    let diag = std::fs::read_to_string(diag).unwrap();
    assert_eq!(diag.lines().count(), 24);
    let first: serde_json::Value = serde_json::from_str(diag.lines().next().unwrap()).unwrap();
    for key in ["twist", "residual_norm", "rank", "contact_size", "contact_lost"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn coupled_and_decoupled_track_rotation() {
    let dir = scratch("modes");
    let f = simulate(&dir, "r.tfs", &["--motion", "rest:0.05", "--motion", "rz:30:0.5", "--motion", "rest:0.05"]);
    let gt = dir.join("r.tfs.gt.csv");
    let truth = final_angle(&gt);
    assert!((truth - 30.0).abs() < 1e-6);
    for mode in ["decoupled", "coupled"] {
        let out = dir.join(format!("{mode}.csv"));
        let o = estimate(&f, &out, &["--mode", mode, "--gt", gt.to_str().unwrap()]);
        let est = final_angle(&out);
        assert!((est - truth).abs() <= 1.0, "{mode}: {est} vs {truth}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("final rotation error"));
    }
}

#[test]
fn dual_reduces_translation_drift() {
    let dir = scratch("drift");
    let f = simulate(
        &dir,
        "t.tfs",
        &["--motion", "rest:0.05", "--motion", "tx:4:1", "--motion", "rest:0.05", "--dual", "--noise", "0.05", "--seed", "3"],
    );
    let (s, d) = (dir.join("single.csv"), dir.join("dual.csv"));
    estimate(&f, &s, &["--single-sensor", "0"]);
    estimate(&f, &d, &["--dual"]);
    let (single, dual) = (final_angle(&s), final_angle(&d));
    assert!(single > 1.0, "single-sensor drift {single}");
    assert!(dual < single, "dual {dual} vs single {single}");
}

#[test]
fn malformed_file_reports_offset() {
    let dir = scratch("malformed");
    let f = simulate(&dir, "m.tfs", &["--motion", "rest:0.05", "--no-calibrate"]);
    let mut bytes = std::fs::read(&f).unwrap();
    bytes.truncate(bytes.len() - 10);
    std::fs::write(&f, &bytes).unwrap();
    let out = bin()
        .args(["estimate", "--in"])
        .arg(&f)
        .arg("--out")
        .arg(dir.join("m.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("byte {}", bytes.len())), "{err}");
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = scratch("usage");
    let f = simulate(&dir, "u.tfs", &["--motion", "rest:0.05", "--no-calibrate"]);
    let cases: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--out".into(), "x.tfs".into()],
        vec!["simulate".into(), "--motion".into(), "rq:1:1".into(), "--out".into(), "x.tfs".into()],
        vec!["simulate".into(), "--motion".into(), "rz:30:1".into(), "--geometry".into(), "torus".into(), "--out".into(), "x.tfs".into()],
        vec!["estimate".into(), "--in".into(), f.display().to_string(), "--single-sensor".into(), "0".into(), "--dual".into(), "--out".into(), "x.csv".into()],
        vec!["estimate".into(), "--in".into(), f.display().to_string(), "--dual".into(), "--out".into(), "x.csv".into()],
        vec!["estimate".into(), "--in".into(), f.display().to_string(), "--mode".into(), "magic".into(), "--out".into(), "x.csv".into()],
    ];
    for args in cases {
        let out = bin().current_dir(&dir).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_file_supplies_defaults() {
    let dir = scratch("config");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# comment\ngeometry = flat\nnoise = 0.0\nwindow = 3\n").unwrap();
    let out = dir.join("c.tfs");
    run(bin()
        .args(["simulate", "--motion", "rest:0.05", "--no-calibrate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out));
    let seq = FieldSequence::load(&out).unwrap();
    assert_eq!(seq.header.metadata["scene"]["geometry"]["kind"], "flat");
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let bad = bin()
        .args(["simulate", "--motion", "rest:0.05", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn field_command_builds_sequence_from_images() {
    let dir = scratch("field");
    let pattern = |x: f64, y: f64| 128.0 + 60.0 * (0.7 * x).sin() * (0.5 * y).cos() + 50.0 * (0.31 * x + 0.23 * y).sin();
    let img = |dx: f64| Grid::from_fn(48, 40, |i, j| pattern(i as f64 - dx, j as f64).round() as u8);
    let save = |g: &Grid<u8>, name: &str| {
        let p = dir.join(name);
        write_pgm(g, std::fs::File::create(&p).unwrap()).unwrap();
        p
    };
    let r = save(&img(0.0), "ref.pgm");
    let a = save(&img(1.0), "a.pgm");
    let b = save(&img(2.0), "b.pgm");
    let out = dir.join("img.tfs");
    run(bin()
        .arg("field")
        .arg("--reference")
        .arg(&r)
        .arg("--current")
        .arg(&a)
        .arg("--current")
        .arg(&b)
        .arg("--out")
        .arg(&out));
    let seq = FieldSequence::load(&out).unwrap();
    assert_eq!(seq.frame_count(), 2);
    let c = seq.frames[0][1].grid.get(24, 20);
    assert!((c[0] - 2.0).abs() < 0.3, "{c:?}");
}

#[test]
fn rotation_sweep_table_has_nine_rows() {
    let dir = scratch("sweep");
    let out = dir.join("sweep.csv");
    run(bin().args(["bench", "rotation-sweep", "--seeds", "1", "--out"]).arg(&out));
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("axis,angle_deg,mean_err_deg,median_err_deg,max_err_deg,seeds")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("rx,30"));
    assert!(rows[8].starts_with("rz,90"));
}

#[test]
fn bench_output_is_independent_of_jobs() {
    let a = run(bin().args(["bench", "residual-demo", "--seeds", "3", "--jobs", "1"]));
    let b = run(bin().args(["bench", "residual-demo", "--seeds", "3", "--jobs", "3"]));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("setting,task,success_rate,trials"));
}

#[test]
fn geometry_sweep_has_one_row_per_geometry() {
    let out = run(bin().args(["bench", "geometry-sweep", "--seeds", "1"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let objects: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(objects, ["sphere", "ellipsoid", "cylinder", "flat"]);
}

#[test]
fn trajectory_csv_reads_back() {
    let dir = scratch("csv");
    let f = simulate(&dir, "s.tfs", &["--motion", "rx:10:0.2", "--no-calibrate"]);
    let gt = TimedTrajectory::read_csv(std::io::BufReader::new(std::fs::File::open(dir.join("s.tfs.gt.csv")).unwrap())).unwrap();
    assert_eq!(gt.len(), FieldSequence::load(&f).unwrap().frame_count());
}
