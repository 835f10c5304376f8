mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use nalgebra::Matrix3;
use serde_json::json;

use tacse3_core::experiments::{self, RunSettings};
use tacse3_core::field::{field_from_images, ImageFieldConfig, TactileFrame};
use tacse3_core::format::{read_pgm, FieldSequence};
use tacse3_core::fusion::MirrorConfig;
use tacse3_core::pipeline::{SensorSelection, Tracker, TrackerConfig};
use tacse3_core::se3::{align_trajectories, geodesic_angle};
use tacse3_core::sim::{render_sequence, Geometry, MotionScript, SceneConfig};
use tacse3_core::twist::EstimatorMode;
use tacse3_core::{IntrinsicsF64, TrajectoryF64};

use config::{parse_gains, resolve_seed, RunConfig};

#[derive(Parser)]
#[command(name = "tacse3", version, about = "Tactile force-field SE(3) tracking: simulate, estimate, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic field sequence and its ground truth.
    Simulate(SimulateArgs),
    /// Track a field sequence and write the trajectory.
    Estimate(EstimateArgs),
    /// Build a single-sensor field sequence from marker images (PGM).
    Field(FieldArgs),
    /// Simulator benchmarks written as CSV tables.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// sphere | ellipsoid | cylinder | flat
    #[arg(long)]
    geometry: Option<String>,
    /// Motion segment `AXIS:AMOUNT:SECONDS` (rx/ry/rz in degrees, tx/ty/tz
    /// in mm) or `rest:SECONDS`; repeat for several segments.
    #[arg(long = "motion", required = true)]
    motions: Vec<String>,
    /// Render the mirrored second sensor.
    #[arg(long)]
    dual: bool,
    /// Noise standard deviation as a fraction of the peak normal response.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Indentation depth, mm.
    #[arg(long)]
    depth: Option<f64>,
    /// Output field sequence (TFS1).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth trajectory CSV; defaults to `<out>.gt.csv`.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Skip the per-axis gain calibration stored in the header.
    #[arg(long)]
    no_calibrate: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// coupled | decoupled
    #[arg(long)]
    mode: Option<String>,
    /// Smoothing window length L, frames.
    #[arg(long)]
    window: Option<usize>,
    /// Track with one sensor only.
    #[arg(long, conflicts_with = "dual")]
    single_sensor: Option<usize>,
    /// Fuse both sensors (default when the file has two).
    #[arg(long)]
    dual: bool,
    /// Per-axis rotation gains `gx,gy,gz`; default from the file header.
    #[arg(long)]
    gains: Option<String>,
    /// Contact threshold on the smoothed normal channel.
    #[arg(long)]
    tau: Option<f64>,
    /// Trajectory CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines diagnostics, one object per frame.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Ground-truth CSV to report errors against.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FieldArgs {
    /// Undeformed reference image.
    #[arg(long)]
    reference: PathBuf,
    /// Deformed images, one per frame.
    #[arg(long = "current", required = true)]
    current: Vec<PathBuf>,
    #[arg(long, default_value_t = 120.0)]
    frame_rate: f64,
    /// Block-matching window radius, px.
    #[arg(long, default_value_t = 4)]
    window_radius: usize,
    /// Block-matching search radius, px.
    #[arg(long, default_value_t = 4)]
    search_radius: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchKind,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// First seed; seeds are consecutive from here.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Worker threads for seed-level runs; output order does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// CSV output; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum BenchKind {
    /// Axis × angle × error over rx/ry/rz and 30/60/90°.
    RotationSweep,
    /// Spurious rotation under translation: single vs dual, decoupled vs coupled.
    DecoupleAblation,
    /// 30° error per object geometry.
    GeometrySweep,
    /// Task success with and without the residual correction.
    ResidualDemo,
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ValueValidation, msg)
        .exit()
}

fn parse_motion(spec: &str, script: MotionScript) -> Result<MotionScript> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> { s.parse().with_context(|| format!("motion `{spec}`: bad number `{s}`")) };
    match parts.as_slice() {
        ["rest", d] => Ok(script.rest(num(d)?)),
        [axis, amount, d] => {
            let (amount, d) = (num(amount)?, num(d)?);
            let idx = |c: char| "xyz".find(c);
            let mut chars = axis.chars();
            match (chars.next(), chars.next().and_then(idx), chars.next()) {
                (Some('r'), Some(a), None) => Ok(script.rotation(a, amount, d)),
                (Some('t'), Some(a), None) => Ok(script.translation(a, amount, d)),
                _ => bail!("motion `{spec}`: axis must be one of rx ry rz tx ty tz"),
            }
        }
        _ => bail!("motion `{spec}`: expected AXIS:AMOUNT:SECONDS or rest:SECONDS"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn selection_key(mode: EstimatorMode, sensors: SensorSelection) -> String {
    let m = match mode {
        EstimatorMode::Decoupled => "decoupled",
        EstimatorMode::Coupled => "coupled",
    };
    let s = match sensors {
        SensorSelection::Dual => "dual",
        SensorSelection::Single(_) => "single",
    };
    format!("{m}/{s}")
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &cfg, 0)?;
    let geometry = match &a.geometry {
        Some(name) => Geometry::from_name(name).unwrap_or_else(|e| usage_error(e)),
        None => cfg.geometry.unwrap_or(Geometry::from_name("sphere")?),
    };
    let frame_rate = a.frame_rate.or(cfg.frame_rate).unwrap_or(experiments::FRAME_RATE);
    let mut script = MotionScript::new(frame_rate);
    for m in &a.motions {
        script = parse_motion(m, script).unwrap_or_else(|e| usage_error(e));
    }
    if let Err(e) = script.validate() {
        usage_error(e);
    }
    let noise = a.noise.or(cfg.noise).unwrap_or(0.0);
    if !(noise.is_finite() && noise >= 0.0) {
        usage_error("--noise must be non-negative");
    }
    let mut scene = SceneConfig {
        geometry,
        dual: a.dual,
        ..SceneConfig::default()
    };
    if let Some(d) = a.depth {
        scene.indentation_depth = d;
    }
    if let Some(t) = cfg.tau {
        scene.intrinsics.tau = t;
    }
    let scene = scene.with_noise_fraction(noise);
    scene.validate()?;
    let out = a
        .out
        .or(cfg.out)
        .unwrap_or_else(|| usage_error("--out is required"));
    let gt_path = a.gt.unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".gt.csv");
        PathBuf::from(p)
    });

    let sim = render_sequence(&scene, &script, seed)?;
    let mut seq = FieldSequence::from_frames(&sim.frames, vec![scene.intrinsics; scene.sensor_count()], frame_rate)?;
    let meta = &mut seq.header.metadata;
    meta.insert("generator".into(), json!("tacse3 simulate"));
    meta.insert("seed".into(), json!(seed));
    meta.insert("scene".into(), serde_json::to_value(scene)?);
    meta.insert("motions".into(), json!(a.motions));
    meta.insert("contact_lost_at".into(), json!(sim.contact_lost_at));
    if !a.no_calibrate {
        let selections: &[SensorSelection] = if a.dual {
            &[SensorSelection::Single(0), SensorSelection::Dual]
        } else {
            &[SensorSelection::Single(0)]
        };
        let mut gains = serde_json::Map::new();
        for &sensors in selections {
            for mode in [EstimatorMode::Decoupled, EstimatorMode::Coupled] {
                let settings = RunSettings {
                    mode,
                    sensors,
                    window: cfg.window.unwrap_or(5),
                    gains: [1.0; 3],
                };
                let g = experiments::calibrate_gains(&scene, &settings)?;
                gains.insert(selection_key(mode, sensors), json!(g));
            }
        }
        meta.insert("rotation_gains".into(), serde_json::Value::Object(gains));
    }
    seq.write_to(create(&out)?)?;
    let mut w = create(&gt_path)?;
    sim.gt.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "wrote {} frames × {} sensor(s) to {}, ground truth to {}",
        seq.frame_count(),
        seq.header.sensor_count,
        out.display(),
        gt_path.display()
    );
    if let Some(k) = sim.contact_lost_at {
        eprintln!("warning: contact lost at frame {k}; sequence truncated");
    }
    Ok(())
}

fn header_gains(seq: &FieldSequence, mode: EstimatorMode, sensors: SensorSelection) -> Option<[f64; 3]> {
    let v = seq.header.metadata.get("rotation_gains")?.get(selection_key(mode, sensors))?;
    serde_json::from_value(v.clone()).ok()
}

fn cmd_estimate(a: EstimateArgs) -> Result<bool> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let seq = FieldSequence::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let h = &seq.header;
    let mode = match &a.mode {
        Some(m) => m.parse().unwrap_or_else(|e| usage_error(e)),
        None => cfg.mode.unwrap_or_default(),
    };
    let sensors = match (a.single_sensor, a.dual) {
        (Some(id), _) if id >= h.sensor_count => {
            usage_error(format!("--single-sensor {id}: file has {} sensor(s)", h.sensor_count))
        }
        (Some(id), _) => SensorSelection::Single(id),
        (None, true) if h.sensor_count < 2 => usage_error("--dual needs a two-sensor file"),
        (None, true) => SensorSelection::Dual,
        (None, false) if h.sensor_count >= 2 => SensorSelection::Dual,
        (None, false) => SensorSelection::Single(0),
    };
    let gains = match &a.gains {
        Some(g) => parse_gains(g).unwrap_or_else(|e| usage_error(e)),
        None => cfg
            .gains
            .or_else(|| header_gains(&seq, mode, sensors))
            .unwrap_or([1.0; 3]),
    };
    let mut intrinsics: Vec<IntrinsicsF64> = h.intrinsics.clone();
    if let Some(t) = a.tau.or(cfg.tau) {
        intrinsics.iter_mut().for_each(|i| i.tau = t);
    }
    let mut tc = TrackerConfig::new(intrinsics, h.frame_rate);
    tc.estimator.mode = mode;
    tc.estimator.window = a.window.or(cfg.window).unwrap_or(tc.estimator.window);
    tc.sensors = sensors;
    tc.rotation_gains = gains;
    if let Some(scene) = h.metadata.get("scene") {
        let scene: SceneConfig = serde_json::from_value(scene.clone()).context("scene metadata")?;
        tc.velocity_scale = 1.0 / scene.shear_gain;
    }
    if let Some(s) = cfg.mirror_signs {
        tc.mirror = MirrorConfig::new(s)?;
    }
    let mut tracker = Tracker::new(tc)?;

    let out = a.out.or(cfg.out).unwrap_or_else(|| usage_error("--out is required"));
    let mut diag = match a.diagnostics.or(cfg.diagnostics) {
        Some(p) => Some(create(&p)?),
        None => None,
    };
    let mut traj = TrajectoryF64::new();
    let mut failed = 0usize;
    let mut lost = 0usize;
    for k in 0..seq.frame_count() {
        let frames: Vec<TactileFrame<f64>> = seq.frames_at_f64(k);
        match tracker.step(&frames) {
            Ok(step) => {
                traj.push(step.timestamp, step.pose)?;
                lost += step.contact_lost as usize;
                if let Some(d) = diag.as_mut() {
                    let (res, rank, size) = step
                        .sensors
                        .iter()
                        .fold((0.0f64, 0usize, 0usize), |acc, s| {
                            (acc.0.max(s.residual_norm), acc.1.max(s.rank), acc.2 + s.contact_size)
                        });
                    let rec = json!({
                        "frame": k,
                        "timestamp": step.timestamp,
                        "twist": step.smoothed_twist.to_array(),
                        "raw_twist": step.raw_twist.to_array(),
                        "residual_norm": res,
                        "rank": rank,
                        "contact_size": size,
                        "contact_lost": step.contact_lost,
                        "sensors": step.sensors,
                    });
                    writeln!(d, "{rec}")?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("frame {k}: {e}");
                if let Some(d) = diag.as_mut() {
                    writeln!(d, "{}", json!({"frame": k, "error": e.to_string()}))?;
                }
            }
        }
    }
    let mut w = create(&out)?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    if let Some(mut d) = diag {
        d.flush()?;
    }
    let final_rot = traj.increments().last().map(|p| p.rot).unwrap_or_else(Matrix3::identity);
    let angle = geodesic_angle(&Matrix3::identity(), &final_rot);
    println!(
        "frames {}, contact lost {}, errors {}, final rotation {:.3} deg, gains [{:.4}, {:.4}, {:.4}]",
        traj.len(),
        lost,
        failed,
        angle,
        gains[0],
        gains[1],
        gains[2]
    );
    if let Some(p) = &a.gt {
        let gt = TrajectoryF64::read_csv(BufReader::new(File::open(p).with_context(|| format!("reading {}", p.display()))?))?;
        let final_err = experiments::final_rotation_error(&traj, &gt)?;
        let aligned = align_trajectories(&traj, &gt)?;
        println!(
            "final rotation error {:.3} deg, aligned mean error {:.3} deg",
            final_err,
            aligned.mean_error_deg()
        );
    }
    Ok(failed == 0)
}

fn cmd_field(a: FieldArgs) -> Result<()> {
    let load = |p: &Path| -> Result<_> {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let img = read_pgm(&bytes).with_context(|| format!("decoding {}", p.display()))?;
        Ok(img.map(|v| *v as f64))
    };
    let reference = load(&a.reference)?;
    let (w, h) = reference.dims();
    let intr = IntrinsicsF64 {
        i0: (w as f64 - 1.0) / 2.0,
        j0: (h as f64 - 1.0) / 2.0,
        ..IntrinsicsF64::default()
    };
    let cfg = ImageFieldConfig {
        window_radius: a.window_radius,
        search_radius: a.search_radius,
        ..ImageFieldConfig::default()
    };
    let mut frames = Vec::with_capacity(a.current.len());
    for (k, p) in a.current.iter().enumerate() {
        let field = field_from_images(&reference, &load(p)?, &cfg, intr)?;
        frames.push(TactileFrame::new(field.grid, k as f64 / a.frame_rate, 0)?);
    }
    let mut seq = FieldSequence::from_frames(&[frames], vec![intr], a.frame_rate)?;
    seq.header
        .metadata
        .insert("generator".into(), json!("tacse3 field"));
    seq.write_to(create(&a.out)?)?;
    println!("wrote {} frames to {}", seq.frame_count(), a.out.display());
    Ok(())
}

fn write_rows<T: serde::Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let first = resolve_seed(a.seed, &cfg, 1)?;
    let n = a.seeds.or(cfg.seeds).unwrap_or(20);
    if n == 0 {
        usage_error("--seeds must be at least 1");
    }
    let seeds: Vec<u64> = (0..n as u64).map(|k| first + k).collect();
    let noise = a.noise.or(cfg.noise).unwrap_or(0.05);
    let window = a.window.or(cfg.window).unwrap_or(5);
    let jobs = a.jobs.or(cfg.jobs).unwrap_or(1).max(1);
    let geometry = cfg.geometry.unwrap_or(Geometry::from_name("sphere")?);
    let scene = SceneConfig {
        geometry,
        ..SceneConfig::default()
    }
    .with_noise_fraction(noise);
    let out = a.out.as_deref().or(cfg.out.as_deref());
    match a.which {
        BenchKind::RotationSweep => {
            let mut settings = RunSettings {
                window,
                mode: cfg.mode.unwrap_or_default(),
                ..RunSettings::default()
            };
            settings.gains = match cfg.gains {
                Some(g) => g,
                None => experiments::calibrate_gains(&scene, &settings)?,
            };
            let axes = geometry.admissible_axes();
            let rows = experiments::rotation_sweep(&scene, &settings, axes, &[30.0, 60.0, 90.0], &seeds, jobs)?;
            write_rows(&rows, out)
        }
        BenchKind::DecoupleAblation => write_rows(&experiments::decouple_ablation(&scene, window, &seeds, jobs)?, out),
        BenchKind::GeometrySweep => {
            let all: Vec<Geometry> = Geometry::NAMES
                .iter()
                .map(|g| Geometry::from_name(g))
                .collect::<tacse3_core::Result<_>>()?;
            write_rows(&experiments::geometry_sweep(&scene, &all, 30.0, &seeds, window, jobs)?, out)
        }
        BenchKind::ResidualDemo => {
            let (rows, _) = experiments::residual_demo(&scene, window, &seeds, jobs)?;
            write_rows(&rows, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Field(a) => cmd_field(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
