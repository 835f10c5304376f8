//! Simulator-driven experiments: gain calibration, rotation sweeps,
//! single/dual drift under translation, geometry sweep and the disturbance
//! demo. Everything is deterministic given the seeds.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::pipeline::{residual_correct, ResidualConfig, SensorSelection, StepOutput, Tracker, TrackerConfig};
use crate::se3::{geodesic_angle, rotation_exp, Pose, TimedTrajectory};
use crate::sim::{render_sequence, Geometry, MotionScript, SceneConfig, SimOutput};
use crate::twist::EstimatorMode;
use crate::{Error, Result};

pub const FRAME_RATE: f64 = 120.0;
/// Commanded rotation rate of the sweeps, deg/s.
pub const SWEEP_RATE_DEG: f64 = 60.0;
pub const CALIBRATION_ANGLE_DEG: f64 = 45.0;
/// Seed offset of calibration runs, disjoint from evaluation seeds.
pub const CALIBRATION_SEED: u64 = 0xCA11_B4A7_E000_0000;
pub const AXIS_NAMES: [&str; 3] = ["rx", "ry", "rz"];

/// Estimator settings of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub mode: EstimatorMode,
    pub sensors: SensorSelection,
    pub window: usize,
    pub gains: [f64; 3],
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Decoupled,
            sensors: SensorSelection::Single(0),
            window: 5,
            gains: [1.0; 3],
        }
    }
}

impl RunSettings {
    pub fn tracker_config(&self, scene: &SceneConfig) -> TrackerConfig<f64> {
        let mut cfg = TrackerConfig::new(vec![scene.intrinsics; scene.sensor_count()], FRAME_RATE);
        cfg.estimator.mode = self.mode;
        cfg.estimator.window = self.window;
        cfg.sensors = self.sensors;
        cfg.velocity_scale = 1.0 / scene.shear_gain;
        cfg.rotation_gains = self.gains;
        cfg
    }
}

/// Tracker outputs and the estimated trajectory of one run.
#[derive(Debug, Clone)]
pub struct TrackRun {
    pub steps: Vec<StepOutput<f64>>,
    pub estimate: TimedTrajectory<f64>,
}

pub fn run_tracker(sim: &SimOutput, cfg: TrackerConfig<f64>) -> Result<TrackRun> {
    let mut tracker = Tracker::new(cfg)?;
    let mut steps = Vec::with_capacity(sim.frame_count());
    let mut estimate = TimedTrajectory::new();
    for k in 0..sim.frame_count() {
        let out = tracker.step(&sim.frames_at(k))?;
        estimate.push(out.timestamp, out.pose)?;
        steps.push(out);
    }
    Ok(TrackRun { steps, estimate })
}

/// Geodesic error (deg) between the final estimated and true rotation
/// increments, both relative to their first frame. No frame alignment is
/// applied: the estimate is expressed in the sensor-1 frame, which is the
/// frame of the ground truth.
pub fn final_rotation_error(est: &TimedTrajectory<f64>, gt: &TimedTrajectory<f64>) -> Result<f64> {
    let (ei, gi) = (est.increments(), gt.increments());
    match (ei.last(), gi.last()) {
        (Some(e), Some(g)) if ei.len() == gi.len() => Ok(geodesic_angle(&e.rot, &g.rot)),
        _ => Err(Error::DegenerateTrajectory(est.len().min(gt.len()))),
    }
}

/// Total rotation angle (deg) of the final estimated increment.
pub fn final_rotation_angle(est: &TimedTrajectory<f64>) -> f64 {
    est.increments()
        .last()
        .map(|p| geodesic_angle(&Matrix3::identity(), &p.rot))
        .unwrap_or(0.0)
}

/// Rest padding (s) before and after motion so that the smoothing window is
/// full of rest estimates when motion starts and drains after it ends.
pub fn padding(window: usize) -> f64 {
    (window + 1) as f64 / FRAME_RATE
}

pub fn rotation_script(axis: usize, degrees: f64, rate_deg: f64, window: usize) -> MotionScript {
    MotionScript::new(FRAME_RATE)
        .rest(padding(window))
        .rotation(axis, degrees, degrees.abs() / rate_deg)
        .rest(padding(window))
}

/// Per-axis ratio of estimated to true rotation, from held-out rotations of
/// [`CALIBRATION_ANGLE_DEG`] about each admissible axis. Axes the geometry
/// cannot be rotated about keep gain 1.
pub fn calibrate_gains(scene: &SceneConfig, settings: &RunSettings) -> Result<[f64; 3]> {
    let mut gains = [1.0; 3];
    let unit = RunSettings {
        gains: [1.0; 3],
        ..*settings
    };
    for &axis in scene.geometry.admissible_axes() {
        let script = rotation_script(axis, CALIBRATION_ANGLE_DEG, SWEEP_RATE_DEG, settings.window);
        let sim = render_sequence(scene, &script, CALIBRATION_SEED + axis as u64)?;
        if sim.contact_lost_at.is_some() {
            return Err(Error::ContactLost {
                frame: sim.contact_lost_at.unwrap_or(0),
            });
        }
        let run = run_tracker(&sim, unit.tracker_config(scene))?;
        let mut est = 0.0;
        for k in 1..run.steps.len() {
            let dt = run.steps[k].timestamp - run.steps[k - 1].timestamp;
            est += run.steps[k].raw_twist.omega[axis] * dt;
        }
        let truth = CALIBRATION_ANGLE_DEG.to_radians();
        let g = est / truth;
        if !(g.abs() > 1e-6) || !g.is_finite() {
            return Err(Error::DegenerateSystem);
        }
        gains[axis] = g;
    }
    Ok(gains)
}

/// Runs `f` over `0..n` on up to `jobs` threads; results keep index order.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let chunks: Vec<_> = out
            .chunks_mut(n.div_ceil(jobs))
            .enumerate()
            .map(|(c, chunk)| {
                let start = c * n.div_ceil(jobs);
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(f(start + k));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("worker thread panicked");
        }
    });
    out.into_iter().map(|v| v.expect("filled")).collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Final rotation error (deg) of one commanded rotation.
pub fn rotation_trial(
    scene: &SceneConfig,
    settings: &RunSettings,
    axis: usize,
    degrees: f64,
    seed: u64,
) -> Result<f64> {
    let script = rotation_script(axis, degrees, SWEEP_RATE_DEG, settings.window);
    let sim = render_sequence(scene, &script, seed)?;
    if let Some(frame) = sim.contact_lost_at {
        return Err(Error::ContactLost { frame });
    }
    let run = run_tracker(&sim, settings.tracker_config(scene))?;
    final_rotation_error(&run.estimate, &sim.gt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub angle_deg: f64,
    pub mean_err_deg: f64,
    pub median_err_deg: f64,
    pub max_err_deg: f64,
    pub seeds: usize,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

/// One row per (axis, angle): errors over `seeds` seeded runs of `scene`.
pub fn rotation_sweep(
    scene: &SceneConfig,
    settings: &RunSettings,
    axes: &[usize],
    angles: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let cases: Vec<(usize, f64, u64)> = axes
        .iter()
        .flat_map(|&a| angles.iter().flat_map(move |&d| seeds.iter().map(move |&s| (a, d, s))))
        .collect();
    let errs = par_map(cases.len(), jobs, |k| {
        let (a, d, s) = cases[k];
        rotation_trial(scene, settings, a, d, s)
    });
    let errs: Vec<f64> = errs.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (c, chunk) in errs.chunks(seeds.len().max(1)).enumerate() {
        let (a, d, _) = cases[c * seeds.len()];
        rows.push(SweepRow {
            axis: AXIS_NAMES[a].to_string(),
            angle_deg: d,
            mean_err_deg: mean(chunk),
            median_err_deg: median(chunk),
            max_err_deg: chunk.iter().cloned().fold(0.0, f64::max),
            seeds: chunk.len(),
            errors: chunk.to_vec(),
        });
    }
    Ok(rows)
}

/// Speed (mm/s) and duration (s) of the translation trials.
pub const TRANSLATION_SPEED: f64 = 4.0;
pub const TRANSLATION_DURATION: f64 = 1.0;

/// In-plane direction of the translation trial for `seed`.
pub fn translation_direction(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A11_D1EC);
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    [a.cos(), a.sin()]
}

pub fn translation_script(dir: [f64; 2], window: usize) -> MotionScript {
    let v = Vector3::new(dir[0], dir[1], 0.0) * TRANSLATION_SPEED;
    MotionScript::new(FRAME_RATE)
        .rest(padding(window))
        .segment(
            TRANSLATION_DURATION,
            crate::se3::Twist::new(Vector3::zeros(), v),
        )
        .rest(padding(window))
}

/// Spurious rotation (deg) accumulated by single-sensor and dual-sensor
/// tracking of the same pure-translation sequence. `scene.dual` is forced on.
pub fn translation_drift_pair(
    scene: &SceneConfig,
    single: &RunSettings,
    dual: &RunSettings,
    seed: u64,
) -> Result<(f64, f64)> {
    let scene = SceneConfig { dual: true, ..*scene };
    let script = translation_script(translation_direction(seed), single.window);
    let sim = render_sequence(&scene, &script, seed)?;
    if let Some(frame) = sim.contact_lost_at {
        return Err(Error::ContactLost { frame });
    }
    let a = run_tracker(&sim, single.tracker_config(&scene))?;
    let b = run_tracker(&sim, dual.tracker_config(&scene))?;
    Ok((final_rotation_angle(&a.estimate), final_rotation_angle(&b.estimate)))
}

/// Gains calibrated for both the single-sensor and the dual configuration.
pub fn calibrated_pair(scene: &SceneConfig, mode: EstimatorMode, window: usize) -> Result<(RunSettings, RunSettings)> {
    let scene = SceneConfig { dual: true, ..*scene };
    let mut single = RunSettings {
        mode,
        window,
        sensors: SensorSelection::Single(0),
        gains: [1.0; 3],
    };
    let mut dual = RunSettings {
        sensors: SensorSelection::Dual,
        ..single
    };
    single.gains = calibrate_gains(&scene, &single)?;
    dual.gains = calibrate_gains(&scene, &dual)?;
    Ok((single, dual))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub motion: String,
    pub configuration: String,
    pub median_drift_deg: f64,
    pub mean_drift_deg: f64,
    pub seeds: usize,
}

/// Spurious rotation under pure translation for single/dual sensing with
/// the decoupled and coupled estimators.
pub fn decouple_ablation(scene: &SceneConfig, window: usize, seeds: &[u64], jobs: usize) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for mode in [EstimatorMode::Decoupled, EstimatorMode::Coupled] {
        let (single, dual) = calibrated_pair(scene, mode, window)?;
        let pairs = par_map(seeds.len(), jobs, |k| translation_drift_pair(scene, &single, &dual, seeds[k]));
        let pairs: Vec<(f64, f64)> = pairs.into_iter().collect::<Result<_>>()?;
        let tag = match mode {
            EstimatorMode::Decoupled => "decoupled",
            EstimatorMode::Coupled => "coupled",
        };
        for (name, pick) in [("single", 0usize), ("dual", 1)] {
            let v: Vec<f64> = pairs.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
            rows.push(AblationRow {
                motion: "translation".into(),
                configuration: format!("{name}-{tag}"),
                median_drift_deg: median(&v),
                mean_drift_deg: mean(&v),
                seeds: v.len(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryRow {
    pub object: String,
    pub axes: String,
    pub mean_err_deg: f64,
    pub median_err_deg: f64,
    pub seeds: usize,
}

/// 30° rotations about every admissible axis of each geometry.
pub fn geometry_sweep(
    base: &SceneConfig,
    geometries: &[Geometry],
    degrees: f64,
    seeds: &[u64],
    window: usize,
    jobs: usize,
) -> Result<Vec<GeometryRow>> {
    let mut rows = Vec::new();
    for g in geometries {
        let scene = SceneConfig { geometry: *g, ..*base };
        let mut settings = RunSettings {
            window,
            ..RunSettings::default()
        };
        settings.gains = calibrate_gains(&scene, &settings)?;
        let axes = g.admissible_axes();
        let sweep = rotation_sweep(&scene, &settings, axes, &[degrees], seeds, jobs)?;
        let errs: Vec<f64> = sweep.iter().flat_map(|r| r.errors.iter().cloned()).collect();
        rows.push(GeometryRow {
            object: g.name().into(),
            axes: axes.iter().map(|a| AXIS_NAMES[*a]).collect::<Vec<_>>().join("+"),
            mean_err_deg: mean(&errs),
            median_err_deg: median(&errs),
            seeds: seeds.len(),
        });
    }
    Ok(rows)
}

/// Tolerance profiles of the disturbance demo, deg.
pub const TASK_PROFILES: [(&str, f64); 3] = [("precise", 3.0), ("moderate", 5.0), ("coarse", 8.0)];

/// In-hand disturbance during a scripted tool motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceScenario {
    pub scene: SceneConfig,
    pub settings: RunSettings,
    /// Nominal tool rotation rate about world `z`, deg/s.
    pub nominal_rate_deg: f64,
    pub disturbance_axis: usize,
    pub disturbance_deg: f64,
    pub disturbance_start: f64,
    pub disturbance_duration: f64,
    pub settle: f64,
    pub tolerance_deg: f64,
    pub seed: u64,
}

impl DisturbanceScenario {
    pub fn new(scene: SceneConfig, settings: RunSettings, axis: usize, degrees: f64, seed: u64) -> Self {
        Self {
            scene,
            settings,
            nominal_rate_deg: 10.0,
            disturbance_axis: axis,
            disturbance_deg: degrees,
            disturbance_start: 0.25,
            disturbance_duration: 0.5,
            settle: 0.25,
            tolerance_deg: 5.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisturbanceReport {
    pub disturbance_deg: f64,
    pub error_corrected_deg: f64,
    pub error_uncorrected_deg: f64,
    pub success_corrected: bool,
    pub success_uncorrected: bool,
}

/// The tool is the grasped object. The base policy commands the gripper
/// orientation `R_nom(t)`; the object turns in the hand by `R_obj(t)`, so the
/// tool sits at `R_g · R_obj`. With correction the gripper command is
/// `R_nom · exp(c)` where `c` accumulates `Γ θ̂` with `Γ = −I`.
pub fn disturbance_demo(sc: &DisturbanceScenario) -> Result<DisturbanceReport> {
    let window = sc.settings.window;
    let lead = padding(window).max(sc.disturbance_start);
    let script = MotionScript::new(FRAME_RATE)
        .rest(lead)
        .rotation(sc.disturbance_axis, sc.disturbance_deg, sc.disturbance_duration)
        .rest(sc.settle.max(padding(window)));
    let script = if sc.disturbance_deg == 0.0 {
        MotionScript::new(FRAME_RATE).rest(script.total_duration())
    } else {
        script
    };
    let sim = render_sequence(&sc.scene, &script, sc.seed)?;
    if let Some(frame) = sim.contact_lost_at {
        return Err(Error::ContactLost { frame });
    }
    let mut tracker = Tracker::new(sc.settings.tracker_config(&sc.scene))?;
    let gamma = ResidualConfig::rotational(-1.0);
    let off = ResidualConfig {
        enabled: false,
        ..gamma.clone()
    };
    let mut c_on = DVector::zeros(3);
    let mut c_off = DVector::zeros(3);
    let mut prev_t = None;
    for k in 0..sim.frame_count() {
        let out = tracker.step(&sim.frames_at(k))?;
        let dt = prev_t.map(|p| out.timestamp - p).unwrap_or(0.0);
        prev_t = Some(out.timestamp);
        let theta = out.incremental_rotation(dt);
        c_on = residual_correct(&c_on, &theta, &gamma)?;
        c_off = residual_correct(&c_off, &theta, &off)?;
    }
    let (t_end, obj) = *sim.gt.last().expect("non-empty run");
    let r_obj = sim.gt.samples()[0].1.rot.transpose() * obj.rot;
    let r_nom = rotation_exp(&Vector3::new(0.0, 0.0, sc.nominal_rate_deg.to_radians() * t_end));
    let tool_err = |c: &DVector<f64>| {
        let r_g = r_nom * rotation_exp(&Vector3::new(c[0], c[1], c[2]));
        geodesic_angle(&r_nom, &(r_g * r_obj))
    };
    let (e_on, e_off) = (tool_err(&c_on), tool_err(&c_off));
    Ok(DisturbanceReport {
        disturbance_deg: sc.disturbance_deg,
        error_corrected_deg: e_on,
        error_uncorrected_deg: e_off,
        success_corrected: e_on <= sc.tolerance_deg,
        success_uncorrected: e_off <= sc.tolerance_deg,
    })
}

/// Disturbance axis and magnitude of seeded trial `seed`: an admissible
/// axis and an angle uniform in `[2°, 30°]`.
pub fn disturbance_draw(geometry: &Geometry, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD157_0000);
    let axes = geometry.admissible_axes();
    let axis = axes[rng.random_range(0..axes.len())];
    (axis, rng.random_range(2.0..=30.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub setting: String,
    pub task: String,
    pub success_rate: f64,
    pub trials: usize,
}

/// Seeded disturbance trials; one row per (setting, task profile).
pub fn residual_demo(
    scene: &SceneConfig,
    window: usize,
    seeds: &[u64],
    jobs: usize,
) -> Result<(Vec<ResidualRow>, Vec<DisturbanceReport>)> {
    let mut settings = RunSettings {
        window,
        sensors: if scene.dual {
            SensorSelection::Dual
        } else {
            SensorSelection::Single(0)
        },
        ..RunSettings::default()
    };
    settings.gains = calibrate_gains(scene, &settings)?;
    let reports = par_map(seeds.len(), jobs, |k| {
        let (axis, deg) = disturbance_draw(&scene.geometry, seeds[k]);
        disturbance_demo(&DisturbanceScenario::new(*scene, settings, axis, deg, seeds[k]))
    });
    let reports: Vec<DisturbanceReport> = reports.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (setting, corrected) in [("base", false), ("base+correction", true)] {
        for (task, tol) in TASK_PROFILES {
            let ok = reports
                .iter()
                .filter(|r| {
                    let e = if corrected {
                        r.error_corrected_deg
                    } else {
                        r.error_uncorrected_deg
                    };
                    e <= tol
                })
                .count();
            rows.push(ResidualRow {
                setting: setting.into(),
                task: task.into(),
                success_rate: ok as f64 / reports.len().max(1) as f64,
                trials: reports.len(),
            });
        }
    }
    Ok((rows, reports))
}

/// Final pose of the estimated trajectory relative to its first pose.
pub fn final_increment(est: &TimedTrajectory<f64>) -> Pose<f64> {
    est.increments().last().copied().unwrap_or_default()
}
