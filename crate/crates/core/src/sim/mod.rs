//! Synthetic tactile sensor.
//!
//! A rigid object is pressed into one (or two facing) planar gels. Each frame
//! the penetration profile is re-derived from the ground-truth pose, the
//! normal channel is proportional to penetration and the tangential channels
//! to the in-plane velocity of the object surface at the contact.
//!
//! Sensor frame: origin at the undeformed gel surface under the principal
//! point, `z` pointing into the gel, the object on the `z < 0` side. The
//! second sensor faces the first across the object and is rotated by 180°
//! about `x`.

mod markers;
mod script;

pub use markers::{render_marker_images, ImagePair};
pub use script::{MotionScript, Segment};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::contact::SensorIntrinsics;
use crate::field::{TactileFrame, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::grid::Grid;
use crate::se3::{compose, exp_step, Pose, TimedTrajectory, Twist};
use crate::{Error, Result};

/// Rigid object shape, dimensions in mm. Each body is the region
/// `uᵀMu ≤ 1` of a quadric, optionally cut by a slab `|n·u| ≤ h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Sphere { radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    /// Axis along the object `x` axis.
    Cylinder { radius: f64, half_length: f64 },
    /// Disk face parallel to the sensor.
    Flat { radius: f64, half_thickness: f64 },
}

impl Geometry {
    pub const NAMES: [&'static str; 4] = ["sphere", "ellipsoid", "cylinder", "flat"];

    /// Default-sized body by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(Self::Sphere { radius: 15.0 }),
            "ellipsoid" => Ok(Self::Ellipsoid {
                semi_axes: [18.0, 15.0, 13.0],
            }),
            "cylinder" => Ok(Self::Cylinder {
                radius: 12.0,
                half_length: 12.0,
            }),
            "flat" => Ok(Self::Flat {
                radius: 9.0,
                half_thickness: 4.0,
            }),
            other => Err(Error::InvalidConfig(format!("unknown geometry `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sphere { .. } => "sphere",
            Self::Ellipsoid { .. } => "ellipsoid",
            Self::Cylinder { .. } => "cylinder",
            Self::Flat { .. } => "flat",
        }
    }

    /// Principal axes (0 = x, 1 = y, 2 = z) about which the body can be
    /// rotated in the grasp while keeping an informative contact.
    pub fn admissible_axes(&self) -> &'static [usize] {
        match self {
            Self::Sphere { .. } | Self::Ellipsoid { .. } => &[0, 1, 2],
            Self::Cylinder { .. } => &[0, 2],
            Self::Flat { .. } => &[2],
        }
    }

    /// Half extent along the object `z` axis.
    pub fn extent_z(&self) -> f64 {
        match *self {
            Self::Sphere { radius } => radius,
            Self::Ellipsoid { semi_axes } => semi_axes[2],
            Self::Cylinder { radius, .. } => radius,
            Self::Flat { half_thickness, .. } => half_thickness,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match *self {
            Self::Sphere { radius } => vec![radius],
            Self::Ellipsoid { semi_axes } => semi_axes.to_vec(),
            Self::Cylinder {
                radius,
                half_length,
            } => vec![radius, half_length],
            Self::Flat {
                radius,
                half_thickness,
            } => vec![radius, half_thickness],
        };
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("geometry dimensions must be positive".into()))
        }
    }

    /// Radius of a sphere about the centre enclosing the body.
    fn bounding_radius(&self) -> f64 {
        match *self {
            Self::Sphere { radius } => radius,
            Self::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(0.0, f64::max),
            Self::Cylinder {
                radius,
                half_length,
            } => radius.hypot(half_length),
            Self::Flat {
                radius,
                half_thickness,
            } => radius.hypot(half_thickness),
        }
    }

    fn quadric(&self) -> (Matrix3<f64>, Option<(Vector3<f64>, f64)>) {
        let inv2 = |v: f64| 1.0 / (v * v);
        match *self {
            Self::Sphere { radius } => (Matrix3::identity() * inv2(radius), None),
            Self::Ellipsoid { semi_axes: [a, b, c] } => {
                (Matrix3::from_diagonal(&Vector3::new(inv2(a), inv2(b), inv2(c))), None)
            }
            Self::Cylinder {
                radius,
                half_length,
            } => (
                Matrix3::from_diagonal(&Vector3::new(0.0, inv2(radius), inv2(radius))),
                Some((Vector3::x(), half_length)),
            ),
            Self::Flat {
                radius,
                half_thickness,
            } => (
                Matrix3::from_diagonal(&Vector3::new(inv2(radius), inv2(radius), 0.0)),
                Some((Vector3::z(), half_thickness)),
            ),
        }
    }
}

/// Scene and sensor-response parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub geometry: Geometry,
    /// Initial penetration of the body into each gel, mm.
    pub indentation_depth: f64,
    pub intrinsics: SensorIntrinsics<f64>,
    pub width: usize,
    pub height: usize,
    pub dual: bool,
    /// Response units per mm/s of surface velocity.
    pub shear_gain: f64,
    /// Response units per mm of penetration.
    pub normal_gain: f64,
    /// Standard deviation of the i.i.d. Gaussian noise on every channel.
    pub noise_std: f64,
    pub slip_fraction: f64,
    /// Fraction `β` of the tangential traction that scales with local
    /// pressure: the shear response is weighted by
    /// `(1 − β) + β · pen / mean(pen)` over the patch.
    pub traction_coupling: f64,
    /// Saturation level of `f_sat · tanh(f / f_sat)` on the shear channels.
    pub shear_saturation: Option<f64>,
    /// In-plane offset of the object centre relative to the principal point, mm.
    pub patch_offset: [f64; 2],
    /// Marker displacement in px per unit of shear response.
    pub image_gain: f64,
    /// Outward marker displacement in px per unit penetration slope.
    pub image_expansion: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::Sphere { radius: 15.0 },
            indentation_depth: 1.5,
            intrinsics: SensorIntrinsics::default(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            dual: false,
            shear_gain: 0.2,
            normal_gain: 1.0,
            noise_std: 0.0,
            slip_fraction: 0.0,
            traction_coupling: 0.25,
            shear_saturation: None,
            patch_offset: [0.0, 0.0],
            image_gain: 1.0,
            image_expansion: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn with_geometry(geometry: Geometry) -> Self {
        Self {
            geometry,
            ..Self::default()
        }
    }

    /// Peak normal response of the resting contact.
    pub fn peak_normal(&self) -> f64 {
        self.normal_gain * self.indentation_depth
    }

    /// Sets `noise_std` to a fraction of [`Self::peak_normal`].
    pub fn with_noise_fraction(mut self, fraction: f64) -> Self {
        self.noise_std = fraction * self.peak_normal();
        self
    }

    pub fn sensor_count(&self) -> usize {
        if self.dual {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.intrinsics.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.indentation_depth > 0.0 && self.indentation_depth < self.geometry.extent_z()) {
            return bad("indentation depth must be positive and below the body extent");
        }
        if self.width < 8 || self.height < 8 {
            return bad("sensor must be at least 8x8 pixels");
        }
        if !(self.shear_gain > 0.0 && self.normal_gain > 0.0) {
            return bad("response gains must be positive");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.slip_fraction) {
            return bad("slip_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.traction_coupling) {
            return bad("traction_coupling must lie in [0, 1]");
        }
        if let Some(s) = self.shear_saturation {
            if !(s > 0.0) {
                return bad("shear_saturation must be positive");
            }
        }
        Ok(())
    }

    /// Object pose in the sensor-1 frame at the start of a sequence.
    pub fn initial_pose(&self) -> Pose<f64> {
        let standoff = self.geometry.extent_z() - self.indentation_depth;
        Pose::new(
            Matrix3::identity(),
            Vector3::new(self.patch_offset[0], self.patch_offset[1], -standoff),
        )
    }

    /// Pose of sensor 2 in the sensor-1 frame.
    pub fn second_sensor_pose(&self) -> Pose<f64> {
        let standoff = self.geometry.extent_z() - self.indentation_depth;
        Pose::new(
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            Vector3::new(0.0, 0.0, -2.0 * standoff),
        )
    }

    /// Object pose as seen from sensor `sensor`, given its sensor-1 pose.
    pub fn pose_in_sensor(&self, pose: &Pose<f64>, sensor: usize) -> Pose<f64> {
        if sensor == 0 {
            *pose
        } else {
            compose(&self.second_sensor_pose().inverse(), pose)
        }
    }
}

/// Noise-free per-pixel contact state of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    /// Penetration depth, mm (zero off contact).
    pub penetration: Grid<f64>,
    /// Response channels without noise.
    pub field: Grid<[f64; 3]>,
    pub contact_pixels: usize,
    pub touches_border: bool,
}

/// Vertical lines through the sensor plane expressed in the body frame.
struct LineQuery {
    m: Matrix3<f64>,
    slab: Option<(Vector3<f64>, f64)>,
    origin: Vector3<f64>,
    ex: Vector3<f64>,
    ey: Vector3<f64>,
    dir: Vector3<f64>,
    mb: Vector3<f64>,
    qa: f64,
    centre: [f64; 2],
    /// Squared in-plane radius outside of which no line meets the body.
    reach2: f64,
}

impl LineQuery {
    fn new(geometry: &Geometry, pose: &Pose<f64>) -> Self {
        let (m, slab) = geometry.quadric();
        let rot_t = pose.rot.transpose();
        let dir = rot_t.column(2).into_owned();
        let mb = m * dir;
        Self {
            m,
            slab,
            origin: -(rot_t * pose.pos),
            ex: rot_t.column(0).into_owned(),
            ey: rot_t.column(1).into_owned(),
            dir,
            mb,
            qa: dir.dot(&mb),
            centre: [pose.pos.x, pose.pos.y],
            reach2: (geometry.bounding_radius() * (1.0 + 1e-9)).powi(2) - pose.pos.z * pose.pos.z,
        }
    }
}

/// Largest `z` at which the vertical line through `(x, y)` is inside the
/// body, if positive.
fn penetration_at(q: &LineQuery, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - q.centre[0], y - q.centre[1]);
    if dx * dx + dy * dy > q.reach2 {
        return 0.0;
    }
    let a = q.origin + q.ex * x + q.ey * y;
    let b = q.dir;
    let qa = q.qa;
    let qb = a.dot(&q.mb);
    let qc = a.dot(&(q.m * a)) - 1.0;
    let slab = q.slab;
    const EPS: f64 = 1e-12;
    let (mut lo, mut hi) = if qa > EPS {
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return 0.0;
        }
        let s = disc.sqrt();
        ((-qb - s) / qa, (-qb + s) / qa)
    } else if qb.abs() > EPS {
        let z0 = -qc / (2.0 * qb);
        if qb > 0.0 {
            (f64::NEG_INFINITY, z0)
        } else {
            (z0, f64::INFINITY)
        }
    } else if qc <= 0.0 {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        return 0.0;
    };
    if let Some((n, h)) = slab {
        let s0 = n.dot(&a);
        let s1 = n.dot(&b);
        if s1.abs() > EPS {
            let (u, v) = ((-h - s0) / s1, (h - s0) / s1);
            lo = lo.max(u.min(v));
            hi = hi.min(u.max(v));
        } else if s0.abs() > h {
            return 0.0;
        }
    }
    if lo > hi || !hi.is_finite() || hi <= 0.0 {
        0.0
    } else {
        hi
    }
}

/// Noise-free contact state for an object at `pose` (sensor frame) moving
/// with body twist `xi` about its centre.
pub fn contact_state(scene: &SceneConfig, pose: &Pose<f64>, xi: &Twist<f64>) -> ContactState {
    let (w, h) = (scene.width, scene.height);
    let query = LineQuery::new(&scene.geometry, pose);
    let intr = &scene.intrinsics;
    let penetration = Grid::from_fn(w, h, |i, j| {
        let (x, y) = intr.pixel_to_plane(i, j);
        penetration_at(&query, x, y)
    });
    let mut count = 0usize;
    let mut total = 0.0;
    let mut touches_border = false;
    for j in 0..h {
        for i in 0..w {
            let p = *penetration.get(i, j);
            if p > 0.0 {
                count += 1;
                total += p;
                if i == 0 || j == 0 || i + 1 == w || j + 1 == h {
                    touches_border = true;
                }
            }
        }
    }
    let mean_pen = if count > 0 { total / count as f64 } else { 1.0 };
    let omega_s = pose.rot * xi.omega;
    let v_c = pose.rot * xi.trans;
    let beta = scene.traction_coupling;
    let shear = scene.shear_gain * (1.0 - scene.slip_fraction);
    let sat = |f: f64| match scene.shear_saturation {
        Some(s) => s * (f / s).tanh(),
        None => f,
    };
    let field = Grid::from_fn(w, h, |i, j| {
        let pen = *penetration.get(i, j);
        if pen <= 0.0 {
            return [0.0; 3];
        }
        let (x, y) = intr.pixel_to_plane(i, j);
        let p = Vector3::new(x, y, pen);
        let v = omega_s.cross(&(p - pose.pos)) + v_c;
        let rho = (1.0 - beta) + beta * pen / mean_pen;
        [
            sat(shear * rho * v.x),
            sat(shear * rho * v.y),
            scene.normal_gain * pen,
        ]
    });
    ContactState {
        penetration,
        field,
        contact_pixels: count,
        touches_border,
    }
}

/// Counter-based noise stream: the key is the run seed, the stream id
/// encodes sensor and frame, so frames can be rendered in any order.
pub(crate) fn stream_rng(seed: u64, sensor: usize, frame: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((salt << 56) ^ ((sensor as u64) << 40) ^ frame as u64);
    rng
}

fn add_noise(grid: &mut Grid<[f64; 3]>, std: f64, mut rng: ChaCha8Rng) {
    if std <= 0.0 {
        return;
    }
    for c in grid.as_mut_slice() {
        for v in c.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += std * n;
        }
    }
}

/// Rendered sequence with its ground truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// `frames[sensor][k]`.
    pub frames: Vec<Vec<TactileFrame<f64>>>,
    /// Object pose in the sensor-1 frame at every frame time.
    pub gt: TimedTrajectory<f64>,
    /// Body twist of the interval ending at each frame.
    pub twists: Vec<Twist<f64>>,
    /// First frame at which the contact left the sensor; the sequence stops
    /// before it.
    pub contact_lost_at: Option<usize>,
}

impl SimOutput {
    pub fn frame_count(&self) -> usize {
        self.gt.len()
    }

    /// All sensors' frames at index `k`.
    pub fn frames_at(&self, k: usize) -> Vec<TactileFrame<f64>> {
        self.frames.iter().map(|s| s[k].clone()).collect()
    }
}

/// Ground-truth poses and per-frame twists for a script.
pub fn integrate_script(
    start: &Pose<f64>,
    script: &MotionScript,
) -> Result<(Vec<f64>, Vec<Pose<f64>>, Vec<Twist<f64>>)> {
    script.validate()?;
    let n = script.frame_count();
    let rate = script.frame_rate;
    let mut times = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    let mut twists = Vec::with_capacity(n);
    let mut pose = *start;
    for k in 0..n {
        let t = k as f64 / rate;
        if k > 0 {
            let t0 = (k - 1) as f64 / rate;
            for (dt, xi) in script.pieces(t0, t) {
                pose = compose(&pose, &exp_step(&xi, dt));
            }
        }
        times.push(t);
        poses.push(pose);
        twists.push(if k == 0 {
            Twist::zero()
        } else {
            script.twist_at(t)
        });
    }
    Ok((times, poses, twists))
}

/// Renders every frame of `script` for one or two sensors.
pub fn render_sequence(scene: &SceneConfig, script: &MotionScript, seed: u64) -> Result<SimOutput> {
    scene.validate()?;
    let (times, poses, twists) = integrate_script(&scene.initial_pose(), script)?;
    let sensors = scene.sensor_count();
    let mut frames: Vec<Vec<TactileFrame<f64>>> = vec![Vec::new(); sensors];
    let mut gt = TimedTrajectory::new();
    let mut lost = None;
    'frames: for k in 0..times.len() {
        let mut rendered = Vec::with_capacity(sensors);
        for s in 0..sensors {
            let pose = scene.pose_in_sensor(&poses[k], s);
            let state = contact_state(scene, &pose, &twists[k]);
            if state.contact_pixels == 0 || state.touches_border {
                lost = Some(k);
                break 'frames;
            }
            let mut grid = state.field;
            add_noise(&mut grid, scene.noise_std, stream_rng(seed, s, k, 0));
            rendered.push(TactileFrame::new(grid, times[k], s as u8)?);
        }
        for (s, f) in rendered.into_iter().enumerate() {
            frames[s].push(f);
        }
        gt.push(times[k], poses[k])?;
    }
    let n = gt.len();
    Ok(SimOutput {
        frames,
        gt,
        twists: twists[..n].to_vec(),
        contact_lost_at: lost,
    })
}
