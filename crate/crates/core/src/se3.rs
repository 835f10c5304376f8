//! SE(3) primitives: hat map, exponential update, composition, rotation
//! distances and rotation-only trajectory alignment.
//!
//! Rotations are stored as 3x3 matrices. Quaternions only appear at the CSV
//! boundary (`t,qw,qx,qy,qz,px,py,pz`, scalar first, `qw >= 0`).

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::{lit, to_f64, Error, Real, Result};

/// Below this rotation angle (rad) the Rodrigues coefficients switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Orthogonality residual above which a composed rotation is re-projected.
pub const ORTHO_TOL: f64 = 1e-9;

/// Rigid-body twist: angular rate (rad/s) and translational rate (mm/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<S: Real> {
    pub omega: Vector3<S>,
    pub trans: Vector3<S>,
}

impl<S: Real> Twist<S> {
    pub fn new(omega: Vector3<S>, trans: Vector3<S>) -> Self {
        Self { omega, trans }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Layout `(ωx, ωy, ωz, tx, ty, tz)`.
    pub fn from_array(v: [S; 6]) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_array(&self) -> [S; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Velocity of a point `q` moving with this twist: `ω × q + t`.
    pub fn velocity_at(&self, q: &Vector3<S>) -> Vector3<S> {
        self.omega.cross(q) + self.trans
    }
}

impl<S: Real> Add for Twist<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.omega + rhs.omega, self.trans + rhs.trans)
    }
}

impl<S: Real> Sub for Twist<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.omega - rhs.omega, self.trans - rhs.trans)
    }
}

impl<S: Real> Mul<S> for Twist<S> {
    type Output = Self;
    fn mul(self, k: S) -> Self {
        Self::new(self.omega * k, self.trans * k)
    }
}

impl<S: Real> Neg for Twist<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.omega, -self.trans)
    }
}

/// Rigid transform `(R, p)`; `p` in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<S: Real> {
    pub rot: Matrix3<S>,
    pub pos: Vector3<S>,
}

impl<S: Real> Default for Pose<S> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<S: Real> Pose<S> {
    pub fn identity() -> Self {
        Self {
            rot: Matrix3::identity(),
            pos: Vector3::zeros(),
        }
    }

    pub fn new(rot: Matrix3<S>, pos: Vector3<S>) -> Self {
        Self { rot, pos }
    }

    pub fn from_rotation(rot: Matrix3<S>) -> Self {
        Self::new(rot, Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self::new(rt, -(rt * self.pos))
    }

    pub fn transform_point(&self, p: &Vector3<S>) -> Vector3<S> {
        self.rot * p + self.pos
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthogonality_residual(&self) -> S {
        (self.rot.transpose() * self.rot - Matrix3::identity()).norm()
    }

    /// `true` when `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_valid(&self, tol: S) -> bool {
        self.orthogonality_residual() <= tol
            && (self.rot.determinant() - S::one()).abs() <= tol
            && self.pos.iter().all(|v| v.is_finite())
    }
}

/// Skew-symmetric matrix `[ω]×` with `[ω]× v = ω × v`.
pub fn hat<S: Real>(omega: &Vector3<S>) -> Matrix3<S> {
    let z = S::zero();
    Matrix3::new(
        z, -omega.z, omega.y, //
        omega.z, z, -omega.x, //
        -omega.y, omega.x, z,
    )
}

/// Inverse of [`hat`] for a skew-symmetric input (antisymmetric part only).
pub fn vee<S: Real>(m: &Matrix3<S>) -> Vector3<S> {
    let half = lit::<S>(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Closed-form SE(3) exponential of the twist scaled by `dt`.
///
/// Rotation by Rodrigues' formula; translation is the left Jacobian of SO(3)
/// applied to `t·dt`. Angles below [`SMALL_ANGLE`] use third-order series.
pub fn exp_step<S: Real>(xi: &Twist<S>, dt: S) -> Pose<S> {
    let w = xi.omega * dt;
    let u = xi.trans * dt;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b, c) = if theta < lit(SMALL_ANGLE) {
        (
            S::one() - theta2 / lit(6.0),
            lit::<S>(0.5) - theta2 / lit(24.0),
            lit::<S>(1.0 / 6.0) - theta2 / lit(120.0),
        )
    } else {
        let (s, co) = (theta.sin(), theta.cos());
        (
            s / theta,
            (S::one() - co) / theta2,
            (theta - s) / (theta2 * theta),
        )
    };
    let k = hat(&w);
    let k2 = k * k;
    let eye = Matrix3::identity();
    let rot = eye + k * a + k2 * b;
    let left_jac = eye + k * b + k2 * c;
    Pose::new(rot, left_jac * u)
}

/// Homogeneous product `a · b`, re-projecting the rotation onto SO(3) when
/// the orthogonality residual exceeds [`ORTHO_TOL`].
pub fn compose<S: Real>(a: &Pose<S>, b: &Pose<S>) -> Pose<S> {
    let mut rot = a.rot * b.rot;
    let pos = a.rot * b.pos + a.pos;
    if (rot.transpose() * rot - Matrix3::identity()).norm() > lit(ORTHO_TOL) {
        rot = project_to_rotation(&rot);
    }
    Pose::new(rot, pos)
}

/// Nearest rotation in Frobenius norm (polar factor with determinant fix).
pub fn project_to_rotation<S: Real>(m: &Matrix3<S>) -> Matrix3<S> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < S::zero() {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Rotation angle between two rotations, in degrees, in `[0, 180]`.
pub fn geodesic_angle<S: Real>(a: &Matrix3<S>, b: &Matrix3<S>) -> S {
    rotation_angle(&(a.transpose() * b)) * lit(180.0 / std::f64::consts::PI)
}

/// Rotation angle in radians, `arccos((tr R − 1)/2)` evaluated as an
/// `atan2` of the antisymmetric and symmetric parts for accuracy near 0 and π.
pub fn rotation_angle<S: Real>(r: &Matrix3<S>) -> S {
    let c = ((r.trace() - S::one()) * lit(0.5)).clamp(-S::one(), S::one());
    let s = vee(r).norm().min(S::one());
    s.atan2(c)
}

/// Rotation vector (axis times angle) of a rotation matrix.
pub fn rotation_log<S: Real>(r: &Matrix3<S>) -> Vector3<S> {
    let theta = rotation_angle(r);
    let v = vee(r);
    if theta < lit(1e-6) {
        return v;
    }
    if theta < lit(std::f64::consts::PI - 1e-4) {
        return v * (theta / theta.sin());
    }
    // Near π the antisymmetric part vanishes; read the axis off R + I.
    let b: Matrix3<S> = (r + Matrix3::identity()) * lit::<S>(0.5);
    let mut k = 0usize;
    for i in 1..3usize {
        if b[(i, i)] > b[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<S> = b.column(k).into();
    axis /= axis.norm();
    if axis.dot(&v) < S::zero() {
        axis = -axis;
    }
    axis * theta
}

/// Rotation matrix from a rotation vector.
pub fn rotation_exp<S: Real>(rotvec: &Vector3<S>) -> Matrix3<S> {
    exp_step(&Twist::new(*rotvec, Vector3::zeros()), S::one()).rot
}

/// Rotation about a principal axis (0 = x, 1 = y, 2 = z) by `deg` degrees.
pub fn axis_rotation<S: Real>(axis: usize, deg: S) -> Matrix3<S> {
    let mut w = Vector3::zeros();
    w[axis] = deg * lit(std::f64::consts::PI / 180.0);
    rotation_exp(&w)
}

/// Pose sequence with strictly increasing timestamps (s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimedTrajectory<S: Real> {
    samples: Vec<(S, Pose<S>)>,
}

impl<S: Real> TimedTrajectory<S> {
    pub fn new() -> Self {
        Self {
            samples: Vec::new(),
        }
    }

    pub fn from_samples(samples: Vec<(S, Pose<S>)>) -> Result<Self> {
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::ClockError(
                "trajectory timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn push(&mut self, t: S, pose: Pose<S>) -> Result<()> {
        if let Some((last, _)) = self.samples.last() {
            if t <= *last {
                return Err(Error::ClockError(format!(
                    "timestamp {} does not follow {}",
                    to_f64(t),
                    to_f64(*last)
                )));
            }
        }
        self.samples.push((t, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(S, Pose<S>)] {
        &self.samples
    }

    pub fn last(&self) -> Option<&(S, Pose<S>)> {
        self.samples.last()
    }

    /// Poses re-expressed relative to the first pose: `T₀⁻¹ Tₖ`.
    pub fn increments(&self) -> Vec<Pose<S>> {
        match self.samples.first() {
            None => Vec::new(),
            Some((_, first)) => {
                let inv = first.inverse();
                self.samples.iter().map(|(_, p)| compose(&inv, p)).collect()
            }
        }
    }

    /// Writes `t,qw,qx,qy,qz,px,py,pz` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,qw,qx,qy,qz,px,py,pz")?;
        for (t, pose) in &self.samples {
            let q = rotation_to_quaternion(&pose.rot);
            writeln!(
                out,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6}",
                to_f64(*t),
                q[0],
                q[1],
                q[2],
                q[3],
                to_f64(pose.pos.x),
                to_f64(pose.pos.y),
                to_f64(pose.pos.z)
            )?;
        }
        Ok(())
    }
}

impl TimedTrajectory<f64> {
    /// Parses the format written by [`TimedTrajectory::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut traj = Self::new();
        let mut offset = 0u64;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let at = offset;
            offset += line.len() as u64 + 1;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    offset: at,
                    msg: format!("line {}: {e}", n + 1),
                })?;
            if vals.len() != 8 {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("line {}: expected 8 fields, got {}", n + 1, vals.len()),
                });
            }
            let rot = quaternion_to_rotation([vals[1], vals[2], vals[3], vals[4]]);
            traj.push(vals[0], Pose::new(rot, Vector3::new(vals[5], vals[6], vals[7])))?;
        }
        Ok(traj)
    }
}

/// Unit quaternion `[w, x, y, z]` with `w >= 0`.
pub fn rotation_to_quaternion<S: Real>(rot: &Matrix3<S>) -> [f64; 4] {
    let m = rot.map(to_f64);
    let q = UnitQuaternion::from_matrix(&m);
    let mut out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    out
}

pub fn quaternion_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *uq.to_rotation_matrix().matrix()
}

/// Result of [`align_trajectories`].
#[derive(Debug, Clone)]
pub struct Alignment<S: Real> {
    /// Fixed rotation mapping ground-truth-frame increments into the
    /// estimator frame: `est ≈ offset · gt · offsetᵀ`.
    pub offset: Matrix3<S>,
    /// Residual geodesic error per frame after alignment (degrees).
    pub angle_errors_deg: Vec<S>,
    /// Raw translation difference per frame between increments (mm),
    /// not aligned.
    pub translation_errors: Vec<S>,
}

impl<S: Real> Alignment<S> {
    pub fn mean_error_deg(&self) -> S {
        let n = lit::<S>(self.angle_errors_deg.len() as f64);
        self.angle_errors_deg
            .iter()
            .fold(S::zero(), |acc, e| acc + *e)
            / n
    }
}

/// Rotation-only calibration between an estimated and a ground-truth
/// trajectory.
///
/// Both are re-expressed as increments from their own first pose. The two
/// frames are assumed to differ by a fixed rotation `O`, under which the
/// increments are conjugate and their rotation vectors satisfy
/// `log(est) = O · log(gt)`. `O` is the orthogonal Procrustes solution over
/// the stacked rotation vectors (SVD, determinant-corrected). When every
/// increment shares one axis the problem is underdetermined and the
/// shortest-arc rotation between the dominant directions is returned.
pub fn align_trajectories<S: Real>(
    est: &TimedTrajectory<S>,
    gt: &TimedTrajectory<S>,
) -> Result<Alignment<S>> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::DegenerateTrajectory(est.len()));
    }
    let est_inc = est.increments();
    let gt_inc = gt.increments();

    let mut cross = Matrix3::<S>::zeros();
    for (e, g) in est_inc.iter().zip(&gt_inc) {
        let a = rotation_log(&e.rot);
        let b = rotation_log(&g.rot);
        cross += a * b.transpose();
    }
    let offset = procrustes_rotation(&cross);

    let offset_t = offset.transpose();
    let mut angle_errors_deg = Vec::with_capacity(est_inc.len());
    let mut translation_errors = Vec::with_capacity(est_inc.len());
    for (e, g) in est_inc.iter().zip(&gt_inc) {
        let mapped = offset_t * e.rot * offset;
        angle_errors_deg.push(geodesic_angle(&mapped, &g.rot));
        translation_errors.push((e.pos - g.pos).norm());
    }
    Ok(Alignment {
        offset,
        angle_errors_deg,
        translation_errors,
    })
}

/// Rotation `O` maximising `trace(Oᵀ H)` for `H = Σ a bᵀ`.
fn procrustes_rotation<S: Real>(cross: &Matrix3<S>) -> Matrix3<S> {
    let scale = cross.norm();
    if scale <= S::default_epsilon() {
        return Matrix3::identity();
    }
    let svd = cross.svd(true, true);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
    });
    let s0 = svd.singular_values[order[0]];
    let s1 = svd.singular_values[order[1]];
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if s1 <= s0 * lit(1e-6) {
        // Rank one: only the dominant axis pair is constrained.
        let a: Vector3<S> = u.column(order[0]).into();
        let b: Vector3<S> = v_t.row(order[0]).transpose();
        return shortest_arc(&b, &a);
    }
    let mut r = u * v_t;
    if r.determinant() < S::zero() {
        let mut u2 = u;
        u2.column_mut(order[2]).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Smallest rotation taking unit direction `from` onto unit direction `to`.
fn shortest_arc<S: Real>(from: &Vector3<S>, to: &Vector3<S>) -> Matrix3<S> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to).clamp(-S::one(), S::one());
    if s <= lit(1e-12) {
        if c > S::zero() {
            return Matrix3::identity();
        }
        // Antiparallel: half turn about any perpendicular axis.
        let helper = if from.x.abs() < lit(0.9) {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = from.cross(&helper).normalize();
        return rotation_exp(&(perp * S::pi()));
    }
    rotation_exp(&(axis / s * s.atan2(c)))
}
