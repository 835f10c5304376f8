//! Per-frame tracking: field → contact → twist → fusion → smoothing →
//! SE(3) integration, plus the residual action correction.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

use crate::contact::{
    contact_centroid, extract_contact_mask, lift_contact_points, ContactMask, SensorIntrinsics,
};
use crate::field::{ForceField, TactileFrame};
use crate::fusion::{fuse_dual, MirrorConfig};
use crate::grid::Grid;
use crate::se3::{compose, exp_step, Pose, Twist};
use crate::twist::{
    assemble_twist_decoupled, build_constraints, estimate_rotation_shear, smooth_twists,
    solve_twist_coupled, ConstraintMode, EstimatorConfig, EstimatorMode,
};
use crate::{lit, to_f64, Error, Real, Result};

/// Which sensor streams feed the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorSelection {
    Single(usize),
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig<S: Real> {
    pub estimator: EstimatorConfig<S>,
    pub mirror: MirrorConfig,
    pub sensors: SensorSelection,
    /// Intrinsics of every sensor in the input, indexed by sensor id.
    pub intrinsics: Vec<SensorIntrinsics<S>>,
    /// mm/s per unit of shear response.
    pub velocity_scale: S,
    /// Estimated over true angular rate, per axis; estimates are divided by it.
    pub rotation_gains: [S; 3],
    /// Nominal frame period, s. Frames of one step must agree within half of it.
    pub frame_period: S,
}

impl<S: Real> TrackerConfig<S> {
    pub fn new(intrinsics: Vec<SensorIntrinsics<S>>, frame_rate: S) -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            mirror: MirrorConfig::default(),
            sensors: SensorSelection::Single(0),
            intrinsics,
            velocity_scale: S::one(),
            rotation_gains: [S::one(); 3],
            frame_period: S::one() / frame_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        for intr in &self.intrinsics {
            intr.validate()?;
        }
        let need = match self.sensors {
            SensorSelection::Single(id) => id + 1,
            SensorSelection::Dual => 2,
        };
        if self.intrinsics.len() < need {
            return Err(Error::InvalidConfig(format!(
                "{need} sensor(s) required, {} configured",
                self.intrinsics.len()
            )));
        }
        if !(self.velocity_scale > S::zero() && self.frame_period > S::zero()) {
            return Err(Error::InvalidConfig("velocity scale and frame period must be positive".into()));
        }
        if self.rotation_gains.iter().any(|g| !(g.abs() > lit(1e-9))) {
            return Err(Error::InvalidConfig("rotation gains must be non-zero".into()));
        }
        Ok(())
    }
}

/// Per-sensor diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensorDiagnostics {
    pub sensor_id: usize,
    pub contact_size: usize,
    pub residual_norm: f64,
    pub rank: usize,
    pub contact_lost: bool,
}

/// Output of one [`Tracker::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<S: Real> {
    pub timestamp: f64,
    pub pose: Pose<S>,
    /// Fused, gain-corrected twist before smoothing.
    pub raw_twist: Twist<S>,
    pub smoothed_twist: Twist<S>,
    pub contact_lost: bool,
    pub sensors: Vec<SensorDiagnostics>,
}

impl<S: Real> StepOutput<S> {
    /// Incremental rotation `θ̂ = ω̄ · dt` of this step.
    pub fn incremental_rotation(&self, dt: S) -> Vector3<S> {
        self.smoothed_twist.omega * dt
    }
}

#[derive(Debug, Clone)]
struct SensorState<S: Real> {
    prev_mask: Option<ContactMask>,
    prev_normal: Option<Grid<S>>,
}

/// Mutable tracking state (single owner).
#[derive(Debug, Clone)]
pub struct Tracker<S: Real> {
    config: TrackerConfig<S>,
    pose: Pose<S>,
    history: VecDeque<Twist<S>>,
    sensors: Vec<SensorState<S>>,
    last_timestamp: Option<f64>,
    frame_counter: usize,
}

impl<S: Real> Tracker<S> {
    pub fn new(config: TrackerConfig<S>) -> Result<Self> {
        config.validate()?;
        let sensors = vec![
            SensorState {
                prev_mask: None,
                prev_normal: None,
            };
            config.intrinsics.len()
        ];
        Ok(Self {
            config,
            pose: Pose::identity(),
            history: VecDeque::new(),
            sensors,
            last_timestamp: None,
            frame_counter: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig<S> {
        &self.config
    }

    pub fn pose(&self) -> &Pose<S> {
        &self.pose
    }

    pub fn frame_counter(&self) -> usize {
        self.frame_counter
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Processes the frames of one time step (any subset of sensors, at
    /// least the selected ones).
    pub fn step(&mut self, frames: &[TactileFrame<S>]) -> Result<StepOutput<S>> {
        let ids: Vec<usize> = match self.config.sensors {
            SensorSelection::Single(id) => vec![id],
            SensorSelection::Dual => vec![0, 1],
        };
        let mut picked = Vec::with_capacity(ids.len());
        for id in &ids {
            let f = frames
                .iter()
                .find(|f| f.sensor_id as usize == *id)
                .ok_or_else(|| Error::InvalidConfig(format!("no frame for sensor {id}")))?;
            picked.push(f);
        }
        let t = picked[0].timestamp;
        let half = 0.5 * to_f64(self.config.frame_period);
        if picked.iter().any(|f| (f.timestamp - t).abs() > half) {
            return Err(Error::ClockError("sensor frames are not synchronized".into()));
        }
        let dt = match self.last_timestamp {
            Some(prev) if t <= prev => {
                return Err(Error::ClockError(format!(
                    "timestamp {t} does not advance past {prev}"
                )))
            }
            Some(prev) => Some(t - prev),
            None => None,
        };

        let mut estimates = Vec::with_capacity(picked.len());
        let mut diags = Vec::with_capacity(picked.len());
        for (id, frame) in ids.iter().zip(&picked) {
            let (est, diag) = self.sensor_estimate(*id, frame, dt)?;
            estimates.push(est);
            diags.push(diag);
        }

        let twist = match (self.config.sensors, estimates.as_slice()) {
            (SensorSelection::Dual, [Some(a), Some(b)]) => Some(fuse_dual(a, b, &self.config.mirror)),
            (SensorSelection::Dual, [Some(a), None]) => Some(*a),
            (SensorSelection::Dual, [None, Some(b)]) => Some(self.config.mirror.apply(b)),
            (_, [Some(a)]) => Some(*a),
            _ => None,
        };
        let contact_lost = twist.is_none();
        let raw = twist
            .map(|xi| self.apply_gains(xi))
            .unwrap_or_else(Twist::zero);

        self.history.push_back(raw);
        while self.history.len() > self.config.estimator.window {
            self.history.pop_front();
        }
        let smoothed = if contact_lost {
            Twist::zero()
        } else {
            smooth_twists(self.history.make_contiguous(), self.config.estimator.window)?
        };
        if let (Some(dt), false) = (dt, contact_lost) {
            self.pose = compose(&self.pose, &exp_step(&smoothed, lit(dt)));
        }
        self.last_timestamp = Some(t);
        self.frame_counter += 1;
        Ok(StepOutput {
            timestamp: t,
            pose: self.pose,
            raw_twist: raw,
            smoothed_twist: smoothed,
            contact_lost,
            sensors: diags,
        })
    }

    fn apply_gains(&self, xi: Twist<S>) -> Twist<S> {
        let g = &self.config.rotation_gains;
        Twist::new(
            Vector3::new(xi.omega.x / g[0], xi.omega.y / g[1], xi.omega.z / g[2]),
            xi.trans,
        )
    }

    fn sensor_estimate(
        &mut self,
        id: usize,
        frame: &TactileFrame<S>,
        dt: Option<f64>,
    ) -> Result<(Option<Twist<S>>, SensorDiagnostics)> {
        let intr = self.config.intrinsics[id];
        let field = ForceField::from_frame(frame, intr);
        let mask = extract_contact_mask(&field);
        let est_cfg = self.config.estimator;
        let mut diag = SensorDiagnostics {
            sensor_id: id,
            contact_size: mask.len(),
            residual_norm: 0.0,
            rank: 0,
            contact_lost: false,
        };
        let state = &mut self.sensors[id];
        if mask.is_degenerate() || mask.len() < est_cfg.min_points {
            state.prev_mask = None;
            state.prev_normal = None;
            diag.contact_lost = true;
            return Ok((None, diag));
        }
        let step_dt: S = lit(dt.unwrap_or_else(|| to_f64(self.config.frame_period)));
        let (cx, cy) = contact_centroid(&mask, &intr)?;
        let points = lift_contact_points(
            &field,
            &mask,
            self.config.velocity_scale,
            step_dt,
            state.prev_normal.as_ref(),
        )?
        .recentred_xy(cx, cy);
        let twist = match est_cfg.mode {
            EstimatorMode::Decoupled => {
                let fit = estimate_rotation_shear(&points, est_cfg.min_points, est_cfg.rank_tol)?;
                diag.residual_norm = to_f64(fit.residual_norm);
                diag.rank = fit.rank;
                let rate = match (&state.prev_mask, dt) {
                    (Some(prev), Some(_)) => {
                        let (px, py) = contact_centroid(prev, &intr)?;
                        ((cx - px) / step_dt, (cy - py) / step_dt)
                    }
                    _ => (S::zero(), S::zero()),
                };
                assemble_twist_decoupled(fit.omega, rate)
            }
            EstimatorMode::Coupled => {
                let sys = build_constraints(&points, ConstraintMode::Planar)?;
                let sol = solve_twist_coupled(&sys, est_cfg.rank_tol)?;
                diag.residual_norm = to_f64(sol.residual_norm);
                diag.rank = sol.rank;
                sol.twist
            }
        };
        state.prev_normal = Some(field.normal());
        state.prev_mask = Some(mask);
        Ok((Some(twist), diag))
    }
}

/// Linear map from incremental rotation to an action correction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualConfig<S: Real> {
    /// `m × 3`, action units per rad.
    pub gamma: DMatrix<S>,
    pub enabled: bool,
}

impl<S: Real> ResidualConfig<S> {
    /// `Γ = k · I₃` acting on a rotation-vector action.
    pub fn rotational(k: S) -> Self {
        Self {
            gamma: DMatrix::identity(3, 3) * k,
            enabled: true,
        }
    }
}

/// `a_base + Γ θ̂`, or `a_base` when disabled.
pub fn residual_correct<S: Real>(
    a_base: &DVector<S>,
    theta_hat: &Vector3<S>,
    cfg: &ResidualConfig<S>,
) -> Result<DVector<S>> {
    if cfg.gamma.ncols() != 3 || cfg.gamma.nrows() != a_base.len() {
        return Err(Error::ShapeMismatch(format!(
            "gamma is {}x{}, action has {} entries",
            cfg.gamma.nrows(),
            cfg.gamma.ncols(),
            a_base.len()
        )));
    }
    if !cfg.enabled {
        return Ok(a_base.clone());
    }
    Ok(a_base + &cfg.gamma * theta_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::geodesic_angle;
    use nalgebra::Matrix3;

    fn vortex_frame(w: usize, h: usize, omega: f64, t: f64) -> TactileFrame<f64> {
        let intr = SensorIntrinsics::<f64> {
            i0: (w as f64 - 1.0) / 2.0,
            j0: (h as f64 - 1.0) / 2.0,
            ..SensorIntrinsics::default()
        };
        let grid = Grid::from_fn(w, h, |i, j| {
            let (x, y) = intr.pixel_to_plane(i, j);
            let r2 = x * x + y * y;
            [-omega * y, omega * x, (1.0 - r2).max(0.0)]
        });
        TactileFrame::new(grid, t, 0).unwrap()
    }

    fn config(w: usize, h: usize) -> TrackerConfig<f64> {
        let intr = SensorIntrinsics {
            i0: (w as f64 - 1.0) / 2.0,
            j0: (h as f64 - 1.0) / 2.0,
            ..SensorIntrinsics::default()
        };
        TrackerConfig::new(vec![intr], 120.0)
    }

    #[test]
    fn zero_frames_hold_pose_and_flag() {
        let mut tr = Tracker::new(config(32, 24)).unwrap();
        for k in 0..3 {
            let out = tr.step(&[TactileFrame::zeros(32, 24, k as f64 / 120.0, 0)]).unwrap();
            assert!(out.contact_lost);
            assert_eq!(out.smoothed_twist, Twist::zero());
            assert_eq!(out.pose, Pose::identity());
        }
    }

    #[test]
    fn clock_regression_is_an_error() {
        let mut tr = Tracker::new(config(32, 24)).unwrap();
        tr.step(&[vortex_frame(32, 24, 0.5, 0.1)]).unwrap();
        assert!(matches!(
            tr.step(&[vortex_frame(32, 24, 0.5, 0.1)]),
            Err(Error::ClockError(_))
        ));
        assert!(matches!(
            tr.step(&[vortex_frame(32, 24, 0.5, 0.05)]),
            Err(Error::ClockError(_))
        ));
    }

    #[test]
    fn constant_vortex_integrates_about_z() {
        let mut tr = Tracker::new(config(32, 24)).unwrap();
        let n = 61;
        for k in 0..n {
            tr.step(&[vortex_frame(32, 24, 0.5, k as f64 / 120.0)]).unwrap();
        }
        // 60 intervals at 0.5 rad/s.
        let want = (0.5f64 * 60.0 / 120.0).to_degrees();
        let got = geodesic_angle(&Matrix3::identity(), &tr.pose().rot);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(tr.history_len() <= tr.config().estimator.window);
    }

    #[test]
    fn pose_stays_on_se3_over_long_runs() {
        let mut tr = Tracker::new(config(20, 16)).unwrap();
        let frame = vortex_frame(20, 16, 3.0, 0.0);
        for k in 0..100_000 {
            let mut f = frame.clone();
            f.timestamp = k as f64 / 120.0;
            tr.step(&[f]).unwrap();
        }
        let p = tr.pose();
        assert!((p.rot.transpose() * p.rot - Matrix3::identity()).norm() < 1e-9);
        assert!((p.rot.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dual_requires_two_intrinsics() {
        let mut cfg = config(32, 24);
        cfg.sensors = SensorSelection::Dual;
        assert!(Tracker::new(cfg).is_err());
    }

    #[test]
    fn residual_examples() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let zero = ResidualConfig {
            gamma: DMatrix::zeros(3, 3),
            enabled: true,
        };
        assert_eq!(residual_correct(&a, &Vector3::new(0.1, 0.2, 0.3), &zero).unwrap(), a);
        let id = ResidualConfig::rotational(1.0);
        assert_eq!(residual_correct(&a, &Vector3::zeros(), &id).unwrap(), a);
        let out = residual_correct(&a, &Vector3::new(0.0, 0.0, 0.1), &id).unwrap();
        assert_eq!(out, DVector::from_vec(vec![1.0, 2.0, 3.1]));
        let off = ResidualConfig {
            enabled: false,
            ..id.clone()
        };
        assert_eq!(residual_correct(&a, &Vector3::new(1.0, 1.0, 1.0), &off).unwrap(), a);
        let short = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            residual_correct(&short, &Vector3::zeros(), &id),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
