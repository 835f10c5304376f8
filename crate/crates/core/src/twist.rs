//! Rigid-body twist fitting from lifted contact points.
//!
//! Coefficient layout is `(ωx, ωy, ωz, tx, ty, tz)`. Each point contributes
//! `ṽx = ωy·z − ωz·y + tx`, `ṽy = ωz·x − ωx·z + ty` and, in full mode,
//! `ṽz = ωx·y − ωy·x + tz`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::contact::{contact_centroid, ContactMask, ContactPointSet, SensorIntrinsics};
use crate::se3::Twist;
use crate::{lit, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// In-plane rows only; `tz` is unobservable.
    #[default]
    Planar,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow<S: Real> {
    pub coeff: [S; 6],
    pub rhs: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem<S: Real> {
    pub rows: Vec<ConstraintRow<S>>,
    pub mode: ConstraintMode,
}

impl<S: Real> ConstraintSystem<S> {
    pub fn matrix(&self) -> (DMatrix<S>, DVector<S>) {
        let a = DMatrix::from_fn(self.rows.len(), 6, |r, c| self.rows[r].coeff[c]);
        let b = DVector::from_fn(self.rows.len(), |r, _| self.rows[r].rhs);
        (a, b)
    }

    /// `‖Aξ − b‖₂` for an arbitrary twist.
    pub fn residual_norm(&self, xi: &Twist<S>) -> S {
        let x = xi.to_array();
        self.rows
            .iter()
            .map(|row| {
                let r = row.coeff.iter().zip(&x).fold(S::zero(), |a, (c, v)| a + *c * *v) - row.rhs;
                r * r
            })
            .fold(S::zero(), |a, b| a + b)
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorMode {
    Coupled,
    #[default]
    Decoupled,
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            other => Err(Error::InvalidConfig(format!("unknown estimator mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig<S: Real> {
    pub mode: EstimatorMode,
    /// Smoothing window `L` in frames.
    pub window: usize,
    pub min_points: usize,
    /// Singular values below `rank_tol · σ_max` are treated as zero.
    pub rank_tol: S,
}

impl<S: Real> Default for EstimatorConfig<S> {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Decoupled,
            window: 5,
            min_points: 3,
            rank_tol: lit(1e-8),
        }
    }
}

impl<S: Real> EstimatorConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.min_points < 3 {
            return Err(Error::InvalidConfig("min_points must be at least 3".into()));
        }
        if !(self.rank_tol > S::zero() && self.rank_tol < S::one()) {
            return Err(Error::InvalidConfig("rank_tol must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Least-squares result with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistSolution<S: Real> {
    pub twist: Twist<S>,
    pub residual_norm: S,
    pub rank: usize,
    /// Set in planar mode, where `tz` is forced to zero.
    pub tz_unobservable: bool,
}

/// Rotation-only fit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit<S: Real> {
    pub omega: Vector3<S>,
    pub residual_norm: S,
    pub rank: usize,
}

pub fn build_constraints<S: Real>(
    points: &ContactPointSet<S>,
    mode: ConstraintMode,
) -> Result<ConstraintSystem<S>> {
    if points.is_empty() {
        return Err(Error::NoContact);
    }
    let (o, l) = (S::zero(), S::one());
    let per = if mode == ConstraintMode::Full { 3 } else { 2 };
    let mut rows = Vec::with_capacity(per * points.len());
    for p in &points.points {
        let (x, y, z) = (p.q.x, p.q.y, p.q.z);
        rows.push(ConstraintRow {
            coeff: [o, z, -y, l, o, o],
            rhs: p.v.x,
        });
        rows.push(ConstraintRow {
            coeff: [-z, o, x, o, l, o],
            rhs: p.v.y,
        });
        if mode == ConstraintMode::Full {
            rows.push(ConstraintRow {
                coeff: [y, -x, o, o, o, l],
                rhs: p.v.z,
            });
        }
    }
    Ok(ConstraintSystem { rows, mode })
}

/// Minimum-norm least squares: Householder QR of the tall system, then an
/// SVD of the small triangular factor. Returns `(x, rank, ‖Ax − b‖)`.
pub fn min_norm_lstsq<S: Real>(
    a: DMatrix<S>,
    b: &DVector<S>,
    rank_tol: S,
) -> Result<(DVector<S>, usize, S)> {
    let n = a.ncols();
    if a.nrows() == 0 || a.iter().all(|v| *v == S::zero()) {
        return Err(Error::DegenerateSystem);
    }
    let (qtb, r) = if a.nrows() > n {
        let qr = a.clone().qr();
        (qr.q().transpose() * b, qr.r())
    } else {
        (b.clone(), a.clone())
    };
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let cut = rank_tol * smax;
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cut {
            rank += 1;
            let coef = u.column(k).dot(&qtb) / *s;
            x += vt.row(k).transpose() * coef;
        }
    }
    let resid = (&a * &x - b).norm();
    Ok((x, rank, resid))
}

/// Coupled least-squares twist over all rows.
pub fn solve_twist_coupled<S: Real>(
    system: &ConstraintSystem<S>,
    rank_tol: S,
) -> Result<TwistSolution<S>> {
    let (a, b) = system.matrix();
    let (x, rank, residual_norm) = min_norm_lstsq(a, &b, rank_tol)?;
    let mut v = [S::zero(); 6];
    v.copy_from_slice(x.as_slice());
    let planar = system.mode == ConstraintMode::Planar;
    if planar {
        v[5] = S::zero();
    }
    Ok(TwistSolution {
        twist: Twist::from_array(v),
        residual_norm,
        rank,
        tz_unobservable: planar,
    })
}

/// `(centroid(cur) − centroid(prev)) / dt`, mm/s.
pub fn estimate_translation_centroid<S: Real>(
    mask_prev: &ContactMask,
    mask_cur: &ContactMask,
    intrinsics: &SensorIntrinsics<S>,
    dt: S,
) -> Result<(S, S)> {
    if !(dt > S::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let (px, py) = contact_centroid(mask_prev, intrinsics)?;
    let (cx, cy) = contact_centroid(mask_cur, intrinsics)?;
    Ok(((cx - px) / dt, (cy - py) / dt))
}

/// Rotation from shear alone: the mean velocity is removed, then
/// `min_ω Σ ‖v'ᵢ − ω × qᵢ‖²` is solved over the in-plane rows.
pub fn estimate_rotation_shear<S: Real>(
    points: &ContactPointSet<S>,
    min_points: usize,
    rank_tol: S,
) -> Result<RotationFit<S>> {
    if points.len() < min_points.max(1) {
        return Err(Error::InsufficientContact {
            got: points.len(),
            need: min_points,
        });
    }
    let mean = points.mean_velocity();
    let n = points.len();
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (k, p) in points.points.iter().enumerate() {
        let (x, y, z) = (p.q.x, p.q.y, p.q.z);
        a[(2 * k, 1)] = z;
        a[(2 * k, 2)] = -y;
        b[2 * k] = p.v.x - mean.x;
        a[(2 * k + 1, 0)] = -z;
        a[(2 * k + 1, 2)] = x;
        b[2 * k + 1] = p.v.y - mean.y;
    }
    let (x, rank, residual_norm) = min_norm_lstsq(a, &b, rank_tol)?;
    Ok(RotationFit {
        omega: Vector3::new(x[0], x[1], x[2]),
        residual_norm,
        rank,
    })
}

pub fn assemble_twist_decoupled<S: Real>(omega: Vector3<S>, centroid_rate: (S, S)) -> Twist<S> {
    Twist::new(omega, Vector3::new(centroid_rate.0, centroid_rate.1, S::zero()))
}

/// Componentwise mean of the last `min(l, len)` twists.
pub fn smooth_twists<S: Real>(history: &[Twist<S>], l: usize) -> Result<Twist<S>> {
    if l < 1 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    if history.is_empty() {
        return Err(Error::NoHistory);
    }
    let tail = &history[history.len().saturating_sub(l)..];
    let sum = tail.iter().fold(Twist::zero(), |a, b| a + *b);
    Ok(sum * (S::one() / S::from_usize(tail.len()).unwrap()))
}
