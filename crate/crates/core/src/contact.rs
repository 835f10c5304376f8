//! Contact region extraction, metric centroid and lifting of contact pixels
//! to 3D points with velocity proxies.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::field::ForceField;
use crate::grid::{gaussian_blur, Grid};
use crate::{lit, Error, Real, Result};

/// Masks smaller than this are reported but not used for estimation.
pub const MIN_CONTACT_CELLS: usize = 3;

/// Pixel-to-metric mapping and contact detection parameters of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorIntrinsics<S: Real> {
    /// Pixels per mm along x (columns).
    pub kappa_x: S,
    /// Pixels per mm along y (rows).
    pub kappa_y: S,
    /// Principal point, pixel coordinates.
    pub i0: S,
    pub j0: S,
    /// Contact threshold on the smoothed normal channel.
    pub tau: S,
    /// mm of normal deformation per unit of normal response.
    pub z_gain: S,
    /// Gaussian width (px) applied to `fᶻ` before thresholding; 0 disables.
    pub smooth_sigma: S,
}

impl<S: Real> Default for SensorIntrinsics<S> {
    fn default() -> Self {
        Self {
            kappa_x: lit(8.0),
            kappa_y: lit(8.0),
            i0: lit(159.5),
            j0: lit(119.5),
            tau: lit(0.15),
            z_gain: S::one(),
            smooth_sigma: S::one(),
        }
    }
}

impl<S: Real> SensorIntrinsics<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_x > S::zero() && self.kappa_y > S::zero()) {
            return Err(Error::InvalidConfig("kappa must be positive".into()));
        }
        if !(self.tau >= S::zero()) {
            return Err(Error::InvalidConfig("tau must be non-negative".into()));
        }
        if !(self.z_gain > S::zero()) {
            return Err(Error::InvalidConfig("z_gain must be positive".into()));
        }
        if !(self.smooth_sigma >= S::zero()) {
            return Err(Error::InvalidConfig("smooth_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Metric in-plane coordinates of pixel `(i, j)`.
    #[inline]
    pub fn pixel_to_plane(&self, i: usize, j: usize) -> (S, S) {
        (
            (S::from_usize(i).unwrap() - self.i0) / self.kappa_x,
            (S::from_usize(j).unwrap() - self.j0) / self.kappa_y,
        )
    }

    /// Normal deformation `g(fᶻ) = z_gain · max(fᶻ, 0)`.
    #[inline]
    pub fn lift_z(&self, fz: S) -> S {
        self.z_gain * fz.max(S::zero())
    }

    /// Maps every scalar field through `f` (used to convert precision).
    pub fn cast<T: Real>(&self) -> SensorIntrinsics<T> {
        let c = |v: S| T::from_f64(crate::to_f64(v)).unwrap();
        SensorIntrinsics {
            kappa_x: c(self.kappa_x),
            kappa_y: c(self.kappa_y),
            i0: c(self.i0),
            j0: c(self.j0),
            tau: c(self.tau),
            z_gain: c(self.z_gain),
            smooth_sigma: c(self.smooth_sigma),
        }
    }
}

/// Pixel set of the active contact patch, in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<(usize, usize)>,
}

impl ContactMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Too small for a planar fit.
    pub fn is_degenerate(&self) -> bool {
        self.cells.len() < MIN_CONTACT_CELLS
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.cells.binary_search_by(|&(ci, cj)| (cj, ci).cmp(&(j, i))).is_ok()
    }
}

/// Pixels with a smoothed normal response above `tau` and 4-connected
/// components of them. Components come back in raster order of their first
/// cell; each component's cells are in raster order.
pub fn threshold_components<S: Real>(field: &ForceField<S>) -> Vec<Vec<(usize, usize)>> {
    let intr = &field.intrinsics;
    let smoothed = gaussian_blur(&field.normal(), intr.smooth_sigma);
    let (w, h) = smoothed.dims();
    let above = smoothed.map(|v| *v > intr.tau);
    let mut label = Grid::filled(w, h, usize::MAX);
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if !*above.get(i, j) || *label.get(i, j) != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut cells = Vec::new();
            label.set(i, j, id);
            stack.push((i, j));
            while let Some((ci, cj)) = stack.pop() {
                cells.push((ci, cj));
                let mut visit = |ni: usize, nj: usize| {
                    if *above.get(ni, nj) && *label.get(ni, nj) == usize::MAX {
                        label.set(ni, nj, id);
                        stack.push((ni, nj));
                    }
                };
                if ci > 0 {
                    visit(ci - 1, cj);
                }
                if ci + 1 < w {
                    visit(ci + 1, cj);
                }
                if cj > 0 {
                    visit(ci, cj - 1);
                }
                if cj + 1 < h {
                    visit(ci, cj + 1);
                }
            }
            cells.sort_by_key(|&(ci, cj)| (cj, ci));
            comps.push(cells);
        }
    }
    comps
}

/// Contact patch: the largest 4-connected component of the thresholded,
/// smoothed normal channel. Ties go to the component found first in raster
/// order. An empty mask is a valid result.
pub fn extract_contact_mask<S: Real>(field: &ForceField<S>) -> ContactMask {
    let (w, h) = field.grid.dims();
    let mut best: Vec<(usize, usize)> = Vec::new();
    for comp in threshold_components(field) {
        if comp.len() > best.len() {
            best = comp;
        }
    }
    ContactMask {
        width: w,
        height: h,
        cells: best,
    }
}

/// Mean metric position `((i − i0)/κx, (j − j0)/κy)` of the mask cells, mm.
pub fn contact_centroid<S: Real>(
    mask: &ContactMask,
    intrinsics: &SensorIntrinsics<S>,
) -> Result<(S, S)> {
    if mask.is_empty() {
        return Err(Error::NoContact);
    }
    let (mut sx, mut sy) = (S::zero(), S::zero());
    for &(i, j) in &mask.cells {
        let (x, y) = intrinsics.pixel_to_plane(i, j);
        sx += x;
        sy += y;
    }
    let n = S::from_usize(mask.len()).unwrap();
    Ok((sx / n, sy / n))
}

/// Lifted contact point `q` (mm) with its velocity proxy `v` (mm/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint<S: Real> {
    pub q: Vector3<S>,
    pub v: Vector3<S>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactPointSet<S: Real> {
    pub points: Vec<ContactPoint<S>>,
}

impl<S: Real> ContactPointSet<S> {
    pub fn new(points: Vec<ContactPoint<S>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points with their in-plane coordinates shifted by `(−dx, −dy)`;
    /// velocities and `z` unchanged.
    pub fn recentred_xy(&self, dx: S, dy: S) -> Self {
        Self::new(
            self.points
                .iter()
                .map(|p| ContactPoint {
                    q: Vector3::new(p.q.x - dx, p.q.y - dy, p.q.z),
                    v: p.v,
                })
                .collect(),
        )
    }

    pub fn mean_velocity(&self) -> Vector3<S> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |a: Vector3<S>, p| a + p.v);
        sum / S::from_usize(self.points.len()).unwrap()
    }
}

/// Lifts every mask cell to `q = ((i−i0)/κx, (j−j0)/κy, g(fᶻ))` with velocity
/// proxy `v = (s·fˣ, s·fʸ, (g(fᶻ) − g(fᶻ_prev)) / dt)`, `s = velocity_scale`.
/// Without a previous normal channel the normal proxy is zero.
pub fn lift_contact_points<S: Real>(
    field: &ForceField<S>,
    mask: &ContactMask,
    velocity_scale: S,
    dt: S,
    prev_normal: Option<&Grid<S>>,
) -> Result<ContactPointSet<S>> {
    if !(dt > S::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    if (mask.width, mask.height) != field.grid.dims() {
        return Err(Error::ShapeMismatch("mask and field dimensions differ".into()));
    }
    if let Some(prev) = prev_normal {
        field.grid.ensure_same_dims(prev, "previous normal channel")?;
    }
    let intr = &field.intrinsics;
    let points = mask
        .cells
        .iter()
        .map(|&(i, j)| {
            let f = field.grid.get(i, j);
            let (x, y) = intr.pixel_to_plane(i, j);
            let z = intr.lift_z(f[2]);
            let vz = match prev_normal {
                Some(prev) => (z - intr.lift_z(*prev.get(i, j))) / dt,
                None => S::zero(),
            };
            ContactPoint {
                q: Vector3::new(x, y, z),
                v: Vector3::new(velocity_scale * f[0], velocity_scale * f[1], vz),
            }
        })
        .collect();
    Ok(ContactPointSet { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn intr(tau: f64, sigma: f64) -> SensorIntrinsics<f64> {
        SensorIntrinsics {
            kappa_x: 5.0,
            kappa_y: 4.0,
            i0: 40.0,
            j0: 30.0,
            tau,
            z_gain: 0.1,
            smooth_sigma: sigma,
        }
    }

    fn field_from(fz: impl Fn(usize, usize) -> f64, intr: SensorIntrinsics<f64>) -> ForceField<f64> {
        ForceField::new(Grid::from_fn(81, 61, |i, j| [0.0, 0.0, fz(i, j)]), intr)
    }

    #[test]
    fn zero_normal_gives_empty_mask() {
        let f = field_from(|_, _| 0.0, intr(0.5, 1.0));
        assert!(extract_contact_mask(&f).is_empty());
    }

    #[test]
    fn uniform_normal_above_threshold_fills_grid() {
        let f = field_from(|_, _| 1.0, intr(0.5, 1.0));
        assert_eq!(extract_contact_mask(&f).len(), 81 * 61);
    }

    /// Independent oracle: explicit 2D blur, threshold, BFS flood fill from
    /// the bump centre.
    #[test]
    fn bump_with_hot_pixel_keeps_only_blob() {
        let it = intr(0.5, 1.0);
        let bump = |i: usize, j: usize| {
            let dx = i as f64 - 40.0;
            let dy = j as f64 - 30.0;
            4.0 * 0.5 * (-(dx * dx + dy * dy) / (2.0 * 10.0 * 10.0)).exp()
        };
        let hot = (75usize, 55usize);
        let fz = move |i: usize, j: usize| if (i, j) == hot { 100.0 } else { bump(i, j) };
        let f = field_from(fz, it);
        let mask = extract_contact_mask(&f);

        let (w, h) = (81usize, 61usize);
        let taps: Vec<f64> = (-4..=4).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).collect();
        let norm: f64 = taps.iter().sum();
        let smooth = |i: usize, j: usize| {
            let mut acc = 0.0;
            for (a, ta) in taps.iter().enumerate() {
                for (b, tb) in taps.iter().enumerate() {
                    let ii = crate::grid::reflect(i as isize + a as isize - 4, w);
                    let jj = crate::grid::reflect(j as isize + b as isize - 4, h);
                    acc += ta * tb * fz(ii, jj);
                }
            }
            acc / (norm * norm)
        };
        let mut seen = vec![false; w * h];
        let mut want = Vec::new();
        let mut q = VecDeque::from([(40usize, 30usize)]);
        seen[30 * w + 40] = true;
        while let Some((i, j)) = q.pop_front() {
            want.push((i, j));
            let nbrs = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (ni, nj) in nbrs {
                if ni < w && nj < h && !seen[nj * w + ni] && smooth(ni, nj) > 0.5 {
                    seen[nj * w + ni] = true;
                    q.push_back((ni, nj));
                }
            }
        }
        want.sort_by_key(|&(i, j)| (j, i));
        assert_eq!(mask.cells, want);
        assert!(!mask.contains(hot.0, hot.1));
        let (cx, cy) = contact_centroid(&mask, &it).unwrap();
        assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
    }

    #[test]
    fn centroid_examples() {
        let it = intr(0.0, 0.0);
        let one = ContactMask {
            width: 81,
            height: 61,
            cells: vec![(50, 30)],
        };
        assert_eq!(contact_centroid(&one, &it).unwrap(), (2.0, 0.0));
        let two = ContactMask {
            width: 81,
            height: 61,
            cells: vec![(30, 30), (50, 30)],
        };
        assert_eq!(contact_centroid(&two, &it).unwrap(), (0.0, 0.0));
        assert!(matches!(
            contact_centroid(&ContactMask::empty(81, 61), &it),
            Err(Error::NoContact)
        ));
    }

    #[test]
    fn lift_examples() {
        let it = intr(0.0, 0.0);
        let zero = field_from(|_, _| 0.0, it);
        let mask = ContactMask {
            width: 81,
            height: 61,
            cells: vec![(3, 4), (10, 20), (60, 50)],
        };
        let pts = lift_contact_points(&zero, &mask, 2.0, 0.01, None).unwrap();
        assert_eq!(pts.len(), mask.len());
        assert!(pts.points.iter().all(|p| p.q.z == 0.0 && p.v == Vector3::zeros()));

        let single = field_from(|i, j| if (i, j) == (10, 20) { 3.0 } else { 0.0 }, it);
        let pts = lift_contact_points(&single, &mask, 1.0, 0.01, None).unwrap();
        assert!((pts.points[1].q.z - 0.3).abs() < 1e-15);
    }

    #[test]
    fn normal_velocity_from_previous_frame() {
        let it = intr(0.0, 0.0);
        let cur = field_from(|_, _| 2.0, it);
        let prev = Grid::filled(81, 61, 1.0);
        let mask = ContactMask {
            width: 81,
            height: 61,
            cells: vec![(1, 1)],
        };
        let pts = lift_contact_points(&cur, &mask, 1.0, 0.5, Some(&prev)).unwrap();
        assert!((pts.points[0].v.z - 0.2).abs() < 1e-15);
        assert!(lift_contact_points(&cur, &mask, 1.0, 0.0, None).is_err());
    }
}
