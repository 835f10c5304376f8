//! Tactile frames and the decoupled force field.
//!
//! The image path runs `block_match_flow` → `gaussian_density` + `nhhd` →
//! [`calibrate_forces`]. Frames produced by the simulator already carry the
//! three force channels and are wrapped directly with [`ForceField::from_frame`].

mod density;
mod flow;
mod nhhd;

pub use density::{gaussian_density, DensityMap};
pub use flow::{block_match_flow, FlowField};
pub use nhhd::{curl, divergence, nhhd, nhhd_with_pad, NhhdComponents, DEFAULT_PAD_FRACTION};

use crate::contact::SensorIntrinsics;
use crate::grid::Grid;
use crate::{lit, Error, Real, Result};

/// Default sensor resolution.
pub const DEFAULT_WIDTH: usize = 320;
pub const DEFAULT_HEIGHT: usize = 240;

/// One sensor observation: an `(x, y, z)` response per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame<S: Real> {
    pub grid: Grid<[S; 3]>,
    /// Seconds.
    pub timestamp: f64,
    pub sensor_id: u8,
}

impl<S: Real> TactileFrame<S> {
    pub fn new(grid: Grid<[S; 3]>, timestamp: f64, sensor_id: u8) -> Result<Self> {
        if grid.width() == 0 || grid.height() == 0 {
            return Err(Error::ShapeMismatch("empty tactile frame".into()));
        }
        Ok(Self {
            grid,
            timestamp,
            sensor_id,
        })
    }

    pub fn zeros(width: usize, height: usize, timestamp: f64, sensor_id: u8) -> Self {
        Self {
            grid: Grid::filled(width, height, [S::zero(); 3]),
            timestamp,
            sensor_id,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grid
            .as_slice()
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Per-pixel `(fˣ, fʸ, fᶻ)` with the sensor intrinsics it was measured under.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceField<S: Real> {
    pub grid: Grid<[S; 3]>,
    pub intrinsics: SensorIntrinsics<S>,
}

impl<S: Real> ForceField<S> {
    pub fn new(grid: Grid<[S; 3]>, intrinsics: SensorIntrinsics<S>) -> Self {
        Self { grid, intrinsics }
    }

    pub fn from_frame(frame: &TactileFrame<S>, intrinsics: SensorIntrinsics<S>) -> Self {
        Self::new(frame.grid.clone(), intrinsics)
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// The normal channel `fᶻ` as its own grid.
    pub fn normal(&self) -> Grid<S> {
        self.grid.map(|c| c[2])
    }
}

/// Linear gains from (flow components, density) to force channels.
/// Dimensionless in this crate; physical calibration is out of scope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceCalibration<S: Real> {
    /// Response units per pixel of tangential flow.
    pub gain_shear: S,
    /// Response units per unit of density deficit.
    pub gain_normal: S,
    /// Density of the undeformed sensor; `fᶻ` is zero there.
    pub density_baseline: S,
}

impl<S: Real> Default for ForceCalibration<S> {
    fn default() -> Self {
        Self {
            gain_shear: S::one(),
            gain_normal: S::one(),
            density_baseline: S::one(),
        }
    }
}

impl<S: Real> ForceCalibration<S> {
    pub fn validate(&self) -> Result<()> {
        if self.gain_shear > S::zero() && self.gain_normal > S::zero() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("force gains must be positive".into()))
        }
    }
}

/// Linear map from the decomposed flow and density map to force channels.
///
/// Tangential channels use the full reconstruction `d + r + k`; the normal
/// channel is `gain_normal · max(0, baseline − G)`.
pub fn calibrate_forces<S: Real>(
    components: &NhhdComponents<S>,
    density: &DensityMap<S>,
    calib: &ForceCalibration<S>,
    intrinsics: SensorIntrinsics<S>,
) -> Result<ForceField<S>> {
    calib.validate()?;
    components.d.ensure_same_dims(&components.r, "nhhd r")?;
    components.d.ensure_same_dims(&components.k, "nhhd k")?;
    components.d.ensure_same_dims(&density.grid, "density map")?;
    let (w, h) = components.d.dims();
    let grid = Grid::from_fn(w, h, |i, j| {
        let d = components.d.get(i, j);
        let r = components.r.get(i, j);
        let k = components.k.get(i, j);
        let g = *density.grid.get(i, j);
        [
            calib.gain_shear * (d[0] + r[0] + k[0]),
            calib.gain_shear * (d[1] + r[1] + k[1]),
            calib.gain_normal * (calib.density_baseline - g).max(S::zero()),
        ]
    });
    Ok(ForceField::new(grid, intrinsics))
}

/// Settings of the image path from marker images to a force field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageFieldConfig<S: Real> {
    pub window_radius: usize,
    pub search_radius: usize,
    pub density_sigma: S,
    pub calibration: ForceCalibration<S>,
}

impl<S: Real> Default for ImageFieldConfig<S> {
    fn default() -> Self {
        Self {
            window_radius: 4,
            search_radius: 4,
            density_sigma: lit(2.0),
            calibration: ForceCalibration::default(),
        }
    }
}

/// Flow, density and decomposition of one image pair, mapped to forces.
pub fn field_from_images<S: Real + rustfft::FftNum>(
    reference: &Grid<S>,
    current: &Grid<S>,
    cfg: &ImageFieldConfig<S>,
    intrinsics: SensorIntrinsics<S>,
) -> Result<ForceField<S>> {
    let flow = block_match_flow(reference, current, cfg.window_radius, cfg.search_radius)?;
    let density = gaussian_density(&flow, cfg.density_sigma)?;
    let comps = nhhd(&flow)?;
    calibrate_forces(&comps, &density, &cfg.calibration, intrinsics)
}
