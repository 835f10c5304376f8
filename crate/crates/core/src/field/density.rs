use super::FlowField;
use crate::grid::{gaussian_blur, Grid};
use crate::{Error, Real, Result};

/// Accumulated Gaussian density of a flow field.
///
/// Values above one mark local compression of the flow, values below one
/// local expansion. Relative surface height is taken proportional to `−G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap<S: Real> {
    pub grid: Grid<S>,
    /// Kernel width in pixels.
    pub sigma: S,
}

/// Forward-splats unit mass from every valid pixel `m` to `m + w(m)` with
/// bilinear weights, then blurs the mass grid with a normalised Gaussian.
///
/// Targets outside the grid are clamped onto the border so that the total
/// mass equals the number of valid pixels. The blur uses mirrored borders,
/// which also preserves mass.
pub fn gaussian_density<S: Real>(flow: &FlowField<S>, sigma: S) -> Result<DensityMap<S>> {
    if !(sigma > S::zero()) {
        return Err(Error::InvalidConfig("density sigma must be positive".into()));
    }
    let (w, h) = flow.grid.dims();
    let mut mass = Grid::<S>::zeros(w, h);
    let max_x = S::from_usize(w - 1).unwrap();
    let max_y = S::from_usize(h - 1).unwrap();
    for j in 0..h {
        for i in 0..w {
            if !*flow.valid.get(i, j) {
                continue;
            }
            let d = flow.grid.get(i, j);
            let x = (S::from_usize(i).unwrap() + d[0]).clamp(S::zero(), max_x);
            let y = (S::from_usize(j).unwrap() + d[1]).clamp(S::zero(), max_y);
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let i0 = x0.to_usize().unwrap();
            let j0 = y0.to_usize().unwrap();
            let i1 = (i0 + 1).min(w - 1);
            let j1 = (j0 + 1).min(h - 1);
            let one = S::one();
            *mass.get_mut(i0, j0) += (one - fx) * (one - fy);
            *mass.get_mut(i1, j0) += fx * (one - fy);
            *mass.get_mut(i0, j1) += (one - fx) * fy;
            *mass.get_mut(i1, j1) += fx * fy;
        }
    }
    Ok(DensityMap {
        grid: gaussian_blur(&mass, sigma),
        sigma,
    })
}
