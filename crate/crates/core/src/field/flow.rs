use crate::grid::Grid;
use crate::{lit, to_f64, Error, Real, Result};

/// Dense planar displacement in pixels. Invalid cells hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<S: Real> {
    pub grid: Grid<[S; 2]>,
    pub valid: Grid<bool>,
}

impl<S: Real> FlowField<S> {
    /// Every cell valid.
    pub fn from_grid(grid: Grid<[S; 2]>) -> Self {
        let valid = Grid::filled(grid.width(), grid.height(), true);
        Self { grid, valid }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_grid(Grid::filled(width, height, [S::zero(); 2]))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|v| **v).count()
    }
}

/// Windowed-SSD block matching with parabolic subpixel refinement.
///
/// For each pixel `m` the integer displacement `u` minimising
/// `Σ_{s∈W(m)} [cur(s+u) − ref(s)]²` over `|u|∞ ≤ search_radius` is found,
/// then refined along each axis by a parabola through the costs at
/// `u−1, u, u+1`. Ties prefer the smaller displacement. A cell is valid only
/// when its window displaced by every candidate stays inside the image, so
/// the result does not depend on where the cell sits in the image.
pub fn block_match_flow<S: Real>(
    ref_image: &Grid<S>,
    cur_image: &Grid<S>,
    window_radius: usize,
    search_radius: usize,
) -> Result<FlowField<S>> {
    ref_image.ensure_same_dims(cur_image, "block matching images")?;
    if window_radius < 1 || search_radius < 1 {
        return Err(Error::InvalidConfig(
            "window and search radius must be at least 1".into(),
        ));
    }
    let (w, h) = ref_image.dims();
    let margin = window_radius + search_radius;
    let mut flow = FlowField {
        grid: Grid::filled(w, h, [S::zero(); 2]),
        valid: Grid::filled(w, h, false),
    };
    if w <= 2 * margin || h <= 2 * margin {
        return Ok(flow);
    }

    let sr = search_radius as isize;
    let side = 2 * search_radius + 1;
    let mut candidates: Vec<(isize, isize)> = (-sr..=sr)
        .flat_map(|dy| (-sr..=sr).map(move |dx| (dx, dy)))
        .collect();
    // Stable sort keeps raster order among equal radii.
    candidates.sort_by_key(|(dx, dy)| dx * dx + dy * dy);

    let rf: Vec<f64> = ref_image.as_slice().iter().map(|v| to_f64(*v)).collect();
    let cf: Vec<f64> = cur_image.as_slice().iter().map(|v| to_f64(*v)).collect();

    // cost[c * npix + p], candidate index c in the raster layout of the search box.
    let npix = w * h;
    let mut cost = vec![f64::INFINITY; side * side * npix];
    let mut diff = vec![0.0; npix];
    let mut rows = vec![0.0; npix];
    let wr = window_radius;
    for &(dx, dy) in &candidates {
        for j in 0..h {
            for i in 0..w {
                let (ci, cj) = (i as isize + dx, j as isize + dy);
                diff[j * w + i] = if ci >= 0 && cj >= 0 && (ci as usize) < w && (cj as usize) < h {
                    let d = cf[cj as usize * w + ci as usize] - rf[j * w + i];
                    d * d
                } else {
                    0.0
                };
            }
        }
        // Direct separable window sums: exact zeros on exact matches and the
        // same summation order wherever the window sits.
        for j in 0..h {
            for i in wr..w - wr {
                rows[j * w + i] = diff[j * w + i - wr..=j * w + i + wr].iter().sum();
            }
        }
        let c = ((dy + sr) as usize) * side + (dx + sr) as usize;
        let slab = &mut cost[c * npix..(c + 1) * npix];
        for j in margin..h - margin {
            for i in margin..w - margin {
                slab[j * w + i] = (j - wr..=j + wr).map(|jj| rows[jj * w + i]).sum();
            }
        }
    }

    let at = |c_dx: isize, c_dy: isize, p: usize| -> Option<f64> {
        if c_dx.abs() > sr || c_dy.abs() > sr {
            return None;
        }
        let c = ((c_dy + sr) as usize) * side + (c_dx + sr) as usize;
        Some(cost[c * npix + p])
    };

    for j in margin..h - margin {
        for i in margin..w - margin {
            let p = j * w + i;
            let mut best = (0isize, 0isize);
            let mut best_cost = f64::INFINITY;
            for &(dx, dy) in &candidates {
                let c = at(dx, dy, p).unwrap();
                if c < best_cost {
                    best_cost = c;
                    best = (dx, dy);
                }
            }
            let refine = |lo: Option<f64>, hi: Option<f64>| -> f64 {
                match (lo, hi) {
                    (Some(lo), Some(hi)) if best_cost > 0.0 => {
                        let denom = lo - 2.0 * best_cost + hi;
                        if denom > 1e-12 {
                            (0.5 * (lo - hi) / denom).clamp(-0.5, 0.5)
                        } else {
                            0.0
                        }
                    }
                    _ => 0.0,
                }
            };
            let ox = refine(at(best.0 - 1, best.1, p), at(best.0 + 1, best.1, p));
            let oy = refine(at(best.0, best.1 - 1, p), at(best.0, best.1 + 1, p));
            flow.grid.set(
                i,
                j,
                [lit(best.0 as f64 + ox), lit(best.1 as f64 + oy)],
            );
            flow.valid.set(i, j, true);
        }
    }
    Ok(flow)
}
