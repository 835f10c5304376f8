//! Natural Helmholtz–Hodge decomposition on a regular pixel grid.
//!
//! The free-boundary decomposition is approximated by solving both Poisson
//! problems on a zero-padded extension of the grid with homogeneous Dirichlet
//! conditions on the extended boundary. Sources (divergence and curl) are
//! evaluated inside the original domain only and zero outside, so the
//! potentials approximate the free-space convolutions with the Green's
//! function. The 5-point Laplacian is diagonalised exactly by the 2D type-I
//! sine transform.

use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use super::FlowField;
use crate::grid::Grid;
use crate::{lit, Error, Real, Result};

/// Default padding on each side as a fraction of `max(width, height)`.
pub const DEFAULT_PAD_FRACTION: f64 = 0.5;

/// `w = d + r + k`: curl-free, divergence-free and harmonic parts.
#[derive(Debug, Clone, PartialEq)]
pub struct NhhdComponents<S: Real> {
    pub d: Grid<[S; 2]>,
    pub r: Grid<[S; 2]>,
    pub k: Grid<[S; 2]>,
}

/// Centred difference inside, one-sided at the borders; unit spacing.
fn derivative<S: Real>(n: usize, at: impl Fn(usize) -> S, idx: usize) -> S {
    if n < 2 {
        S::zero()
    } else if idx == 0 {
        at(1) - at(0)
    } else if idx == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(idx + 1) - at(idx - 1)) * lit(0.5)
    }
}

/// Discrete divergence `∂x wx + ∂y wy`.
pub fn divergence<S: Real>(w: &Grid<[S; 2]>) -> Grid<S> {
    let (nw, nh) = w.dims();
    Grid::from_fn(nw, nh, |i, j| {
        derivative(nw, |x| w.get(x, j)[0], i) + derivative(nh, |y| w.get(i, y)[1], j)
    })
}

/// Discrete scalar curl `∂x wy − ∂y wx`.
pub fn curl<S: Real>(w: &Grid<[S; 2]>) -> Grid<S> {
    let (nw, nh) = w.dims();
    Grid::from_fn(nw, nh, |i, j| {
        derivative(nw, |x| w.get(x, j)[1], i) - derivative(nh, |y| w.get(i, y)[0], j)
    })
}

/// Decomposition with the default padding.
pub fn nhhd<S: Real + FftNum>(flow: &FlowField<S>) -> Result<NhhdComponents<S>> {
    nhhd_with_pad(flow, DEFAULT_PAD_FRACTION)
}

/// `d = ∇φ` with `Δφ = div w`, `r = (∂yψ, −∂xψ)` with `Δψ = −curl w`,
/// `k = w − d − r`.
pub fn nhhd_with_pad<S: Real + FftNum>(
    flow: &FlowField<S>,
    pad_fraction: f64,
) -> Result<NhhdComponents<S>> {
    let w = &flow.grid;
    let (nw, nh) = w.dims();
    if nw < 8 || nh < 8 {
        return Err(Error::GridTooSmall {
            width: nw,
            height: nh,
        });
    }
    if !(pad_fraction >= 0.0) {
        return Err(Error::InvalidConfig("pad fraction must be non-negative".into()));
    }
    let pad = ((pad_fraction * nw.max(nh) as f64).ceil() as usize).max(1);
    let ew = nw + 2 * pad;
    let eh = nh + 2 * pad;

    let div = divergence(w);
    let rot = curl(w);
    let mut src_phi = vec![S::zero(); ew * eh];
    let mut src_psi = vec![S::zero(); ew * eh];
    for j in 0..nh {
        for i in 0..nw {
            let e = (j + pad) * ew + i + pad;
            src_phi[e] = *div.get(i, j);
            src_psi[e] = -*rot.get(i, j);
        }
    }
    let mut solver = PoissonDst::new(ew, eh);
    let phi = solver.solve(&src_phi);
    let psi = solver.solve(&src_psi);

    let half = lit::<S>(0.5);
    // Every domain cell has neighbours inside the padded grid (pad >= 1).
    let grad = |f: &[S], i: usize, j: usize| -> [S; 2] {
        let e = (j + pad) * ew + i + pad;
        [(f[e + 1] - f[e - 1]) * half, (f[e + ew] - f[e - ew]) * half]
    };
    let d = Grid::from_fn(nw, nh, |i, j| grad(&phi, i, j));
    let r = Grid::from_fn(nw, nh, |i, j| {
        let g = grad(&psi, i, j);
        [g[1], -g[0]]
    });
    let k = Grid::from_fn(nw, nh, |i, j| {
        let (wv, dv, rv) = (w.get(i, j), d.get(i, j), r.get(i, j));
        [wv[0] - dv[0] - rv[0], wv[1] - dv[1] - rv[1]]
    });
    Ok(NhhdComponents { d, r, k })
}

/// Dirichlet Poisson solver for the 5-point Laplacian via 2D DST-I.
struct PoissonDst<S: Real + FftNum> {
    w: usize,
    h: usize,
    planner: FftPlanner<S>,
}

impl<S: Real + FftNum> PoissonDst<S> {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            planner: FftPlanner::new(),
        }
    }

    /// Unnormalised DST-I of each length-`n` line in `lines`, in place:
    /// `X_k = Σ_m x_m sin(π (m+1)(k+1) / (n+1))`.
    fn dst_lines(&mut self, lines: &mut [S], n: usize) {
        let m = 2 * (n + 1);
        let fft = self.planner.plan_fft_forward(m);
        let mut buf = vec![Complex::new(S::zero(), S::zero()); m];
        let mut scratch = vec![Complex::new(S::zero(), S::zero()); fft.get_inplace_scratch_len()];
        let minus_half = lit::<S>(-0.5);
        for line in lines.chunks_mut(n) {
            buf.iter_mut().for_each(|c| *c = Complex::new(S::zero(), S::zero()));
            for (k, v) in line.iter().enumerate() {
                buf[k + 1] = Complex::new(*v, S::zero());
                buf[m - 1 - k] = Complex::new(-*v, S::zero());
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in line.iter_mut().enumerate() {
                *v = buf[k + 1].im * minus_half;
            }
        }
    }

    fn transform(&mut self, data: &mut [S]) {
        let (w, h) = (self.w, self.h);
        self.dst_lines(data, w);
        let mut t = transpose(data, w, h);
        self.dst_lines(&mut t, h);
        let back = transpose(&t, h, w);
        data.copy_from_slice(&back);
    }

    fn solve(&mut self, rhs: &[S]) -> Vec<S> {
        let (w, h) = (self.w, self.h);
        let mut data = rhs.to_vec();
        self.transform(&mut data);
        let pi = std::f64::consts::PI;
        let lam_x: Vec<f64> = (1..=w)
            .map(|k| 2.0 * (pi * k as f64 / (w + 1) as f64).cos() - 2.0)
            .collect();
        let lam_y: Vec<f64> = (1..=h)
            .map(|k| 2.0 * (pi * k as f64 / (h + 1) as f64).cos() - 2.0)
            .collect();
        // Forward then inverse DST-I scales by (n+1)/2 per axis.
        let norm = 4.0 / ((w + 1) as f64 * (h + 1) as f64);
        for j in 0..h {
            for i in 0..w {
                data[j * w + i] *= lit::<S>(norm / (lam_x[i] + lam_y[j]));
            }
        }
        self.transform(&mut data);
        data
    }
}

fn transpose<S: Copy>(data: &[S], w: usize, h: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(w * h);
    for i in 0..w {
        for j in 0..h {
            out.push(data[j * w + i]);
        }
    }
    out
}
