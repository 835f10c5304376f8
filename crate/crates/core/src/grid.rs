//! Dense row-major 2D grids.
//!
//! Indexing is `(i, j)` with `i` the column (sensor x axis, `0..width`) and
//! `j` the row (sensor y axis, `0..height`).

use crate::{lit, Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.width && j < self.height);
        j * self.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[j * self.width + i]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[j * self.width + i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl<S: Real> Grid<S> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, S::zero())
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, v| a + *v)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |a, v| a.max(v.abs()))
    }
}

/// Normalised 1D Gaussian taps, truncated at `ceil(4σ)`.
pub fn gaussian_kernel<S: Real>(sigma: S) -> Vec<S> {
    let radius = (sigma * lit(4.0)).ceil().to_usize().unwrap_or(0).max(1);
    let two_s2 = sigma * sigma * lit(2.0);
    let mut taps: Vec<S> = (0..=2 * radius)
        .map(|k| {
            let d = lit::<S>(k as f64 - radius as f64);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let total = taps.iter().fold(S::zero(), |a, v| a + *v);
    taps.iter_mut().for_each(|v| *v /= total);
    taps
}

/// Half-sample symmetric reflection of `k` into `0..n`.
#[inline]
pub(crate) fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = k.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Separable Gaussian blur with symmetric (mirror) boundary handling.
///
/// The mirrored operator is symmetric with unit row sums, so it also has unit
/// column sums and the total of the grid is preserved up to rounding.
pub fn gaussian_blur<S: Real>(grid: &Grid<S>, sigma: S) -> Grid<S> {
    if sigma <= S::zero() {
        return grid.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = grid.dims();
    let mut tmp = Grid::zeros(w, h);
    for j in 0..h {
        let row = &grid.data[j * w..(j + 1) * w];
        for i in 0..w {
            let mut acc = S::zero();
            let lo = i as isize - r;
            if lo >= 0 && (lo as usize) + taps.len() <= w {
                for (t, v) in taps.iter().zip(&row[lo as usize..]) {
                    acc += *t * *v;
                }
            } else {
                for (k, t) in taps.iter().enumerate() {
                    acc += *t * row[reflect(lo + k as isize, w)];
                }
            }
            tmp.data[j * w + i] = acc;
        }
    }
    let mut out = Grid::zeros(w, h);
    for j in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let src = reflect(j as isize + k as isize - r, h);
            let src_row = &tmp.data[src * w..(src + 1) * w];
            let dst = &mut out.data[j * w..(j + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += *t * *s;
            }
        }
    }
    out
}
