//! Square sample grids stored row-major.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// An `n x n` grid of samples, row-major. Row index is the first spatial
/// coordinate `u1`, column index the second `u2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    n: usize,
    data: Vec<T>,
}

pub type ComplexField = Field<Complex64>;
pub type RealField = Field<f64>;

impl<T: Copy + Default> Field<T> {
    pub fn zeros(n: usize) -> Self {
        Field {
            n,
            data: vec![T::default(); n * n],
        }
    }
}

impl<T> Field<T> {
    pub fn from_vec(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} samples for a {n}x{n} grid, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Field { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                data.push(f(row, col));
            }
        }
        Field { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Field<U> {
        Field {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Field<T> {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.n + col] = value;
    }
}

impl RealField {
    pub fn to_complex(&self) -> ComplexField {
        self.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexField {
    pub fn re(&self) -> RealField {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> RealField {
        self.map(|z| z.im)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Wrap-around (FFT-order) coordinate of index `k` on an `n`-point axis.
#[inline]
pub fn wrap_coord(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
