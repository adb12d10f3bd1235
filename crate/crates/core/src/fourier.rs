//! 2D DFT and the frequency-domain resampling operators used by the
//! scattering pipeline.
//!
//! Conventions: `fft2` is the unnormalized forward DFT
//! `X[k] = sum_u x[u] exp(-2 pi i k.u / n)`, `ifft2` its exact inverse
//! (scaled by `1/n^2`).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::ComplexField;

struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan(n: usize) -> Arc<Plan> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut plans = plans.lock().expect("fft plan cache poisoned");
    plans
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

fn transpose_in_place(data: &mut [Complex64], n: usize) {
    for row in 0..n {
        for col in row + 1..n {
            data.swap(row * n + col, col * n + row);
        }
    }
}

fn transform(data: &mut [Complex64], n: usize, fft: &dyn Fft<f64>) {
    debug_assert_eq!(data.len(), n * n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose_in_place(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose_in_place(data, n);
}

/// Unnormalized forward DFT, in place.
pub fn fft2_in_place(field: &mut ComplexField) {
    let n = field.n();
    let p = plan(n);
    transform(field.as_mut_slice(), n, p.forward.as_ref());
}

/// Unnormalized inverse DFT (no `1/n^2`), in place. This is the adjoint of
/// [`fft2_in_place`].
pub fn ifft2_unnormalized_in_place(field: &mut ComplexField) {
    let n = field.n();
    let p = plan(n);
    transform(field.as_mut_slice(), n, p.inverse.as_ref());
}

/// Normalized inverse DFT, in place.
pub fn ifft2_in_place(field: &mut ComplexField) {
    ifft2_unnormalized_in_place(field);
    let scale = 1.0 / (field.n() * field.n()) as f64;
    for z in field.as_mut_slice() {
        *z *= scale;
    }
}

pub fn fft2(field: &ComplexField) -> ComplexField {
    let mut out = field.clone();
    fft2_in_place(&mut out);
    out
}

pub fn ifft2(field: &ComplexField) -> ComplexField {
    let mut out = field.clone();
    ifft2_in_place(&mut out);
    out
}

/// Folds an `n x n` spectrum onto `n/2^r x n/2^r` by summing the `4^r`
/// aliased blocks: `out[k] = sum_{a,b} src[k1 + a m, k2 + b m]`, `m = n/2^r`.
///
/// The inverse DFT of the result is `4^r` times the spatial decimation of
/// the inverse DFT of `src`; filters realized at coarse resolutions use
/// this form.
pub fn periodize(src: &ComplexField, r: u32) -> ComplexField {
    if r == 0 {
        return src.clone();
    }
    let n = src.n();
    let m = n >> r;
    assert!(m > 0 && m << r == n, "2^{r} must divide {n}");
    let mut out = ComplexField::zeros(m);
    let s = src.as_slice();
    let o = out.as_mut_slice();
    for row in 0..n {
        let orow = (row % m) * m;
        let srow = row * n;
        for col in 0..n {
            o[orow + col % m] += s[srow + col];
        }
    }
    out
}

/// Spectrum of the spatially decimated signal: [`periodize`] divided by
/// `4^r`, so that `ifft2(subsample_fourier(fft2(x), r))[m] = x[m 2^r]`.
pub fn subsample_fourier(src: &ComplexField, r: u32) -> ComplexField {
    let mut out = periodize(src, r);
    if r > 0 {
        let scale = 1.0 / (1u64 << (2 * r)) as f64;
        for z in out.as_mut_slice() {
            *z *= scale;
        }
    }
    out
}

/// Adjoint of [`periodize`]: tiles an `m x m` field onto `m 2^r x m 2^r`.
pub fn unfold(src: &ComplexField, r: u32) -> ComplexField {
    if r == 0 {
        return src.clone();
    }
    let m = src.n();
    let n = m << r;
    let s = src.as_slice();
    ComplexField::from_fn(n, |row, col| s[(row % m) * m + col % m])
}

/// Adjoint of [`subsample_fourier`].
pub fn subsample_fourier_adjoint(src: &ComplexField, r: u32) -> ComplexField {
    let mut out = unfold(src, r);
    if r > 0 {
        let scale = 1.0 / (1u64 << (2 * r)) as f64;
        for z in out.as_mut_slice() {
            *z *= scale;
        }
    }
    out
}

/// Pointwise product of two equally sized fields.
pub fn mul(a: &ComplexField, b: &ComplexField) -> ComplexField {
    debug_assert_eq!(a.n(), b.n());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    ComplexField::from_vec(a.n(), data).expect("same shape")
}

/// Pointwise `conj(a) * b`.
pub fn conj_mul(a: &ComplexField, b: &ComplexField) -> ComplexField {
    debug_assert_eq!(a.n(), b.n());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.conj() * y)
        .collect();
    ComplexField::from_vec(a.n(), data).expect("same shape")
}

/// `acc += x`, elementwise.
pub fn add_assign(acc: &mut ComplexField, x: &ComplexField) {
    debug_assert_eq!(acc.n(), x.n());
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += b;
    }
}

/// Real inner product `sum Re(conj(a) b)` of two complex fields viewed as
/// vectors in `R^{2 n^2}`.
pub fn real_inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}
