//! Reverse-mode differentiation of the scattering cascade.
//!
//! Complex gradients follow the real-linear convention: for a real loss `L`
//! and a complex quantity `z`, the gradient is `dL/dRe z + i dL/dIm z`, so
//! that `dL = sum Re(conj(grad) dz)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::filterbank::{FilterBank, FilterParams, FilterbankSpec, Realized};
use crate::fourier::{
    add_assign, conj_mul, fft2_in_place, ifft2_unnormalized_in_place, real_inner,
    subsample_fourier_adjoint, unfold,
};
use crate::morlet::{morlet_param_grads, MorletGrad};
use crate::scattering::{channel_count, ItemTape, Tape};

const MODULUS_EPS: f64 = 1e-12;

/// Items per deterministic reduction block.
const CHUNK: usize = 16;

/// `g z / |z|` pointwise; zero where `|z| < 1e-12`.
pub fn modulus_backward(z: &ComplexField, g: &RealField) -> ComplexField {
    debug_assert_eq!(z.n(), g.n());
    let data = z
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(z, &g)| {
            let r = z.norm();
            if r < MODULUS_EPS {
                Complex64::default()
            } else {
                z * (g / r)
            }
        })
        .collect();
    ComplexField::from_vec(z.n(), data).expect("same shape")
}

/// Gradient with respect to the pre-subsampling product spectrum `P`, given
/// the upstream gradient of `ifft(subsample(P, r))`.
fn spectral_backward(mut upstream: ComplexField, r: u32) -> ComplexField {
    let m = upstream.n();
    fft2_in_place(&mut upstream);
    let scale = 1.0 / (m * m) as f64;
    for v in upstream.as_mut_slice() {
        *v *= scale;
    }
    subsample_fourier_adjoint(&upstream, r)
}

/// Backward of `y = ifft(subsample(x_hat f_hat, r))`. Returns the gradient
/// with respect to the spatial input `x` (where `x_hat = fft(x)`) and with
/// respect to the filter spectrum `f_hat`.
pub fn conv_backward(
    x_hat: &ComplexField,
    f_hat: &ComplexField,
    r: u32,
    upstream: &ComplexField,
) -> (ComplexField, ComplexField) {
    let p = spectral_backward(upstream.clone(), r);
    let grad_f = conj_mul(x_hat, &p);
    let mut grad_x = conj_mul(f_hat, &p);
    ifft2_unnormalized_in_place(&mut grad_x);
    (grad_x, grad_f)
}

/// Gradient with respect to a real field `u`, given the gradient with
/// respect to `fft(u)`.
fn real_fft_backward(mut grad_hat: ComplexField) -> RealField {
    ifft2_unnormalized_in_place(&mut grad_hat);
    grad_hat.re()
}

/// Gradient with respect to `y_hat` of `Re ifft(subsample(y_hat phi, s))`.
fn smooth_backward(g: &[f64], phi: &ComplexField, s: u32) -> ComplexField {
    let side = (g.len() as f64).sqrt() as usize;
    let up = ComplexField::from_vec(side, g.iter().map(|&v| Complex64::new(v, 0.0)).collect())
        .expect("square channel");
    conj_mul(phi, &spectral_backward(up, s))
}

/// Gradients of a batch loss with respect to the full-resolution filter
/// spectra and, optionally, the inputs.
#[derive(Clone, Debug)]
pub struct FilterGradients {
    /// `dL / d psi_hat_f`, one `n x n` field per filter.
    pub freq: Vec<ComplexField>,
    pub input: Option<Vec<RealField>>,
}

fn backward_item(
    tape: &ItemTape,
    g: &[f64],
    spec: &FilterbankSpec,
    realized: &Realized,
    want_input: bool,
) -> (Vec<ComplexField>, Option<RealField>) {
    let (j, l, n) = (spec.j, spec.l, spec.n);
    let nf = j * l;
    let plane = (n >> j) * (n >> j);
    let ch = |k: usize| &g[k * plane..(k + 1) * plane];
    let mut grads = vec![ComplexField::zeros(n); nf];
    let mut grad_xhat = smooth_backward(ch(0), &realized.lowpass[0], j as u32);

    let mut k2 = 1 + nf;
    let mut z2_idx = 0;
    for f1 in 0..nf {
        let j1 = f1 / l;
        let u1_hat = &tape.u1_hat[f1];
        let mut grad_u1hat = smooth_backward(ch(1 + f1), &realized.lowpass[j1], (j - j1) as u32);
        for f2 in (j1 + 1) * l..nf {
            let j2 = f2 / l;
            let z2 = &tape.z2[z2_idx];
            let grad_u2hat = smooth_backward(ch(k2), &realized.lowpass[j2], (j - j2) as u32);
            let grad_z2 = modulus_backward(z2, &real_fft_backward(grad_u2hat));
            let p = spectral_backward(grad_z2, (j2 - j1) as u32);
            add_assign(&mut grads[f2], &unfold(&conj_mul(u1_hat, &p), j1 as u32));
            add_assign(&mut grad_u1hat, &conj_mul(&realized.filters[f2].freq[j1], &p));
            k2 += 1;
            z2_idx += 1;
        }
        let grad_z1 = modulus_backward(&tape.z1[f1], &real_fft_backward(grad_u1hat));
        let p = spectral_backward(grad_z1, j1 as u32);
        add_assign(&mut grads[f1], &conj_mul(&tape.x_hat, &p));
        if want_input {
            add_assign(&mut grad_xhat, &conj_mul(&realized.filters[f1].freq[0], &p));
        }
    }
    let input = want_input.then(|| real_fft_backward(grad_xhat));
    (grads, input)
}

/// Backpropagates `grad` (shaped like the forward output, `[B, K, m, m]`)
/// through the recorded cascade. Per-item results are reduced in item order
/// within fixed-size blocks, so the result does not depend on the thread
/// count.
pub fn scattering_backward(
    tape: Option<&Tape>,
    fb: &FilterBank,
    grad: &[f64],
    want_input: bool,
) -> Result<FilterGradients> {
    let tape = tape.ok_or(Error::TapeMissing)?;
    let spec = *fb.spec();
    if tape.spec != spec {
        return Err(Error::ShapeMismatch(
            "tape was recorded with a different filterbank spec".into(),
        ));
    }
    let realized = fb.realized()?;
    let item_len = channel_count(spec.j, spec.l) * (spec.n >> spec.j).pow(2);
    if grad.len() != tape.items.len() * item_len {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has {} values, expected {}",
            grad.len(),
            tape.items.len() * item_len
        )));
    }
    let nf = spec.num_filters();
    let partials: Vec<(Vec<ComplexField>, Vec<RealField>)> = tape
        .items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, items)| {
            let mut acc = vec![ComplexField::zeros(spec.n); nf];
            let mut inputs = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let b = c * CHUNK + i;
                let g = &grad[b * item_len..(b + 1) * item_len];
                let (fg, input) = backward_item(item, g, &spec, realized, want_input);
                for (a, f) in acc.iter_mut().zip(&fg) {
                    add_assign(a, f);
                }
                inputs.extend(input);
            }
            (acc, inputs)
        })
        .collect();
    let mut freq = vec![ComplexField::zeros(spec.n); nf];
    let mut inputs = Vec::with_capacity(if want_input { tape.items.len() } else { 0 });
    for (acc, inp) in partials {
        for (a, f) in freq.iter_mut().zip(&acc) {
            add_assign(a, f);
        }
        inputs.extend(inp);
    }
    Ok(FilterGradients {
        freq,
        input: want_input.then_some(inputs),
    })
}

/// Gradients with respect to the learnable filter parameters, laid out like
/// [`FilterBank::flat_params`].
#[derive(Clone, Debug, PartialEq)]
pub enum GradientSet {
    Canonical(Vec<MorletGrad>),
    /// One entry per scale; `theta` is the gradient of the base
    /// orientation.
    Equivariant(Vec<MorletGrad>),
    /// `dL/dRe psi + i dL/dIm psi` per filter.
    Pixelwise(Vec<ComplexField>),
}

impl GradientSet {
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            GradientSet::Canonical(v) | GradientSet::Equivariant(v) => {
                v.iter().flat_map(|g| g.to_array()).collect()
            }
            GradientSet::Pixelwise(fields) => fields
                .iter()
                .flat_map(|f| f.as_slice().iter().flat_map(|z| [z.re, z.im]))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Chains spectral filter gradients into the filter parameters. Uses
/// `dL/dzeta = sum_u Re(conj(F^H G)(u) dpsi/dzeta(u))`, which equals the
/// frequency-domain sum against `DFT(dpsi/dzeta)` by Parseval.
pub fn param_chain(grads: &FilterGradients, fb: &FilterBank) -> Result<GradientSet> {
    let spec = fb.spec();
    if grads.freq.len() != spec.num_filters() {
        return Err(Error::ShapeMismatch(format!(
            "{} filter gradients for {} filters",
            grads.freq.len(),
            spec.num_filters()
        )));
    }
    let spatial: Vec<ComplexField> = grads
        .freq
        .par_iter()
        .map(|g| {
            let mut s = g.clone();
            ifft2_unnormalized_in_place(&mut s);
            s
        })
        .collect();
    if let FilterParams::Pixelwise(_) = fb.params() {
        return Ok(GradientSet::Pixelwise(spatial));
    }
    let grid = spec.grid();
    let params = fb.morlet_params();
    let per_filter: Vec<MorletGrad> = params
        .par_iter()
        .zip(&spatial)
        .map(|(p, s)| {
            let d = morlet_param_grads(p, grid)?;
            Ok(MorletGrad {
                sigma: real_inner(s.as_slice(), d.sigma.as_slice()),
                theta: real_inner(s.as_slice(), d.theta.as_slice()),
                xi: real_inner(s.as_slice(), d.xi.as_slice()),
                gamma: real_inner(s.as_slice(), d.gamma.as_slice()),
            })
        })
        .collect::<Result<_>>()?;
    match fb.params() {
        FilterParams::Equivariant(_) => Ok(GradientSet::Equivariant(
            per_filter
                .chunks(spec.l)
                .map(|c| {
                    let mut acc = MorletGrad::default();
                    for g in c {
                        acc += *g;
                    }
                    acc
                })
                .collect(),
        )),
        _ => Ok(GradientSet::Canonical(per_filter)),
    }
}
