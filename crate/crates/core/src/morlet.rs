//! Morlet and Gabor wavelets sampled on discrete wrap-around grids, with
//! closed-form derivatives with respect to the four shape parameters.
//!
//! The Gabor atom is
//!
//! ```text
//! phi(u) = exp(-q(u) / (2 sigma^2) + i xi u')
//! q(u)   = |D_gamma R_theta u|^2
//!        = u1^2 (c^2 + s^2 gamma^2) + u2^2 (c^2 gamma^2 + s^2) + 2 c s u1 u2 (1 - gamma^2)
//! u'     = u1 c + u2 s,     c = cos theta, s = sin theta
//! ```
//!
//! and the Morlet wavelet subtracts the envelope times a constant `beta`
//! chosen on the grid so that the sampled filter sums to exactly zero:
//! `psi(u) = env(u) (exp(i xi u') - beta)`, `beta = sum(phi) / sum(env)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{wrap_coord, ComplexField};

/// Lower bound applied to `sigma` and `gamma` after every update.
pub const MIN_POSITIVE: f64 = 1e-6;

/// Smallest envelope mass accepted when normalizing `beta`.
const MIN_ENVELOPE_SUM: f64 = 1e-300;

/// The four learnable parameters of one Morlet filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorletParams {
    /// Gaussian window scale, pixels.
    pub sigma: f64,
    /// Global orientation, radians. Not wrapped.
    pub theta: f64,
    /// Frequency scale, radians per pixel.
    pub xi: f64,
    /// Aspect ratio of the envelope.
    pub gamma: f64,
}

impl MorletParams {
    pub fn new(sigma: f64, theta: f64, xi: f64, gamma: f64) -> Result<Self> {
        let p = MorletParams {
            sigma,
            theta,
            xi,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma, self.theta, self.xi, self.gamma];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite Morlet parameter {self:?}"
            )));
        }
        if self.sigma <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma and gamma must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn clamp_positive(&mut self) {
        self.sigma = self.sigma.max(MIN_POSITIVE);
        self.gamma = self.gamma.max(MIN_POSITIVE);
    }

    /// `[sigma, theta, xi, gamma]`
    pub fn to_array(self) -> [f64; 4] {
        [self.sigma, self.theta, self.xi, self.gamma]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        MorletParams {
            sigma: a[0],
            theta: a[1],
            xi: a[2],
            gamma: a[3],
        }
    }
}

/// Scalar gradient of a loss with respect to one filter's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MorletGrad {
    pub sigma: f64,
    pub theta: f64,
    pub xi: f64,
    pub gamma: f64,
}

impl MorletGrad {
    pub fn to_array(self) -> [f64; 4] {
        [self.sigma, self.theta, self.xi, self.gamma]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        MorletGrad {
            sigma: a[0],
            theta: a[1],
            xi: a[2],
            gamma: a[3],
        }
    }
}

impl std::ops::AddAssign for MorletGrad {
    fn add_assign(&mut self, o: Self) {
        self.sigma += o.sigma;
        self.theta += o.theta;
        self.xi += o.xi;
        self.gamma += o.gamma;
    }
}

/// Side length of a square sampling grid. Coordinates are wrap-around:
/// index `k` maps to `k` for `k < n/2` and to `k - n` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be even and at least 2, got {n}"
            )));
        }
        Ok(Grid { n })
    }

    #[inline]
    pub fn n(self) -> usize {
        self.n
    }

    #[inline]
    pub fn coord(self, k: usize) -> f64 {
        wrap_coord(k, self.n)
    }
}

/// Per-parameter fields, one complex field for each of the four parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamFields {
    pub sigma: ComplexField,
    pub theta: ComplexField,
    pub xi: ComplexField,
    pub gamma: ComplexField,
}

impl ParamFields {
    pub fn iter(&self) -> impl Iterator<Item = &ComplexField> {
        [&self.sigma, &self.theta, &self.xi, &self.gamma].into_iter()
    }
}

/// Quantities shared by the sample and derivative evaluations at one pixel.
struct Pixel {
    u1: f64,
    u2: f64,
    /// `u1 c + u2 s`
    along: f64,
    /// `u2 c - u1 s`
    across: f64,
    /// `|D_gamma R_theta u|^2` in the expanded form
    quad: f64,
}

struct Trig {
    c: f64,
    s: f64,
    g2: f64,
}

impl Trig {
    fn of(p: &MorletParams) -> Self {
        Trig {
            c: p.theta.cos(),
            s: p.theta.sin(),
            g2: p.gamma * p.gamma,
        }
    }

    fn pixel(&self, u1: f64, u2: f64) -> Pixel {
        let Trig { c, s, g2 } = *self;
        let quad = u1 * u1 * (c * c + s * s * g2)
            + u2 * u2 * (c * c * g2 + s * s)
            + 2.0 * c * s * u1 * u2 * (1.0 - g2);
        Pixel {
            u1,
            u2,
            along: u1 * c + u2 * s,
            across: u2 * c - u1 * s,
            quad,
        }
    }
}

fn for_each_pixel(p: &MorletParams, g: Grid, mut f: impl FnMut(usize, &Pixel)) {
    let trig = Trig::of(p);
    let n = g.n();
    for row in 0..n {
        let u1 = g.coord(row);
        for col in 0..n {
            let px = trig.pixel(u1, g.coord(col));
            f(row * n + col, &px);
        }
    }
}

#[inline]
fn envelope(p: &MorletParams, px: &Pixel) -> f64 {
    (-px.quad / (2.0 * p.sigma * p.sigma)).exp()
}

/// Samples the Gabor atom `phi(u)` on the grid.
pub fn gabor_sample(p: &MorletParams, g: Grid) -> ComplexField {
    let mut out = ComplexField::zeros(g.n());
    let data = out.as_mut_slice();
    for_each_pixel(p, g, |i, px| {
        data[i] = Complex64::from_polar(envelope(p, px), p.xi * px.along);
    });
    out
}

/// Zero-mean constant of the Morlet wavelet, computed from the discrete
/// sums on `g`. Complex in general: on even grids the Nyquist row and
/// column have no mirror partner, so the imaginary part does not cancel.
pub fn morlet_beta(p: &MorletParams, g: Grid) -> Result<Complex64> {
    let mut num = Complex64::default();
    let mut den = 0.0;
    for_each_pixel(p, g, |_, px| {
        let e = envelope(p, px);
        num += Complex64::from_polar(e, p.xi * px.along);
        den += e;
    });
    if !(den >= MIN_ENVELOPE_SUM) {
        return Err(Error::DegenerateEnvelope(den));
    }
    Ok(num / den)
}

/// Samples the Morlet wavelet `psi(u) = env(u) (exp(i xi u') - beta)`.
pub fn morlet_sample(p: &MorletParams, g: Grid) -> Result<ComplexField> {
    morlet_sample_with_beta(p, g).map(|(psi, _)| psi)
}

/// [`morlet_sample`] that also returns the `beta` it used.
pub fn morlet_sample_with_beta(p: &MorletParams, g: Grid) -> Result<(ComplexField, Complex64)> {
    let beta = morlet_beta(p, g)?;
    let mut out = ComplexField::zeros(g.n());
    let data = out.as_mut_slice();
    for_each_pixel(p, g, |i, px| {
        let e = envelope(p, px);
        data[i] = e * (Complex64::from_polar(1.0, p.xi * px.along) - beta);
    });
    Ok((out, beta))
}

/// Closed-form derivatives of the Gabor atom with respect to each
/// parameter. Each is a polynomial prefactor in `u` times `phi(u)`.
pub fn gabor_param_grads(p: &MorletParams, g: Grid) -> ParamFields {
    let n = g.n();
    let mut out = ParamFields {
        sigma: ComplexField::zeros(n),
        theta: ComplexField::zeros(n),
        xi: ComplexField::zeros(n),
        gamma: ComplexField::zeros(n),
    };
    let (c, s) = (p.theta.cos(), p.theta.sin());
    let (sig, xi, gam) = (p.sigma, p.xi, p.gamma);
    let (s2, s3) = (sig * sig, sig * sig * sig);
    let g2m1 = gam * gam - 1.0;
    for_each_pixel(p, g, |i, px| {
        let phi = Complex64::from_polar(envelope(p, px), xi * px.along);
        let (u1, u2) = (px.u1, px.u2);

        let d_theta = (u2 * c - u1 * s)
            * Complex64::new(u1 * g2m1 * c + u2 * g2m1 * s, xi * s2)
            / s2;
        let d_sigma = px.quad / s3;
        let d_xi = Complex64::new(0.0, u1 * c + u2 * s);
        let d_gamma = -(u1 * u1 * gam * s * s + u2 * u2 * gam * c * c
            - 2.0 * u1 * u2 * gam * c * s)
            / s2;

        out.theta.as_mut_slice()[i] = d_theta * phi;
        out.sigma.as_mut_slice()[i] = d_sigma * phi;
        out.xi.as_mut_slice()[i] = d_xi * phi;
        out.gamma.as_mut_slice()[i] = d_gamma * phi;
    });
    out
}

/// Derivatives of the sampled Morlet wavelet with respect to each
/// parameter, including the exact derivative of the discrete `beta`.
pub fn morlet_param_grads(p: &MorletParams, g: Grid) -> Result<ParamFields> {
    let n = g.n();
    let len = n * n;
    let (sig, xi, gam) = (p.sigma, p.xi, p.gamma);
    let s2 = sig * sig;
    let s3 = s2 * sig;
    let g2m1 = gam * gam - 1.0;

    // Envelope, Gabor atom, and real log-derivative prefactors of the
    // envelope for (sigma, theta, gamma). The envelope does not depend on xi.
    let mut env = vec![0.0; len];
    let mut phi = vec![Complex64::default(); len];
    let mut along = vec![0.0; len];
    let mut across = vec![0.0; len];
    let mut env_pref = vec![[0.0; 3]; len];

    let mut sum_env = 0.0;
    let mut sum_phi = Complex64::default();
    let mut sum_denv = [0.0; 3];
    let mut sum_dphi = [Complex64::default(); 4];

    for_each_pixel(p, g, |i, px| {
        let e = envelope(p, px);
        let ph = Complex64::from_polar(e, xi * px.along);
        let pref = [
            px.quad / s3,
            px.across * px.along * g2m1 / s2,
            -gam * px.across * px.across / s2,
        ];
        env[i] = e;
        phi[i] = ph;
        along[i] = px.along;
        across[i] = px.across;
        env_pref[i] = pref;

        sum_env += e;
        sum_phi += ph;
        for k in 0..3 {
            sum_denv[k] += pref[k] * e;
        }
        // d phi = (envelope prefactor + phase prefactor) phi
        sum_dphi[0] += pref[0] * ph;
        sum_dphi[1] += Complex64::new(pref[1], xi * px.across) * ph;
        sum_dphi[2] += Complex64::new(0.0, px.along) * ph;
        sum_dphi[3] += pref[2] * ph;
    });

    if !(sum_env >= MIN_ENVELOPE_SUM) {
        return Err(Error::DegenerateEnvelope(sum_env));
    }
    let beta = sum_phi / sum_env;
    // d beta = (d sum_phi - beta d sum_env) / sum_env
    let d_beta = [
        (sum_dphi[0] - beta * sum_denv[0]) / sum_env,
        (sum_dphi[1] - beta * sum_denv[1]) / sum_env,
        sum_dphi[2] / sum_env,
        (sum_dphi[3] - beta * sum_denv[2]) / sum_env,
    ];

    let mut out = ParamFields {
        sigma: ComplexField::zeros(n),
        theta: ComplexField::zeros(n),
        xi: ComplexField::zeros(n),
        gamma: ComplexField::zeros(n),
    };
    for i in 0..len {
        let e = env[i];
        let ph = phi[i];
        let [ps, pt, pg] = env_pref[i];
        // psi = phi - beta env
        // d psi = d phi - (d beta) env - beta (d env)
        out.sigma.as_mut_slice()[i] = ps * ph - d_beta[0] * e - beta * (ps * e);
        out.theta.as_mut_slice()[i] =
            Complex64::new(pt, xi * across[i]) * ph - d_beta[1] * e - beta * (pt * e);
        out.xi.as_mut_slice()[i] = Complex64::new(0.0, along[i]) * ph - d_beta[2] * e;
        out.gamma.as_mut_slice()[i] = pg * ph - d_beta[3] * e - beta * (pg * e);
    }
    Ok(out)
}
