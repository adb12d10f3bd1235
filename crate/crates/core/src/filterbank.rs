//! Scattering filterbanks: initialization schemes, the three
//! parameterizations, the Gaussian low-pass, and multi-resolution
//! frequency-domain realizations.
//!
//! Filters are indexed scale-major, orientation-minor: filter `f` has scale
//! `f / L` and orientation slot `f % L`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{wrap_coord, ComplexField, RealField};
use crate::fourier::{fft2, periodize};
use crate::morlet::{morlet_sample_with_beta, Grid, MorletParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Four Morlet parameters per filter.
    Canonical,
    /// Four Morlet parameters per scale; orientations are fixed offsets
    /// `k pi / L` from a learned base orientation.
    Equivariant,
    /// Every complex filter coefficient is free.
    Pixelwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    TightFrame,
    Random,
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "canonical" => Ok(Parameterization::Canonical),
            "equivariant" => Ok(Parameterization::Equivariant),
            "pixelwise" | "pixel_wise" | "pixel" => Ok(Parameterization::Pixelwise),
            other => Err(Error::Config(format!(
                "unknown parameterization `{other}` (canonical, equivariant, pixelwise)"
            ))),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tight_frame" | "tf" => Ok(InitScheme::TightFrame),
            "random" | "rand" => Ok(InitScheme::Random),
            other => Err(Error::Config(format!(
                "unknown init `{other}` (tight-frame, random)"
            ))),
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::Canonical => "canonical",
            Parameterization::Equivariant => "equivariant",
            Parameterization::Pixelwise => "pixelwise",
        })
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::TightFrame => "tight_frame",
            InitScheme::Random => "random",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterbankSpec {
    /// Number of scales; outputs are subsampled by `2^J`.
    #[serde(rename = "J")]
    pub j: usize,
    /// Orientations per scale.
    #[serde(rename = "L")]
    pub l: usize,
    /// Grid side length.
    pub n: usize,
    pub parameterization: Parameterization,
    pub init: InitScheme,
    pub seed: u64,
}

impl FilterbankSpec {
    pub fn new(j: usize, l: usize, n: usize) -> Self {
        FilterbankSpec {
            j,
            l,
            n,
            parameterization: Parameterization::Canonical,
            init: InitScheme::TightFrame,
            seed: 0,
        }
    }

    pub fn with_parameterization(mut self, p: Parameterization) -> Self {
        self.parameterization = p;
        self
    }

    pub fn with_init(mut self, init: InitScheme, seed: u64) -> Self {
        self.init = init;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 1 || self.l < 1 {
            return Err(Error::InvalidParameter(format!(
                "J and L must be at least 1 (J={}, L={})",
                self.j, self.l
            )));
        }
        if self.j >= usize::BITS as usize || self.n % (1usize << self.j) != 0 {
            return Err(Error::InvalidParameter(format!(
                "2^J={} must divide n={}",
                1u128 << self.j.min(127),
                self.n
            )));
        }
        Grid::new(self.n)?;
        Ok(())
    }

    pub fn num_filters(&self) -> usize {
        self.j * self.l
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.n).expect("validated grid")
    }
}

/// Standard dilation/rotation construction, scale index `j = 0..J-1`:
/// `sigma = 0.8 2^j`, `xi = 3 pi / 4 2^-j`, `gamma = 4 / L`,
/// `theta = l pi / L`.
pub fn tight_frame_init(j: usize, l: usize) -> Vec<MorletParams> {
    let mut out = Vec::with_capacity(j * l);
    for scale in 0..j {
        let dil = (1u64 << scale) as f64;
        for slot in 0..l {
            out.push(MorletParams {
                sigma: 0.8 * dil,
                theta: slot as f64 * PI / l as f64,
                xi: 3.0 * PI / 4.0 / dil,
                gamma: 4.0 / l as f64,
            });
        }
    }
    out
}

/// Draws one parameter tuple from the random-init distribution using a
/// ChaCha8 stream dedicated to `stream`.
fn random_params(seed: u64, stream: u64) -> MorletParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let e1 = 1f64.exp();
    let e5 = 5f64.exp();
    // sigma = log(u), u ~ U[e, e^5]: support [1, 5], density proportional to e^sigma
    let sigma = rng.gen_range(e1..e5).ln();
    let xi = rng.gen_range(0.5..1.0);
    let gamma = rng.gen_range(0.5..1.5);
    let theta = rng.gen_range(0.0..2.0 * PI);
    MorletParams {
        sigma,
        theta,
        xi,
        gamma,
    }
}

/// Random initialization. Each filter owns ChaCha8 stream `f`, so changing
/// `L` or `J` never reshuffles filters that exist in both banks at the
/// same index.
pub fn random_init(j: usize, l: usize, seed: u64) -> Vec<MorletParams> {
    (0..j * l).map(|f| random_params(seed, f as u64)).collect()
}

/// One Morlet tuple per scale. `theta` of each entry is the base
/// orientation shared by the `L` filters of that scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivariantParams {
    pub scales: Vec<MorletParams>,
}

impl EquivariantParams {
    pub fn tight_frame(j: usize, l: usize) -> Self {
        EquivariantParams {
            scales: tight_frame_init(j, l).into_iter().step_by(l).collect(),
        }
    }

    pub fn random(j: usize, seed: u64) -> Self {
        EquivariantParams {
            scales: (0..j).map(|s| random_params(seed, s as u64)).collect(),
        }
    }
}

/// Expands per-scale parameters into `J L` filters with orientations
/// `Theta_j + k pi / L`.
pub fn equivariant_expand(eq: &EquivariantParams, l: usize) -> Vec<MorletParams> {
    eq.scales
        .iter()
        .flat_map(|base| {
            (0..l).map(move |k| MorletParams {
                theta: base.theta + k as f64 * PI / l as f64,
                ..*base
            })
        })
        .collect()
}

/// Width of the Gaussian low-pass for `J` scales.
pub fn lowpass_sigma(j: usize) -> f64 {
    0.8 * (1u64 << (j - 1)) as f64
}

/// Spatial low-pass `phi_J`, normalized to unit sum.
pub fn lowpass_spatial(j: usize, n: usize) -> RealField {
    let sigma = lowpass_sigma(j);
    let mut phi =
        RealField::from_fn(n, |r, c| {
            let (u1, u2) = (wrap_coord(r, n), wrap_coord(c, n));
            (-(u1 * u1 + u2 * u2) / (2.0 * sigma * sigma)).exp()
        });
    let total: f64 = phi.as_slice().iter().sum();
    for v in phi.as_mut_slice() {
        *v /= total;
    }
    phi
}

/// Frequency-domain low-pass at resolutions `n / 2^r`, `r = 0..=J`.
pub fn build_lowpass(j: usize, n: usize) -> Result<Vec<ComplexField>> {
    if j >= usize::BITS as usize || n % (1usize << j) != 0 {
        return Err(Error::InvalidParameter(format!("2^{j} must divide {n}")));
    }
    let hat = fft2(&lowpass_spatial(j, n).to_complex());
    Ok((0..=j as u32).map(|r| periodize(&hat, r)).collect())
}

/// Copies sampled Morlet filters into free per-pixel fields.
pub fn pixelwise_init_from(params: &[MorletParams], grid: Grid) -> Result<Vec<ComplexField>> {
    params
        .iter()
        .map(|p| morlet_sample_with_beta(p, grid).map(|(psi, _)| psi))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterParams {
    Canonical(Vec<MorletParams>),
    Equivariant(EquivariantParams),
    Pixelwise(Vec<ComplexField>),
}

impl FilterParams {
    pub fn parameterization(&self) -> Parameterization {
        match self {
            FilterParams::Canonical(_) => Parameterization::Canonical,
            FilterParams::Equivariant(_) => Parameterization::Equivariant,
            FilterParams::Pixelwise(_) => Parameterization::Pixelwise,
        }
    }
}

/// One wavelet realized in the frequency domain at every resolution it is
/// convolved at.
#[derive(Clone, Debug)]
pub struct RealizedFilter {
    pub scale: usize,
    pub orientation: usize,
    /// Sampled filter on the full grid.
    pub spatial: ComplexField,
    /// `freq[r]` is the spectrum periodized to `n / 2^r`.
    pub freq: Vec<ComplexField>,
}

#[derive(Clone, Debug)]
pub struct Realized {
    pub filters: Vec<RealizedFilter>,
    /// `lowpass[r]`, `r = 0..=J`.
    pub lowpass: Vec<ComplexField>,
    /// Per-filter zero-mean constants; empty for pixelwise banks.
    pub betas: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    spec: FilterbankSpec,
    params: FilterParams,
    /// Parameters the bank was initialized from (pixelwise banks keep them
    /// for reference and serialization).
    init_params: Vec<MorletParams>,
    realized: Option<Realized>,
}

impl FilterBank {
    /// Builds and realizes a bank according to `spec`.
    pub fn new(spec: FilterbankSpec) -> Result<Self> {
        spec.validate()?;
        let (j, l) = (spec.j, spec.l);
        let params = match (spec.parameterization, spec.init) {
            (Parameterization::Equivariant, InitScheme::TightFrame) => {
                FilterParams::Equivariant(EquivariantParams::tight_frame(j, l))
            }
            (Parameterization::Equivariant, InitScheme::Random) => {
                FilterParams::Equivariant(EquivariantParams::random(j, spec.seed))
            }
            (p, init) => {
                let morlet = match init {
                    InitScheme::TightFrame => tight_frame_init(j, l),
                    InitScheme::Random => random_init(j, l, spec.seed),
                };
                if p == Parameterization::Pixelwise {
                    FilterParams::Pixelwise(pixelwise_init_from(&morlet, spec.grid())?)
                } else {
                    FilterParams::Canonical(morlet)
                }
            }
        };
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: FilterbankSpec, params: FilterParams) -> Result<Self> {
        spec.validate()?;
        if params.parameterization() != spec.parameterization {
            return Err(Error::InvalidParameter(format!(
                "spec says {} but parameters are {}",
                spec.parameterization,
                params.parameterization()
            )));
        }
        let expected = match &params {
            FilterParams::Canonical(v) => (v.len(), spec.num_filters()),
            FilterParams::Equivariant(e) => (e.scales.len(), spec.j),
            FilterParams::Pixelwise(v) => {
                if let Some(f) = v.iter().find(|f| f.n() != spec.n) {
                    return Err(Error::ShapeMismatch(format!(
                        "pixel field of size {} in a bank with n={}",
                        f.n(),
                        spec.n
                    )));
                }
                (v.len(), spec.num_filters())
            }
        };
        if expected.0 != expected.1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter entries, got {}",
                expected.1, expected.0
            )));
        }
        let init_params = match &params {
            FilterParams::Canonical(v) => v.clone(),
            FilterParams::Equivariant(e) => equivariant_expand(e, spec.l),
            FilterParams::Pixelwise(_) => match spec.init {
                InitScheme::TightFrame => tight_frame_init(spec.j, spec.l),
                InitScheme::Random => random_init(spec.j, spec.l, spec.seed),
            },
        };
        let mut bank = FilterBank {
            spec,
            params,
            init_params,
            realized: None,
        };
        bank.realize()?;
        Ok(bank)
    }

    pub fn spec(&self) -> &FilterbankSpec {
        &self.spec
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    /// Replaces the parameters; the bank must be realized again before use.
    pub fn set_params(&mut self, params: FilterParams) -> Result<()> {
        let replaced = Self::from_params(self.spec, params)?;
        self.params = replaced.params;
        self.realized = replaced.realized;
        Ok(())
    }

    pub fn num_filters(&self) -> usize {
        self.spec.num_filters()
    }

    pub fn scale_of(&self, filter: usize) -> usize {
        filter / self.spec.l
    }

    /// The Morlet parameters each filter is sampled from. For pixelwise
    /// banks these are the initialization parameters.
    pub fn morlet_params(&self) -> Vec<MorletParams> {
        match &self.params {
            FilterParams::Canonical(v) => v.clone(),
            FilterParams::Equivariant(e) => equivariant_expand(e, self.spec.l),
            FilterParams::Pixelwise(_) => self.init_params.clone(),
        }
    }

    pub fn is_dirty(&self) -> bool {
        self.realized.is_none()
    }

    /// Regenerates the frequency-domain filters if the parameters changed.
    pub fn realize(&mut self) -> Result<&Realized> {
        if self.realized.is_none() {
            self.realized = Some(self.compute_realization()?);
        }
        Ok(self.realized.as_ref().expect("just realized"))
    }

    /// The current realization; errors if parameters changed since the
    /// last [`FilterBank::realize`].
    pub fn realized(&self) -> Result<&Realized> {
        self.realized
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("filterbank is not realized".into()))
    }

    fn compute_realization(&self) -> Result<Realized> {
        let spec = self.spec;
        let grid = spec.grid();
        let (spatial, betas): (Vec<ComplexField>, Vec<Complex64>) = match &self.params {
            FilterParams::Pixelwise(fields) => (fields.clone(), Vec::new()),
            _ => {
                let mut s = Vec::with_capacity(spec.num_filters());
                let mut b = Vec::with_capacity(spec.num_filters());
                for p in self.morlet_params() {
                    let (psi, beta) = morlet_sample_with_beta(&p, grid)?;
                    s.push(psi);
                    b.push(beta);
                }
                (s, b)
            }
        };
        let filters = spatial
            .into_iter()
            .enumerate()
            .map(|(f, psi)| {
                let scale = f / spec.l;
                let hat = fft2(&psi);
                let freq = (0..=scale as u32).map(|r| periodize(&hat, r)).collect();
                RealizedFilter {
                    scale,
                    orientation: f % spec.l,
                    spatial: psi,
                    freq,
                }
            })
            .collect();
        Ok(Realized {
            filters,
            lowpass: build_lowpass(spec.j, spec.n)?,
            betas,
        })
    }

    /// Learnable parameters as a flat vector: `[sigma, theta, xi, gamma]`
    /// per filter (canonical) or per scale (equivariant), interleaved
    /// `re, im` pixels per filter (pixelwise).
    pub fn flat_params(&self) -> Vec<f64> {
        match &self.params {
            FilterParams::Canonical(v) => v.iter().flat_map(|p| p.to_array()).collect(),
            FilterParams::Equivariant(e) => e.scales.iter().flat_map(|p| p.to_array()).collect(),
            FilterParams::Pixelwise(fields) => fields
                .iter()
                .flat_map(|f| f.as_slice().iter().flat_map(|z| [z.re, z.im]))
                .collect(),
        }
    }

    /// Inverse of [`FilterBank::flat_params`]. Clamps `sigma` and `gamma`
    /// to at least [`crate::morlet::MIN_POSITIVE`] and re-realizes.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flat_params().len();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} filter parameters, got {}",
                flat.len()
            )));
        }
        let morlet = |chunk: &[f64]| {
            let mut p = MorletParams::from_array([chunk[0], chunk[1], chunk[2], chunk[3]]);
            p.clamp_positive();
            p
        };
        let params = match &self.params {
            FilterParams::Canonical(_) => {
                FilterParams::Canonical(flat.chunks_exact(4).map(morlet).collect())
            }
            FilterParams::Equivariant(_) => FilterParams::Equivariant(EquivariantParams {
                scales: flat.chunks_exact(4).map(morlet).collect(),
            }),
            FilterParams::Pixelwise(_) => {
                let n = self.spec.n;
                FilterParams::Pixelwise(
                    flat.chunks_exact(2 * n * n)
                        .map(|chunk| {
                            let data = chunk
                                .chunks_exact(2)
                                .map(|c| Complex64::new(c[0], c[1]))
                                .collect();
                            ComplexField::from_vec(n, data).expect("chunk size")
                        })
                        .collect(),
                )
            }
        };
        if let FilterParams::Canonical(v) = &params {
            for p in v {
                p.validate()?;
            }
        }
        self.params = params;
        self.realized = None;
        self.realize()?;
        Ok(())
    }

    /// Indices into [`FilterBank::flat_params`] that hold `sigma` or
    /// `gamma`.
    pub fn positive_mask(&self) -> Vec<bool> {
        let len = self.flat_params().len();
        match self.params {
            FilterParams::Pixelwise(_) => vec![false; len],
            _ => (0..len).map(|i| i % 4 == 0 || i % 4 == 3).collect(),
        }
    }

    pub fn to_document(&self) -> BankDocument {
        let params = match &self.params {
            FilterParams::Canonical(v) => v.clone(),
            FilterParams::Equivariant(e) => e.scales.clone(),
            FilterParams::Pixelwise(_) => self.init_params.clone(),
        };
        let pixels = match &self.params {
            FilterParams::Pixelwise(fields) => Some(fields.iter().map(encode_field).collect()),
            _ => None,
        };
        BankDocument {
            spec: self.spec,
            params,
            pixels,
        }
    }

    pub fn from_document(doc: BankDocument) -> Result<Self> {
        let spec = doc.spec;
        spec.validate()?;
        let params = match spec.parameterization {
            Parameterization::Canonical => FilterParams::Canonical(doc.params.clone()),
            Parameterization::Equivariant => {
                FilterParams::Equivariant(EquivariantParams {
                    scales: doc.params.clone(),
                })
            }
            Parameterization::Pixelwise => {
                let pixels = doc.pixels.ok_or_else(|| {
                    Error::Data("pixelwise filterbank document has no `pixels`".into())
                })?;
                FilterParams::Pixelwise(
                    pixels
                        .iter()
                        .map(|s| decode_field(s, spec.n))
                        .collect::<Result<_>>()?,
                )
            }
        };
        if let FilterParams::Canonical(v) | FilterParams::Equivariant(EquivariantParams { scales: v }) =
            &params
        {
            for p in v {
                p.validate()?;
            }
        }
        let mut bank = Self::from_params(spec, params)?;
        if spec.parameterization == Parameterization::Pixelwise {
            bank.init_params = doc.params;
        }
        Ok(bank)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: BankDocument =
            serde_json::from_str(s).map_err(|e| Error::Data(format!("filterbank json: {e}")))?;
        Self::from_document(doc)
    }
}

/// On-disk filterbank layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankDocument {
    #[serde(flatten)]
    pub spec: FilterbankSpec,
    pub params: Vec<MorletParams>,
    /// Base64 of little-endian `f64` pairs `re, im`, row-major, one string
    /// per filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<String>>,
}

fn encode_field(f: &ComplexField) -> String {
    let mut bytes = Vec::with_capacity(f.as_slice().len() * 16);
    for z in f.as_slice() {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_field(s: &str, n: usize) -> Result<ComplexField> {
    let bytes = BASE64
        .decode(s)
        .map_err(|e| Error::Data(format!("pixel field base64: {e}")))?;
    if bytes.len() != n * n * 16 {
        return Err(Error::ShapeMismatch(format!(
            "pixel field has {} bytes, expected {}",
            bytes.len(),
            n * n * 16
        )));
    }
    let data = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    ComplexField::from_vec(n, data)
}

/// Frame-bound diagnostic `0.5 sum_f |psi_f(w)|^2 + |phi(w)|^2` on the full
/// grid.
#[derive(Clone, Debug)]
pub struct LittlewoodPaley {
    pub min: f64,
    pub max: f64,
    pub field: RealField,
}

pub fn littlewood_paley(r: &Realized) -> LittlewoodPaley {
    let phi = &r.lowpass[0];
    let n = phi.n();
    let mut acc: Vec<f64> = phi.as_slice().iter().map(|z| z.norm_sqr()).collect();
    for f in &r.filters {
        for (a, z) in acc.iter_mut().zip(f.freq[0].as_slice()) {
            *a += 0.5 * z.norm_sqr();
        }
    }
    let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    LittlewoodPaley {
        min,
        max,
        field: RealField::from_vec(n, acc).expect("n x n"),
    }
}
