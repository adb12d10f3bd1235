//! Order-0/1/2 scattering via FFT convolution, complex modulus,
//! alias-folding subsampling and Gaussian low-pass smoothing.
//!
//! All convolutions are circular. A batch is processed item-parallel; the
//! output layout is `[B, K, m, m]` with `m = n / 2^J`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::filterbank::{FilterBank, FilterbankSpec, Realized};
use crate::fourier::{fft2, fft2_in_place, ifft2_in_place, mul, subsample_fourier};

/// One output channel's scattering path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "order")]
pub enum ScatteringPath {
    #[serde(rename = "0")]
    Order0,
    #[serde(rename = "1")]
    Order1 { j1: usize, l1: usize },
    #[serde(rename = "2")]
    Order2 {
        j1: usize,
        l1: usize,
        j2: usize,
        l2: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTable {
    pub paths: Vec<ScatteringPath>,
}

impl PathTable {
    pub fn new(j: usize, l: usize) -> Self {
        let mut paths = vec![ScatteringPath::Order0];
        for j1 in 0..j {
            for l1 in 0..l {
                paths.push(ScatteringPath::Order1 { j1, l1 });
            }
        }
        for j1 in 0..j {
            for l1 in 0..l {
                for j2 in j1 + 1..j {
                    for l2 in 0..l {
                        paths.push(ScatteringPath::Order2 { j1, l1, j2, l2 });
                    }
                }
            }
        }
        PathTable { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// `1 + J L + L^2 J (J - 1) / 2`.
pub fn channel_count(j: usize, l: usize) -> usize {
    1 + j * l + l * l * j * (j.saturating_sub(1)) / 2
}

/// Batched scattering coefficients, layout `[batch, channel, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatteringOutput {
    pub batch: usize,
    pub channels: usize,
    /// Output side length `n / 2^J`.
    pub side: usize,
    pub data: Vec<f64>,
    pub path_table: PathTable,
}

impl ScatteringOutput {
    pub fn item_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn channel(&self, b: usize, k: usize) -> &[f64] {
        let s = self.side * self.side;
        let start = b * self.item_len() + k * s;
        &self.data[start..start + s]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.side, self.side]
    }

    /// Channel index range of order `k` (0, 1 or 2).
    pub fn order_range(&self, order: usize) -> std::ops::Range<usize> {
        let first = |o: usize| {
            self.path_table
                .paths
                .iter()
                .position(|p| path_order(p) >= o)
                .unwrap_or(self.channels)
        };
        first(order)..first(order + 1)
    }

    /// Writes the tensor as little-endian `f64` to `path` and a JSON sidecar
    /// `{shape, path_table}` next to it (`<path>.json`).
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            shape: self.shape().to_vec(),
            path_table: self.path_table.paths.clone(),
        };
        let side_path = sidecar_path(path);
        fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&side_path, e))?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let side_path = sidecar_path(path);
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("sidecar: {e}")))?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let shape = sidecar.shape;
        if shape.len() != 4 || shape[2] != shape[3] {
            return Err(Error::Data(format!("unexpected tensor shape {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if bytes.len() != count * 8 || sidecar.path_table.len() != shape[1] {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes and {} paths for shape {shape:?}",
                bytes.len(),
                sidecar.path_table.len()
            )));
        }
        Ok(ScatteringOutput {
            batch: shape[0],
            channels: shape[1],
            side: shape[2],
            data: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            path_table: PathTable {
                paths: sidecar.path_table,
            },
        })
    }
}

fn path_order(p: &ScatteringPath) -> usize {
    match p {
        ScatteringPath::Order0 => 0,
        ScatteringPath::Order1 { .. } => 1,
        ScatteringPath::Order2 { .. } => 2,
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    path_table: Vec<ScatteringPath>,
}

/// Intermediates of one item's forward pass.
#[derive(Clone, Debug)]
pub struct ItemTape {
    /// Spectrum of the input.
    pub x_hat: ComplexField,
    /// Pre-modulus first-layer responses, one per filter, at `n / 2^{j1}`.
    pub z1: Vec<ComplexField>,
    /// Spectra of `|z1|`.
    pub u1_hat: Vec<ComplexField>,
    /// Pre-modulus second-layer responses in path-table order, at
    /// `n / 2^{j2}`.
    pub z2: Vec<ComplexField>,
}

/// Recorded forward pass of a batch, consumed by
/// [`crate::autograd::scattering_backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    pub spec: FilterbankSpec,
    pub items: Vec<ItemTape>,
}

/// `ifft(subsample(fft(x) f_hat, r))`: circular convolution of `x` with the
/// filter whose spectrum is `f_hat`, decimated by `2^r`.
pub fn conv_fft(x: &ComplexField, f_hat: &ComplexField, r: u32) -> Result<ComplexField> {
    if x.n() != f_hat.n() {
        return Err(Error::ShapeMismatch(format!(
            "signal is {0}x{0}, filter is {1}x{1}",
            x.n(),
            f_hat.n()
        )));
    }
    if r >= usize::BITS || x.n() % (1usize << r) != 0 {
        return Err(Error::ShapeMismatch(format!("2^{r} does not divide {}", x.n())));
    }
    Ok(conv_hat(&fft2(x), f_hat, r))
}

/// Same as [`conv_fft`] for an input already in the frequency domain.
fn conv_hat(x_hat: &ComplexField, f_hat: &ComplexField, r: u32) -> ComplexField {
    let mut out = subsample_fourier(&mul(x_hat, f_hat), r);
    ifft2_in_place(&mut out);
    out
}

fn modulus_spectrum(z: &ComplexField) -> ComplexField {
    let mut u = z.map(|v| Complex64::new(v.norm(), 0.0));
    fft2_in_place(&mut u);
    u
}

/// Low-pass at resolution `r`, subsampled by the remaining `J - r`.
fn smooth(y_hat: &ComplexField, realized: &Realized, r: usize, j: usize, out: &mut [f64]) {
    let s = conv_hat(y_hat, &realized.lowpass[r], (j - r) as u32);
    for (o, z) in out.iter_mut().zip(s.as_slice()) {
        *o = z.re;
    }
}

fn check_input(x: &RealField, spec: &FilterbankSpec) -> Result<()> {
    if x.n() != spec.n {
        return Err(Error::ShapeMismatch(format!(
            "input is {0}x{0}, filterbank expects {1}x{1}",
            x.n(),
            spec.n
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data("input contains non-finite values".into()));
    }
    Ok(())
}

fn forward_item(
    x: &RealField,
    spec: &FilterbankSpec,
    realized: &Realized,
    record: bool,
) -> (Vec<f64>, Option<ItemTape>) {
    let (j, l) = (spec.j, spec.l);
    let m = spec.n >> j;
    let plane = m * m;
    let mut out = vec![0.0; channel_count(j, l) * plane];
    let x_hat = fft2(&x.to_complex());

    smooth(&x_hat, realized, 0, j, &mut out[..plane]);

    let nf = j * l;
    let mut z1s = Vec::with_capacity(if record { nf } else { 0 });
    let mut u1s = Vec::with_capacity(if record { nf } else { 0 });
    let mut z2s = Vec::new();
    let mut next2 = 1 + nf;
    for f1 in 0..nf {
        let j1 = f1 / l;
        let z1 = conv_hat(&x_hat, &realized.filters[f1].freq[0], j1 as u32);
        let u1_hat = modulus_spectrum(&z1);
        let k = 1 + f1;
        smooth(&u1_hat, realized, j1, j, &mut out[k * plane..(k + 1) * plane]);
        for f2 in (j1 + 1) * l..nf {
            let j2 = f2 / l;
            let z2 = conv_hat(&u1_hat, &realized.filters[f2].freq[j1], (j2 - j1) as u32);
            let u2_hat = modulus_spectrum(&z2);
            smooth(&u2_hat, realized, j2, j, &mut out[next2 * plane..(next2 + 1) * plane]);
            next2 += 1;
            if record {
                z2s.push(z2);
            }
        }
        if record {
            z1s.push(z1);
            u1s.push(u1_hat);
        }
    }
    let tape = record.then_some(ItemTape {
        x_hat,
        z1: z1s,
        u1_hat: u1s,
        z2: z2s,
    });
    (out, tape)
}

/// Scattering transform of a batch. Records a [`Tape`] iff `grad_mode`.
pub fn forward(
    batch: &[RealField],
    fb: &FilterBank,
    grad_mode: bool,
) -> Result<(ScatteringOutput, Option<Tape>)> {
    let spec = *fb.spec();
    let realized = fb.realized()?;
    for x in batch {
        check_input(x, &spec)?;
    }
    let results: Vec<(Vec<f64>, Option<ItemTape>)> = batch
        .par_iter()
        .map(|x| forward_item(x, &spec, realized, grad_mode))
        .collect();
    let path_table = PathTable::new(spec.j, spec.l);
    let mut data = Vec::with_capacity(results.iter().map(|r| r.0.len()).sum());
    let mut items = Vec::new();
    for (out, tape) in results {
        data.extend_from_slice(&out);
        items.extend(tape);
    }
    let output = ScatteringOutput {
        batch: batch.len(),
        channels: path_table.len(),
        side: spec.n >> spec.j,
        data,
        path_table,
    };
    Ok((output, grad_mode.then_some(Tape { spec, items })))
}

fn split_orders(x: &RealField, fb: &FilterBank, order: usize) -> Result<Vec<RealField>> {
    let (out, _) = forward(std::slice::from_ref(x), fb, false)?;
    let side = out.side;
    Ok(out
        .order_range(order)
        .map(|k| RealField::from_vec(side, out.channel(0, k).to_vec()).expect("side x side"))
        .collect())
}

/// Order-0 coefficients of one image: `(x * phi_J)(2^J u)`.
pub fn scatter0(x: &RealField, fb: &FilterBank) -> Result<RealField> {
    Ok(split_orders(x, fb, 0)?.remove(0))
}

/// Order-1 maps, scale-major.
pub fn scatter1(x: &RealField, fb: &FilterBank) -> Result<Vec<RealField>> {
    split_orders(x, fb, 1)
}

/// Order-2 maps for `j1 < j2`, lexicographic in `(j1, l1, j2, l2)`.
pub fn scatter2(x: &RealField, fb: &FilterBank) -> Result<Vec<RealField>> {
    split_orders(x, fb, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{lowpass_spatial, InitScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(n: usize, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_complex(n: usize, rng: &mut impl Rng) -> ComplexField {
        ComplexField::from_fn(n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn direct_conv(x: &ComplexField, f: &ComplexField) -> ComplexField {
        let n = x.n();
        ComplexField::from_fn(n, |a, b| {
            let mut acc = Complex64::default();
            for p in 0..n {
                for q in 0..n {
                    acc += x.get(p, q) * f.get((a + n - p) % n, (b + n - q) % n);
                }
            }
            acc
        })
    }

    fn max_abs(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn conv_fft_identity_and_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_complex(8, &mut rng);
        let delta = ComplexField::from_fn(8, |_, _| Complex64::new(1.0, 0.0));
        let y = conv_fft(&x, &delta, 0).unwrap();
        assert!(x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| (a - b).norm() < 1e-14));

        let f = random_complex(8, &mut rng);
        let direct = direct_conv(&x, &f);
        let fast = conv_fft(&x, &fft2(&f), 0).unwrap();
        let err = direct
            .as_slice()
            .iter()
            .zip(fast.as_slice())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
        let fast1 = conv_fft(&x, &fft2(&f), 1).unwrap();
        assert_eq!(fast1.n(), 4);
        for a in 0..4 {
            for b in 0..4 {
                assert!((fast1.get(a, b) - direct.get(2 * a, 2 * b)).norm() < 1e-10);
            }
        }
        assert!(matches!(
            conv_fft(&x, &fft2(&random_complex(4, &mut rng)), 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn channel_counts() {
        assert_eq!(channel_count(2, 8), 81);
        assert_eq!(channel_count(4, 8), 417);
        assert_eq!(channel_count(1, 4), 5);
        let t = PathTable::new(3, 2);
        assert_eq!(t.len(), channel_count(3, 2));
        for p in &t.paths {
            if let ScatteringPath::Order2 { j1, j2, .. } = p {
                assert!(j1 < j2);
            }
        }
    }

    #[test]
    fn output_shapes_j2_l8() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 8, 32)).unwrap();
        let x = random_real(32, 1);
        assert_eq!(scatter0(&x, &fb).unwrap().n(), 8);
        let s1 = scatter1(&x, &fb).unwrap();
        assert_eq!(s1.len(), 16);
        assert!(s1.iter().all(|f| f.n() == 8));
        let s2 = scatter2(&x, &fb).unwrap();
        assert_eq!(s2.len(), 64);
        assert!(s2.iter().flat_map(|f| f.as_slice()).all(|&v| v >= 0.0));
        assert!(s1.iter().flat_map(|f| f.as_slice()).all(|&v| v >= 0.0));
    }

    #[test]
    fn order0_constant_and_spatial_oracle() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 2, 16)).unwrap();
        let c = RealField::from_fn(16, |_, _| 2.5);
        let s0 = scatter0(&c, &fb).unwrap();
        assert!(s0.as_slice().iter().all(|v| (v - 2.5).abs() < 1e-12));

        let x = random_real(16, 2);
        let phi = lowpass_spatial(2, 16).to_complex();
        let direct = direct_conv(&x.to_complex(), &phi);
        let s0 = scatter0(&x, &fb).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!((s0.get(a, b) - direct.get(4 * a, 4 * b).re).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 2, 16)).unwrap();
        let (out, _) = forward(&[RealField::zeros(16)], &fb, false).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn j1_has_no_second_order() {
        let fb = FilterBank::new(FilterbankSpec::new(1, 4, 8)).unwrap();
        assert!(scatter2(&random_real(8, 3), &fb).unwrap().is_empty());
    }

    #[test]
    fn matched_filter_has_largest_energy() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 8, 32)).unwrap();
        let r = fb.realized().unwrap();
        let argmax = |e: &[f64]| (0..e.len()).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        for target in 0..16 {
            let x = r.filters[target].spatial.re();
            let energy: Vec<f64> = scatter1(&x, &fb)
                .unwrap()
                .iter()
                .map(|f| f.as_slice().iter().map(|v| v * v).sum())
                .collect();
            let scale = target / 8;
            assert_eq!(scale * 8 + argmax(&energy[scale * 8..scale * 8 + 8]), target);
            if scale == 1 {
                assert_eq!(argmax(&energy), target);
            }
        }
    }

    #[test]
    fn shift_by_stride_shifts_outputs() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 4, 16).with_init(InitScheme::Random, 4)).unwrap();
        let x = random_real(16, 4);
        let shifted = RealField::from_fn(16, |a, b| x.get((a + 16 - 4) % 16, (b + 16 - 8) % 16));
        let (o, _) = forward(&[x, shifted], &fb, false).unwrap();
        for k in 0..o.channels {
            let a = o.channel(0, k);
            let b = o.channel(1, k);
            for r in 0..4 {
                for c in 0..4 {
                    let want = a[((r + 3) % 4) * 4 + (c + 2) % 4];
                    assert!((b[r * 4 + c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_forward_is_deterministic_and_records_tape() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 2, 16)).unwrap();
        let batch: Vec<RealField> = (0..5).map(|s| random_real(16, s)).collect();
        let (a, ta) = forward(&batch, &fb, true).unwrap();
        let (b, tb) = forward(&batch, &fb, false).unwrap();
        assert_eq!(a, b);
        assert!(tb.is_none());
        let ta = ta.unwrap();
        assert_eq!(ta.items.len(), 5);
        assert_eq!(ta.items[0].z1.len(), 4);
        assert_eq!(ta.items[0].z2.len(), 4);
        let single = forward(&batch[3..4], &fb, false).unwrap().0;
        assert_eq!(single.item(0), a.item(3));
    }

    #[test]
    fn rejects_bad_inputs() {
        let fb = FilterBank::new(FilterbankSpec::new(1, 2, 8)).unwrap();
        assert!(matches!(
            forward(&[RealField::zeros(16)], &fb, false),
            Err(Error::ShapeMismatch(_))
        ));
        let mut x = RealField::zeros(8);
        x.set(0, 0, f64::NAN);
        assert!(forward(&[x], &fb, false).is_err());
    }

    #[test]
    fn export_round_trip() {
        let fb = FilterBank::new(FilterbankSpec::new(2, 2, 8)).unwrap();
        let (out, _) = forward(&[random_real(8, 9), random_real(8, 10)], &fb, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        out.export(&path).unwrap();
        let back = ScatteringOutput::import(&path).unwrap();
        assert_eq!(back, out);
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("s.bin.json")).unwrap()).unwrap();
        assert_eq!(side["shape"], serde_json::json!([2, 9, 2, 2]));
        assert_eq!(side["path_table"][5], serde_json::json!({"order": "2", "j1": 0, "l1": 0, "j2": 1, "l2": 0}));
        assert_eq!(max_abs(back.item(1), out.item(1)), 0.0);
    }

    #[test]
    fn full_forward_matches_spatial_oracle() {
        // n=8, J=1, L=2 computed entirely in the spatial domain.
        let fb = FilterBank::new(FilterbankSpec::new(1, 2, 8).with_init(InitScheme::Random, 11)).unwrap();
        let r = fb.realized().unwrap();
        let x = random_real(8, 12).to_complex();
        let phi = lowpass_spatial(1, 8).to_complex();
        let decimate = |f: &ComplexField, s: usize| ComplexField::from_fn(f.n() / s, |a, b| f.get(a * s, b * s));
        let mut want = vec![];
        want.extend(decimate(&direct_conv(&x, &phi), 2).as_slice().iter().map(|z| z.re));
        for f in &r.filters {
            let u = direct_conv(&x, &f.spatial).map(|z| Complex64::new(z.norm(), 0.0));
            want.extend(decimate(&direct_conv(&u, &phi), 2).as_slice().iter().map(|z| z.re));
        }
        let (out, _) = forward(&[x.re()], &fb, false).unwrap();
        assert!(max_abs(&out.data, &want) < 1e-9);
    }
}
