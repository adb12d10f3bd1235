//! Image deformations `x(u - tau(u))` and the scattering stability curve.
//!
//! Coordinates are centered on the image: `u = (row, col) - (n - 1) / 2`.
//! Samples are interpolated bilinearly; points outside the image read 0
//! unless circular boundaries are requested.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealField;
use crate::filterbank::FilterBank;
use crate::scattering::forward;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeformationKind {
    /// Angle in degrees.
    Rotation,
    /// Zoom factor, 1 is the identity.
    Scale,
    /// Shear angle in degrees along the first axis.
    Shear,
    /// Shift in pixels along the second axis.
    Translation,
    Custom1,
    Custom2,
}

pub const ALL_KINDS: [DeformationKind; 6] = [
    DeformationKind::Rotation,
    DeformationKind::Scale,
    DeformationKind::Shear,
    DeformationKind::Translation,
    DeformationKind::Custom1,
    DeformationKind::Custom2,
];

impl DeformationKind {
    /// Largest allowed strength.
    pub fn max_strength(self) -> f64 {
        match self {
            DeformationKind::Rotation => 10.0,
            DeformationKind::Scale => 1.4,
            DeformationKind::Shear => 5.0,
            DeformationKind::Translation => 22.0,
            DeformationKind::Custom1 | DeformationKind::Custom2 => 1.0,
        }
    }

    /// Strength of the identity deformation.
    pub fn identity_strength(self) -> f64 {
        match self {
            DeformationKind::Scale => 1.0,
            _ => 0.0,
        }
    }

    /// `count` evenly spaced strengths from the identity to the maximum.
    pub fn strengths(self, count: usize) -> Vec<f64> {
        let (lo, hi) = (self.identity_strength(), self.max_strength());
        match count {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    }
}

impl fmt::Display for DeformationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeformationKind::Rotation => "rotation",
            DeformationKind::Scale => "scale",
            DeformationKind::Shear => "shear",
            DeformationKind::Translation => "translation",
            DeformationKind::Custom1 => "custom1",
            DeformationKind::Custom2 => "custom2",
        })
    }
}

impl FromStr for DeformationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown deformation `{s}` (rotation, scale, shear, translation, custom1, custom2)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    pub kind: DeformationKind,
    pub strength: f64,
}

impl DeformationSpec {
    pub fn new(kind: DeformationKind, strength: f64) -> Result<Self> {
        let lo = kind.identity_strength();
        let hi = kind.max_strength();
        if !(lo..=hi).contains(&strength) {
            return Err(Error::StrengthOutOfRange {
                kind: kind.to_string(),
                strength,
                min: lo,
                max: hi,
            });
        }
        Ok(DeformationSpec { kind, strength })
    }

    pub fn is_identity(&self) -> bool {
        self.strength == self.kind.identity_strength()
    }

    /// Source position `u - tau(u)` for centered coordinates `u`; `half` is
    /// `(n - 1) / 2`, used to normalize the polynomial deformations.
    pub fn source(&self, u1: f64, u2: f64, half: f64) -> (f64, f64) {
        let e = self.strength;
        match self.kind {
            DeformationKind::Rotation => {
                let (s, c) = e.to_radians().sin_cos();
                (c * u1 + s * u2, -s * u1 + c * u2)
            }
            DeformationKind::Scale => (u1 / e, u2 / e),
            DeformationKind::Shear => (u1 - e.to_radians().tan() * u2, u2),
            DeformationKind::Translation => (u1, u2 - e),
            DeformationKind::Custom1 | DeformationKind::Custom2 => {
                let (v1, v2) = (u1 / half, u2 / half);
                let (t1, t2) = if self.kind == DeformationKind::Custom1 {
                    (0.3 * v1 * v1 + 0.2 * v2 * v2, 0.2 * (0.2 * v1))
                } else {
                    (0.3 * (v1 * v1 + v2 * v2), -0.3 * (2.0 * v1 * v2))
                };
                ((v1 - e * t1) * half, (v2 - e * t2) * half)
            }
        }
    }
}

fn sample(x: &RealField, r: f64, c: f64, circular: bool) -> f64 {
    let n = x.n() as isize;
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |i: isize, j: isize| -> f64 {
        if circular {
            x.get(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize)
        } else if (0..n).contains(&i) && (0..n).contains(&j) {
            x.get(i as usize, j as usize)
        } else {
            0.0
        }
    };
    let mut v = (1.0 - fr) * (1.0 - fc) * at(r0, c0);
    if fc != 0.0 {
        v += (1.0 - fr) * fc * at(r0, c0 + 1);
    }
    if fr != 0.0 {
        v += fr * (1.0 - fc) * at(r0 + 1, c0);
        if fc != 0.0 {
            v += fr * fc * at(r0 + 1, c0 + 1);
        }
    }
    v
}

/// `x(u - tau(u))` by inverse warping.
pub fn deform(x: &RealField, spec: &DeformationSpec, circular: bool) -> Result<RealField> {
    let checked = DeformationSpec::new(spec.kind, spec.strength)?;
    if checked.is_identity() {
        return Ok(x.clone());
    }
    let n = x.n();
    let half = (n as f64 - 1.0) / 2.0;
    Ok(RealField::from_fn(n, |r, c| {
        let (s1, s2) = checked.source(r as f64 - half, c as f64 - half, half);
        sample(x, s1 + half, s2 + half, circular)
    }))
}

/// `||S(x) - S(deform(x, eps))|| / ||S(x)||` over the whole flattened
/// output, for every strength.
pub fn stability_curve(
    bank: &FilterBank,
    x: &RealField,
    kind: DeformationKind,
    strengths: &[f64],
    circular: bool,
) -> Result<Vec<f64>> {
    let mut batch = vec![x.clone()];
    for &s in strengths {
        batch.push(deform(x, &DeformationSpec { kind, strength: s }, circular)?);
    }
    let (out, _) = forward(&batch, bank, false)?;
    let base = out.item(0);
    let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Data("scattering output of the reference image is zero".into()));
    }
    Ok((1..out.batch)
        .map(|b| {
            out.item(b)
                .iter()
                .zip(base)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt()
                / norm
        })
        .collect())
}

/// A smooth test image: two anisotropic Gaussian bumps well inside the
/// frame.
pub fn smooth_test_image(n: usize) -> RealField {
    let h = (n as f64 - 1.0) / 2.0;
    let s = n as f64 / 10.0;
    RealField::from_fn(n, |r, c| {
        let (u1, u2) = (r as f64 - h, c as f64 - h);
        let a = (-((u1 - 0.15 * n as f64).powi(2) / (2.0 * s * s) + u2.powi(2) / (8.0 * s * s))).exp();
        let b = 0.6
            * (-((u1 + 0.12 * n as f64).powi(2) / (8.0 * s * s)
                + (u2 + 0.1 * n as f64).powi(2) / (2.0 * s * s)))
                .exp();
        a + b
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::FilterbankSpec;

    fn ramp(n: usize) -> RealField {
        RealField::from_fn(n, |r, c| (r * n + c) as f64 + 1.0)
    }

    #[test]
    fn identity_strengths_are_bitwise_identity() {
        let x = ramp(16);
        for kind in ALL_KINDS {
            let spec = DeformationSpec::new(kind, kind.identity_strength()).unwrap();
            assert_eq!(deform(&x, &spec, false).unwrap(), x);
        }
    }

    #[test]
    fn strength_bounds() {
        assert!(matches!(
            DeformationSpec::new(DeformationKind::Rotation, 10.5),
            Err(Error::StrengthOutOfRange { .. })
        ));
        assert!(DeformationSpec::new(DeformationKind::Scale, 0.9).is_err());
        assert!(DeformationSpec::new(DeformationKind::Translation, 22.0).is_ok());
        assert!(DeformationSpec::new(DeformationKind::Custom1, -0.1).is_err());
        let x = ramp(8);
        let bad = DeformationSpec {
            kind: DeformationKind::Shear,
            strength: 6.0,
        };
        assert!(deform(&x, &bad, false).is_err());
    }

    #[test]
    fn integer_translation_is_exact_shift() {
        let x = ramp(8);
        let spec = DeformationSpec::new(DeformationKind::Translation, 3.0).unwrap();
        let y = deform(&x, &spec, false).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let want = if c >= 3 { x.get(r, c - 3) } else { 0.0 };
                assert_eq!(y.get(r, c), want);
            }
        }
        let y = deform(&x, &spec, true).unwrap();
        assert_eq!(y.get(2, 1), x.get(2, 6));
    }

    #[test]
    fn two_translations_compose_inside_valid_region() {
        let x = ramp(16);
        let t = |s: f64, f: &RealField| {
            deform(f, &DeformationSpec::new(DeformationKind::Translation, s).unwrap(), false).unwrap()
        };
        let twice = t(3.0, &t(2.0, &x));
        let once = t(5.0, &x);
        assert_eq!(twice, once);
    }

    #[test]
    fn custom1_at_corner() {
        let spec = DeformationSpec::new(DeformationKind::Custom1, 1.0).unwrap();
        let half = 7.5;
        let (s1, s2) = spec.source(half, half, half);
        assert!(((half - s1) / half - 0.5).abs() < 1e-12);
        assert!(((half - s2) / half - 0.04).abs() < 1e-12);
        let spec = DeformationSpec::new(DeformationKind::Custom2, 1.0).unwrap();
        let (s1, s2) = spec.source(half, half, half);
        assert!(((half - s1) / half - 0.6).abs() < 1e-12);
        assert!(((half - s2) / half + 0.6).abs() < 1e-12);
    }

    #[test]
    fn rotation_by_quarter_turn_is_a_permutation() {
        // the largest allowed rotation is 10 degrees; check the geometry of
        // the source map directly
        let spec = DeformationSpec {
            kind: DeformationKind::Rotation,
            strength: 90.0,
        };
        let (s1, s2) = spec.source(1.0, 0.0, 7.5);
        assert!((s1 - 0.0).abs() < 1e-12 && (s2 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stability_curve_is_zero_at_identity() {
        let bank = FilterBank::new(FilterbankSpec::new(2, 4, 32)).unwrap();
        let x = smooth_test_image(32);
        for kind in ALL_KINDS {
            let c = stability_curve(&bank, &x, kind, &[kind.identity_strength()], false).unwrap();
            assert_eq!(c, vec![0.0]);
        }
        let c = stability_curve(&bank, &x, DeformationKind::Rotation, &DeformationKind::Rotation.strengths(5), false)
            .unwrap();
        assert_eq!(c.len(), 5);
        assert!(c[4] > 0.0);
    }
}
