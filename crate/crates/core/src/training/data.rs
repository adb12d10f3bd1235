//! Labeled image datasets: synthetic oriented gratings, CIFAR-10 binary
//! batches and class-per-directory image folders.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealField;
use crate::imageio::{luminance, read_image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    Cifar10Binary,
    ImageDirectory,
}

/// How RGB inputs become scattering inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    /// Rec. 601 luminance, one plane per sample.
    Luminance,
    /// Each color plane is scattered separately and the features are
    /// concatenated.
    PerChannel,
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "luminance" | "gray" | "grey" => Ok(ColorMode::Luminance),
            "per-channel" | "rgb" => Ok(ColorMode::PerChannel),
            other => Err(Error::Config(format!(
                "unknown color mode `{other}` (luminance, per-channel)"
            ))),
        }
    }
}

/// Images with integer labels. Sample `i` owns planes
/// `images[i * planes .. (i + 1) * planes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<RealField>,
    pub planes: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Vec<RealField>,
        planes: usize,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if planes == 0 || images.len() != labels.len() * planes {
            return Err(Error::Data(format!(
                "{} images for {} labels with {planes} planes each",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.n() != first.n()) {
                return Err(Error::Data("images have different sizes".into()));
            }
        }
        Ok(Dataset {
            images,
            planes,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image side length (0 for an empty dataset).
    pub fn side(&self) -> usize {
        self.images.first().map_or(0, |im| im.n())
    }

    pub fn sample(&self, i: usize) -> &[RealField] {
        &self.images[i * self.planes..(i + 1) * self.planes]
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices
                .iter()
                .flat_map(|&i| self.sample(i).iter().cloned())
                .collect(),
            planes: self.planes,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Class-balanced random subset of `size` samples, deterministic per seed.
/// When `size` is not a multiple of the class count, the remainder is drawn
/// uniformly from the samples not yet chosen.
pub fn subsample_dataset(ds: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size > ds.len() {
        return Err(Error::InsufficientSamples {
            requested: size,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = ds.classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let per_class = size / c;
    let mut chosen = Vec::with_capacity(size);
    let mut rest = Vec::new();
    for members in &mut by_class {
        if members.len() < per_class {
            return Err(Error::InsufficientSamples {
                requested: per_class,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..per_class]);
        rest.extend_from_slice(&members[per_class..]);
    }
    rest.shuffle(&mut rng);
    chosen.extend_from_slice(&rest[..size - chosen.len()]);
    chosen.shuffle(&mut rng);
    Ok(ds.select(&chosen))
}

/// Synthetic oriented-grating benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub n: usize,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian noise; gratings have unit
    /// amplitude.
    pub noise: f64,
    /// Orientation jitter `U[-pi/(4C), pi/(4C)]` when true.
    pub jitter: bool,
}

impl SynthConfig {
    pub fn new(classes: usize, per_class: usize, n: usize, seed: u64) -> Self {
        SynthConfig {
            classes,
            per_class,
            n,
            seed,
            noise: 1.0,
            jitter: true,
        }
    }
}

/// Class `c` is a grating at orientation `c pi / C` (plus jitter) with
/// frequency `U[pi/4, 3pi/4]` rad/px, random phase, and additive noise.
/// Labels cycle `0, 1, .., C-1, 0, ..`, so every prefix of length `k C` is
/// balanced.
pub fn synth_textures(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic textures need at least 2 classes, got {}",
            cfg.classes
        )));
    }
    if cfg.n == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::InvalidParameter(
            "synthetic textures need n > 0 and noise >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.classes as f64;
    let total = cfg.classes * cfg.per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % cfg.classes;
        let jitter = if cfg.jitter {
            rng.gen_range(-PI / (4.0 * c)..=PI / (4.0 * c))
        } else {
            0.0
        };
        let angle = label as f64 * PI / c + jitter;
        let freq = rng.gen_range(PI / 4.0..=3.0 * PI / 4.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (s, co) = angle.sin_cos();
        let noise = cfg.noise;
        let img = RealField::from_fn(cfg.n, |r, col| {
            let along = r as f64 * co + col as f64 * s;
            let eps: f64 = if noise > 0.0 {
                rng.sample(StandardNormal)
            } else {
                0.0
            };
            (freq * along + phase).cos() + noise * eps
        });
        images.push(img);
        labels.push(label);
    }
    Dataset::new(images, 1, labels, cfg.classes, Provenance::Synthetic)
}

/// Splits a dataset whose labels cycle through the classes into the first
/// `train_per_class * C` samples and the rest.
pub fn split_head(ds: &Dataset, train_per_class: usize) -> Result<(Dataset, Dataset)> {
    let k = train_per_class * ds.classes;
    if k > ds.len() {
        return Err(Error::InsufficientSamples {
            requested: k,
            available: ds.len(),
        });
    }
    let head: Vec<usize> = (0..k).collect();
    let tail: Vec<usize> = (k..ds.len()).collect();
    Ok((ds.select(&head), ds.select(&tail)))
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

/// Reads CIFAR-10 binary batches: records of one label byte followed by
/// 3072 channel-major RGB bytes. Values are scaled to `[0, 1]`.
pub fn read_cifar10(paths: &[&Path], color: ColorMode) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for &path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Data(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Data(format!(
                    "{}: label {label} outside [0, 10)",
                    path.display()
                )));
            }
            labels.push(label);
            let px = &rec[1..];
            let chan = |c: usize, i: usize| px[c * plane + i] as f64 / 255.0;
            match color {
                ColorMode::Luminance => images.push(
                    RealField::from_vec(
                        CIFAR_SIDE,
                        (0..plane)
                            .map(|i| luminance(chan(0, i), chan(1, i), chan(2, i)))
                            .collect(),
                    )
                    .expect("32x32"),
                ),
                ColorMode::PerChannel => {
                    for c in 0..3 {
                        images.push(
                            RealField::from_vec(CIFAR_SIDE, (0..plane).map(|i| chan(c, i)).collect())
                                .expect("32x32"),
                        );
                    }
                }
            }
        }
    }
    let planes = match color {
        ColorMode::Luminance => 1,
        ColorMode::PerChannel => 3,
    };
    Dataset::new(images, planes, labels, 10, Provenance::Cifar10Binary)
}

/// Reads `root/<class>/<image>` where class directories are taken in sorted
/// name order. Grayscale images are used as-is under either color mode.
pub fn read_image_dir(root: &Path, color: ColorMode) -> Result<(Dataset, Vec<String>)> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no class subdirectories",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    let mut planes = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(
            dir.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && matches!(
                        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                        Some(ref e) if e == "png" || e == "pgm"
                    )
            })
            .collect();
        files.sort();
        for f in files {
            let img = read_image(&f)?;
            let fields = match color {
                ColorMode::Luminance => vec![img.to_gray_field(&f)?],
                ColorMode::PerChannel => img.to_plane_fields(&f)?,
            };
            if *planes.get_or_insert(fields.len()) != fields.len() {
                return Err(Error::Data(format!(
                    "{}: mixes grayscale and color images",
                    root.display()
                )));
            }
            images.extend(fields);
            labels.push(label);
        }
    }
    let ds = Dataset::new(
        images,
        planes.unwrap_or(1),
        labels,
        class_dirs.len(),
        Provenance::ImageDirectory,
    )?;
    Ok((ds, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_balanced_and_reproducible() {
        let cfg = SynthConfig::new(4, 5, 16, 3);
        let a = synth_textures(&cfg).unwrap();
        assert_eq!(a.class_counts(), vec![5; 4]);
        assert_eq!(a, synth_textures(&cfg).unwrap());
        assert_ne!(a, synth_textures(&SynthConfig { seed: 4, ..cfg }).unwrap());
        assert!(synth_textures(&SynthConfig::new(1, 5, 16, 0)).is_err());
    }

    #[test]
    fn noiseless_grating_has_unit_amplitude() {
        let cfg = SynthConfig {
            noise: 0.0,
            jitter: false,
            ..SynthConfig::new(2, 1, 16, 0)
        };
        let ds = synth_textures(&cfg).unwrap();
        // class 0 has orientation 0: constant along columns
        let im = &ds.images[0];
        for r in 0..16 {
            for c in 1..16 {
                assert_eq!(im.get(r, c), im.get(r, 0));
            }
        }
        assert!(im.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn subsample_is_balanced_and_seeded() {
        let full = synth_textures(&SynthConfig::new(10, 20, 8, 0)).unwrap();
        let s = subsample_dataset(&full, 100, 1).unwrap();
        assert_eq!(s.class_counts(), vec![10; 10]);
        assert_eq!(s, subsample_dataset(&full, 100, 1).unwrap());
        assert_ne!(s.labels, subsample_dataset(&full, 100, 2).unwrap().labels);
        let odd = subsample_dataset(&full, 103, 1).unwrap();
        assert_eq!(odd.len(), 103);
        assert!(odd.class_counts().iter().all(|&c| c >= 10));
        let all = subsample_dataset(&full, 200, 5).unwrap();
        assert_eq!(all.class_counts(), full.class_counts());
        assert!(matches!(
            subsample_dataset(&full, 201, 0),
            Err(Error::InsufficientSamples { requested: 201, available: 200 })
        ));
    }

    #[test]
    fn cifar_reader_parses_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 7] {
            bytes.push(label);
            bytes.extend(std::iter::repeat(255).take(1024));
            bytes.extend(std::iter::repeat(0).take(1024));
            bytes.extend(std::iter::repeat(51).take(1024));
        }
        fs::write(&path, &bytes).unwrap();
        let gray = read_cifar10(&[&path], ColorMode::Luminance).unwrap();
        assert_eq!(gray.labels, vec![3, 7]);
        assert_eq!(gray.planes, 1);
        assert!((gray.images[0].get(5, 5) - (0.299 + 0.114 * 0.2)).abs() < 1e-12);
        let rgb = read_cifar10(&[&path], ColorMode::PerChannel).unwrap();
        assert_eq!(rgb.images.len(), 6);
        assert_eq!(rgb.sample(1)[2].get(0, 0), 0.2);
        fs::write(&path, &bytes[..3000]).unwrap();
        assert!(matches!(read_cifar10(&[&path], ColorMode::Luminance), Err(Error::Data(_))));
    }

    #[test]
    fn image_dir_reader() {
        let dir = tempfile::tempdir().unwrap();
        for (class, v) in [("b", 10u8), ("a", 200)] {
            fs::create_dir(dir.path().join(class)).unwrap();
            crate::imageio::write_pgm(&dir.path().join(class).join("x.pgm"), 4, 4, &[v; 16]).unwrap();
        }
        let (ds, names) = read_image_dir(dir.path(), ColorMode::Luminance).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.images[0].get(0, 0), 200.0 / 255.0);
    }
}
