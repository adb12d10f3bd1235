use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{
    exit_code, BenchArgs, Cli, Command, ConfigFile, DistanceArgs, InitArgs, RunManifest,
    ShowFiltersArgs, StabilityArgs, TrainArgs, TransformArgs,
};
use crate::analysis::{
    distance_trajectory, filterbank_distance, smooth_test_image, stability_csv, trajectory_csv,
    DeformationKind, ALL_KINDS,
};
use crate::autograd::{param_chain, scattering_backward};
use crate::error::{Error, Result};
use crate::field::RealField;
use crate::filterbank::{FilterBank, FilterbankSpec, InitScheme, Parameterization};
use crate::imageio::{quantize, read_image, write_pgm, write_png};
use crate::scattering::forward;
use crate::training::{
    read_cifar10, read_image_dir, split_head, subsample_dataset, synth_textures, train_with_bank,
    ColorMode, Dataset, Model, ModelDocument, SynthConfig, TrainConfig,
};

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Init(a) => init(cli, a),
        Command::ShowFilters(a) => show_filters(cli, a),
        Command::Transform(a) => transform(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Stability(a) => stability(cli, a),
        Command::Distance(a) => distance(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

fn load_config(path: &Option<PathBuf>, allowed: &[&str]) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let cfg = ConfigFile::load(p)?;
            cfg.check_keys(allowed)?;
            Ok(cfg)
        }
    }
}

fn parse_flag<T: FromStr<Err = Error>>(flag: &Option<String>) -> Result<Option<T>> {
    flag.as_deref().map(str::parse).transpose()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the manifest, runs `body`, then records the outcome. `body` may
/// refine the recorded config once its inputs are loaded.
fn session(
    cli: &Cli,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    default_manifest: PathBuf,
    body: impl FnOnce(&mut Vec<PathBuf>, &mut serde_json::Value) -> Result<()>,
) -> Result<()> {
    let path = cli.manifest.clone().unwrap_or(default_manifest);
    let mut manifest = RunManifest::new(command, config, seed, cli.threads);
    manifest.write(&path)?;
    let mut outputs = Vec::new();
    let result = body(&mut outputs, &mut manifest.config);
    manifest.outputs = outputs;
    match &result {
        Ok(()) => manifest.finish_ok(),
        Err(e) => manifest.finish_err(exit_code(e), e.to_string()),
    }
    let written = manifest.write(&path);
    result.and(written)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_output(path: &Path, bytes: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
    create_parent(path)?;
    outputs.push(path.to_path_buf());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a filterbank JSON, or the bank inside a model JSON.
pub(crate) fn load_bank(path: &Path) -> Result<FilterBank> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| Error::Data(format!("{}: {e}", path.display()));
    if value.get("bank").is_some() {
        let doc: ModelDocument = serde_json::from_value(value).map_err(bad)?;
        Ok(Model::from_document(doc)?.bank)
    } else {
        FilterBank::from_document(serde_json::from_value(value).map_err(bad)?)
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
}

fn param_table(bank: &FilterBank) -> String {
    let mut out = format!(
        "{:>6} {:>5} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
        "filter", "scale", "orient", "sigma", "theta", "xi", "gamma"
    );
    let l = bank.spec().l;
    for (i, p) in bank.morlet_params().iter().enumerate() {
        writeln!(
            out,
            "{i:>6} {:>5} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            i / l,
            i % l,
            p.sigma,
            p.theta,
            p.xi,
            p.gamma
        )
        .expect("write to string");
    }
    out
}

// ---------------------------------------------------------------- init

const INIT_KEYS: &[&str] = &["j", "l", "n", "init", "parameterization", "seed", "out"];

#[derive(Serialize)]
struct InitPlan {
    spec: FilterbankSpec,
    out: PathBuf,
}

fn init(cli: &Cli, a: &InitArgs) -> Result<()> {
    let cfg = load_config(&a.config, INIT_KEYS)?;
    let spec = FilterbankSpec::new(
        cfg.resolve(a.j, "j")?.unwrap_or(2),
        cfg.resolve(a.l, "l")?.unwrap_or(8),
        cfg.resolve(a.n, "n")?.unwrap_or(32),
    )
    .with_parameterization(
        cfg.resolve(parse_flag(&a.parameterization)?, "parameterization")?
            .unwrap_or(Parameterization::Canonical),
    )
    .with_init(
        cfg.resolve(parse_flag(&a.init)?, "init")?
            .unwrap_or(InitScheme::TightFrame),
        cfg.resolve(a.seed, "seed")?.unwrap_or(0),
    );
    spec.validate()?;
    let plan = InitPlan {
        spec,
        out: cfg.resolve(a.out.clone(), "out")?.unwrap_or_else(|| "bank.json".into()),
    };
    let manifest = with_suffix(&plan.out, ".manifest.json");
    session(cli, "init", serde_json::to_value(&plan)?, Some(spec.seed), manifest, |outputs, _| {
        let bank = FilterBank::new(plan.spec)?;
        write_output(&plan.out, bank.to_json()?.as_bytes(), outputs)?;
        print!("{}", param_table(&bank));
        Ok(())
    })
}

// -------------------------------------------------------- show-filters

const SHOW_KEYS: &[&str] = &["bank", "out-dir", "format"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum ImageFormat {
    Pgm,
    Png,
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "png" => Ok(ImageFormat::Png),
            other => Err(Error::Config(format!("unknown image format `{other}` (pgm, png)"))),
        }
    }
}

#[derive(Serialize)]
struct ShowPlan {
    bank: PathBuf,
    out_dir: PathBuf,
    format: ImageFormat,
}

/// Moves the zero frequency / origin to the center pixel.
pub(crate) fn fftshift(values: &[f64], n: usize) -> Vec<f64> {
    let h = n / 2;
    (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            values[((r + n - h) % n) * n + (c + n - h) % n]
        })
        .collect()
}

fn show_filters(cli: &Cli, a: &ShowFiltersArgs) -> Result<()> {
    let cfg = load_config(&a.config, SHOW_KEYS)?;
    let plan = ShowPlan {
        bank: required(cfg.resolve(a.bank.clone(), "bank")?, "bank")?,
        out_dir: cfg.resolve(a.out_dir.clone(), "out-dir")?.unwrap_or_else(|| "filters".into()),
        format: cfg.resolve(parse_flag(&a.format)?, "format")?.unwrap_or(ImageFormat::Pgm),
    };
    let manifest = plan.out_dir.join("manifest.json");
    session(cli, "show-filters", serde_json::to_value(&plan)?, None, manifest, |outputs, _| {
        let bank = load_bank(&plan.bank)?;
        let n = bank.spec().n;
        let ext = match plan.format {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        };
        let save = |path: &Path, pixels: &[u8], outputs: &mut Vec<PathBuf>| -> Result<()> {
            outputs.push(path.to_path_buf());
            match plan.format {
                ImageFormat::Pgm => write_pgm(path, n, n, pixels),
                ImageFormat::Png => write_png(path, n, n, pixels),
            }
        };
        fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
        for (i, f) in bank.realized()?.filters.iter().enumerate() {
            let real: Vec<f64> = f.spatial.as_slice().iter().map(|z| z.re).collect();
            let m = real.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let pixels = quantize(&fftshift(&real, n), -m, m);
            save(&plan.out_dir.join(format!("filter_{i:03}_real.{ext}")), &pixels, outputs)?;

            let mag: Vec<f64> = f.freq[0].as_slice().iter().map(|z| z.norm()).collect();
            let top = mag.iter().fold(0.0f64, |m, &v| m.max(v));
            let pixels = quantize(&fftshift(&mag, n), 0.0, top);
            save(&plan.out_dir.join(format!("filter_{i:03}_fourier.{ext}")), &pixels, outputs)?;
        }
        let mut csv = String::from("filter,scale,orientation,sigma,theta,xi,gamma\n");
        let l = bank.spec().l;
        for (i, p) in bank.morlet_params().iter().enumerate() {
            writeln!(csv, "{i},{},{},{},{},{},{}", i / l, i % l, p.sigma, p.theta, p.xi, p.gamma)
                .expect("write to string");
        }
        write_output(&plan.out_dir.join("params.csv"), csv.as_bytes(), outputs)
    })
}

// ----------------------------------------------------------- transform

const TRANSFORM_KEYS: &[&str] = &["bank", "input", "out", "color"];

#[derive(Serialize)]
struct TransformPlan {
    bank: PathBuf,
    inputs: Vec<PathBuf>,
    out: PathBuf,
    color: ColorMode,
}

fn load_planes(path: &Path, color: ColorMode) -> Result<Vec<RealField>> {
    let img = read_image(path)?;
    match color {
        ColorMode::Luminance => Ok(vec![img.to_gray_field(path)?]),
        ColorMode::PerChannel => img.to_plane_fields(path),
    }
}

fn transform(cli: &Cli, a: &TransformArgs) -> Result<()> {
    let cfg = load_config(&a.config, TRANSFORM_KEYS)?;
    let plan = TransformPlan {
        bank: required(cfg.resolve(a.bank.clone(), "bank")?, "bank")?,
        inputs: cfg.list(a.input.clone(), "input")?.into_iter().map(PathBuf::from).collect(),
        out: required(cfg.resolve(a.out.clone(), "out")?, "out")?,
        color: cfg.resolve(parse_flag(&a.color)?, "color")?.unwrap_or(ColorMode::Luminance),
    };
    if plan.inputs.is_empty() {
        return Err(Error::Config("missing required setting `input`".into()));
    }
    let manifest = with_suffix(&plan.out, ".manifest.json");
    session(cli, "transform", serde_json::to_value(&plan)?, None, manifest, |outputs, _| {
        let bank = load_bank(&plan.bank)?;
        let mut images = Vec::new();
        let mut planes = None;
        for path in &plan.inputs {
            let p = load_planes(path, plan.color)?;
            if *planes.get_or_insert(p.len()) != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} color planes, earlier inputs have {}",
                    path.display(),
                    p.len(),
                    planes.unwrap_or(0)
                )));
            }
            images.extend(p);
        }
        let (out, _) = forward(&images, &bank, false)?;
        create_parent(&plan.out)?;
        outputs.push(plan.out.clone());
        outputs.push(with_suffix(&plan.out, ".json"));
        out.export(&plan.out)?;
        println!(
            "wrote {} ({} images x {} planes, {} channels, {}x{})",
            plan.out.display(),
            plan.inputs.len(),
            planes.unwrap_or(1),
            out.channels,
            out.side,
            out.side
        );
        Ok(())
    })
}

// --------------------------------------------------------------- train

const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "data",
    "test-data",
    "color",
    "classes",
    "per-class",
    "test-per-class",
    "noise",
    "j",
    "l",
    "n",
    "init",
    "parameterization",
    "bank",
    "fixed",
    "epochs",
    "max-lr-scattering",
    "max-lr-head",
    "weight-decay",
    "momentum",
    "batch-size",
    "subsample",
    "seed",
    "eval-every",
    "out-dir",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DatasetKind {
    Synthetic,
    Cifar10,
    ImageDir,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "synthetic" | "synth" => Ok(DatasetKind::Synthetic),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "image-dir" => Ok(DatasetKind::ImageDir),
            other => Err(Error::Config(format!(
                "unknown dataset `{other}` (synthetic, cifar10, image-dir)"
            ))),
        }
    }
}

#[derive(Serialize)]
struct TrainPlan {
    dataset: DatasetKind,
    data: Option<PathBuf>,
    test_data: Option<PathBuf>,
    color: ColorMode,
    classes: usize,
    per_class: usize,
    test_per_class: usize,
    noise: f64,
    initial_bank: Option<PathBuf>,
    train: TrainConfig,
    out_dir: PathBuf,
}

fn cifar_files(dir: &Path) -> Result<(Vec<PathBuf>, Option<PathBuf>)> {
    let mut train: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with("data_batch") && s.ends_with(".bin"))
        })
        .collect();
    train.sort();
    if train.is_empty() {
        return Err(Error::Data(format!("{}: no data_batch_*.bin files", dir.display())));
    }
    let test = dir.join("test_batch.bin");
    Ok((train, test.is_file().then_some(test)))
}

fn load_datasets(plan: &TrainPlan, n: usize) -> Result<(Dataset, Option<Dataset>)> {
    let seed = plan.train.seed;
    match plan.dataset {
        DatasetKind::Synthetic => {
            let mut sc = SynthConfig::new(plan.classes, plan.per_class + plan.test_per_class, n, seed);
            sc.noise = plan.noise;
            let (train, test) = split_head(&synth_textures(&sc)?, plan.per_class)?;
            Ok((train, (!test.is_empty()).then_some(test)))
        }
        DatasetKind::Cifar10 => {
            let dir = required(plan.data.as_deref(), "data")?;
            let (train_files, test_file) = cifar_files(dir)?;
            let refs: Vec<&Path> = train_files.iter().map(PathBuf::as_path).collect();
            let train = read_cifar10(&refs, plan.color)?;
            let test = match test_file {
                None => None,
                Some(p) => {
                    let t = read_cifar10(&[&p], plan.color)?;
                    let cap = plan.test_per_class * t.classes;
                    Some(if t.len() > cap { subsample_dataset(&t, cap, seed)? } else { t })
                }
            };
            Ok((train, test))
        }
        DatasetKind::ImageDir => {
            let root = required(plan.data.as_deref(), "data")?;
            let (train, names) = read_image_dir(root, plan.color)?;
            let test = match &plan.test_data {
                None => None,
                Some(t) => {
                    let (test, test_names) = read_image_dir(t, plan.color)?;
                    if test_names != names {
                        return Err(Error::Data(format!(
                            "class folders differ: {names:?} vs {test_names:?}"
                        )));
                    }
                    Some(test)
                }
            };
            Ok((train, test))
        }
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, TRAIN_KEYS)?;
    let dataset = cfg.resolve(parse_flag(&a.dataset)?, "dataset")?.unwrap_or(DatasetKind::Synthetic);
    let default_color = match dataset {
        DatasetKind::Cifar10 => ColorMode::PerChannel,
        _ => ColorMode::Luminance,
    };
    let seed = cfg.resolve(a.seed, "seed")?.unwrap_or(0);
    // replaced by the spec of --bank when one is given
    let spec = FilterbankSpec::new(
        cfg.resolve(a.j, "j")?.unwrap_or(2),
        cfg.resolve(a.l, "l")?.unwrap_or(8),
        cfg.resolve(a.n, "n")?.unwrap_or(32),
    )
    .with_parameterization(
        cfg.resolve(parse_flag(&a.parameterization)?, "parameterization")?
            .unwrap_or(Parameterization::Canonical),
    )
    .with_init(
        cfg.resolve(parse_flag(&a.init)?, "init")?.unwrap_or(InitScheme::TightFrame),
        seed,
    );
    let mut tc = TrainConfig::new(spec);
    tc.learnable = !cfg.switch(a.fixed, "fixed")?;
    tc.seed = seed;
    tc.epochs = cfg.resolve(a.epochs, "epochs")?.unwrap_or(tc.epochs);
    tc.max_lr_scattering = cfg.resolve(a.max_lr_scattering, "max-lr-scattering")?.unwrap_or(tc.max_lr_scattering);
    tc.max_lr_head = cfg.resolve(a.max_lr_head, "max-lr-head")?.unwrap_or(tc.max_lr_head);
    tc.weight_decay = cfg.resolve(a.weight_decay, "weight-decay")?.unwrap_or(tc.weight_decay);
    tc.momentum = cfg.resolve(a.momentum, "momentum")?.unwrap_or(tc.momentum);
    tc.batch_size = cfg.resolve(a.batch_size, "batch-size")?.unwrap_or(tc.batch_size);
    tc.subsample_size = cfg.resolve(a.subsample, "subsample")?;
    tc.eval_every = cfg.resolve(a.eval_every, "eval-every")?.unwrap_or(tc.eval_every);
    let plan = TrainPlan {
        dataset,
        data: cfg.resolve(a.data.clone(), "data")?,
        test_data: cfg.resolve(a.test_data.clone(), "test-data")?,
        color: cfg.resolve(parse_flag(&a.color)?, "color")?.unwrap_or(default_color),
        classes: cfg.resolve(a.classes, "classes")?.unwrap_or(4),
        per_class: cfg.resolve(a.per_class, "per-class")?.unwrap_or(50),
        test_per_class: cfg.resolve(a.test_per_class, "test-per-class")?.unwrap_or(250),
        noise: cfg.resolve(a.noise, "noise")?.unwrap_or(2.0),
        initial_bank: cfg.resolve(a.bank.clone(), "bank")?,
        train: tc,
        out_dir: cfg.resolve(a.out_dir.clone(), "out-dir")?.unwrap_or_else(|| "run".into()),
    };
    if plan.initial_bank.is_none() {
        plan.train.validate()?;
    }
    let manifest = plan.out_dir.join("manifest.json");
    session(cli, "train", serde_json::to_value(&plan)?, Some(seed), manifest, move |outputs, recorded| {
        let mut plan = plan;
        let bank = match &plan.initial_bank {
            Some(p) => {
                let bank = load_bank(p)?;
                plan.train.filterbank = *bank.spec();
                *recorded = serde_json::to_value(&plan)?;
                bank
            }
            None => FilterBank::new(plan.train.filterbank)?,
        };
        let (train_ds, test_ds) = load_datasets(&plan, bank.spec().n)?;
        let dir = &plan.out_dir;
        write_output(&dir.join("bank_init.json"), bank.to_json()?.as_bytes(), outputs)?;
        let (model, log) = train_with_bank(&train_ds, test_ds.as_ref(), &plan.train, bank)?;
        write_output(&dir.join("bank.json"), model.bank.to_json()?.as_bytes(), outputs)?;
        let doc = serde_json::to_string(&model.to_document())?;
        write_output(&dir.join("model.json"), doc.as_bytes(), outputs)?;
        write_output(&dir.join("runlog.jsonl"), log.to_jsonl()?.as_bytes(), outputs)?;
        if let Some(last) = log.epochs.last() {
            let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
            println!(
                "epoch {}: train loss {}, train acc {}, test acc {}",
                last.epoch,
                last.train_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
                pct(last.train_acc),
                pct(last.test_acc)
            );
        }
        Ok(())
    })
}

// ----------------------------------------------------------- stability

const STABILITY_KEYS: &[&str] = &["bank", "image", "kind", "steps", "circular", "out"];

#[derive(Serialize)]
struct StabilityPlan {
    bank: PathBuf,
    image: Option<PathBuf>,
    kinds: Vec<DeformationKind>,
    steps: usize,
    circular: bool,
    out: PathBuf,
}

fn stability(cli: &Cli, a: &StabilityArgs) -> Result<()> {
    let cfg = load_config(&a.config, STABILITY_KEYS)?;
    let kinds = cfg
        .list(a.kind.clone(), "kind")?
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<DeformationKind>>>()?;
    let plan = StabilityPlan {
        bank: required(cfg.resolve(a.bank.clone(), "bank")?, "bank")?,
        image: cfg.resolve(a.image.clone(), "image")?,
        kinds: if kinds.is_empty() { ALL_KINDS.to_vec() } else { kinds },
        steps: cfg.resolve(a.steps, "steps")?.unwrap_or(11),
        circular: cfg.switch(a.circular, "circular")?,
        out: cfg.resolve(a.out.clone(), "out")?.unwrap_or_else(|| "stability.csv".into()),
    };
    if plan.steps == 0 {
        return Err(Error::Config("steps must be positive".into()));
    }
    let manifest = with_suffix(&plan.out, ".manifest.json");
    session(cli, "stability", serde_json::to_value(&plan)?, None, manifest, |outputs, _| {
        let bank = load_bank(&plan.bank)?;
        let n = bank.spec().n;
        let x = match &plan.image {
            None => smooth_test_image(n),
            Some(p) => {
                let x = read_image(p)?.to_gray_field(p)?;
                if x.n() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: image is {1}x{1}, the filterbank expects {n}x{n}",
                        p.display(),
                        x.n()
                    )));
                }
                x
            }
        };
        let mut rows = Vec::new();
        for &kind in &plan.kinds {
            let strengths = kind.strengths(plan.steps);
            let curve = crate::analysis::stability_curve(&bank, &x, kind, &strengths, plan.circular)?;
            rows.extend(strengths.into_iter().zip(curve).map(|(s, d)| (kind, s, d)));
        }
        write_output(&plan.out, stability_csv(&rows).as_bytes(), outputs)?;
        for &kind in &plan.kinds {
            let worst = rows.iter().filter(|r| r.0 == kind).map(|r| r.2).fold(0.0, f64::max);
            println!("{kind}: max normalized distance {worst:.6}");
        }
        Ok(())
    })
}

// ------------------------------------------------------------ distance

const DISTANCE_KEYS: &[&str] = &["a", "b", "runlog", "reference", "out"];

#[derive(Serialize)]
struct DistancePlan {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    runlog: Option<PathBuf>,
    reference: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn distance(cli: &Cli, a: &DistanceArgs) -> Result<()> {
    let cfg = load_config(&a.config, DISTANCE_KEYS)?;
    let plan = DistancePlan {
        a: cfg.resolve(a.a.clone(), "a")?,
        b: cfg.resolve(a.b.clone(), "b")?,
        runlog: cfg.resolve(a.runlog.clone(), "runlog")?,
        reference: cfg.resolve(a.reference.clone(), "reference")?,
        out: cfg.resolve(a.out.clone(), "out")?,
    };
    let manifest = match &plan.out {
        Some(o) => with_suffix(o, ".manifest.json"),
        None => PathBuf::from("distance.manifest.json"),
    };
    match (&plan.a, &plan.b, &plan.runlog, &plan.reference) {
        (Some(pa), Some(pb), None, None) => {
            session(cli, "distance", serde_json::to_value(&plan)?, None, manifest, |outputs, _| {
                let (ba, bb) = (load_bank(pa)?, load_bank(pb)?);
                let m = filterbank_distance(&ba.morlet_params(), &bb.morlet_params())?;
                println!("distance {}", m.total);
                for ((i, j), c) in m.pairs.iter().zip(&m.costs) {
                    println!("  a[{i}] <-> b[{j}]  {c}");
                }
                if let Some(o) = &plan.out {
                    write_output(o, serde_json::to_string_pretty(&m)?.as_bytes(), outputs)?;
                }
                Ok(())
            })
        }
        (None, None, Some(log), Some(reference)) => {
            session(cli, "distance", serde_json::to_value(&plan)?, None, manifest, |outputs, _| {
                let log = crate::training::RunLog::read(log)?;
                let reference = load_bank(reference)?;
                let rows = distance_trajectory(&log, &reference.morlet_params())?;
                let csv = trajectory_csv(&rows);
                match &plan.out {
                    Some(o) => write_output(o, csv.as_bytes(), outputs)?,
                    None => print!("{csv}"),
                }
                Ok(())
            })
        }
        _ => Err(Error::Config(
            "give either --a and --b, or --runlog and --reference".into(),
        )),
    }
}

// --------------------------------------------------------------- bench

const BENCH_KEYS: &[&str] = &["j", "l", "n", "batch", "iters", "seed", "out"];

#[derive(Serialize)]
struct BenchPlan {
    spec: FilterbankSpec,
    batch: usize,
    iters: usize,
    out: Option<PathBuf>,
}

/// Throughput measurements. Everything outside `timing` is reproducible.
#[derive(Debug, Serialize)]
pub(crate) struct BenchReport {
    pub spec: FilterbankSpec,
    pub batch: usize,
    pub iters: usize,
    /// Sum of the fixed-mode outputs of the benchmark batch.
    pub output_checksum: f64,
    pub timing: BenchTiming,
}

#[derive(Debug, Serialize)]
pub(crate) struct BenchTiming {
    pub fixed_images_per_sec: f64,
    pub learnable_images_per_sec: f64,
    pub ratio: f64,
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let cfg = load_config(&a.config, BENCH_KEYS)?;
    let seed = cfg.resolve(a.seed, "seed")?.unwrap_or(0);
    let plan = BenchPlan {
        spec: FilterbankSpec::new(
            cfg.resolve(a.j, "j")?.unwrap_or(2),
            cfg.resolve(a.l, "l")?.unwrap_or(8),
            cfg.resolve(a.n, "n")?.unwrap_or(32),
        )
        .with_init(InitScheme::TightFrame, seed),
        batch: cfg.resolve(a.batch, "batch")?.unwrap_or(16),
        iters: cfg.resolve(a.iters, "iters")?.unwrap_or(5),
        out: cfg.resolve(a.out.clone(), "out")?,
    };
    plan.spec.validate()?;
    if plan.batch == 0 || plan.iters == 0 {
        return Err(Error::Config("batch and iters must be positive".into()));
    }
    let manifest = match &plan.out {
        Some(o) => with_suffix(o, ".manifest.json"),
        None => PathBuf::from("bench.manifest.json"),
    };
    session(cli, "bench", serde_json::to_value(&plan)?, Some(seed), manifest, |outputs, _| {
        let report = run_bench(&plan, seed)?;
        println!(
            "fixed forward:               {:>10.1} images/s",
            report.timing.fixed_images_per_sec
        );
        println!(
            "learnable forward+backward:  {:>10.1} images/s",
            report.timing.learnable_images_per_sec
        );
        println!("ratio fixed/learnable:       {:>10.3}", report.timing.ratio);
        if let Some(o) = &plan.out {
            write_output(o, serde_json::to_string_pretty(&report)?.as_bytes(), outputs)?;
        }
        Ok(())
    })
}

fn run_bench(plan: &BenchPlan, seed: u64) -> Result<BenchReport> {
    let n = plan.spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<RealField> = (0..plan.batch)
        .map(|_| RealField::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let bank = FilterBank::new(plan.spec)?;
    let (probe, _) = forward(&images, &bank, false)?;
    let grad: Vec<f64> = (0..probe.data.len()).map(|_| StandardNormal.sample(&mut rng)).collect();

    let learnable_step = || -> Result<()> {
        let (_, tape) = forward(&images, &bank, true)?;
        let g = scattering_backward(tape.as_ref(), &bank, &grad, false)?;
        param_chain(&g, &bank)?;
        Ok(())
    };
    // warm up caches and the FFT planner
    learnable_step()?;

    let start = Instant::now();
    for _ in 0..plan.iters {
        forward(&images, &bank, false)?;
    }
    let fixed = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for _ in 0..plan.iters {
        learnable_step()?;
    }
    let learnable = start.elapsed().as_secs_f64();

    let count = (plan.batch * plan.iters) as f64;
    let fixed_rate = count / fixed.max(f64::MIN_POSITIVE);
    let learnable_rate = count / learnable.max(f64::MIN_POSITIVE);
    Ok(BenchReport {
        spec: plan.spec,
        batch: plan.batch,
        iters: plan.iters,
        output_checksum: probe.data.iter().sum(),
        timing: BenchTiming {
            fixed_images_per_sec: fixed_rate,
            learnable_images_per_sec: learnable_rate,
            ratio: fixed_rate / learnable_rate,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fftshift_centers_origin() {
        let mut v = vec![0.0; 16];
        v[0] = 1.0;
        let s = fftshift(&v, 4);
        assert_eq!(s[2 * 4 + 2], 1.0);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn bench_is_consistent() {
        let plan = BenchPlan {
            spec: FilterbankSpec::new(1, 2, 16),
            batch: 2,
            iters: 1,
            out: None,
        };
        let r = run_bench(&plan, 0).unwrap();
        assert!(r.timing.fixed_images_per_sec > 0.0);
        assert_eq!(r.output_checksum, run_bench(&plan, 0).unwrap().output_checksum);
    }
}
