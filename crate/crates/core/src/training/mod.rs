//! Supervised training of scattering -> batch norm -> linear head.

pub mod data;
pub mod model;
pub mod optim;

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{param_chain, scattering_backward};
use crate::error::{Error, Result};
use crate::field::RealField;
use crate::filterbank::{FilterBank, FilterbankSpec, FilterParams};
use crate::morlet::MorletParams;

pub use data::{
    read_cifar10, read_image_dir, split_head, subsample_dataset, synth_textures, ColorMode,
    Dataset, Provenance, SynthConfig,
};
pub use model::{argmax_rows, softmax_xent, BatchNorm, LinearHead, Model, ModelDocument};
pub use optim::{one_cycle_lr, sgd_momentum_step};

/// Datasets up to this size train with full-batch gradient descent.
pub const FULL_BATCH_LIMIT: usize = 1024;
/// Mini-batch size above [`FULL_BATCH_LIMIT`] when none is configured.
pub const DEFAULT_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub filterbank: FilterbankSpec,
    pub epochs: usize,
    /// 0 selects full batch up to 1024 samples, else 128.
    pub batch_size: usize,
    pub max_lr_scattering: f64,
    pub max_lr_head: f64,
    pub momentum: f64,
    /// Applied to the linear head only.
    pub weight_decay: f64,
    /// Seeds head init, subsampling and batch order.
    pub seed: u64,
    pub subsample_size: Option<usize>,
    /// Filters receive gradients when set.
    pub learnable: bool,
    /// Evaluate test accuracy every this many epochs (0: last epoch only).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(filterbank: FilterbankSpec) -> Self {
        TrainConfig {
            filterbank,
            epochs: 200,
            batch_size: 0,
            max_lr_scattering: 0.1,
            max_lr_head: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            subsample_size: None,
            learnable: true,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filterbank.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        for (name, v) in [
            ("max_lr_scattering", self.max_lr_scattering),
            ("max_lr_head", self.max_lr_head),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    fn resolved_batch(&self, samples: usize) -> usize {
        match self.batch_size {
            0 if samples <= FULL_BATCH_LIMIT => samples,
            0 => DEFAULT_BATCH,
            b => b.min(samples),
        }
    }
}

/// First line of a run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: TrainConfig,
    pub provenance: Provenance,
    pub planes: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the state before training.
    pub epoch: usize,
    /// Head learning rate at the epoch's last step.
    pub lr: f64,
    pub lr_scattering: f64,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Morlet parameters of every filter; empty for pixelwise banks.
    pub params: Vec<MorletParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    /// JSON lines: the header, then one record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&serde_json::json!({ "header": self.header }))?;
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
        let first = lines
            .next()
            .ok_or_else(|| bad("empty run log".into()))?
            .map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Head {
            header: RunHeader,
        }
        let head: Head = serde_json::from_str(&first).map_err(|e| bad(format!("header: {e}")))?;
        let mut epochs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            epochs.push(
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
            );
        }
        Ok(RunLog {
            header: head.header,
            epochs,
        })
    }
}

fn param_snapshot(bank: &FilterBank) -> Vec<MorletParams> {
    match bank.params() {
        FilterParams::Pixelwise(_) => Vec::new(),
        _ => bank.morlet_params(),
    }
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

fn gather_images(ds: &Dataset, idx: &[usize]) -> Vec<RealField> {
    idx.iter().flat_map(|&i| ds.sample(i).iter().cloned()).collect()
}

fn check_finite(what: &str, values: &[f64], epoch: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "non-finite {what} during epoch {epoch}"
        )))
    }
}

/// Momentum buffers for every parameter group.
struct Velocities {
    weight: Vec<f64>,
    bias: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    filters: Vec<f64>,
}

/// Loss, logits and gradients for one batch in training mode.
struct StepResult {
    loss: f64,
    logits: Vec<f64>,
    d_weight: Vec<f64>,
    d_bias: Vec<f64>,
    d_gamma: Vec<f64>,
    d_beta: Vec<f64>,
    d_features: Vec<f64>,
}

fn head_step(
    model: &mut Model,
    features: &[f64],
    labels: &[usize],
    update_running: bool,
) -> Result<StepResult> {
    let batch = labels.len();
    let spatial = model.feature_spatial();
    let (y, cache) = model.bn.forward_train(features, batch, spatial, update_running)?;
    let logits = model.head.forward(&y, batch);
    let (loss, dlogits) = softmax_xent(&logits, labels, model.head.classes);
    let (dy, d_weight, d_bias) = model.head.backward(&y, &dlogits, batch);
    let (d_features, d_gamma, d_beta) = model.bn.backward(&cache, &dy);
    Ok(StepResult {
        loss,
        logits,
        d_weight,
        d_bias,
        d_gamma,
        d_beta,
        d_features,
    })
}

/// Trains a fresh model on `train` and optionally reports accuracy on
/// `test`. Returns the model and the per-epoch log.
pub fn train(train_ds: &Dataset, test_ds: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    cfg.validate()?;
    train_with_bank(train_ds, test_ds, cfg, FilterBank::new(cfg.filterbank)?)
}

/// Like [`train`], starting from `bank` instead of a fresh initialization.
/// The bank's spec replaces `cfg.filterbank`.
pub fn train_with_bank(
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    bank: FilterBank,
) -> Result<(Model, RunLog)> {
    let cfg = &TrainConfig {
        filterbank: *bank.spec(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let train_ds = match cfg.subsample_size {
        Some(size) => subsample_dataset(train_ds, size, cfg.seed)?,
        None => train_ds.clone(),
    };
    if train_ds.side() != cfg.filterbank.n {
        return Err(Error::ShapeMismatch(format!(
            "images are {0}x{0} but the filterbank expects {1}x{1}",
            train_ds.side(),
            cfg.filterbank.n
        )));
    }
    if let Some(t) = test_ds {
        if t.planes != train_ds.planes || t.classes != train_ds.classes {
            return Err(Error::Data("train and test sets have different layouts".into()));
        }
    }
    let mut model = Model::new(bank, train_ds.classes, train_ds.planes, cfg.learnable, cfg.seed);
    let header = RunHeader {
        config: cfg.clone(),
        provenance: train_ds.provenance,
        planes: train_ds.planes,
        classes: train_ds.classes,
        train_size: train_ds.len(),
        test_size: test_ds.map_or(0, |t| t.len()),
    };
    let epochs = run_training(&mut model, &train_ds, test_ds, cfg)?;
    Ok((model, RunLog { header, epochs }))
}

/// Continues training `model` in place; used by [`train`].
pub fn run_training(
    model: &mut Model,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let n = train_ds.len();
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let batch = cfg.resolved_batch(n);
    if batch < 2 {
        return Err(Error::DegenerateBatch(batch));
    }
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let feat_len = model.feature_channels() * model.feature_spatial();

    // Fixed filters: scatter the training set once.
    let fixed_features = if model.learnable {
        None
    } else {
        let mut all = Vec::with_capacity(n * feat_len);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(256) {
            all.extend(model.features(&gather_images(train_ds, chunk), false)?.0.data);
        }
        Some(all)
    };

    let mut vel = Velocities {
        weight: vec![0.0; model.head.weight.len()],
        bias: vec![0.0; model.head.bias.len()],
        gamma: vec![0.0; model.bn.channels()],
        beta: vec![0.0; model.bn.channels()],
        filters: vec![0.0; model.bank.flat_params().len()],
    };
    let positive = model.bank.positive_mask();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut records = vec![EpochRecord {
        epoch: 0,
        lr: one_cycle_lr(0, total_steps, cfg.max_lr_head),
        lr_scattering: one_cycle_lr(0, total_steps, cfg.max_lr_scattering),
        train_loss: None,
        train_acc: None,
        test_acc: None,
        params: param_snapshot(&model.bank),
    }];
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let (mut lr_h, mut lr_s) = (0.0, 0.0);
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            lr_h = one_cycle_lr(step, total_steps, cfg.max_lr_head);
            lr_s = one_cycle_lr(step, total_steps, cfg.max_lr_scattering);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.labels[i]).collect();
            let (features, tape) = match &fixed_features {
                Some(all) => {
                    let mut f = Vec::with_capacity(chunk.len() * feat_len);
                    for &i in chunk {
                        f.extend_from_slice(&all[i * feat_len..(i + 1) * feat_len]);
                    }
                    (f, None)
                }
                None => {
                    let (out, tape) = model.features(&gather_images(train_ds, chunk), true)?;
                    (out.data, tape)
                }
            };
            let r = head_step(model, &features, &labels, true)?;
            if !r.loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {} at epoch {epoch}, step {step}",
                    r.loss
                )));
            }
            loss_sum += r.loss * chunk.len() as f64;
            hits += argmax_rows(&r.logits, model.head.classes)
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a == b)
                .count();

            if model.learnable {
                let grads = scattering_backward(tape.as_ref(), &model.bank, &r.d_features, false)?;
                let flat = param_chain(&grads, &model.bank)?.to_flat();
                check_finite("filter gradient", &flat, epoch)?;
                let mut p = model.bank.flat_params();
                sgd_momentum_step(
                    &mut p,
                    &flat,
                    &mut vel.filters,
                    lr_s,
                    cfg.momentum,
                    0.0,
                    None,
                    Some(&positive),
                );
                check_finite("filter parameter", &p, epoch)?;
                model.bank.set_flat_params(&p)?;
            }
            let wd = cfg.weight_decay;
            let m = cfg.momentum;
            sgd_momentum_step(&mut model.head.weight, &r.d_weight, &mut vel.weight, lr_h, m, wd, None, None);
            sgd_momentum_step(&mut model.head.bias, &r.d_bias, &mut vel.bias, lr_h, m, wd, None, None);
            sgd_momentum_step(&mut model.bn.gamma, &r.d_gamma, &mut vel.gamma, lr_h, m, 0.0, None, None);
            sgd_momentum_step(&mut model.bn.beta, &r.d_beta, &mut vel.beta, lr_h, m, 0.0, None, None);
            check_finite("head weight", &model.head.weight, epoch)?;
            step += 1;
        }
        let evaluate = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let test_acc = match (test_ds, evaluate) {
            (Some(t), true) => Some(accuracy(&model.predict(&t.images)?, &t.labels)),
            _ => None,
        };
        records.push(EpochRecord {
            epoch,
            lr: lr_h,
            lr_scattering: lr_s,
            train_loss: Some(loss_sum / n as f64),
            train_acc: Some(hits as f64 / n as f64),
            test_acc,
            params: param_snapshot(&model.bank),
        });
    }
    Ok(records)
}

/// Which scalar of which filter to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorletField {
    Sigma,
    Theta,
    Xi,
    Gamma,
}

impl MorletField {
    fn offset(self) -> usize {
        match self {
            MorletField::Sigma => 0,
            MorletField::Theta => 1,
            MorletField::Xi => 2,
            MorletField::Gamma => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSelector {
    /// Filter index (canonical) or scale index (equivariant).
    pub index: usize,
    pub field: MorletField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    Add(f64),
    Scale(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub original: f64,
    pub perturbed: f64,
    /// Parameter value after each step.
    pub trajectory: Vec<f64>,
    /// Training loss before each step.
    pub losses: Vec<f64>,
    /// `|final - original|`.
    pub final_distance: f64,
}

/// Perturbs one filter parameter of a trained model and re-optimizes that
/// scalar alone (full-batch, batch statistics, head frozen) with momentum
/// SGD at a constant rate.
pub fn perturb_and_reoptimize(
    model: &Model,
    ds: &Dataset,
    selector: ParamSelector,
    perturbation: Perturbation,
    steps: usize,
    lr: f64,
    momentum: f64,
) -> Result<PerturbReport> {
    if matches!(model.bank.params(), FilterParams::Pixelwise(_)) {
        return Err(Error::InvalidParameter(
            "pixelwise banks have no Morlet parameters to perturb".into(),
        ));
    }
    let mut work = model.clone();
    let mut flat = work.bank.flat_params();
    let slot = selector.index * 4 + selector.field.offset();
    if slot >= flat.len() {
        return Err(Error::InvalidParameter(format!(
            "parameter index {} out of range",
            selector.index
        )));
    }
    let original = flat[slot];
    let perturbed = match perturbation {
        Perturbation::Add(d) => original + d,
        Perturbation::Scale(s) => original * s,
    };
    flat[slot] = perturbed;
    work.bank.set_flat_params(&flat)?;
    let clamp = work.bank.positive_mask()[slot];

    let images = &ds.images;
    let mut velocity = 0.0;
    let mut trajectory = Vec::with_capacity(steps);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (out, tape) = work.features(images, true)?;
        let r = head_step(&mut work, &out.data, &ds.labels, false)?;
        if !r.loss.is_finite() {
            return Err(Error::Divergence(format!("loss became {} at step {step}", r.loss)));
        }
        losses.push(r.loss);
        let grads = scattering_backward(tape.as_ref(), &work.bank, &r.d_features, false)?;
        let g = param_chain(&grads, &work.bank)?.to_flat()[slot];
        velocity = momentum * velocity + g;
        let mut flat = work.bank.flat_params();
        flat[slot] -= lr * velocity;
        if clamp {
            flat[slot] = flat[slot].max(crate::morlet::MIN_POSITIVE);
        }
        work.bank.set_flat_params(&flat)?;
        trajectory.push(flat[slot]);
    }
    let last = trajectory.last().copied().unwrap_or(perturbed);
    Ok(PerturbReport {
        original,
        perturbed,
        trajectory,
        losses,
        final_distance: (last - original).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::InitScheme;

    fn small_data(noise: f64) -> (Dataset, Dataset) {
        let ds = synth_textures(&SynthConfig {
            noise,
            ..SynthConfig::new(2, 12, 16, 1)
        })
        .unwrap();
        split_head(&ds, 8).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::new(FilterbankSpec::new(2, 2, 16))
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (tr, _) = small_data(0.5);
        let cfg = TrainConfig {
            max_lr_scattering: 0.0,
            max_lr_head: 0.0,
            ..small_cfg()
        };
        let (model, log) = train(&tr, None, &cfg).unwrap();
        let fresh = Model::new(FilterBank::new(cfg.filterbank).unwrap(), 2, 1, true, cfg.seed);
        assert_eq!(model.head, fresh.head);
        assert_eq!(model.bank.flat_params(), fresh.bank.flat_params());
        assert_eq!(log.epochs.len(), 4);
        assert!(log.epochs.windows(2).all(|w| w[0].params == w[1].params));
    }

    #[test]
    fn fixed_mode_keeps_filters_and_matches_learnable_with_frozen_filters() {
        let (tr, te) = small_data(0.5);
        let fixed = TrainConfig {
            learnable: false,
            ..small_cfg()
        };
        let (mf, lf) = train(&tr, Some(&te), &fixed).unwrap();
        assert!(lf.epochs.windows(2).all(|w| w[0].params == w[1].params));
        let frozen = TrainConfig {
            learnable: true,
            max_lr_scattering: 0.0,
            ..small_cfg()
        };
        let (ml, _) = train(&tr, Some(&te), &frozen).unwrap();
        let a = mf.logits(&te.images).unwrap();
        let b = ml.logits(&te.images).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn learnable_training_moves_filters_and_is_deterministic() {
        let (tr, te) = small_data(0.5);
        let cfg = small_cfg();
        let (m1, l1) = train(&tr, Some(&te), &cfg).unwrap();
        let (m2, l2) = train(&tr, Some(&te), &cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1.head, m2.head);
        assert_ne!(l1.epochs[0].params, l1.epochs[3].params);
        for p in &l1.epochs[3].params {
            assert!(p.sigma >= 1e-6 && p.gamma >= 1e-6);
        }
        assert!(l1.epochs[3].test_acc.is_some());
        assert!(l1.epochs[1].test_acc.is_none());
    }

    #[test]
    fn separable_gratings_reach_full_train_accuracy() {
        let ds = synth_textures(&SynthConfig {
            noise: 0.0,
            jitter: false,
            ..SynthConfig::new(2, 10, 16, 2)
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            learnable: false,
            max_lr_head: 0.05,
            ..TrainConfig::new(FilterbankSpec::new(2, 4, 16))
        };
        let (model, log) = train(&ds, None, &cfg).unwrap();
        assert_eq!(log.epochs.last().unwrap().train_acc, Some(1.0));
        let pred = model.predict(&ds.images).unwrap();
        assert_eq!(pred, ds.labels);
    }

    #[test]
    fn run_log_round_trip() {
        let (tr, te) = small_data(0.5);
        let (_, log) = train(&tr, Some(&te), &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        log.write(&path).unwrap();
        assert_eq!(RunLog::read(&path).unwrap(), log);
        let text = fs::read_to_string(&path).unwrap();
        let rec: serde_json::Value = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        for key in ["epoch", "lr", "train_loss", "train_acc", "test_acc", "params"] {
            assert!(rec.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let (tr, _) = small_data(0.5);
        let one = tr.select(&[0]);
        assert!(matches!(train(&one, None, &small_cfg()), Err(Error::DegenerateBatch(1))));
        let bad = TrainConfig {
            momentum: 1.0,
            ..small_cfg()
        };
        assert!(matches!(train(&tr, None, &bad), Err(Error::Config(_))));
        let wrong_n = TrainConfig::new(FilterbankSpec::new(2, 2, 32));
        assert!(matches!(train(&tr, None, &wrong_n), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_perturbation_stays_near_optimum() {
        let (tr, _) = small_data(0.5);
        let cfg = TrainConfig {
            filterbank: FilterbankSpec::new(2, 2, 16).with_init(InitScheme::TightFrame, 0),
            ..small_cfg()
        };
        let (model, _) = train(&tr, None, &cfg).unwrap();
        let sel = ParamSelector {
            index: 1,
            field: MorletField::Theta,
        };
        let rep = perturb_and_reoptimize(&model, &tr, sel, Perturbation::Add(0.0), 0, 0.1, 0.9).unwrap();
        assert_eq!(rep.final_distance, 0.0);
        let rep = perturb_and_reoptimize(&model, &tr, sel, Perturbation::Add(0.3), 3, 0.01, 0.0).unwrap();
        assert_eq!(rep.perturbed, rep.original + 0.3);
        assert_eq!(rep.trajectory.len(), 3);
    }
}
