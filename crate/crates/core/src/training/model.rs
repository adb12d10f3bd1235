//! Scattering -> batch norm -> linear classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealField;
use crate::filterbank::{BankDocument, FilterBank};
use crate::scattering::{channel_count, forward, ScatteringOutput, Tape};

/// Batch normalization over `[B, C, S]` activations, statistics per channel
/// over batch and spatial positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values saved by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch: usize,
    pub spatial: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &[f64], batch: usize, spatial: usize) -> Result<()> {
        if x.len() != batch * self.channels() * spatial {
            return Err(Error::ShapeMismatch(format!(
                "batch norm input has {} values, expected {batch}x{}x{spatial}",
                x.len(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics. Running statistics are updated
    /// when `update_running` is set (variance with the unbiased estimator).
    pub fn forward_train(
        &mut self,
        x: &[f64],
        batch: usize,
        spatial: usize,
        update_running: bool,
    ) -> Result<(Vec<f64>, BnCache)> {
        if batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        self.check(x, batch, spatial)?;
        let c = self.channels();
        let count = (batch * spatial) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..batch {
            for (ch, m) in mean.iter_mut().enumerate() {
                let start = (b * c + ch) * spatial;
                *m += x[start..start + spatial].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..batch {
            for ch in 0..c {
                let start = (b * c + ch) * spatial;
                var[ch] += x[start..start + spatial]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let start = (b * c + ch) * spatial;
                for i in start..start + spatial {
                    x_hat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    y[i] = self.gamma[ch] * x_hat[i] + self.beta[ch];
                }
            }
        }
        if update_running {
            let m = self.momentum;
            let unbias = count / (count - 1.0);
            for ch in 0..c {
                self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean[ch];
                self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * var[ch] * unbias;
            }
        }
        Ok((
            y,
            BnCache {
                x_hat,
                inv_std,
                batch,
                spatial,
            },
        ))
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &[f64], batch: usize, spatial: usize) -> Result<Vec<f64>> {
        self.check(x, batch, spatial)?;
        let c = self.channels();
        let mut y = vec![0.0; x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let scale = self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt();
                let start = (b * c + ch) * spatial;
                for i in start..start + spatial {
                    y[i] = (x[i] - self.running_mean[ch]) * scale + self.beta[ch];
                }
            }
        }
        Ok(y)
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let (batch, spatial) = (cache.batch, cache.spatial);
        let count = (batch * spatial) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                let start = (b * c + ch) * spatial;
                for i in start..start + spatial {
                    dgamma[ch] += dy[i] * cache.x_hat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for b in 0..batch {
            for ch in 0..c {
                // dxhat = dy * gamma; sums of dxhat and dxhat * xhat are
                // gamma * dbeta and gamma * dgamma
                let g = self.gamma[ch];
                let k = g * cache.inv_std[ch] / count;
                let start = (b * c + ch) * spatial;
                for i in start..start + spatial {
                    dx[i] = k * (count * dy[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch]);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// `logits = W x + b`, `W` stored row-major `[classes, features]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub classes: usize,
    pub features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    /// Weights and biases drawn from `U(-1/sqrt(F), 1/sqrt(F))`.
    pub fn new(classes: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 32);
        let bound = 1.0 / (features as f64).sqrt();
        let weight = (0..classes * features)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..classes).map(|_| rng.gen_range(-bound..bound)).collect();
        LinearHead {
            classes,
            features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let f = self.features;
        let mut out = Vec::with_capacity(batch * self.classes);
        for b in 0..batch {
            let row = &x[b * f..(b + 1) * f];
            for c in 0..self.classes {
                let w = &self.weight[c * f..(c + 1) * f];
                out.push(w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + self.bias[c]);
            }
        }
        out
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(&self, x: &[f64], dlogits: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (f, k) = (self.features, self.classes);
        let mut dx = vec![0.0; batch * f];
        let mut dw = vec![0.0; k * f];
        let mut db = vec![0.0; k];
        for b in 0..batch {
            let row = &x[b * f..(b + 1) * f];
            let drow = &mut dx[b * f..(b + 1) * f];
            for c in 0..k {
                let g = dlogits[b * k + c];
                if g == 0.0 {
                    continue;
                }
                db[c] += g;
                let w = &self.weight[c * f..(c + 1) * f];
                let dwc = &mut dw[c * f..(c + 1) * f];
                for i in 0..f {
                    dwc[i] += g * row[i];
                    drow[i] += g * w[i];
                }
            }
        }
        (dx, dw, db)
    }
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / B`.
pub fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for c in 0..classes {
            let p = (row[c] - lse).exp();
            grad[b * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// The full classifier. Samples with several color planes are scattered
/// plane by plane and their channels concatenated.
#[derive(Clone, Debug)]
pub struct Model {
    pub bank: FilterBank,
    pub bn: BatchNorm,
    pub head: LinearHead,
    pub planes: usize,
    pub learnable: bool,
}

/// Images scattered per evaluation block.
const EVAL_BLOCK: usize = 256;

impl Model {
    pub fn new(bank: FilterBank, classes: usize, planes: usize, learnable: bool, seed: u64) -> Self {
        let spec = *bank.spec();
        let k = channel_count(spec.j, spec.l) * planes;
        let side = spec.n >> spec.j;
        Model {
            bn: BatchNorm::new(k),
            head: LinearHead::new(classes, k * side * side, seed),
            bank,
            planes,
            learnable,
        }
    }

    /// Batch-norm channels per sample.
    pub fn feature_channels(&self) -> usize {
        self.bn.channels()
    }

    /// Spatial positions per channel.
    pub fn feature_spatial(&self) -> usize {
        let spec = self.bank.spec();
        (spec.n >> spec.j).pow(2)
    }

    /// Scattering features of `images` (sample-major, plane-minor), laid
    /// out `[samples, planes * K, m, m]`.
    pub fn features(&self, images: &[RealField], grad: bool) -> Result<(ScatteringOutput, Option<Tape>)> {
        forward(images, &self.bank, grad)
    }

    /// Eval-mode logits from precomputed features.
    pub fn logits_from_features(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        let y = self.bn.forward_eval(features, batch, self.feature_spatial())?;
        Ok(self.head.forward(&y, batch))
    }

    /// Eval-mode logits for `images`, scattered in blocks.
    pub fn logits(&self, images: &[RealField]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let block = EVAL_BLOCK * self.planes;
        for chunk in images.chunks(block) {
            let (f, _) = self.features(chunk, false)?;
            out.extend(self.logits_from_features(&f.data, chunk.len() / self.planes)?);
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[RealField]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images)?, self.head.classes))
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            bank: self.bank.to_document(),
            bn: self.bn.clone(),
            head: self.head.clone(),
            planes: self.planes,
            learnable: self.learnable,
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let bank = FilterBank::from_document(doc.bank)?;
        let spec = *bank.spec();
        let k = channel_count(spec.j, spec.l) * doc.planes;
        let features = k * (spec.n >> spec.j).pow(2);
        if doc.bn.channels() != k
            || doc.head.features != features
            || doc.head.weight.len() != doc.head.classes * features
            || doc.head.bias.len() != doc.head.classes
        {
            return Err(Error::ShapeMismatch(
                "model head or batch norm does not match the filterbank".into(),
            ));
        }
        Ok(Model {
            bank,
            bn: doc.bn,
            head: doc.head,
            planes: doc.planes,
            learnable: doc.learnable,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub bank: BankDocument,
    pub bn: BatchNorm,
    pub head: LinearHead,
    pub planes: usize,
    pub learnable: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn batchnorm_standardizes() {
        let mut bn = BatchNorm::new(3);
        let x = rand_vec(4 * 3 * 5, 1);
        let (y, _) = bn.forward_train(&x, 4, 5, true).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y[(b * 3 + ch) * 5..(b * 3 + ch + 1) * 5].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
        assert!(matches!(bn.forward_train(&x[..15], 1, 5, true), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn batchnorm_eval_with_unit_stats_is_identity() {
        let bn = BatchNorm::new(2);
        let x = rand_vec(2 * 2 * 3, 2);
        let y = bn.forward_eval(&x, 2, 3).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let (batch, c, s) = (3, 2, 4);
        let mut bn = BatchNorm::new(c);
        bn.gamma = vec![1.3, -0.7];
        bn.beta = vec![0.2, 0.1];
        let x = rand_vec(batch * c * s, 3);
        let w = rand_vec(batch * c * s, 4);
        let loss = |bn: &mut BatchNorm, x: &[f64]| {
            let (y, _) = bn.forward_train(x, batch, s, false).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = bn.forward_train(&x, batch, s, false).unwrap();
        let (dx, dg, db) = bn.backward(&cache, &w);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = loss(&mut bn, &xp);
            xp[i] -= 2.0 * h;
            let down = loss(&mut bn, &xp);
            let fd = (up - down) / (2.0 * h);
            assert!((dx[i] - fd).abs() < 1e-5 * fd.abs().max(1e-2), "{i}: {} vs {fd}", dx[i]);
        }
        for ch in 0..c {
            let mut b2 = bn.clone();
            b2.gamma[ch] += h;
            let up = loss(&mut b2, &x);
            b2.gamma[ch] -= 2.0 * h;
            let down = loss(&mut b2, &x);
            assert!((dg[ch] - (up - down) / (2.0 * h)).abs() < 1e-6);
            let mut b2 = bn.clone();
            b2.beta[ch] += h;
            let up = loss(&mut b2, &x);
            b2.beta[ch] -= 2.0 * h;
            let down = loss(&mut b2, &x);
            assert!((db[ch] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn xent_examples_and_gradient() {
        let (loss, _) = softmax_xent(&[0.0; 10], &[3], 10);
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        let (loss, _) = softmax_xent(&[100.0, 0.0, -50.0], &[0], 3);
        assert!(loss < 1e-40);

        let logits = rand_vec(3 * 4, 5);
        let labels = [1, 0, 3];
        let (_, g) = softmax_xent(&logits, &labels, 4);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += h;
            let up = softmax_xent(&p, &labels, 4).0;
            p[i] -= 2.0 * h;
            let down = softmax_xent(&p, &labels, 4).0;
            let fd = (up - down) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let head = LinearHead::new(3, 5, 1);
        let x = rand_vec(2 * 5, 6);
        let w = rand_vec(2 * 3, 7);
        let (dx, dw, db) = head.backward(&x, &w, 2);
        let loss = |h: &LinearHead, x: &[f64]| h.forward(x, 2).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let up = loss(&head, &xp);
            xp[i] -= 2.0 * eps;
            assert!((dx[i] - (up - loss(&head, &xp)) / (2.0 * eps)).abs() < 1e-8);
        }
        let mut h2 = head.clone();
        h2.weight[7] += eps;
        let up = loss(&h2, &x);
        h2.weight[7] -= 2.0 * eps;
        assert!((dw[7] - (up - loss(&h2, &x)) / (2.0 * eps)).abs() < 1e-8);
        let mut h2 = head.clone();
        h2.bias[2] += eps;
        let up = loss(&h2, &x);
        h2.bias[2] -= 2.0 * eps;
        assert!((db[2] - (up - loss(&h2, &x)) / (2.0 * eps)).abs() < 1e-8);
        let bound = 1.0 / 5f64.sqrt();
        assert!(head.weight.iter().all(|v| v.abs() < bound));
    }
}
