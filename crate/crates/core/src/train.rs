//! Adam, subject-level k-fold splits and the supervised training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, sample_rng, AugmentConfig};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, BLOOD_POOL, MYOCARDIUM, NUM_CLASSES};
use crate::layers::Mode;
use crate::loss::{jaccard_distance, jaccard_value};
use crate::metrics::dice_class;
use crate::nets::{checkpoint, Network};
use crate::quantify::threshold_labels;
use crate::real::Real;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], cfg: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step = T::lit(lr / c1);
        let inv_c2 = T::lit(1.0 / c2);
        let eps = T::lit(eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Assignment of subjects to validation folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> BTreeSet<&str> {
        self.assignments.iter().filter(|&(_, &f)| f == fold).map(|(s, _)| s.as_str()).collect()
    }

    pub fn training(&self, fold: usize) -> BTreeSet<&str> {
        self.assignments.iter().filter(|&(_, &f)| f != fold).map(|(s, _)| s.as_str()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the distinct subjects under `seed` and deals them round-robin into `k` folds.
pub fn kfold_split(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<&String> = subject_ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || ids.len() < k {
        return Err(Error::InvalidArgument(format!("cannot split {} subjects into {k} folds", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = ids.into_iter().enumerate().map(|(i, s)| (s.clone(), i % k)).collect();
    Ok(FoldPlan { k, assignments })
}

/// One training image with its reference labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject: String,
    pub image: Image,
    pub labels: LabelMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: bool,
    /// Probability that a drawn sample is augmented.
    pub augment_prob: f64,
    pub augment_cfg: AugmentConfig,
    /// Seed for batch order and augmentation.
    pub seed: u64,
    /// Where the best-validation checkpoint is written, if anywhere.
    #[serde(skip)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            adam: AdamConfig::default(),
            augment: true,
            augment_prob: 0.5,
            augment_cfg: AugmentConfig::default(),
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Mean of the myocardium and blood-pool Dice on the validation set.
    pub val_dice: Option<f64>,
}

pub struct TrainOutcome<T: Real> {
    /// Parameters of the epoch with the lowest validation loss (training loss
    /// when there is no validation set).
    pub best: Network<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_dice\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.8}")).unwrap_or_default();
    for r in log {
        let _ = writeln!(s, "{},{:.8},{},{}", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_dice));
    }
    s
}

/// Stacks images into `[N, 1, H, W]` and one-hot labels into `[N, classes, H, W]`.
pub fn batch_tensors<T: Real>(samples: &[(&Image, &LabelMap)]) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = samples.first().map(|(i, _)| (i.h, i.w)).ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let n = samples.len();
    let plane = h * w;
    let mut x = Vec::with_capacity(n * plane);
    let mut y = vec![T::zero(); n * NUM_CLASSES * plane];
    for (b, (img, lab)) in samples.iter().enumerate() {
        if img.h != h || img.w != w || !img.same_size(lab) {
            return Err(Error::invalid_shape("batch", "samples differ in size"));
        }
        x.extend(img.data.iter().map(|&v| T::lit(v as f64)));
        for (i, &c) in lab.data.iter().enumerate() {
            y[(b * NUM_CLASSES + c as usize) * plane + i] = T::one();
        }
    }
    Ok((Tensor::new([n, 1, h, w], x)?, Tensor::new([n, NUM_CLASSES, h, w], y)?))
}

/// Validation loss and mean foreground Dice in eval mode.
pub fn evaluate<T: Real>(net: &Network<T>, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no validation samples".into()));
    }
    let mut loss = 0.0;
    let mut pred_all = Vec::new();
    let mut truth_all = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let pairs: Vec<_> = chunk.iter().map(|s| (&s.image, &s.labels)).collect();
        let (x, y) = batch_tensors::<T>(&pairs)?;
        let p = net.predict(&x)?;
        loss += jaccard_value(p.data(), y.data()).f64() * chunk.len() as f64;
        pred_all.extend(threshold_labels(&p)?.into_iter().flat_map(|m| m.data));
        truth_all.extend(chunk.iter().flat_map(|s| s.labels.data.iter().copied()));
    }
    let dice = (dice_class(&pred_all, &truth_all, MYOCARDIUM)? + dice_class(&pred_all, &truth_all, BLOOD_POOL)?) / 2.0;
    Ok((loss / samples.len() as f64, dice))
}

/// Fits `net` on `train_set`, tracking validation metrics on `val_set`.
pub fn train<T: Real>(net: &mut Network<T>, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if cfg.augment {
        cfg.augment_cfg.validate()?;
    }
    let mut adam = AdamState::new(net.params(), cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<T>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = sample_rng(cfg.seed, 2 * epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut owned = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train_set[i];
                if cfg.augment && rng.random_bool(cfg.augment_prob) {
                    let mut arng = sample_rng(cfg.seed, ((epoch * train_set.len() + i) as u64) << 1 | 1);
                    owned.push(augment_pair(&s.image, &s.labels, &cfg.augment_cfg, &mut arng)?);
                } else {
                    owned.push((s.image.clone(), s.labels.clone()));
                }
            }
            let pairs: Vec<_> = owned.iter().map(|(i, l)| (i, l)).collect();
            let (x, y) = batch_tensors::<T>(&pairs)?;
            let mut tape = Tape::new();
            let params = net.bind(&mut tape, true);
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let fwd = net.forward_with(&mut tape, &params, xv, Mode::Train)?;
            let loss = jaccard_distance(&mut tape, fwd.output, yv)?;
            let value = tape.value(loss).item().f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, value });
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = params
                .iter()
                .zip(net.params())
                .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
                .collect();
            adam.update(net.params_mut(), &grads)?;
            net.update_running_stats(&fwd.bn_stats);
            total += value * chunk.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, val_dice) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, d) = evaluate(net, val_set, cfg.batch_size)?;
            (Some(l), Some(d))
        };
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, net.clone()));
        }
        log.push(EpochRecord { epoch, train_loss, val_loss, val_dice });
    }
    let (_, best_epoch, best) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, net.clone()),
    };
    if let Some(path) = &cfg.checkpoint {
        checkpoint::save(&best, path)?;
    }
    Ok(TrainOutcome { best, best_epoch, log })
}

/// Trains on every fold but `fold` and validates on `fold`.
pub fn train_fold<T: Real>(
    net: &mut Network<T>,
    corpus: &[Sample],
    plan: &FoldPlan,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if fold >= plan.k {
        return Err(Error::InvalidArgument(format!("fold {fold} out of range for k = {}", plan.k)));
    }
    let val_ids = plan.validation(fold);
    let (val, tr): (Vec<Sample>, Vec<Sample>) = corpus.iter().cloned().partition(|s| val_ids.contains(s.subject.as_str()));
    if tr.iter().any(|s| !plan.assignments.contains_key(&s.subject)) {
        return Err(Error::InvalidArgument("corpus contains subjects missing from the fold plan".into()));
    }
    train(net, &tr, &val, cfg)
}
