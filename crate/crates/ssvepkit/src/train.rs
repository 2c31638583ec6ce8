//! Leave-one-subject-out training: splitting, batching, early stopping.
//!
//! Each subject takes one turn as the held-out test subject while the
//! network trains on everyone else; a stratified slice of the training
//! trials serves as the validation set for early stopping. All
//! randomness (validation carve-out, batch order, remix draws) flows
//! from a single seeded stream, so a rerun with the same seed produces
//! a bit-identical checkpoint and log.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentPolicy, Pairing};
use crate::diff::{adam_step, AdamState, Graph};
use crate::eval::{confusion, roc_auc, MetricsReport};
use crate::model::{argmax_row, forward, param_count, Mode, ModelConfig, NetworkParams};
use crate::signal::{DatasetManifest, EpochSet};
use crate::{Error, Result};

/// Optimization hyperparameters and ablation switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Validation loss must drop by at least this much to count as an
    /// improvement for early stopping.
    pub min_delta: f64,
    /// Decoupled weight decay per step, applied to weight matrices only
    /// (never biases, norm affines, the threshold, or spectral weights).
    /// Large by deep-learning convention because a run lasts only a few
    /// hundred optimizer steps.
    pub weight_decay: f64,
    pub seed: u64,
    /// Probability that a training sample has its channel statistics
    /// remixed with another trial of the same subject.
    pub p_remix: f64,
    /// Crop applied to every trial before it reaches the network.
    pub window_length_s: f64,
    pub onset_s: f64,
    pub use_asdm: bool,
    pub use_augment: bool,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 60,
            patience: 15,
            min_delta: 1e-3,
            weight_decay: 4.0,
            seed: 0,
            p_remix: 0.5,
            window_length_s: 0.7,
            onset_s: 0.0,
            use_asdm: true,
            use_augment: true,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::param(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::param("batch size must be >= 1".to_string()));
        }
        if self.patience < 1 {
            return Err(Error::param("patience must be >= 1".to_string()));
        }
        if self.max_epochs < 1 {
            return Err(Error::param("epoch budget must be >= 1".to_string()));
        }
        if self.min_delta < 0.0 || !self.min_delta.is_finite() {
            return Err(Error::param(format!("min_delta {} must be >= 0", self.min_delta)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::param(format!(
                "weight_decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.p_remix) {
            return Err(Error::param(format!("p_remix {} outside [0, 1]", self.p_remix)));
        }
        if !(self.window_length_s > 0.0) || self.onset_s < 0.0 {
            return Err(Error::param(format!(
                "bad window: onset {} s, length {} s",
                self.onset_s, self.window_length_s
            )));
        }
        Ok(())
    }
}

/// One cross-validation fold: everything from `test_subject` is held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoSplit {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
    /// Fraction of training trials carved out for validation,
    /// stratified by class.
    pub val_fraction: f64,
}

/// One fold per subject; together the test subjects partition the roster.
pub fn loso_splits(manifest: &DatasetManifest) -> Result<Vec<LosoSplit>> {
    let ids: Vec<String> = manifest.subjects.iter().map(|s| s.id.clone()).collect();
    if ids.len() < 2 {
        return Err(Error::param(format!(
            "cross-validation needs >= 2 subjects, manifest has {}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .map(|held| LosoSplit {
            test_subject: held.clone(),
            train_subjects: ids.iter().filter(|s| *s != held).cloned().collect(),
            val_fraction: 0.1,
        })
        .collect())
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Spectral threshold after the epoch (0 when the denoiser is off).
    pub theta: f64,
}

/// Result of [`fit`]: best-on-validation parameters plus the full log.
pub struct FitOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
    /// Epoch whose checkpoint was restored (lowest validation loss).
    pub best_epoch: usize,
    /// Number of samples actually remixed; 0 when augmentation is off.
    pub remix_count: usize,
}

/// Flattened training pool: one row per trial.
struct Pool {
    trials: Vec<Vec<f64>>,
    labels: Vec<usize>,
    subjects: Vec<u32>,
}

/// Splits `0..labels.len()` into train/validation index sets, taking
/// roughly `frac` of each class for validation (at least one trial per
/// class stays in training).
fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let mut take = ((idx.len() as f64) * frac).round() as usize;
        // Small-corpus floor: keep one validation trial per class as long
        // as at least one training trial remains.
        if take == 0 && idx.len() >= 2 && frac > 0.0 {
            take = 1;
        }
        if take >= idx.len() {
            take = idx.len().saturating_sub(1);
        }
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn gather(pool: &Pool, idx: &[usize]) -> Pool {
    Pool {
        trials: idx.iter().map(|&i| pool.trials[i].clone()).collect(),
        labels: idx.iter().map(|&i| pool.labels[i]).collect(),
        subjects: idx.iter().map(|&i| pool.subjects[i]).collect(),
    }
}

fn one_hot(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        y[i * n_classes + l] = 1.0;
    }
    y
}

/// Mean cross-entropy and accuracy of `params` on a pool, without
/// touching gradients.
fn eval_pool(pool: &Pool, params: &NetworkParams, cfg: &ModelConfig, batch: usize) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let n = pool.trials.len();
    let mut at = 0;
    while at < n {
        let end = (at + batch).min(n);
        let b = end - at;
        let mut x = Vec::with_capacity(b * cfg.n_channels * cfg.n_samples);
        for t in &pool.trials[at..end] {
            x.extend_from_slice(t);
        }
        let g = Graph::new();
        let xt = g.tensor(x, &[b, cfg.n_channels, cfg.n_samples]);
        let leaves = params.leaves(&g, cfg);
        let probs = forward(&xt, &leaves, cfg, Mode::Eval)?;
        let yt = g.tensor(one_hot(&pool.labels[at..end], cfg.n_classes), &[b, cfg.n_classes]);
        loss_sum += probs.cross_entropy(&yt)?.data()[0] * b as f64;
        let pd = probs.data();
        for (i, &l) in pool.labels[at..end].iter().enumerate() {
            if argmax_row(&pd[i * cfg.n_classes..(i + 1) * cfg.n_classes]) == l {
                correct += 1;
            }
        }
        at = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// Windows each subject's trials and flattens them into one pool.
/// Returns an error when the crop length disagrees with `cfg.n_samples`.
fn build_pool(sets: &[&EpochSet], cfg: &ModelConfig, tc: &TrainConfig) -> Result<Pool> {
    let mut pool = Pool {
        trials: Vec::new(),
        labels: Vec::new(),
        subjects: Vec::new(),
    };
    for (si, set) in sets.iter().enumerate() {
        let cropped = set.extract_window(tc.onset_s, tc.window_length_s)?;
        if cropped.n_samples != cfg.n_samples || cropped.n_channels != cfg.n_channels {
            return Err(Error::dim(format!(
                "window yields {}x{} trials but the model expects {}x{}",
                cropped.n_channels, cropped.n_samples, cfg.n_channels, cfg.n_samples
            )));
        }
        cropped.validate_labels(cfg.n_classes)?;
        for t in 0..cropped.n_trials {
            pool.trials.push(cropped.trial_f64(t));
            pool.labels.push(cropped.labels[t] as usize);
            pool.subjects.push(si as u32);
        }
    }
    Ok(pool)
}

/// Trains on every subject in `split.train_subjects`, early-stopping on
/// a stratified validation carve-out, and returns the lowest-validation-
/// loss checkpoint. `sets` may include the held-out subject; its trials
/// are filtered out here and never reach the batch stream.
pub fn fit(
    split: &LosoSplit,
    sets: &[EpochSet],
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<FitOutcome> {
    tc.validate()?;
    let mut cfg = cfg.clone();
    cfg.use_asdm = tc.use_asdm;
    cfg.use_augment = tc.use_augment;
    cfg.validate()?;
    let train_sets: Vec<&EpochSet> = split
        .train_subjects
        .iter()
        .map(|id| {
            sets.iter()
                .find(|s| &s.subject_id == id)
                .ok_or_else(|| Error::param(format!("subject {id} missing from data")))
        })
        .collect::<Result<_>>()?;
    if train_sets.iter().any(|s| s.subject_id == split.test_subject) {
        return Err(Error::param(format!(
            "held-out subject {} listed as a training subject",
            split.test_subject
        )));
    }
    let pool = build_pool(&train_sets, &cfg, tc)?;
    if pool.trials.is_empty() {
        return Err(Error::param("no training trials after windowing".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let (train_idx, val_idx) = stratified_split(&pool.labels, cfg.n_classes, split.val_fraction, &mut rng);
    debug_assert!(train_idx.iter().all(|i| !val_idx.contains(i)));
    let train = gather(&pool, &train_idx);
    let val = gather(&pool, &val_idx);
    if val.trials.is_empty() {
        return Err(Error::param("validation carve-out is empty; need more trials".to_string()));
    }

    let mut params = NetworkParams::init(&cfg, &mut rng)?;
    let decay_mask = params.decay_mask(cfg.use_asdm);
    let mut adam = AdamState::new(tc.lr);
    adam.beta1 = tc.beta1;
    adam.beta2 = tc.beta2;
    let policy = AugmentPolicy {
        p_remix: tc.p_remix,
        pairing: Pairing::SameSubject,
        seed: tc.seed,
    };

    let mut log = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut stale = 0usize;
    let mut remix_count = 0usize;
    let n = train.trials.len();

    for epoch in 0..tc.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut at = 0;
        while at < n {
            let end = (at + tc.batch_size).min(n);
            let idx = &order[at..end];
            let b = idx.len();
            let mut trials: Vec<Vec<f64>> = idx.iter().map(|&i| train.trials[i].clone()).collect();
            let subjects: Vec<u32> = idx.iter().map(|&i| train.subjects[i]).collect();
            if cfg.use_augment {
                let before = trials.clone();
                augment_batch(&mut trials, &subjects, cfg.n_channels, &policy, &mut rng)?;
                remix_count += trials.iter().zip(&before).filter(|(a, b)| a != b).count();
            }
            let mut x = Vec::with_capacity(b * cfg.n_channels * cfg.n_samples);
            for t in &trials {
                x.extend_from_slice(t);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

            let g = Graph::new();
            let xt = g.tensor(x, &[b, cfg.n_channels, cfg.n_samples]);
            let leaves = params.leaves(&g, &cfg);
            let probs = forward(&xt, &leaves, &cfg, Mode::Train)?;
            let yt = g.tensor(one_hot(&labels, cfg.n_classes), &[b, cfg.n_classes]);
            let loss = probs.cross_entropy(&yt)?;
            let loss_v = loss.data()[0];
            if !loss_v.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged: loss {loss_v} at epoch {epoch}"
                )));
            }
            loss.backward()?;
            let grads = leaves.grads(cfg.use_asdm);
            let grad_views: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
            let mut views = params.views_mut(cfg.use_asdm);
            adam_step(&mut views, &grad_views, &mut adam)?;
            if tc.weight_decay > 0.0 {
                let shrink = 1.0 - tc.lr * tc.weight_decay;
                for (view, decay) in views.iter_mut().zip(decay_mask.iter()) {
                    if *decay {
                        view.iter_mut().for_each(|p| *p *= shrink);
                    }
                }
            }
            loss_sum += loss_v * b as f64;
            at = end;
        }

        let (val_loss, val_acc) = eval_pool(&val, &params, &cfg, tc.batch_size)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss,
            val_acc,
            theta: if cfg.use_asdm { params.asdm.theta } else { 0.0 },
        });
        // The restored checkpoint is the strict minimum; min_delta only
        // gates the patience counter so marginal improvements still stop.
        if val_loss < best_loss {
            best_epoch = epoch;
            best_params = params.clone();
        }
        if val_loss < best_loss - tc.min_delta {
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
        best_loss = best_loss.min(val_loss);
    }

    Ok(FitOutcome {
        params: best_params,
        log,
        best_epoch,
        remix_count,
    })
}

/// Windows the held-out subject's trials and scores `params` on them.
pub fn evaluate(
    params: &NetworkParams,
    cfg: &ModelConfig,
    test: &EpochSet,
    tc: &TrainConfig,
) -> Result<MetricsReport> {
    if test.n_trials == 0 {
        return Err(Error::param("empty test set".to_string()));
    }
    let pool = build_pool(&[test], cfg, tc)?;
    let n = pool.trials.len();
    let mut preds = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * cfg.n_classes);
    let mut at = 0;
    while at < n {
        let end = (at + tc.batch_size).min(n);
        let b = end - at;
        let mut x = Vec::with_capacity(b * cfg.n_channels * cfg.n_samples);
        for t in &pool.trials[at..end] {
            x.extend_from_slice(t);
        }
        let g = Graph::new();
        let xt = g.tensor(x, &[b, cfg.n_channels, cfg.n_samples]);
        let leaves = params.leaves(&g, cfg);
        let probs = forward(&xt, &leaves, cfg, Mode::Eval)?;
        let pd = probs.data();
        for i in 0..b {
            preds.push(argmax_row(&pd[i * cfg.n_classes..(i + 1) * cfg.n_classes]));
        }
        scores.extend_from_slice(&pd);
        at = end;
    }
    let cm = confusion(&pool.labels, &preds, cfg.n_classes)?;
    let roc = roc_auc(&scores, cfg.n_classes, &pool.labels).ok();
    let acc = cm.accuracy();
    Ok(MetricsReport::from_subject_accuracies(
        vec![(test.subject_id.clone(), acc)],
        cm,
        roc,
        param_count(cfg),
    ))
}
