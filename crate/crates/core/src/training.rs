//! Optimizers, learning-rate schedule, dataset splitting and the fitting
//! loops for both networks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::depth::{preprocess, PreprocessConfig};
use crate::depth::DepthFrame;
use crate::maskgen::{build_targets, Annotation, MapKind, MapStack, MaskError, TargetConfig};
use crate::metrics::{binarize_slice, ConfusionCounts, DEFAULT_THRESHOLD};
use crate::nets::loss::{bce_with_grad, mse_with_grad};
use crate::nets::{
    detect_forward, layers::Param, regression_input, DetectionArch, DetectionNet, NetError, Network, RegressionNet, Scalar,
    Tensor,
};
use crate::skeleton::{NUM_CHANNELS, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training frames")]
    EmptyDataset,
    #[error("need at least {needed} frames to split, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (frames {frames:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        frames: Vec<String>,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    /// Decay smoothly (`decay^(e / decay_every)`) instead of in steps.
    pub continuous_decay: bool,
    /// SGD momentum of the regression optimizer.
    pub momentum: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub targets: TargetConfig,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Feed ground-truth masks instead of detection outputs to the
    /// regression network.
    pub teacher_forcing: bool,
    /// Initial detection output probability; sets the head bias to its logit.
    pub output_prior: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            decay: 0.9,
            decay_every: 10,
            continuous_decay: false,
            momentum: 0.98,
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 100,
            validation_fraction: 0.3,
            targets: TargetConfig::default(),
            width: 128,
            height: 96,
            seed: 0,
            teacher_forcing: false,
            output_prior: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0) || self.decay_every == 0 {
            return bad("learning rate, decay and decay interval must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} not in (0, 1)", self.validation_fraction));
        }
        if self.width == 0
            || self.height == 0
            || self.width % DetectionArch::DIVISOR != 0
            || self.height % DetectionArch::DIVISOR != 0
        {
            return bad(format!(
                "resolution {}x{} not divisible by {}",
                self.width,
                self.height,
                DetectionArch::DIVISOR
            ));
        }
        if let Some(p) = self.output_prior {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("output prior {p} not in (0, 1)"));
            }
        }
        if !(self.targets.radius > 0.0) {
            return bad("target radius must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = if cfg.continuous_decay {
        epoch as f64 / cfg.decay_every as f64
    } else {
        (epoch / cfg.decay_every) as f64
    };
    cfg.learning_rate * cfg.decay.powf(steps)
}

pub trait Optimizer<T: Scalar> {
    fn step<N: Network<T>>(&mut self, net: &mut N, lr: f64);
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam {
    fn step<N: Network<T>>(&mut self, net: &mut N, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut k = 0;
        net.visit_params(&mut |_, p: &mut Param<T>| {
            if !p.trainable {
                return;
            }
            if ms.len() <= k {
                ms.push(vec![0.0; p.value.len()]);
                vs.push(vec![0.0; p.value.len()]);
            }
            let (m, v) = (&mut ms[k], &mut vs[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p.value[i] = <T as Scalar>::of(Scalar::f64(p.value[i]) - update);
            }
            k += 1;
        });
    }
}

/// SGD with momentum: `v <- mu * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for SgdMomentum {
    fn step<N: Network<T>>(&mut self, net: &mut N, lr: f64) {
        let mu = self.momentum;
        let vs = &mut self.velocity;
        let mut k = 0;
        net.visit_params(&mut |_, p: &mut Param<T>| {
            if !p.trainable {
                return;
            }
            if vs.len() <= k {
                vs.push(vec![0.0; p.value.len()]);
            }
            let v = &mut vs[k];
            for i in 0..p.value.len() {
                v[i] = mu * v[i] + p.grad[i].f64();
                p.value[i] = <T as Scalar>::of(Scalar::f64(p.value[i]) - lr * v[i]);
            }
            k += 1;
        });
    }
}

/// Identifies a frame by video and chronological position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameKey {
    pub video: String,
    pub index: usize,
}

/// Indices into the frame list given to [`split_dataset`], each list in
/// video then chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_SPLIT_FRAMES: usize = 10;

/// Per video, the chronological first half is for training and the second
/// half for testing; a seeded `validation_fraction` of each video's
/// training half is held out for validation.
pub fn split_dataset(frames: &[FrameKey], validation_fraction: f64, seed: u64) -> Result<DatasetSplit, TrainError> {
    if frames.len() < MIN_SPLIT_FRAMES {
        return Err(TrainError::TooFewFrames {
            needed: MIN_SPLIT_FRAMES,
            got: frames.len(),
        });
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(TrainError::Config(format!(
            "validation fraction {validation_fraction} not in (0, 1)"
        )));
    }
    let mut videos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        videos.entry(f.video.as_str()).or_default().push(i);
    }
    let mut split = DatasetSplit::default();
    for (v, (_, mut idx)) in videos.into_iter().enumerate() {
        idx.sort_by_key(|&i| (frames[i].index, i));
        let half = idx.len() / 2;
        let (train_half, test_half) = idx.split_at(half);
        let n_val = (train_half.len() as f64 * validation_fraction).round() as usize;
        let mut order: Vec<usize> = (0..train_half.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(v as u64);
        order.shuffle(&mut rng);
        let mut is_val = vec![false; train_half.len()];
        for &o in &order[..n_val] {
            is_val[o] = true;
        }
        for (k, &i) in train_half.iter().enumerate() {
            if is_val[k] {
                split.validation.push(i);
            } else {
                split.train.push(i);
            }
        }
        split.test.extend_from_slice(test_half);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionExample {
    pub frame_id: String,
    pub input: DepthFrame,
    pub target: MapStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExample {
    pub frame_id: String,
    pub input: DepthFrame,
    pub detection: MapStack,
    pub target: MapStack,
}

/// Binary detection targets for annotated frames.
pub fn detection_examples(
    frames: &[(DepthFrame, Annotation)],
    targets: &TargetConfig,
) -> Result<Vec<DetectionExample>, TrainError> {
    frames
        .par_iter()
        .map(|(f, a)| {
            Ok(DetectionExample {
                frame_id: a.frame_id.clone(),
                target: build_targets(a, targets, MapKind::Binary, f.height(), f.width())?,
                input: f.clone(),
            })
        })
        .collect()
}

/// Regression examples whose detection maps come from a frozen detection
/// network, or from ground-truth masks when `teacher_forcing` is set.
pub fn regression_examples(
    det: &DetectionNet<f32>,
    frames: &[(DepthFrame, Annotation)],
    targets: &TargetConfig,
    teacher_forcing: bool,
) -> Result<Vec<RegressionExample>, TrainError> {
    frames
        .par_iter()
        .map(|(f, a)| {
            let detection = if teacher_forcing {
                build_targets(a, targets, MapKind::Binary, f.height(), f.width())?
            } else {
                detect_forward(det, f)?
            };
            Ok(RegressionExample {
                frame_id: a.frame_id.clone(),
                target: build_targets(a, targets, MapKind::Gaussian, f.height(), f.width())?,
                detection,
                input: f.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean joint DSC for detection, validation MSE for regression.
    pub val_metric: f64,
    pub best: bool,
}

/// Frame ids that influenced training, split by use.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessAudit {
    pub gradient: BTreeSet<String>,
    pub selection: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub audit: AccessAudit,
}

impl TrainHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

fn batch_tensor<'a>(frames: impl Iterator<Item = &'a DepthFrame>, n: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(n * h * w);
    for f in frames {
        data.extend_from_slice(f.depth.as_slice());
    }
    Tensor::from_vec(n, 1, h, w, data)
}

fn stack_tensor<'a>(stacks: impl Iterator<Item = &'a MapStack>, n: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(n * NUM_CHANNELS * h * w);
    for s in stacks {
        data.extend_from_slice(s.as_slice());
    }
    Tensor::from_vec(n, NUM_CHANNELS, h, w, data)
}

fn check_shapes(frame: &DepthFrame, stacks: &[&MapStack], cfg: &TrainConfig) -> Result<(), TrainError> {
    let expected = vec![cfg.height, cfg.width];
    for got in std::iter::once((frame.height(), frame.width())).chain(stacks.iter().map(|s| (s.height(), s.width()))) {
        if got != (cfg.height, cfg.width) {
            return Err(NetError::Shape {
                what: "training frame",
                expected: expected.clone(),
                got: vec![got.0, got.1],
            }
            .into());
        }
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order
}

/// Mean DSC over the joint channels of one frame at threshold 0.5.
pub fn mean_joint_dsc(pred: &MapStack, target: &MapStack) -> f64 {
    let (h, w) = (pred.height(), pred.width());
    let total: f64 = (0..NUM_JOINTS)
        .map(|c| {
            let p = binarize_slice(pred.channel(c), h, w, DEFAULT_THRESHOLD);
            let t = binarize_slice(target.channel(c), h, w, DEFAULT_THRESHOLD);
            ConfusionCounts::from_masks(&p, &t).expect("same shape").dsc()
        })
        .sum();
    total / NUM_JOINTS as f64
}

/// Validation loss and mean joint DSC of a detection network.
pub fn evaluate_detection(net: &DetectionNet<f32>, data: &[DetectionExample]) -> Result<(f64, f64), TrainError> {
    let per_frame: Vec<(f64, f64)> = data
        .par_iter()
        .map(|ex| {
            let pred = detect_forward(net, &ex.input)?;
            let loss = crate::nets::detection_loss(&pred, &ex.target)?;
            Ok((loss, mean_joint_dsc(&pred, &ex.target)))
        })
        .collect::<Result<_, NetError>>()?;
    let n = per_frame.len().max(1) as f64;
    Ok((
        per_frame.iter().map(|v| v.0).sum::<f64>() / n,
        per_frame.iter().map(|v| v.1).sum::<f64>() / n,
    ))
}

/// Validation MSE of a regression network.
pub fn evaluate_regression(net: &RegressionNet<f32>, data: &[RegressionExample]) -> Result<f64, TrainError> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|ex| {
            let pred = crate::nets::regress_forward(net, &ex.input, &ex.detection)?;
            crate::nets::regression_loss(&pred, &ex.target)
        })
        .collect::<Result<_, NetError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Called after every epoch with the record just appended.
pub type EpochCallback<'a> = dyn FnMut(&EpochRecord) + 'a;

/// Trains with Adam and keeps the parameters of the epoch with the highest
/// validation mean joint DSC.
pub fn fit_detection(
    net: &mut DetectionNet<f32>,
    train: &[DetectionExample],
    validation: &[DetectionExample],
    cfg: &TrainConfig,
    on_epoch: Option<&mut EpochCallback<'_>>,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for ex in train.iter().chain(validation) {
        check_shapes(&ex.input, &[&ex.target], cfg)?;
    }
    let mut opt = Adam::new(cfg.adam.clone());
    let step = |net: &mut DetectionNet<f32>, batch: &[&DetectionExample]| -> Result<f64, TrainError> {
        let n = batch.len();
        let x = batch_tensor(batch.iter().map(|e| &e.input), n, cfg.height, cfg.width);
        let t = stack_tensor(batch.iter().map(|e| &e.target), n, cfg.height, cfg.width);
        let y = net.forward(&x)?;
        let (loss, grad) = bce_with_grad(&y, &t)?;
        if loss.is_finite() {
            net.zero_grad();
            net.backward(&grad);
        }
        Ok(loss)
    };
    let eval = |net: &DetectionNet<f32>| -> Result<(f64, f64), TrainError> {
        if validation.is_empty() {
            Ok((f64::NAN, f64::NAN))
        } else {
            evaluate_detection(net, validation)
        }
    };
    run_epochs(net, train, validation, cfg, &mut opt, step, eval, true, |e| &e.frame_id, on_epoch)
}

/// Trains with momentum SGD and keeps the parameters of the epoch with the
/// lowest validation MSE.
pub fn fit_regression(
    net: &mut RegressionNet<f32>,
    train: &[RegressionExample],
    validation: &[RegressionExample],
    cfg: &TrainConfig,
    on_epoch: Option<&mut EpochCallback<'_>>,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for ex in train.iter().chain(validation) {
        check_shapes(&ex.input, &[&ex.detection, &ex.target], cfg)?;
    }
    let mut opt = SgdMomentum::new(cfg.momentum);
    let step = |net: &mut RegressionNet<f32>, batch: &[&RegressionExample]| -> Result<f64, TrainError> {
        let n = batch.len();
        let mut data = Vec::with_capacity(n * (1 + NUM_CHANNELS) * cfg.height * cfg.width);
        for e in batch {
            data.extend_from_slice(&regression_input::<f32>(&e.input, &e.detection)?.data);
        }
        let x = Tensor::from_vec(n, 1 + NUM_CHANNELS, cfg.height, cfg.width, data);
        let t = stack_tensor(batch.iter().map(|e| &e.target), n, cfg.height, cfg.width);
        let y = net.forward(&x)?;
        let (loss, grad) = mse_with_grad(&y, &t)?;
        if loss.is_finite() {
            net.zero_grad();
            net.backward(&grad);
        }
        Ok(loss)
    };
    let eval = |net: &RegressionNet<f32>| -> Result<(f64, f64), TrainError> {
        if validation.is_empty() {
            Ok((f64::NAN, f64::NAN))
        } else {
            let mse = evaluate_regression(net, validation)?;
            Ok((mse, mse))
        }
    };
    run_epochs(net, train, validation, cfg, &mut opt, step, eval, false, |e| &e.frame_id, on_epoch)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs<N, E, O>(
    net: &mut N,
    train: &[E],
    validation: &[E],
    cfg: &TrainConfig,
    opt: &mut O,
    mut step: impl FnMut(&mut N, &[&E]) -> Result<f64, TrainError>,
    eval: impl Fn(&N) -> Result<(f64, f64), TrainError>,
    maximize: bool,
    id: impl Fn(&E) -> &String,
    mut on_epoch: Option<&mut EpochCallback<'_>>,
) -> Result<TrainHistory, TrainError>
where
    N: Network<f32>,
    O: Optimizer<f32>,
{
    let mut audit = AccessAudit {
        selection: validation.iter().map(|e| id(e).clone()).collect(),
        ..AccessAudit::default()
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<(String, Vec<f32>)>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&E> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = step(net, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    loss,
                    frames: batch.iter().map(|e| id(e).clone()).collect(),
                });
            }
            audit.gradient.extend(batch.iter().map(|e| id(e).clone()));
            opt.step(net, lr);
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = sum / count as f64;
        let (val_loss, val_metric) = eval(net)?;
        let improved = match &best {
            None => true,
            Some(_) if validation.is_empty() => true,
            Some((_, m, _)) => {
                if maximize {
                    val_metric > *m
                } else {
                    val_metric < *m
                }
            }
        };
        if improved {
            best = Some((epoch, val_metric, net.snapshot()));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_metric,
            best: improved,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.6} train loss {train_loss:.6} val loss {val_loss:.6} val metric {val_metric:.4}{}",
            if improved { " *" } else { "" }
        );
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&record);
        }
        records.push(record);
    }
    let (best_epoch, best_metric, snap) = best.expect("at least one epoch");
    net.restore(&snap);
    Ok(TrainHistory {
        records,
        best_epoch,
        best_metric,
        audit,
    })
}
