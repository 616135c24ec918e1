//! Detector training with the focal loss, Adam and early stopping on
//! validation mIoU.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, OptimizerConfig};
use tch::{Kind, Tensor};

use crate::checkpoint::digest;
use crate::error::{Error, Result};
use crate::image::{common_size, images_to_tensor, Image};
use crate::maskgen::{masks_to_tensor, BinaryMask};
use crate::metrics::{binarize, iou, EvalResult, DEFAULT_THRESHOLD};
use crate::nixnet::{NixNet, NixNetConfig, ProbabilityMap};
use crate::params::{derive_seed, restore, snapshot};
use crate::simulate::UniversalSample;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

#[inline]
fn focal_term(p: f64, t: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    -t * (1.0 - p).powf(gamma) * p.ln() - (1.0 - t) * p.powf(gamma) * (1.0 - p).ln()
}

/// Mean over pixels of
/// `−M (1 − M̂)^γ log M̂ − (1 − M) M̂^γ log(1 − M̂)` with `M` the target
/// (`1` = inpainted) and `M̂` the predicted probability.
pub fn focal_loss(p: &ProbabilityMap, target: &BinaryMask, gamma: f64) -> Result<f64> {
    if p.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "probability map {:?} vs target {:?}",
            p.dims(),
            target.dims()
        )));
    }
    let n = p.data().len().max(1) as f64;
    Ok(p.data()
        .iter()
        .zip(target.data())
        .map(|(&pv, &tv)| focal_term(pv as f64, tv as f64, gamma))
        .sum::<f64>()
        / n)
}

/// Differentiable focal loss over tensors of matching shape, averaged over
/// every element (pixels and batch).
pub fn focal_loss_tensor(p: &Tensor, target: &Tensor, gamma: f64) -> Tensor {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    let q: Tensor = p.ones_like() - &p;
    let pos = target * q.pow_tensor_scalar(gamma) * p.log();
    let neg = (target.ones_like() - target) * p.pow_tensor_scalar(gamma) * q.log();
    -(pos + neg).mean(p.kind())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Focusing parameter of the focal loss.
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Stop as soon as validation mIoU reaches this value.
    pub target_val_miou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            gamma: 2.0,
            batch_size: 8,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            target_val_miou: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParams(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParams("gamma must be non-negative".into()));
        }
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::InvalidParams(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

/// Tracks the best validation score and when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record the score of `epoch`. Returns `true` if it is a new best
    /// (strictly greater than every earlier score).
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub stop_reason: StopReason,
    /// SHA-256 of the returned model's checkpoint bytes.
    pub checkpoint_digest: String,
    pub seed: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_miou,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{:.3}",
                e.epoch, e.train_loss, e.val_miou, e.seconds
            );
        }
        s
    }
}

/// Score a model on samples: binarize at 0.5, per-image IoU, mean.
pub fn evaluate(
    net: &NixNet,
    samples: &[UniversalSample],
    batch_size: usize,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let images: Vec<Image> = samples.iter().map(|s| s.x.clone()).collect();
    let probs = net.predict(&images, batch_size)?;
    let ious = probs
        .iter()
        .zip(samples)
        .map(|(p, s)| iou(&binarize(p, DEFAULT_THRESHOLD), &s.m))
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_ious(ious)
}

fn check_samples(samples: &[UniversalSample]) -> Result<(usize, usize)> {
    let images: Vec<Image> = samples.iter().map(|s| s.x.clone()).collect();
    let size = common_size(&images)?;
    if let Some(s) = samples.iter().find(|s| s.m.dims() != size) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} for image {:?}",
            s.m.dims(),
            size
        )));
    }
    Ok(size)
}

pub fn train_detector(
    train_set: &[UniversalSample],
    val_set: &[UniversalSample],
    cfg: &TrainConfig,
    net_cfg: &NixNetConfig,
) -> Result<(NixNet, TrainReport)> {
    train_detector_with(train_set, val_set, cfg, net_cfg, |_| {})
}

/// [`train_detector`] with a callback after every epoch.
pub fn train_detector_with(
    train_set: &[UniversalSample],
    val_set: &[UniversalSample],
    cfg: &TrainConfig,
    net_cfg: &NixNetConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NixNet, TrainReport)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let (h, w) = check_samples(train_set)?;
    let val_size = check_samples(val_set)?;
    if val_size != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "training images are {h}x{w}, validation images {}x{}",
            val_size.0, val_size.1
        )));
    }
    let net_cfg = net_cfg.clone().with_input_size(h, w);
    let net = NixNet::new(&net_cfg, derive_seed(cfg.seed, "detector"))?;
    let mut opt = nn::Adam::default().build(net.var_store(), cfg.learning_rate)?;

    let images: Vec<Image> = train_set.iter().map(|s| s.x.clone()).collect();
    let masks: Vec<BinaryMask> = train_set.iter().map(|s| s.m.clone()).collect();
    let xs_all = images_to_tensor(&images);
    let ys_all = masks_to_tensor(&masks);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<i64> = (0..train_set.len() as i64).collect();

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = snapshot(net.var_store());
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut step = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let idx = Tensor::from_slice(chunk);
            let xs = xs_all.index_select(0, &idx);
            let ys = ys_all.index_select(0, &idx);
            let probs = net.forward_t(&xs, true)?;
            let loss = focal_loss_tensor(&probs, &ys, cfg.gamma);
            let lv = loss.to_kind(Kind::Double).double_value(&[]);
            if !lv.is_finite() {
                return Err(Error::DivergenceDetected {
                    step,
                    what: "focal loss".into(),
                });
            }
            opt.backward_step(&loss);
            loss_sum += lv;
            batches += 1;
            step += 1;
        }
        let val_miou = evaluate(&net, val_set, cfg.batch_size)?.miou;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_miou,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val mIoU {:.4} ({:.1}s)",
            record.train_loss,
            val_miou,
            record.seconds
        );
        on_epoch(&record);
        epochs.push(record);
        if stopper.observe(epoch, val_miou) {
            best_params = snapshot(net.var_store());
        }
        if cfg.target_val_miou.is_some_and(|t| val_miou >= t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    restore(net.var_store(), &best_params);
    let (best_epoch, best_val_miou) = stopper.best().expect("at least one epoch ran");
    let checkpoint_digest = digest(&net.to_checkpoint().to_bytes()?);
    Ok((
        net,
        TrainReport {
            epochs,
            best_epoch,
            best_val_miou,
            stop_reason,
            checkpoint_digest,
            seed: cfg.seed,
        },
    ))
}
