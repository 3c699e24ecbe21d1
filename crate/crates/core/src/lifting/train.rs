use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{DropoutMasks, LiftingNetwork, Mode, DEFAULT_BN_MOMENTUM, DEFAULT_DROPOUT};
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::metrics::mpjpe;
use crate::skeleton::{Frame, Pose25D, Pose3D};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    /// 1-based epoch from which the learning rate is multiplied by
    /// `lr_decay_factor`; `None` keeps it constant.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    /// Additional per-epoch multiplicative decay; 1 disables it.
    pub lr_epoch_gamma: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            dropout_rate: DEFAULT_DROPOUT,
            lr_decay_epoch: Some(17),
            lr_decay_factor: 0.1,
            lr_epoch_gamma: 1.0,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::Input(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Input("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Input(format!("dropout must be in [0, 1), got {}", self.dropout_rate)));
        }
        if !(self.lr_decay_factor > 0.0) || !(self.lr_epoch_gamma > 0.0 && self.lr_epoch_gamma <= 1.0) {
            return Err(Error::Input("lr decay factors must be positive (per-epoch gamma at most 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Input("batch-norm momentum must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.learning_rate * self.lr_epoch_gamma.powi(epoch as i32 - 1);
        match self.lr_decay_epoch {
            Some(e) if epoch >= e => base * self.lr_decay_factor,
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_mpjpe: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,train_mpjpe\n");
    for r in history {
        let _ = writeln!(out, "{},{:e},{:.9},{:.9}", r.epoch, r.lr, r.train_loss, r.train_mpjpe);
    }
    out
}

/// True when the means of consecutive non-overlapping windows never increase.
pub fn windowed_non_increasing(values: &[f64], window: usize) -> bool {
    let means: Vec<f64> = values
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    means.windows(2).all(|w| w[1] <= w[0])
}

/// Training pairs flattened into row-major matrices: raw `(u, v, z)` inputs
/// and root-relative 3D targets in mm.
#[derive(Debug, Clone)]
pub struct LiftingData {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n_joints: usize,
    pub len: usize,
    pub root: usize,
}

impl LiftingData {
    pub fn new(pairs: &[(Pose25D, Pose3D)], root: usize) -> Result<Self> {
        let n_joints = pairs.first().ok_or_else(|| Error::Input("empty dataset".into()))?.0.num_joints();
        let mut inputs = Vec::with_capacity(pairs.len() * 3 * n_joints);
        let mut targets = Vec::with_capacity(pairs.len() * 3 * n_joints);
        for (x, y) in pairs {
            if x.num_joints() != n_joints || y.num_joints() != n_joints {
                return Err(Error::dim(n_joints, format!("{} / {}", x.num_joints(), y.num_joints())));
            }
            inputs.extend(x.flatten());
            targets.extend(y.root_relative(root).flatten());
        }
        Ok(LiftingData { inputs, targets, n_joints, len: pairs.len(), root })
    }

    fn rows(&self, data: &[f64], idx: &[usize]) -> Vec<f64> {
        let d = 3 * self.n_joints;
        idx.iter().flat_map(|&i| data[i * d..(i + 1) * d].iter().copied()).collect()
    }
}

/// Eval-mode predictions for every input row, processed in chunks.
pub fn predict_all(net: &LiftingNetwork, inputs: &[f64]) -> Result<Vec<f64>> {
    let d = net.arch.io_dim();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(256 * d) {
        out.extend(net.predict(chunk, chunk.len() / d)?);
    }
    Ok(out)
}

/// Mean root-aligned MPJPE of eval-mode predictions over a dataset, mm.
pub fn dataset_mpjpe(net: &LiftingNetwork, data: &LiftingData) -> Result<f64> {
    let pred = predict_all(net, &data.inputs)?;
    let d = 3 * data.n_joints;
    let mut total = 0.0;
    for (p, g) in pred.chunks_exact(d).zip(data.targets.chunks_exact(d)) {
        let pp = Pose3D::from_flat(p, Frame::RootRelative)?;
        let gp = Pose3D::from_flat(g, Frame::RootRelative)?;
        total += mpjpe(&pp, &gp, data.root)?;
    }
    Ok(total / data.len as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam training with a single step decay of the learning rate.
///
/// Shuffling and dropout draw from separate streams derived from
/// `cfg.seed`, so a rerun with the same inputs reproduces the same history.
/// A trailing batch of one sample is merged into the previous batch.
pub fn train(net: &mut LiftingNetwork, data: &LiftingData, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.len < 2 {
        return Err(Error::Input("need at least 2 training samples".into()));
    }
    if data.n_joints != net.arch.n_joints {
        return Err(Error::dim(net.arch.n_joints, data.n_joints));
    }
    net.dropout_rate = cfg.dropout_rate;
    net.bn_momentum = cfg.bn_momentum;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let mut adam = Adam::new(net.num_params());
    let mut order: Vec<usize> = (0..data.len).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if batches.len() > 1 && batches.last().unwrap().len() == 1 {
            batches.pop();
            let n = batches.len();
            let start = (n - 1) * cfg.batch_size;
            batches[n - 1] = &order[start..];
        }
        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let x = data.rows(&data.inputs, idx);
            let y = data.rows(&data.targets, idx);
            let masks = (cfg.dropout_rate > 0.0)
                .then(|| DropoutMasks::sample(&mut dropout_rng, &net.arch, idx.len(), cfg.dropout_rate));
            let (loss, grads) = net.backward(&x, &y, idx.len(), masks.as_ref())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.step(&mut net.params, &grads, lr);
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / data.len as f64;
        net.set_mode(Mode::Eval);
        let train_mpjpe = dataset_mpjpe(net, data)?;
        if !train_mpjpe.is_finite() {
            return Err(Error::Divergence { epoch, loss: train_mpjpe });
        }
        history.push(EpochRecord { epoch, lr, train_loss, train_mpjpe });
    }
    Ok(history)
}
