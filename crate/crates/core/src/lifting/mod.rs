//! Residual fully connected lifter from 2.5D to root-relative 3D poses.

pub mod checkpoint;
mod network;
mod train;

pub use network::{
    mean_pose_loss, Architecture, DropoutMasks, InputNorm, LiftingNetwork, Mode, BN_EPS, DEFAULT_BLOCKS,
    DEFAULT_BN_MOMENTUM, DEFAULT_DROPOUT, DEFAULT_WIDTH,
};
pub use train::{
    dataset_mpjpe, history_csv, predict_all, train, windowed_non_increasing, EpochRecord, LiftingData, TrainConfig,
};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, Pose3D};

/// Standard-width network for `n_joints` with the given input normalization.
pub fn init_network(n_joints: usize, norm: InputNorm, seed: u64) -> Result<LiftingNetwork> {
    if n_joints == 0 {
        return Err(Error::Input("n_joints must be >= 1".into()));
    }
    LiftingNetwork::init(Architecture::standard(n_joints), norm, seed)
}

/// `(1/N) sum_n |gt_n - pred_n|_1` and its gradient w.r.t. `pred`.
pub fn loss_pose(pred: &Pose3D, gt: &Pose3D) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.num_joints() != gt.num_joints() {
        return Err(Error::dim(gt.num_joints(), pred.num_joints()));
    }
    let (loss, g) = mean_pose_loss(&pred.flatten(), &gt.flatten(), pred.num_joints(), 1)?;
    Ok((loss, g.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

/// Eval-mode prediction for one flattened 2.5D input.
pub fn forward_pose(net: &LiftingNetwork, x: &[f64]) -> Result<Pose3D> {
    Pose3D::from_flat(&net.predict(x, 1)?, Frame::RootRelative)
}
