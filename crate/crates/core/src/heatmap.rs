//! Ground-truth joint and bone heatmaps and the squared-error heatmap loss.
//!
//! Maps are unnormalized Gaussians with peak value 1. Pixel `(x, y)` is the
//! point with those integer coordinates; grids are stored row-major per map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Skeleton};

/// `K` stacked `height x width` maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStack {
    pub data: Vec<f64>,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
}

impl HeatmapStack {
    pub fn zeros(count: usize, width: usize, height: usize, sigma: f64) -> Self {
        HeatmapStack {
            data: vec![0.0; count * width * height],
            count,
            width,
            height,
            sigma,
        }
    }

    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, x: usize, y: usize) -> f64 {
        self.data[(k * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.count, self.height, self.width]
    }
}

#[inline]
pub(crate) fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Closest point of the closed segment `a..b` to `p`.
#[inline]
fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return a;
    }
    let t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2;
    if t <= 0.0 {
        a
    } else if t >= 1.0 {
        b
    } else {
        [a[0] + t * ab[0], a[1] + t * ab[1]]
    }
}

fn check_grid(w: usize, h: usize, sigma: f64) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::Input(format!("grid must be at least 1x1, got {w}x{h}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn check_pose(pose: &Pose2D) -> Result<()> {
    if pose.visibility.len() != pose.coords.len() {
        return Err(Error::dim(pose.coords.len(), pose.visibility.len()));
    }
    if pose.coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite joint coordinate".into()));
    }
    Ok(())
}

/// Writes one Gaussian of `center` into `out` (row-major `w x h`).
pub(crate) fn render_point(out: &mut [f64], w: usize, center: [f64; 2], sigma: f64) {
    for (y, row) in out.chunks_exact_mut(w).enumerate() {
        let dy = y as f64 - center[1];
        for (x, v) in row.iter_mut().enumerate() {
            let dx = x as f64 - center[0];
            *v = gaussian(dx * dx + dy * dy, sigma);
        }
    }
}

fn render_segment(out: &mut [f64], w: usize, a: [f64; 2], b: [f64; 2], sigma: f64) {
    for (y, row) in out.chunks_exact_mut(w).enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let p = [x as f64, y as f64];
            let c = closest_on_segment(p, a, b);
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            *v = gaussian(dx * dx + dy * dy, sigma);
        }
    }
}

/// One Gaussian per joint; invisible joints give an all-zero map.
pub fn render_joint_heatmaps(pose: &Pose2D, w: usize, h: usize, sigma: f64) -> Result<HeatmapStack> {
    check_grid(w, h, sigma)?;
    check_pose(pose)?;
    let mut stack = HeatmapStack::zeros(pose.num_joints(), w, h, sigma);
    stack
        .data
        .par_chunks_mut(w * h)
        .enumerate()
        .for_each(|(j, out)| {
            if pose.visibility[j] {
                render_point(out, w, pose.coords[j], sigma);
            }
        });
    Ok(stack)
}

/// One map per bone: a Gaussian of the squared distance to the bone segment.
///
/// Bones with an invisible endpoint give an all-zero map. A zero-length bone
/// renders exactly the joint Gaussian at that point.
pub fn render_bone_heatmaps(
    pose: &Pose2D,
    skel: &Skeleton,
    w: usize,
    h: usize,
    sigma: f64,
) -> Result<HeatmapStack> {
    check_grid(w, h, sigma)?;
    check_pose(pose)?;
    if pose.num_joints() != skel.num_joints() {
        return Err(Error::dim(skel.num_joints(), pose.num_joints()));
    }
    let bones = skel.bones();
    let mut stack = HeatmapStack::zeros(bones.len(), w, h, sigma);
    stack
        .data
        .par_chunks_mut(w * h)
        .enumerate()
        .for_each(|(k, out)| {
            let (i, j) = bones[k];
            if pose.visibility[i] && pose.visibility[j] {
                render_segment(out, w, pose.coords[i], pose.coords[j], sigma);
            }
        });
    Ok(stack)
}

/// Bone-kernel width for `epoch`, shrinking linearly from `sigma_start` at
/// epoch 0 to `sigma_end` at the last epoch.
pub fn sigma_schedule(epoch: usize, total_epochs: usize, sigma_start: f64, sigma_end: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Input(format!("epoch {epoch} outside 0..{total_epochs}")));
    }
    if !(sigma_end > 0.0 && sigma_start >= sigma_end) {
        return Err(Error::Input(format!(
            "need sigma_start >= sigma_end > 0, got {sigma_start} -> {sigma_end}"
        )));
    }
    if total_epochs == 1 {
        return Ok(sigma_start);
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    Ok(sigma_start - (sigma_start - sigma_end) * t)
}

/// Sum of squared differences and its gradient `2 (pred - gt)`.
pub(crate) fn squared_error(pred: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p - g;
            loss += d * d;
            2.0 * d
        })
        .collect();
    (loss, grad)
}

/// Heatmap loss: sum over maps of the squared L2 norm of `gt - pred`.
///
/// Returns the loss and its gradient with respect to `pred`.
pub fn loss_l2d(pred: &HeatmapStack, gt: &HeatmapStack) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    Ok(squared_error(&pred.data, &gt.data))
}
