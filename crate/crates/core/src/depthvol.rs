//! Depth-centric volume codec, the volumetric squared-error loss and the
//! ordinal depth loss.
//!
//! A volume holds one `C x H x W` slice per joint. In a ground-truth encoding
//! the joint's 2D Gaussian sits in the channel indexed by its discretized
//! root-relative depth and every other channel of that slice is zero. Joints
//! sharing a depth bin share a channel index, each in its own slice.
//!
//! Ordinal probabilities are stored with 0-indexed channels: channel `k` holds
//! `P(label > k)`. For a label `d` the target is 1 on channels `k < d` and 0
//! on channels `k >= d`, which is the 1-indexed sum `c = 1..d` shifted by one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{render_point, squared_error};
use crate::skeleton::Pose25D;
use crate::softargmax::{soft_argmax_channels, DEFAULT_GAIN};

pub const DEFAULT_CHANNELS: usize = 64;
pub const DEFAULT_DEPTH_SCALE_MM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthVolume {
    pub data: Vec<f64>,
    pub joints: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub depth_scale: f64,
}

impl DepthVolume {
    pub fn zeros(joints: usize, channels: usize, width: usize, height: usize, depth_scale: f64) -> Self {
        DepthVolume {
            data: vec![0.0; joints * channels * width * height],
            joints,
            channels,
            width,
            height,
            depth_scale,
        }
    }

    pub fn slice_len(&self) -> usize {
        self.channels * self.width * self.height
    }

    /// The `C x H x W` block of one joint.
    pub fn slice(&self, joint: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[joint * n..(joint + 1) * n]
    }

    pub fn at(&self, joint: usize, channel: usize, x: usize, y: usize) -> f64 {
        self.data[((joint * self.channels + channel) * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.joints, self.channels, self.height, self.width]
    }

    /// Width of one depth bin in mm.
    pub fn channel_width(&self) -> f64 {
        2.0 * self.depth_scale / self.channels as f64
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels < 2 {
        return Err(Error::Input(format!("need at least 2 depth channels, got {channels}")));
    }
    Ok(())
}

/// Depth bin of a root-relative depth: `floor((z / 2s + 1/2) C)` clamped to
/// `0..C`.
pub fn discretize_depth(z_r: f64, depth_scale: f64, channels: usize) -> Result<usize> {
    check_channels(channels)?;
    if !z_r.is_finite() {
        return Err(Error::Input(format!("non-finite depth {z_r}")));
    }
    if !(depth_scale > 0.0) {
        return Err(Error::Input(format!("depth_scale must be positive, got {depth_scale}")));
    }
    let bin = ((z_r / (2.0 * depth_scale) + 0.5) * channels as f64).floor();
    Ok(bin.clamp(0.0, (channels - 1) as f64) as usize)
}

/// Maps a (possibly fractional) channel coordinate back to depth in mm.
pub fn channel_to_depth(channel: f64, depth_scale: f64, channels: usize) -> f64 {
    (channel / channels as f64 - 0.5) * 2.0 * depth_scale
}

pub fn encode_volume(pose: &Pose25D, w: usize, h: usize, channels: usize, sigma: f64) -> Result<DepthVolume> {
    check_channels(channels)?;
    if w == 0 || h == 0 {
        return Err(Error::Input(format!("grid must be at least 1x1, got {w}x{h}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
    }
    if pose.uv.len() != pose.z.len() {
        return Err(Error::dim(pose.uv.len(), pose.z.len()));
    }
    if pose.uv.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite joint coordinate".into()));
    }
    let mut vol = DepthVolume::zeros(pose.num_joints(), channels, w, h, pose.depth_scale);
    let plane = w * h;
    for (j, slice) in vol.data.chunks_exact_mut(channels * plane).enumerate() {
        let c = discretize_depth(pose.z[j], pose.depth_scale, channels)?;
        render_point(&mut slice[c * plane..(c + 1) * plane], w, pose.uv[j], sigma);
    }
    Ok(vol)
}

/// Volumetric loss: sum over all channels and joints of squared differences.
pub fn loss_l3d(pred: &DepthVolume, gt: &DepthVolume) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    Ok(squared_error(&pred.data, &gt.data))
}

/// Per-pixel ordinal probabilities, `C x H x W`, all strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalProbs {
    pub data: Vec<f64>,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl OrdinalProbs {
    pub fn new(data: Vec<f64>, channels: usize, width: usize, height: usize) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::dim(channels * width * height, data.len()));
        }
        if let Some(p) = data.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Domain(format!("probability {p} not in (0, 1)")));
        }
        Ok(OrdinalProbs { data, channels, width, height })
    }

    /// Logistic squashing of raw per-channel scores.
    pub fn from_scores(scores: &[f64], channels: usize, width: usize, height: usize) -> Result<Self> {
        let data = scores.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect();
        OrdinalProbs::new(data, channels, width, height)
    }

    pub fn at(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }
}

/// Ordinal probabilities `P(label > k)` of a distribution over depth bins,
/// clamped to `[eps, 1 - eps]`.
pub fn ordinal_from_distribution(dist: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = dist.iter().sum();
    let mut tail = total;
    dist.iter()
        .map(|&q| {
            tail -= q;
            (tail / total).clamp(eps, 1.0 - eps)
        })
        .collect()
}

/// Negated ordinal log-likelihood over masked pixels.
///
/// `labels` and `mask` are `H x W`. Returns the loss and its gradient with
/// respect to the probabilities; unmasked pixels contribute nothing.
pub fn loss_ordinal_depth(probs: &OrdinalProbs, labels: &[usize], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let plane = probs.width * probs.height;
    if labels.len() != plane || mask.len() != plane {
        return Err(Error::dim(plane, format!("labels {} / mask {}", labels.len(), mask.len())));
    }
    if probs.data.len() != probs.channels * plane {
        return Err(Error::dim(probs.channels * plane, probs.data.len()));
    }
    let mut grad = vec![0.0; probs.data.len()];
    let mut loss = 0.0;
    for (px, (&d, &on)) in labels.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        if d >= probs.channels {
            return Err(Error::Input(format!("label {d} outside 0..{}", probs.channels)));
        }
        for k in 0..probs.channels {
            let i = k * plane + px;
            let p = probs.data[i];
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!("probability {p} not in (0, 1)")));
            }
            if k < d {
                loss -= p.ln();
                grad[i] = -1.0 / p;
            } else {
                loss -= (1.0 - p).ln();
                grad[i] = 1.0 / (1.0 - p);
            }
        }
    }
    Ok((loss, grad))
}

/// Per-pixel ordinal labels for one 2.5D pose.
///
/// A pixel within `3 sigma` of a joint takes the depth bin of the nearest such
/// joint; every other pixel is masked out.
pub fn ordinal_label_map(
    pose: &Pose25D,
    w: usize,
    h: usize,
    channels: usize,
    sigma: f64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let bins = pose
        .z
        .iter()
        .map(|&z| discretize_depth(z, pose.depth_scale, channels))
        .collect::<Result<Vec<_>>>()?;
    let reach2 = (3.0 * sigma) * (3.0 * sigma);
    let mut labels = vec![0; w * h];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::INFINITY;
            for (j, uv) in pose.uv.iter().enumerate() {
                let dx = x as f64 - uv[0];
                let dy = y as f64 - uv[1];
                let d2 = dx * dx + dy * dy;
                if d2 <= reach2 && d2 < best {
                    best = d2;
                    labels[y * w + x] = bins[j];
                    mask[y * w + x] = true;
                }
            }
        }
    }
    Ok((labels, mask))
}

/// Root-relative depth of each joint, from the soft-argmax channel coordinate
/// of its slice.
pub fn decode_depth(volume: &DepthVolume) -> Result<Vec<f64>> {
    (0..volume.joints)
        .map(|j| {
            let slice = volume.slice(j);
            if slice.iter().all(|&v| v == 0.0) {
                return Err(Error::UndefinedDepth { joint: j });
            }
            let scaled: Vec<f64> = slice.iter().map(|&v| v * DEFAULT_GAIN).collect();
            let (_, _, c) = soft_argmax_channels(&scaled, volume.channels, volume.width, volume.height)?;
            Ok(channel_to_depth(c, volume.depth_scale, volume.channels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::render_joint_heatmaps;
    use crate::skeleton::Pose2D;

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_depth(0.0, 1000.0, 64).unwrap(), 32);
        assert_eq!(discretize_depth(-1000.0, 1000.0, 64).unwrap(), 0);
        assert_eq!(discretize_depth(531.25, 1000.0, 64).unwrap(), 49);
        assert_eq!(discretize_depth(999.999, 1000.0, 64).unwrap(), 63);
        assert_eq!(discretize_depth(5000.0, 1000.0, 64).unwrap(), 63);
        assert_eq!(discretize_depth(-5000.0, 1000.0, 64).unwrap(), 0);
        assert!(discretize_depth(f64::NAN, 1000.0, 64).is_err());
        assert!(discretize_depth(0.0, 1000.0, 1).is_err());
    }

    #[test]
    fn discretize_is_monotone() {
        let mut last = 0;
        for i in -3000..=3000 {
            let b = discretize_depth(i as f64 * 0.5, 1000.0, 64).unwrap();
            assert!(b >= last);
            last = b;
        }
    }

    fn pose(uv: Vec<[f64; 2]>, z: Vec<f64>) -> Pose25D {
        Pose25D::new(uv, z, 1000.0).unwrap()
    }

    #[test]
    fn encode_places_joint_in_its_channel() {
        let p = pose(vec![[10.0, 10.0], [20.0, 5.0], [3.0, 30.0]], vec![0.0, -1000.0, 0.0]);
        let vol = encode_volume(&p, 32, 32, 64, 2.0).unwrap();
        assert_eq!(vol.shape(), [3, 64, 32, 32]);
        assert_eq!(vol.at(0, 32, 10, 10), 1.0);
        assert_eq!(vol.at(1, 0, 20, 5), 1.0);
        // equal depths share a channel index, each in its own slice
        assert_eq!(vol.at(2, 32, 3, 30), 1.0);
        let plane = 32 * 32;
        for j in 0..3 {
            let nonzero: Vec<usize> = (0..64)
                .filter(|&c| vol.slice(j)[c * plane..(c + 1) * plane].iter().any(|&v| v != 0.0))
                .collect();
            assert_eq!(nonzero.len(), 1);
        }
    }

    #[test]
    fn channel_sum_reproduces_joint_heatmap() {
        let p = pose(vec![[4.3, 7.7], [12.1, 2.9]], vec![310.0, -77.0]);
        let vol = encode_volume(&p, 16, 12, 16, 2.0).unwrap();
        let hm = render_joint_heatmaps(&Pose2D::all_visible(p.uv.clone()).unwrap(), 16, 12, 2.0).unwrap();
        let plane = 16 * 12;
        for j in 0..2 {
            let mut sum = vec![0.0; plane];
            for c in 0..16 {
                for (s, v) in sum.iter_mut().zip(&vol.slice(j)[c * plane..(c + 1) * plane]) {
                    *s += v;
                }
            }
            assert_eq!(sum.as_slice(), hm.map(j));
        }
    }

    #[test]
    fn l3d_values() {
        let gt = {
            let mut v = DepthVolume::zeros(1, 2, 2, 2, 1000.0);
            v.data[3] = 1.0;
            v
        };
        let pred = DepthVolume::zeros(1, 2, 2, 2, 1000.0);
        assert_eq!(loss_l3d(&pred, &gt).unwrap().0, 1.0);
        assert_eq!(loss_l3d(&gt, &gt).unwrap().0, 0.0);
        let other = DepthVolume::zeros(1, 3, 2, 2, 1000.0);
        assert!(loss_l3d(&other, &gt).is_err());
    }

    #[test]
    fn ordinal_worked_example() {
        let probs = OrdinalProbs::new(vec![0.9, 0.1, 0.1, 0.1], 4, 1, 1).unwrap();
        let (l, g) = loss_ordinal_depth(&probs, &[1], &[true]).unwrap();
        assert!((l - (-4.0 * 0.9f64.ln())).abs() < 1e-14);
        assert!((l - 0.42144).abs() < 1e-5);
        assert!((g[0] + 1.0 / 0.9).abs() < 1e-14);
        assert!((g[1] - 1.0 / 0.9).abs() < 1e-14);
    }

    #[test]
    fn ordinal_perfect_prediction() {
        let eps = 1e-9;
        let c = 16;
        for d in 0..c {
            let p: Vec<f64> = (0..c).map(|k| if k < d { 1.0 - eps } else { eps }).collect();
            let probs = OrdinalProbs::new(p, c, 1, 1).unwrap();
            let (l, _) = loss_ordinal_depth(&probs, &[d], &[true]).unwrap();
            assert!(l >= 0.0 && l <= c as f64 * eps * (1.0 + eps));
        }
    }

    #[test]
    fn ordinal_masked_pixels_are_ignored() {
        let probs = OrdinalProbs::new(vec![0.3, 0.6, 0.2, 0.9], 2, 2, 1).unwrap();
        let (l, g) = loss_ordinal_depth(&probs, &[1, 0], &[true, false]).unwrap();
        assert!((l - (-(0.3f64.ln()) - (1.0f64 - 0.2).ln())).abs() < 1e-14);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn ordinal_errors() {
        assert!(matches!(OrdinalProbs::new(vec![1.0, 0.5], 2, 1, 1), Err(Error::Domain(_))));
        let probs = OrdinalProbs { data: vec![0.0, 0.5], channels: 2, width: 1, height: 1 };
        assert!(matches!(loss_ordinal_depth(&probs, &[1], &[true]), Err(Error::Domain(_))));
        let probs = OrdinalProbs::new(vec![0.4, 0.5], 2, 1, 1).unwrap();
        assert!(matches!(loss_ordinal_depth(&probs, &[2], &[true]), Err(Error::Input(_))));
    }

    #[test]
    fn ordinal_descent_toward_target() {
        let c = 8;
        let d = 3;
        let base: Vec<f64> = (0..c).map(|k| 0.2 + 0.07 * k as f64).collect();
        let (l0, _) = loss_ordinal_depth(&OrdinalProbs::new(base.clone(), c, 1, 1).unwrap(), &[d], &[true]).unwrap();
        for k in 0..c {
            let mut p = base.clone();
            let target = if k < d { 1.0 } else { 0.0 };
            p[k] += 0.1 * (target - p[k]);
            let (l1, _) = loss_ordinal_depth(&OrdinalProbs::new(p, c, 1, 1).unwrap(), &[d], &[true]).unwrap();
            assert!(l1 < l0, "channel {k}");
        }
    }

    #[test]
    fn ordinal_from_distribution_tail_sums() {
        let p = ordinal_from_distribution(&[0.1, 0.2, 0.3, 0.4], 1e-9);
        let want = [0.9, 0.7, 0.4, 1e-9];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn label_map_masks_background() {
        let p = pose(vec![[2.0, 2.0], [12.0, 2.0]], vec![0.0, 500.0]);
        let (labels, mask) = ordinal_label_map(&p, 16, 8, 64, 1.0).unwrap();
        assert!(mask[2 * 16 + 2] && labels[2 * 16 + 2] == 32);
        assert!(mask[2 * 16 + 12] && labels[2 * 16 + 12] == 48);
        assert!(!mask[7 * 16 + 7]);
    }

    #[test]
    fn decode_roundtrip_and_zero_slice() {
        for &z in &[0.0, 437.0, -612.5, 998.0] {
            let p = pose(vec![[16.0, 16.0]], vec![z]);
            let vol = encode_volume(&p, 32, 32, 64, 2.0).unwrap();
            let got = decode_depth(&vol).unwrap()[0];
            assert!((got - z).abs() <= 2000.0 / 64.0, "z = {z}, got {got}");
        }
        let vol = DepthVolume::zeros(2, 4, 3, 3, 1000.0);
        assert!(matches!(decode_depth(&vol), Err(Error::UndefinedDepth { joint: 0 })));
    }
}
