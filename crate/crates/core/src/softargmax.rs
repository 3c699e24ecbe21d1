//! Differentiable soft-argmax decoding of heatmaps and depth volumes.
//!
//! The raw grid is softmax-normalized over its whole domain and the decoded
//! coordinate is the expectation of the pixel (and channel) index under that
//! distribution. Coordinates are 0-indexed pixel centers.

use crate::depthvol::{channel_to_depth, DepthVolume};
use crate::error::{Error, Result};
use crate::skeleton::Pose25D;

/// Pre-softmax multiplier applied to ground-truth style maps with values in
/// `[0, 1]`.
pub const DEFAULT_GAIN: f64 = 50.0;

/// Softmax-normalized grid: positive entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHeatmap {
    pub data: Vec<f64>,
}

/// `exp(h) / sum(exp(h))`, computed after subtracting the maximum.
///
/// Entries far below the maximum can underflow to exactly zero.
pub fn softmax_normalize(h: &[f64]) -> Result<NormalizedHeatmap> {
    if h.is_empty() {
        return Err(Error::Input("empty grid".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite grid value".into()));
    }
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut data: Vec<f64> = h.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(NormalizedHeatmap { data })
}

fn check_len(h: &[f64], len: usize) -> Result<()> {
    if h.len() != len {
        return Err(Error::dim(len, h.len()));
    }
    Ok(())
}

/// Expected `(u, v)` of a row-major `height x width` grid.
pub fn soft_argmax_2d(h: &[f64], width: usize, height: usize) -> Result<(f64, f64)> {
    let (u, v, _) = soft_argmax_channels(h, 1, width, height)?;
    Ok((u, v))
}

/// Gradient of `grad_u * u + grad_v * v` with respect to the raw grid.
pub fn soft_argmax_2d_backward(
    h: &[f64],
    width: usize,
    height: usize,
    grad_u: f64,
    grad_v: f64,
) -> Result<Vec<f64>> {
    soft_argmax_channels_backward(h, 1, width, height, [grad_u, grad_v, 0.0])
}

/// Expected `(u, v, c)` of a `channels x height x width` slice normalized
/// jointly over all three axes.
pub fn soft_argmax_channels(
    slice: &[f64],
    channels: usize,
    width: usize,
    height: usize,
) -> Result<(f64, f64, f64)> {
    check_len(slice, channels * width * height)?;
    let p = softmax_normalize(slice)?;
    let (mut u, mut v, mut c) = (0.0, 0.0, 0.0);
    for (i, &w) in p.data.iter().enumerate() {
        let x = i % width;
        let y = (i / width) % height;
        let k = i / (width * height);
        u += w * x as f64;
        v += w * y as f64;
        c += w * k as f64;
    }
    // Guards against rounding just outside the grid box.
    Ok((
        u.clamp(0.0, (width - 1) as f64),
        v.clamp(0.0, (height - 1) as f64),
        c.clamp(0.0, (channels - 1) as f64),
    ))
}

/// Gradient of `g . (u, v, c)` with respect to the raw slice.
///
/// For softmax weights `p`, `d(u)/d(h_q) = p_q (x_q - u)`, and likewise for
/// the other two coordinates.
pub fn soft_argmax_channels_backward(
    slice: &[f64],
    channels: usize,
    width: usize,
    height: usize,
    g: [f64; 3],
) -> Result<Vec<f64>> {
    check_len(slice, channels * width * height)?;
    let p = softmax_normalize(slice)?;
    let (u, v, c) = soft_argmax_channels(slice, channels, width, height)?;
    Ok(p.data
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let x = (i % width) as f64;
            let y = ((i / width) % height) as f64;
            let k = (i / (width * height)) as f64;
            w * (g[0] * (x - u) + g[1] * (y - v) + g[2] * (k - c))
        })
        .collect())
}

/// Decodes every joint slice of a volume into pixel coordinates and
/// root-relative depth. `gain` multiplies the raw values before the softmax.
pub fn assemble_pose25d(volume: &DepthVolume, gain: f64) -> Result<Pose25D> {
    if !gain.is_finite() {
        return Err(Error::Input(format!("non-finite gain {gain}")));
    }
    let mut uv = Vec::with_capacity(volume.joints);
    let mut z = Vec::with_capacity(volume.joints);
    for j in 0..volume.joints {
        let scaled: Vec<f64> = volume.slice(j).iter().map(|&v| v * gain).collect();
        let (u, v, c) = soft_argmax_channels(&scaled, volume.channels, volume.width, volume.height)?;
        uv.push([u, v]);
        z.push(channel_to_depth(c, volume.depth_scale, volume.channels));
    }
    Pose25D::new(uv, z, volume.depth_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthvol::encode_volume;
    use crate::heatmap::render_joint_heatmaps;
    use crate::skeleton::Pose2D;

    fn gaussian_grid(u: f64, v: f64, w: usize, h: usize, gain: f64) -> Vec<f64> {
        let pose = Pose2D::all_visible(vec![[u, v]]).unwrap();
        render_joint_heatmaps(&pose, w, h, 2.0)
            .unwrap()
            .data
            .into_iter()
            .map(|x| x * gain)
            .collect()
    }

    #[test]
    fn softmax_basic() {
        let p = softmax_normalize(&[2.0; 12]).unwrap();
        assert!(p.data.iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-15));
        let p = softmax_normalize(&[0.0, 3f64.ln()]).unwrap();
        assert!((p.data[0] - 0.25).abs() < 1e-15 && (p.data[1] - 0.75).abs() < 1e-15);
        let mut big = vec![0.0; 9];
        big[4] = 1000.0;
        let p = softmax_normalize(&big).unwrap();
        assert!((p.data[4] - 1.0).abs() < 1e-15);
        assert!(p.data.iter().all(|x| x.is_finite()));
        assert!(softmax_normalize(&[]).is_err());
    }

    #[test]
    fn uniform_centroids() {
        let (u, v) = soft_argmax_2d(&[0.0; 81], 9, 9).unwrap();
        assert!((u - 4.0).abs() < 1e-12 && (v - 4.0).abs() < 1e-12);
        let (u, v, c) = soft_argmax_channels(&[0.0; 36], 4, 3, 3).unwrap();
        assert!((u - 1.0).abs() < 1e-12 && (v - 1.0).abs() < 1e-12 && (c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn mirror_symmetry() {
        let (w, h) = (11, 7);
        let grid = gaussian_grid(2.6, 4.2, w, h, 3.0);
        let mut mirrored = grid.clone();
        for y in 0..h {
            for x in 0..w {
                mirrored[y * w + x] = grid[y * w + (w - 1 - x)];
            }
        }
        let (u0, v0) = soft_argmax_2d(&grid, w, h).unwrap();
        let (u1, v1) = soft_argmax_2d(&mirrored, w, h).unwrap();
        assert!((u1 - ((w - 1) as f64 - u0)).abs() < 1e-12);
        assert!((v1 - v0).abs() < 1e-12);
    }

    // Values below are frozen from a direct numeric evaluation of the
    // softmax-expectation on the full 64x64 grid. At gain 10 the near-uniform
    // background still carries several percent of the mass and pulls the
    // estimate toward the grid center; at gain 20 the estimate is within
    // 0.05px.
    #[test]
    fn gaussian_center_recovery_depends_on_gain() {
        let grid = gaussian_grid(20.3, 11.7, 64, 64, 10.0);
        let (u, v) = soft_argmax_2d(&grid, 64, 64).unwrap();
        assert!((u - 20.986144591393582).abs() < 1e-9, "u = {u}");
        assert!((v - 12.920505750112882).abs() < 1e-9, "v = {v}");

        let grid = gaussian_grid(20.3, 11.7, 64, 64, 20.0);
        let (u, v) = soft_argmax_2d(&grid, 64, 64).unwrap();
        assert!((u - 20.3).abs() < 0.05 && (v - 11.7).abs() < 0.05, "({u}, {v})");
    }

    #[test]
    fn dominant_voxel() {
        let (c, w, h) = (64, 16, 16);
        let mut slice = vec![0.0; c * w * h];
        slice[(32 * h + 10) * w + 10] = 50.0;
        let (u, v, k) = soft_argmax_channels(&slice, c, w, h).unwrap();
        assert!((u - 10.0).abs() < 1e-3 && (v - 10.0).abs() < 1e-3 && (k - 32.0).abs() < 1e-3);
    }

    #[test]
    fn channel_reversal_symmetry() {
        let (c, w, h) = (6, 4, 3);
        let plane = w * h;
        let mut slice = vec![0.0; c * plane];
        for k in 0..c / 2 {
            for i in 0..plane {
                let val = (k * 7 + i) as f64 * 0.1;
                slice[k * plane + i] = val;
                slice[(c - 1 - k) * plane + i] = val;
            }
        }
        let (_, _, k) = soft_argmax_channels(&slice, c, w, h).unwrap();
        assert!((k - 2.5).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance_and_bounds() {
        let grid = gaussian_grid(1.2, 6.8, 9, 8, 7.0);
        let shifted: Vec<f64> = grid.iter().map(|v| v + 123.4).collect();
        let a = soft_argmax_2d(&grid, 9, 8).unwrap();
        let b = soft_argmax_2d(&shifted, 9, 8).unwrap();
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        assert!(a.0 >= 0.0 && a.0 <= 8.0 && a.1 >= 0.0 && a.1 <= 7.0);
    }

    #[test]
    fn gain_sequence_approaches_argmax() {
        let (w, h) = (15, 12);
        let base: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                -((x - 9.0).powi(2) + (y - 4.0).powi(2)).sqrt() * 0.1 + 0.05 * ((i * 37 % 11) as f64 / 11.0)
            })
            .collect();
        let argmax = base
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (ax, ay) = ((argmax % w) as f64, (argmax / w) as f64);
        let dist = |gain: f64| {
            let g: Vec<f64> = base.iter().map(|v| v * gain).collect();
            let (u, v) = soft_argmax_2d(&g, w, h).unwrap();
            ((u - ax).powi(2) + (v - ay).powi(2)).sqrt()
        };
        let (d1, d10, d100) = (dist(1.0), dist(10.0), dist(100.0));
        assert!(d1 > d10 && d10 > d100, "{d1} {d10} {d100}");
    }

    #[test]
    fn assemble_gain_zero_is_uniform() {
        let pose = Pose25D::new(vec![[5.0, 6.0]], vec![200.0], 1000.0).unwrap();
        let vol = encode_volume(&pose, 9, 7, 8, 2.0).unwrap();
        let out = assemble_pose25d(&vol, 0.0).unwrap();
        assert!((out.uv[0][0] - 4.0).abs() < 1e-12 && (out.uv[0][1] - 3.0).abs() < 1e-12);
        assert!((out.z[0] - (-1000.0 / 8.0)).abs() < 1e-9);
    }

    #[test]
    fn assemble_gain_scaling_identity() {
        let pose = Pose25D::new(vec![[5.2, 6.1], [2.0, 2.5]], vec![200.0, -340.0], 1000.0).unwrap();
        let vol = encode_volume(&pose, 9, 9, 8, 2.0).unwrap();
        let mut scaled = vol.clone();
        scaled.data.iter_mut().for_each(|v| *v *= 4.0);
        let a = assemble_pose25d(&scaled, 5.0).unwrap();
        let b = assemble_pose25d(&vol, 20.0).unwrap();
        for (p, q) in a.flatten().iter().zip(b.flatten()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (c, w, h) = (3, 5, 4);
        let slice: Vec<f64> = (0..c * w * h).map(|i| ((i * 29 % 17) as f64 - 8.0) * 0.2).collect();
        let g = [0.7, -1.3, 0.4];
        let grad = soft_argmax_channels_backward(&slice, c, w, h, g).unwrap();
        let f = |s: &[f64]| {
            let (u, v, k) = soft_argmax_channels(s, c, w, h).unwrap();
            g[0] * u + g[1] * v + g[2] * k
        };
        let step = 1e-5;
        let mut s = slice.clone();
        for i in 0..s.len() {
            s[i] = slice[i] + step;
            let fp = f(&s);
            s[i] = slice[i] - step;
            let fm = f(&s);
            s[i] = slice[i];
            let fd = (fp - fm) / (2.0 * step);
            assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(grad[i].abs()).max(1e-3), "{i}: {fd} vs {}", grad[i]);
        }
    }
}
