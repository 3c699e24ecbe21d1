//! Central finite-difference checks for every differentiable operation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depthvol::{loss_l3d, loss_ordinal_depth, DepthVolume, OrdinalProbs};
use crate::error::{Error, Result};
use crate::heatmap::{loss_l2d, HeatmapStack};
use crate::io::derive_seed;
use crate::lifting::{loss_pose, Architecture, InputNorm, LiftingNetwork};
use crate::skeleton::{Frame, Pose3D};
use crate::softargmax::{soft_argmax_2d, soft_argmax_2d_backward, soft_argmax_channels, soft_argmax_channels_backward};

pub const OPS: [&str; 7] = [
    "loss_l2d",
    "loss_l3d",
    "loss_ordinal_depth",
    "loss_pose",
    "soft_argmax_2d",
    "soft_argmax_channels",
    "lifting_network",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negates every analytic gradient; a negative control for the harness.
    pub flip_sign: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { trials: 20, step: 1e-5, tolerance: 1e-4, seed: 0, flip_sign: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Worst entrywise `|a - n| / max(|a|, |n|, 1e-5 max(1, |a|_inf))`.
///
/// The floor keeps exactly-zero gradients from being judged on
/// finite-difference roundoff alone.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let amax = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-5 * amax.max(1.0);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

type Trial = (Vec<f64>, Vec<f64>);

fn trial_l2d(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let (k, w, h) = (3, 5, 4);
    let gt = HeatmapStack { data: uniform(rng, k * w * h, 0.0, 1.0), ..HeatmapStack::zeros(k, w, h, 2.0) };
    let x = uniform(rng, k * w * h, -0.5, 1.5);
    let stack = |d: &[f64]| HeatmapStack { data: d.to_vec(), ..gt.clone() };
    let analytic = loss_l2d(&stack(&x), &gt)?.1;
    let numeric = numeric_gradient(&x, step, |d| Ok(loss_l2d(&stack(d), &gt)?.0))?;
    Ok((analytic, numeric))
}

fn trial_l3d(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let shape = DepthVolume::zeros(2, 8, 4, 4, 1000.0);
    let n = shape.data.len();
    let gt = DepthVolume { data: uniform(rng, n, 0.0, 1.0), ..shape };
    let x = uniform(rng, n, -0.5, 1.5);
    let vol = |d: &[f64]| DepthVolume { data: d.to_vec(), ..gt.clone() };
    let analytic = loss_l3d(&vol(&x), &gt)?.1;
    let numeric = numeric_gradient(&x, step, |d| Ok(loss_l3d(&vol(d), &gt)?.0))?;
    Ok((analytic, numeric))
}

fn trial_ordinal(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let (c, w, h) = (5, 4, 3);
    let labels: Vec<usize> = (0..w * h).map(|_| rng.random_range(0..c)).collect();
    let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
    let x = uniform(rng, c * w * h, 0.05, 0.95);
    let loss = |d: &[f64]| loss_ordinal_depth(&OrdinalProbs::new(d.to_vec(), c, w, h)?, &labels, &mask);
    let analytic = loss(&x)?.1;
    let numeric = numeric_gradient(&x, step, |d| Ok(loss(d)?.0))?;
    Ok((analytic, numeric))
}

fn trial_pose(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let n = 5;
    let gt = Pose3D::from_flat(&uniform(rng, 3 * n, -100.0, 100.0), Frame::RootRelative)?;
    let x = uniform(rng, 3 * n, -100.0, 100.0);
    let loss = |d: &[f64]| loss_pose(&Pose3D::from_flat(d, Frame::RootRelative)?, &gt);
    let analytic: Vec<f64> = loss(&x)?.1.into_iter().flatten().collect();
    let numeric = numeric_gradient(&x, step, |d| Ok(loss(d)?.0))?;
    Ok((analytic, numeric))
}

fn trial_softargmax_2d(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let (w, h) = (6, 5);
    let (gu, gv) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let x = uniform(rng, w * h, -2.0, 2.0);
    let analytic = soft_argmax_2d_backward(&x, w, h, gu, gv)?;
    let numeric = numeric_gradient(&x, step, |d| {
        let (u, v) = soft_argmax_2d(d, w, h)?;
        Ok(gu * u + gv * v)
    })?;
    Ok((analytic, numeric))
}

fn trial_softargmax_channels(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let (c, w, h) = (3, 4, 5);
    let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let x = uniform(rng, c * w * h, -2.0, 2.0);
    let analytic = soft_argmax_channels_backward(&x, c, w, h, g)?;
    let numeric = numeric_gradient(&x, step, |d| {
        let (u, v, k) = soft_argmax_channels(d, c, w, h)?;
        Ok(g[0] * u + g[1] * v + g[2] * k)
    })?;
    Ok((analytic, numeric))
}

fn trial_network(rng: &mut ChaCha8Rng, step: f64) -> Result<Trial> {
    let arch = Architecture { n_joints: 2, width: 8, blocks: 1 };
    let norm = InputNorm { image_width: 64.0, image_height: 64.0, depth_scale: 1000.0 };
    let mut net = LiftingNetwork::init(arch, norm, rng.random())?;
    net.dropout_rate = 0.0;
    net.output_scale = 10.0;
    let n = net.num_params();
    net.params = uniform(rng, n, -0.8, 0.8);
    let batch = 4;
    let x: Vec<f64> = (0..batch * arch.io_dim())
        .map(|i| if i % 3 == 2 { rng.random_range(-500.0..500.0) } else { rng.random_range(0.0..64.0) })
        .collect();
    let y = uniform(rng, batch * arch.io_dim(), -50.0, 50.0);
    let theta = net.params.clone();
    let analytic = net.backward(&x, &y, batch, None)?.1;
    let numeric = numeric_gradient(&theta, step, |p| {
        net.params.copy_from_slice(p);
        net.batch_loss(&x, &y, batch, None)
    })?;
    Ok((analytic, numeric))
}

fn run_op(op: &str, cfg: &GradcheckConfig) -> Result<OpReport> {
    let trial: fn(&mut ChaCha8Rng, f64) -> Result<Trial> = match op {
        "loss_l2d" => trial_l2d,
        "loss_l3d" => trial_l3d,
        "loss_ordinal_depth" => trial_ordinal,
        "loss_pose" => trial_pose,
        "soft_argmax_2d" => trial_softargmax_2d,
        "soft_argmax_channels" => trial_softargmax_channels,
        "lifting_network" => trial_network,
        other => return Err(Error::Usage(format!("unknown op {other:?}; known: {}", OPS.join(", ")))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, op));
    let mut worst = 0.0f64;
    for _ in 0..cfg.trials {
        let (mut analytic, numeric) = trial(&mut rng, cfg.step)?;
        if cfg.flip_sign {
            analytic.iter_mut().for_each(|g| *g = -*g);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(OpReport { op: op.to_string(), trials: cfg.trials, max_rel_error: worst, passed: worst <= cfg.tolerance })
}

/// Checks the named ops (all of them when `ops` is empty).
pub fn run_gradcheck(ops: &[String], cfg: &GradcheckConfig) -> Result<Vec<OpReport>> {
    if cfg.trials == 0 || !(cfg.step > 0.0) {
        return Err(Error::Usage("gradcheck needs trials >= 1 and a positive step".into()));
    }
    let selected: Vec<&str> = if ops.is_empty() { OPS.to_vec() } else { ops.iter().map(String::as_str).collect() };
    selected.into_iter().map(|op| run_op(op, cfg)).collect()
}

pub fn report_text(reports: &[OpReport]) -> String {
    let mut out = String::from("op,trials,max_rel_error,status\n");
    for r in reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{},{},{:.3e},{}", r.op, r.trials, r.max_rel_error, status);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        let reports = run_gradcheck(&[], &GradcheckConfig { trials: 3, ..Default::default() }).unwrap();
        assert_eq!(reports.len(), OPS.len());
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = GradcheckConfig { trials: 2, flip_sign: true, ..Default::default() };
        let r = run_gradcheck(&["loss_pose".to_string()], &cfg).unwrap();
        assert!(!r[0].passed);
        assert!(r[0].max_rel_error > 1.0);
    }

    #[test]
    fn unknown_op_is_usage_error() {
        let err = run_gradcheck(&["nope".to_string()], &GradcheckConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn relative_error_floor() {
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-12]) - 1e-7).abs() < 1e-18);
        assert_eq!(relative_error(&[2.0], &[1.0]), 0.5);
    }
}
