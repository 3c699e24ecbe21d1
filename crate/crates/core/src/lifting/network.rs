use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::derive_seed;

pub const DEFAULT_WIDTH: usize = 1024;
pub const DEFAULT_BLOCKS: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.25;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub n_joints: usize,
    pub width: usize,
    pub blocks: usize,
}

impl Architecture {
    /// Input dense to 1024 features, five residual blocks, output dense.
    pub fn standard(n_joints: usize) -> Self {
        Architecture {
            n_joints,
            width: DEFAULT_WIDTH,
            blocks: DEFAULT_BLOCKS,
        }
    }

    pub fn io_dim(&self) -> usize {
        3 * self.n_joints
    }
}

/// Fixed affine map applied to raw `(u, v, z)` inputs: pixel coordinates are
/// centered on the image and divided by its width, depth is divided by the
/// depth scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub image_width: f64,
    pub image_height: f64,
    pub depth_scale: f64,
}

impl InputNorm {
    fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.chunks_exact(3)
            .flat_map(|c| {
                [
                    (c[0] - 0.5 * self.image_width) / self.image_width,
                    (c[1] - 0.5 * self.image_height) / self.image_width,
                    c[2] / self.depth_scale,
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSlots {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    pub mean: Range<usize>,
    pub var: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub in_w: Range<usize>,
    pub in_b: Range<usize>,
    pub layers: Vec<LayerSlots>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub n_params: usize,
    pub n_running: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let (io, w) = (arch.io_dim(), arch.width);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let in_w = take(w * io);
        let in_b = take(w);
        let mut run = 0;
        let mut take_run = |n: usize| {
            let r = run..run + n;
            run += n;
            r
        };
        let layers = (0..2 * arch.blocks)
            .map(|_| LayerSlots {
                w: take(w * w),
                b: take(w),
                gamma: take(w),
                beta: take(w),
                mean: take_run(w),
                var: take_run(w),
            })
            .collect();
        let out_w = take(io * w);
        let out_b = take(io);
        Layout {
            in_w,
            in_b,
            layers,
            out_w,
            out_b,
            n_params: at,
            n_running: run,
        }
    }
}

/// Per-site dropout multipliers (`0` or `1 / (1 - rate)`), one `batch x width`
/// matrix per ReLU inside the residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub sites: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut impl Rng, arch: &Architecture, batch: usize, rate: f64) -> Self {
        let keep = 1.0 - rate;
        let sites = (0..2 * arch.blocks)
            .map(|_| {
                (0..batch * arch.width)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect();
        DropoutMasks { sites }
    }

    pub fn ones(arch: &Architecture, batch: usize) -> Self {
        DropoutMasks {
            sites: vec![vec![1.0; batch * arch.width]; 2 * arch.blocks],
        }
    }
}

/// Fully connected residual lifter from flattened 2.5D joints to
/// root-relative 3D joints in mm.
///
/// Parameters live in one flat vector (see `Layout`); batch-norm running
/// statistics live in a second one and are not trained by gradient.
#[derive(Debug, Clone)]
pub struct LiftingNetwork {
    pub arch: Architecture,
    pub norm: InputNorm,
    pub params: Vec<f64>,
    pub running: Vec<f64>,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    /// Multiplier on the output layer, so the raw output is in units of this
    /// many mm.
    pub output_scale: f64,
    pub mode: Mode,
    pub(crate) layout: Layout,
}

struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    invstd: Vec<f64>,
    y: Vec<f64>,
}

struct Cache {
    x0: Vec<f64>,
    layers: Vec<LayerCache>,
    h_final: Vec<f64>,
}

struct BatchStats {
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

/// `c = a * b` for row-major `m x k` times `k x n` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x W^T + b` for `x: batch x in`, `W: out x in`.
fn dense(x: &[f64], batch: usize, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * n_out];
    gemm(batch, n_in, n_out, x, n_in, 1, w, 1, n_in, &mut y);
    for row in y.chunks_exact_mut(n_out) {
        row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
    y
}

/// Gradients of a dense layer: returns `(dW, db, dx)`; `dx` only if asked.
fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    n_in: usize,
    n_out: usize,
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut dw = vec![0.0; n_out * n_in];
    gemm(n_out, batch, n_in, dy, 1, n_out, x, n_in, 1, &mut dw);
    let mut db = vec![0.0; n_out];
    for row in dy.chunks_exact(n_out) {
        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; batch * n_in];
        gemm(batch, n_out, n_in, dy, n_out, 1, w, n_in, 1, &mut dx);
        dx
    });
    (dw, db, dx)
}

impl LiftingNetwork {
    /// Seeded initialization: dense weights uniform in `+-1/sqrt(fan_in)`,
    /// zero biases, unit batch-norm scale, zero output layer.
    pub fn init(arch: Architecture, norm: InputNorm, seed: u64) -> Result<Self> {
        if arch.n_joints == 0 || arch.width == 0 {
            return Err(Error::Input("network needs at least one joint and one feature".into()));
        }
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.n_params];
        let mut running = vec![0.0; layout.n_running];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let mut fill = |slot: &Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[slot.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&layout.in_w, arch.io_dim(), &mut params);
        for l in &layout.layers {
            fill(&l.w, arch.width, &mut params);
            params[l.gamma.clone()].fill(1.0);
            running[l.var.clone()].fill(1.0);
        }
        Ok(LiftingNetwork {
            arch,
            norm,
            params,
            running,
            dropout_rate: DEFAULT_DROPOUT,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            output_scale: norm.depth_scale,
            mode: Mode::Train,
            layout,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn from_parts(
        arch: Architecture,
        norm: InputNorm,
        params: Vec<f64>,
        running: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.n_params || running.len() != layout.n_running {
            return Err(Error::Format(format!(
                "parameter count {}/{} does not match architecture {}/{}",
                params.len(),
                running.len(),
                layout.n_params,
                layout.n_running
            )));
        }
        Ok(LiftingNetwork {
            arch,
            norm,
            params,
            running,
            dropout_rate: DEFAULT_DROPOUT,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            output_scale: norm.depth_scale,
            mode: Mode::Eval,
            layout,
        })
    }

    /// Ranges of the two dense-layer weight matrices of residual block `b`.
    pub fn block_weight_ranges(&self, b: usize) -> [Range<usize>; 2] {
        [self.layout.layers[2 * b].w.clone(), self.layout.layers[2 * b + 1].w.clone()]
    }

    /// Ranges of the two dense-layer biases of residual block `b`.
    pub fn block_bias_ranges(&self, b: usize) -> [Range<usize>; 2] {
        [self.layout.layers[2 * b].b.clone(), self.layout.layers[2 * b + 1].b.clone()]
    }

    pub fn output_ranges(&self) -> (Range<usize>, Range<usize>) {
        (self.layout.out_w.clone(), self.layout.out_b.clone())
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.arch.io_dim() {
            return Err(Error::dim(batch * self.arch.io_dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        Ok(())
    }

    fn check_masks(&self, masks: Option<&DropoutMasks>, batch: usize) -> Result<()> {
        if let Some(m) = masks {
            let ok = m.sites.len() == 2 * self.arch.blocks
                && m.sites.iter().all(|s| s.len() == batch * self.arch.width);
            if !ok {
                return Err(Error::Input("dropout mask shape does not match the batch".into()));
            }
        }
        Ok(())
    }

    fn run(
        &self,
        x: &[f64],
        batch: usize,
        mode: Mode,
        masks: Option<&DropoutMasks>,
        keep_cache: bool,
    ) -> Result<(Vec<f64>, Option<Cache>, Option<BatchStats>)> {
        self.check_input(x, batch)?;
        self.check_masks(masks, batch)?;
        if mode == Mode::Train && batch < 2 {
            return Err(Error::BatchNorm(batch));
        }
        let (io, w) = (self.arch.io_dim(), self.arch.width);
        let p = &self.params;
        let lay = &self.layout;

        let x0 = self.norm.apply(x);
        let mut h = dense(&x0, batch, &p[lay.in_w.clone()], &p[lay.in_b.clone()], io, w);
        let mut caches = Vec::new();
        let mut stats = BatchStats { means: Vec::new(), vars: Vec::new() };
        let mut block_input = h.clone();

        for (li, slots) in lay.layers.iter().enumerate() {
            let input = if li % 2 == 0 { &block_input } else { &h };
            let z = dense(input, batch, &p[slots.w.clone()], &p[slots.b.clone()], w, w);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; w];
                    for row in z.chunks_exact(w) {
                        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= batch as f64);
                    let mut var = vec![0.0; w];
                    for row in z.chunks_exact(w) {
                        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= batch as f64);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running[slots.mean.clone()].to_vec(),
                    self.running[slots.var.clone()].to_vec(),
                ),
            };
            let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let gamma = &p[slots.gamma.clone()];
            let beta = &p[slots.beta.clone()];
            let mut xhat = vec![0.0; batch * w];
            let mut y = vec![0.0; batch * w];
            let mut out = vec![0.0; batch * w];
            for b in 0..batch {
                for f in 0..w {
                    let i = b * w + f;
                    xhat[i] = (z[i] - mean[f]) * invstd[f];
                    y[i] = gamma[f] * xhat[i] + beta[f];
                    let r = y[i].max(0.0);
                    out[i] = match masks {
                        Some(m) => r * m.sites[li][i],
                        None => r,
                    };
                }
            }
            if mode == Mode::Train {
                stats.means.push(mean);
                stats.vars.push(var);
            }
            let layer_input = if keep_cache { input.clone() } else { Vec::new() };
            if li % 2 == 1 {
                // residual add closes the block
                for (o, r) in out.iter_mut().zip(&block_input) {
                    *o += r;
                }
                block_input = out.clone();
            }
            h = out;
            if keep_cache {
                caches.push(LayerCache { input: layer_input, xhat, invstd, y });
            }
        }

        let mut y = dense(&h, batch, &p[lay.out_w.clone()], &p[lay.out_b.clone()], w, io);
        y.iter_mut().for_each(|v| *v *= self.output_scale);
        let cache = keep_cache.then_some(Cache { x0, layers: caches, h_final: h });
        let stats = (mode == Mode::Train).then_some(stats);
        Ok((y, cache, stats))
    }

    /// Exponential averages of the batch statistics. The variance is the
    /// biased one used for normalization in train mode.
    fn update_running(&mut self, stats: &BatchStats) {
        let m = self.bn_momentum;
        for (li, slots) in self.layout.layers.iter().enumerate() {
            for (r, v) in self.running[slots.mean.clone()].iter_mut().zip(&stats.means[li]) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.running[slots.var.clone()].iter_mut().zip(&stats.vars[li]) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
    }

    /// Eval-mode prediction: running statistics, no dropout. `x` holds
    /// `batch` rows of raw flattened `(u, v, z)`.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.run(x, batch, Mode::Eval, None, false)?.0)
    }

    /// Forward pass in the network's current mode. Train mode uses batch
    /// statistics, applies `masks` if given and updates running statistics.
    pub fn forward(&mut self, x: &[f64], batch: usize, masks: Option<&DropoutMasks>) -> Result<Vec<f64>> {
        match self.mode {
            Mode::Eval => self.predict(x, batch),
            Mode::Train => {
                let (y, _, stats) = self.run(x, batch, Mode::Train, masks, false)?;
                self.update_running(&stats.unwrap());
                Ok(y)
            }
        }
    }

    /// Mean pose loss of a train-mode forward pass, leaving running
    /// statistics untouched.
    pub fn batch_loss(&self, x: &[f64], targets: &[f64], batch: usize, masks: Option<&DropoutMasks>) -> Result<f64> {
        let (y, _, _) = self.run(x, batch, Mode::Train, masks, false)?;
        Ok(mean_pose_loss(&y, targets, self.arch.n_joints, batch)?.0)
    }

    /// Train-mode forward and reverse pass. Returns the mean pose loss over the
    /// batch and its gradient with respect to every parameter (same layout as
    /// `params`). Running statistics are updated.
    pub fn backward(
        &mut self,
        x: &[f64],
        targets: &[f64],
        batch: usize,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Vec<f64>)> {
        if self.mode != Mode::Train {
            return Err(Error::Input("backward needs train mode".into()));
        }
        let (y, cache, stats) = self.run(x, batch, Mode::Train, masks, true)?;
        let cache = cache.unwrap();
        let (loss, dy) = mean_pose_loss(&y, targets, self.arch.n_joints, batch)?;
        let grads = self.reverse(&cache, &dy, batch, masks);
        self.update_running(&stats.unwrap());
        Ok((loss, grads))
    }

    fn reverse(&self, cache: &Cache, dy: &[f64], batch: usize, masks: Option<&DropoutMasks>) -> Vec<f64> {
        let (io, w) = (self.arch.io_dim(), self.arch.width);
        let p = &self.params;
        let lay = &self.layout;
        let mut g = vec![0.0; p.len()];

        let dlin: Vec<f64> = dy.iter().map(|v| v * self.output_scale).collect();
        let (dw, db, dh) = dense_backward(&cache.h_final, &dlin, batch, &p[lay.out_w.clone()], w, io, true);
        g[lay.out_w.clone()].copy_from_slice(&dw);
        g[lay.out_b.clone()].copy_from_slice(&db);
        // gradient w.r.t. the running residual stream
        let mut d_stream = dh.unwrap();
        let mut d_branch = d_stream.clone();

        for li in (0..lay.layers.len()).rev() {
            let slots = &lay.layers[li];
            let lc = &cache.layers[li];
            let gamma = &p[slots.gamma.clone()];
            let mut dyb = vec![0.0; batch * w];
            for i in 0..batch * w {
                let mut d = d_branch[i];
                if let Some(m) = masks {
                    d *= m.sites[li][i];
                }
                if lc.y[i] > 0.0 {
                    dyb[i] = d;
                }
            }
            let mut dgamma = vec![0.0; w];
            let mut dbeta = vec![0.0; w];
            let mut sum_dxhat = vec![0.0; w];
            let mut sum_dxhat_xhat = vec![0.0; w];
            for b in 0..batch {
                for f in 0..w {
                    let i = b * w + f;
                    dgamma[f] += dyb[i] * lc.xhat[i];
                    dbeta[f] += dyb[i];
                    let dxh = dyb[i] * gamma[f];
                    sum_dxhat[f] += dxh;
                    sum_dxhat_xhat[f] += dxh * lc.xhat[i];
                }
            }
            let n = batch as f64;
            let mut dz = vec![0.0; batch * w];
            for b in 0..batch {
                for f in 0..w {
                    let i = b * w + f;
                    let dxh = dyb[i] * gamma[f];
                    dz[i] = lc.invstd[f] / n * (n * dxh - sum_dxhat[f] - lc.xhat[i] * sum_dxhat_xhat[f]);
                }
            }
            g[slots.gamma.clone()].copy_from_slice(&dgamma);
            g[slots.beta.clone()].copy_from_slice(&dbeta);
            let (dw, db, dx) = dense_backward(&lc.input, &dz, batch, &p[slots.w.clone()], w, w, true);
            g[slots.w.clone()].copy_from_slice(&dw);
            g[slots.b.clone()].copy_from_slice(&db);
            let dx = dx.unwrap();
            if li % 2 == 1 {
                // into the first layer of the same block
                d_branch = dx;
            } else {
                // block input receives the skip path plus the branch
                for (s, v) in d_stream.iter_mut().zip(&dx) {
                    *s += v;
                }
                d_branch = d_stream.clone();
            }
        }

        let (dw, db, _) = dense_backward(&cache.x0, &d_stream, batch, &p[lay.in_w.clone()], io, w, false);
        g[lay.in_w.clone()].copy_from_slice(&dw);
        g[lay.in_b.clone()].copy_from_slice(&db);
        g
    }
}

/// Pose loss: per sample, `(1/N) sum_n |gt_n - pred_n|_1`; returns its batch
/// mean and the gradient w.r.t. the predictions (subgradient 0 at ties).
pub fn mean_pose_loss(pred: &[f64], gt: &[f64], n_joints: usize, batch: usize) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() || pred.len() != 3 * n_joints * batch {
        return Err(Error::dim(3 * n_joints * batch, format!("{} / {}", pred.len(), gt.len())));
    }
    let scale = 1.0 / (n_joints * batch) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            loss += d.abs();
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss * scale, grad))
}
