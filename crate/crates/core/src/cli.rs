//! `poselift` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format error, 3 numerical
//! failure (divergence, failed gradient check).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, load_records, DatasetConfig, SampleRecord};
use crate::depthvol::{encode_volume, DepthVolume, DEFAULT_CHANNELS, DEFAULT_DEPTH_SCALE_MM};
use crate::error::{Error, Result};
use crate::gradcheck::{report_text, run_gradcheck, GradcheckConfig};
use crate::heatmap::{render_bone_heatmaps, render_joint_heatmaps};
use crate::io::{read_jsonl, sha256_hex, to_jsonl, write_atomic};
use crate::lifting::{checkpoint, history_csv, Architecture, TrainConfig, DEFAULT_BLOCKS, DEFAULT_WIDTH};
use crate::metrics::{evaluate_batch, PoseRecord, PCK_THRESHOLD_MM};
use crate::pipeline::{predict_records, train_on_records, LiftingSetup};
use crate::skeleton::{default_skeleton, Pose25D, Pose2D};
use crate::softargmax::{assemble_pose25d, DEFAULT_GAIN};
use crate::tensor_file::TensorFile;

pub const THREADS_ENV: &str = "POSELIFT_THREADS";
pub const ENCODE_MANIFEST: &str = "encode.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_MANIFEST: &str = "train.json";

#[derive(Debug, Parser)]
#[command(name = "poselift", version, about = "Heatmap codecs, 2.5D decoding and 3D pose lifting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pose dataset (JSONL + manifest).
    Synth(SynthArgs),
    /// Render joint heatmaps, bone heatmaps and depth volumes.
    Encode(EncodeArgs),
    /// Soft-argmax decode depth volumes back to 2.5D poses.
    Decode(DecodeArgs),
    /// Train the lifting network.
    Train(TrainArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Per-sample bone lengths are scaled by a factor in [1-j, 1+j].
    #[arg(long, default_value_t = 0.0)]
    pub scale_jitter: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Dataset directory or JSONL file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Gaussian width in grid pixels.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Number of depth channels.
    #[arg(long, default_value_t = DEFAULT_CHANNELS)]
    pub cube_size: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE_MM)]
    pub depth_scale_mm: f64,
    /// Output grid as WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64")]
    pub grid: String,
    /// Encode at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Directory written by `encode`.
    #[arg(long)]
    pub input: PathBuf,
    /// Decoded 2.5D poses (JSONL, image pixels).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GAIN)]
    pub gain: f64,
    /// Ground-truth dataset for a per-joint roundtrip report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Roundtrip report CSV (defaults next to `--out`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or JSONL file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub dropout: f64,
    /// Rescale every subject to the reference geodesic distance.
    #[arg(long)]
    pub normalize_geodesic: bool,
    /// 1-based epoch at which the learning rate drops; 0 disables.
    #[arg(long, default_value_t = 17)]
    pub lr_decay_epoch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay_factor: f64,
    /// Per-epoch multiplicative learning-rate decay.
    #[arg(long, default_value_t = 1.0)]
    pub lr_gamma: f64,
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCKS)]
    pub blocks: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE_MM)]
    pub depth_scale_mm: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth JSONL (or dataset directory) with `pose3d` per line.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction JSONL with `pose3d` per line.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Predict with a trained network from the ground-truth 2.5D inputs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Used with `--checkpoint`: the network was trained on normalized subjects.
    #[arg(long)]
    pub normalize_geodesic: bool,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE_MM)]
    pub depth_scale_mm: f64,
    #[arg(long, default_value_t = PCK_THRESHOLD_MM)]
    pub threshold_mm: f64,
    /// Also write the network's predictions here (with `--checkpoint`).
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Comma-separated subset of ops.
    #[arg(long, value_delimiter = ',')]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    // a pool may already exist when called from tests; keep it then
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(0.0..1.0).contains(&a.scale_jitter) {
        return Err(usage("--scale-jitter must be in [0, 1)"));
    }
    let skel = default_skeleton();
    let cfg = DatasetConfig { scale_jitter: a.scale_jitter, ..DatasetConfig::for_skeleton(&skel) };
    let m = generate_dataset(&skel, a.n, a.seed, &cfg, &a.out_dir)?;
    println!("wrote {} samples to {} (config {})", m.n, a.out_dir.display(), &m.config_sha256[..12]);
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("--grid expects WIDTHxHEIGHT, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub index: usize,
    pub image_w: usize,
    pub image_h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeManifest {
    pub source_sha256: String,
    pub sigma: f64,
    pub cube_size: usize,
    pub depth_scale_mm: f64,
    pub grid: [usize; 2],
    pub samples: Vec<EncodedSample>,
}

pub fn sample_file(dir: &Path, index: usize, kind: &str) -> PathBuf {
    dir.join(format!("{index:05}.{kind}.plt"))
}

/// Image pixel to grid pixel, pixel centers at integers on both sides.
fn to_grid(p: f64, image: usize, grid: usize) -> f64 {
    (p + 0.5) * grid as f64 / image as f64 - 0.5
}

fn from_grid(p: f64, image: usize, grid: usize) -> f64 {
    (p + 0.5) * image as f64 / grid as f64 - 0.5
}

fn records_source(path: &Path) -> Result<(Vec<SampleRecord>, String)> {
    let file = if path.is_dir() { path.join(crate::datagen::SAMPLES_FILE) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
    Ok((read_jsonl(&file)?, sha256_hex(&bytes)))
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    if a.cube_size < 2 {
        return Err(usage("--cube-size must be at least 2"));
    }
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(usage("--sigma must be positive"));
    }
    if !(a.depth_scale_mm > 0.0 && a.depth_scale_mm.is_finite()) {
        return Err(usage("--depth-scale-mm must be positive"));
    }
    let (gw, gh) = parse_grid(&a.grid)?;
    let skel = default_skeleton();
    let (records, source_sha256) = records_source(&a.input)?;
    let n = a.limit.map_or(records.len(), |l| l.min(records.len()));
    let mut samples = Vec::with_capacity(n);
    for (i, rec) in records.iter().take(n).enumerate() {
        if rec.pose2d.len() != skel.num_joints() {
            return Err(Error::dim(skel.num_joints(), rec.pose2d.len()));
        }
        let (iw, ih) = (rec.camera.w, rec.camera.h);
        let uv: Vec<[f64; 2]> = rec.pose2d.iter().map(|p| [to_grid(p[0], iw, gw), to_grid(p[1], ih, gh)]).collect();
        let p2 = Pose2D::all_visible(uv.clone())?;
        let joints = render_joint_heatmaps(&p2, gw, gh, a.sigma)?;
        let bones = render_bone_heatmaps(&p2, &skel, gw, gh, a.sigma)?;
        let volume = encode_volume(&Pose25D::new(uv, rec.z_r.clone(), a.depth_scale_mm)?, gw, gh, a.cube_size, a.sigma)?;
        TensorFile::from_f64(joints.shape().to_vec(), &joints.data)?.write(&sample_file(&a.out_dir, i, "joints"))?;
        TensorFile::from_f64(bones.shape().to_vec(), &bones.data)?.write(&sample_file(&a.out_dir, i, "bones"))?;
        TensorFile::from_f64(volume.shape().to_vec(), &volume.data)?.write(&sample_file(&a.out_dir, i, "volume"))?;
        samples.push(EncodedSample { index: i, image_w: iw, image_h: ih });
    }
    let manifest = EncodeManifest {
        source_sha256,
        sigma: a.sigma,
        cube_size: a.cube_size,
        depth_scale_mm: a.depth_scale_mm,
        grid: [gw, gh],
        samples,
    };
    write_atomic(&a.out_dir.join(ENCODE_MANIFEST), &pretty_json(&manifest))?;
    println!("encoded {n} samples into {}", a.out_dir.display());
    Ok(())
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    if !a.gain.is_finite() {
        return Err(usage("--gain must be finite"));
    }
    let mpath = a.input.join(ENCODE_MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: EncodeManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    let [gw, gh] = m.grid;
    let mut decoded = Vec::with_capacity(m.samples.len());
    for s in &m.samples {
        let path = sample_file(&a.input, s.index, "volume");
        let t = TensorFile::read(&path)?;
        if t.dims.len() != 4 || t.dims[1] != m.cube_size || t.dims[2] != gh || t.dims[3] != gw {
            return Err(Error::Format(format!(
                "{}: dims {:?} do not match [J, {}, {gh}, {gw}]",
                path.display(),
                t.dims,
                m.cube_size
            )));
        }
        let vol = DepthVolume { data: t.to_f64(), ..DepthVolume::zeros(t.dims[0], t.dims[1], gw, gh, m.depth_scale_mm) };
        let p = assemble_pose25d(&vol, a.gain)?;
        let uv = p
            .uv
            .iter()
            .map(|q| [from_grid(q[0], s.image_w, gw), from_grid(q[1], s.image_h, gh)])
            .collect();
        decoded.push(Pose25D::new(uv, p.z, p.depth_scale)?);
    }
    write_atomic(&a.out, to_jsonl(&decoded).as_bytes())?;

    if let Some(gt) = &a.gt {
        let records = load_records(gt)?;
        let mut csv = String::from("sample,joint,du_px,dv_px,dz_mm,uv_err_px\n");
        for (s, p) in m.samples.iter().zip(&decoded) {
            let rec = records
                .get(s.index)
                .ok_or_else(|| Error::Input(format!("ground truth has no sample {}", s.index)))?;
            for (j, (uv, z)) in p.uv.iter().zip(&p.z).enumerate() {
                let du = uv[0] - rec.pose2d[j][0];
                let dv = uv[1] - rec.pose2d[j][1];
                let dz = z - rec.z_r[j];
                let _ = writeln!(csv, "{},{j},{du:.6},{dv:.6},{dz:.6},{:.6}", s.index, du.hypot(dv));
            }
        }
        let report = a.report.clone().unwrap_or_else(|| a.out.with_extension("roundtrip.csv"));
        write_atomic(&report, csv.as_bytes())?;
    }
    println!("decoded {} samples to {}", decoded.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainManifest<'a> {
    data_sha256: String,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    dropout: f64,
    lr_decay_epoch: Option<usize>,
    lr_decay_factor: f64,
    lr_gamma: f64,
    normalize_geodesic: bool,
    width: usize,
    blocks: usize,
    depth_scale_mm: f64,
    checkpoint: &'a str,
    history: &'a str,
    final_train_mpjpe: f64,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.epochs == 0 || a.batch < 2 || a.width == 0 {
        return Err(usage("--epochs and --width must be positive and --batch at least 2"));
    }
    if !(0.0..1.0).contains(&a.dropout) || !(a.lr >= 0.0) {
        return Err(usage("--dropout must be in [0, 1) and --lr non-negative"));
    }
    let skel = default_skeleton();
    let (records, data_sha256) = records_source(&a.data)?;
    let setup = LiftingSetup {
        arch: Architecture { n_joints: skel.num_joints(), width: a.width, blocks: a.blocks },
        depth_scale: a.depth_scale_mm,
        normalize_geodesic: a.normalize_geodesic,
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        dropout_rate: a.dropout,
        lr_decay_epoch: (a.lr_decay_epoch > 0).then_some(a.lr_decay_epoch),
        lr_decay_factor: a.lr_decay_factor,
        lr_epoch_gamma: a.lr_gamma,
        ..TrainConfig::default()
    };
    let (net, history) = train_on_records(&records, &skel, &setup, &cfg)?;
    checkpoint::save(&net, &a.out_dir.join(CHECKPOINT_FILE))?;
    write_atomic(&a.out_dir.join(HISTORY_FILE), history_csv(&history).as_bytes())?;
    let last = history.last().expect("at least one epoch");
    let manifest = TrainManifest {
        data_sha256,
        seed: a.seed,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        dropout: a.dropout,
        lr_decay_epoch: cfg.lr_decay_epoch,
        lr_decay_factor: a.lr_decay_factor,
        lr_gamma: a.lr_gamma,
        normalize_geodesic: a.normalize_geodesic,
        width: a.width,
        blocks: a.blocks,
        depth_scale_mm: a.depth_scale_mm,
        checkpoint: CHECKPOINT_FILE,
        history: HISTORY_FILE,
        final_train_mpjpe: last.train_mpjpe,
    };
    write_atomic(&a.out_dir.join(TRAIN_MANIFEST), &pretty_json(&manifest))?;
    println!("epoch {}: train loss {:.4}, train MPJPE {:.3} mm", last.epoch, last.train_loss, last.train_mpjpe);
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let skel = default_skeleton();
    let gt_file = if a.gt.is_dir() { a.gt.join(crate::datagen::SAMPLES_FILE) } else { a.gt.clone() };
    let gts: Vec<PoseRecord> = read_jsonl(&gt_file)?;
    let preds: Vec<PoseRecord> = match (&a.pred, &a.checkpoint) {
        (Some(p), _) => read_jsonl(p)?,
        (None, Some(c)) => {
            let net = checkpoint::load(c)?;
            let records: Vec<SampleRecord> = read_jsonl(&gt_file)?;
            predict_records(&net, &records, &skel, a.depth_scale_mm, a.normalize_geodesic)?
                .into_iter()
                .map(|p| PoseRecord { pose3d: p.coords, group: None })
                .collect()
        }
        (None, None) => return Err(usage("one of --pred or --checkpoint is required")),
    };
    if let (Some(out), Some(_)) = (&a.pred_out, &a.checkpoint) {
        write_atomic(out, to_jsonl(&preds).as_bytes())?;
    }
    let report = evaluate_batch(&preds, &gts, skel.root(), a.threshold_mm)?;
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    let (m, pa, pck) = report.mean();
    println!("samples {}: MPJPE {m:.3} mm, PA-MPJPE {pa:.3} mm, 3DPCK {:.2}%", report.samples.len(), 100.0 * pck);
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = GradcheckConfig {
        trials: a.trials,
        step: a.step,
        seed: a.seed,
        flip_sign: a.inject_sign_flip,
        ..GradcheckConfig::default()
    };
    let reports = run_gradcheck(&a.ops, &cfg)?;
    let text = report_text(&reports);
    print!("{text}");
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("64x64").unwrap(), (64, 64));
        assert_eq!(parse_grid("32X16").unwrap(), (32, 16));
        assert!(parse_grid("64").is_err());
        assert!(parse_grid("0x4").is_err());
    }

    #[test]
    fn grid_mapping_inverts() {
        for p in [-3.0, 0.0, 17.25, 255.0] {
            let g = to_grid(p, 256, 64);
            assert!((from_grid(g, 256, 64) - p).abs() < 1e-12);
        }
        assert_eq!(to_grid(1.5, 256, 64), 0.0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["poselift", "synth", "--n", "0", "--out-dir", "/nonexistent/x"]), 1);
        assert_eq!(run(["poselift", "bogus"]), 1);
        assert_eq!(run(["poselift", "synth", "--n", "x", "--out-dir", "d"]), 1);
    }
}
