//! Synthetic skeletons, pinhole projection and JSONL dataset generation.
//!
//! Camera frame: x right, y down, z forward (mm). Poses are grown from the
//! root by walking the kinematic tree; each bone gets its fixed length and a
//! direction drawn from a cone around a canonical body-frame direction, then
//! the whole body is turned by a random yaw.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{derive_seed, read_jsonl, sha256_hex, to_jsonl, write_atomic};
use crate::skeleton::{normalize_scale, Frame, Pose25D, Pose2D, Pose3D, Skeleton, REFERENCE_GEODESIC_MM};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, w: usize, h: usize) -> Result<Self> {
        let cam = Camera { fx, fy, cx, cy, w, h };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Input(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        let inside = (0.0..=self.w as f64).contains(&self.cx) && (0.0..=self.h as f64).contains(&self.cy);
        if self.w == 0 || self.h == 0 || !inside {
            return Err(Error::Input("principal point must lie inside a non-empty image".into()));
        }
        Ok(())
    }
}

impl Default for Camera {
    /// 256 x 256 crop, 1146 px focal length, principal point at the center.
    fn default() -> Self {
        Camera { fx: 1146.0, fy: 1146.0, cx: 128.0, cy: 128.0, w: 256, h: 256 }
    }
}

/// Pinhole projection; also returns root-relative depths `z_root - z_j`.
pub fn project(pose: &Pose3D, cam: &Camera, root: usize) -> Result<(Pose2D, Vec<f64>)> {
    if root >= pose.num_joints() {
        return Err(Error::dim(format!("root < {}", pose.num_joints()), root));
    }
    let mut uv = Vec::with_capacity(pose.num_joints());
    for (j, &[x, y, z]) in pose.coords.iter().enumerate() {
        if !(z > 0.0) {
            return Err(Error::BehindCamera { joint: j, z });
        }
        uv.push([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]);
    }
    let zr = pose.coords[root][2];
    let z_r = pose.coords.iter().map(|c| zr - c[2]).collect();
    Ok((Pose2D::all_visible(uv)?, z_r))
}

/// Canonical bone lengths (mm) for the built-in skeleton, keyed by child
/// joint name. The neck-spine-pelvis-hip-knee path sums to 1077.
const CANONICAL_LENGTHS: [(&str, f64); 16] = [
    ("r_hip", 132.0),
    ("r_knee", 455.0),
    ("r_ankle", 454.0),
    ("l_hip", 132.0),
    ("l_knee", 455.0),
    ("l_ankle", 454.0),
    ("spine", 233.0),
    ("neck", 257.0),
    ("head", 121.0),
    ("head_top", 115.0),
    ("l_shoulder", 151.0),
    ("l_elbow", 278.0),
    ("l_wrist", 251.0),
    ("r_shoulder", 151.0),
    ("r_elbow", 278.0),
    ("r_wrist", 251.0),
];

/// Body-frame direction and cone half-angle (degrees) per child joint.
/// The subject faces the camera, so its right side is toward -x.
fn cone_for(name: &str) -> ([f64; 3], f64) {
    const UP: [f64; 3] = [0.0, -1.0, 0.0];
    const DOWN: [f64; 3] = [0.0, 1.0, 0.0];
    match name {
        "r_hip" => ([-1.0, 0.0, 0.0], 10.0),
        "l_hip" => ([1.0, 0.0, 0.0], 10.0),
        "r_knee" | "l_knee" | "r_ankle" | "l_ankle" => (DOWN, 35.0),
        "spine" => (UP, 15.0),
        "neck" | "head_top" => (UP, 20.0),
        "head" => (UP, 25.0),
        "r_shoulder" => ([-1.0, 0.0, 0.0], 15.0),
        "l_shoulder" => ([1.0, 0.0, 0.0], 15.0),
        "r_elbow" | "l_elbow" => (DOWN, 60.0),
        "r_wrist" | "l_wrist" => (DOWN, 80.0),
        _ => (UP, 90.0),
    }
}

/// Bone lengths in the skeleton's bone order. Joints with unknown names get
/// 200 mm.
pub fn default_bone_lengths(skel: &Skeleton) -> Vec<f64> {
    skel.bones()
        .iter()
        .map(|&(_, child)| {
            let name = skel.joint_names()[child].as_str();
            CANONICAL_LENGTHS.iter().find(|(n, _)| *n == name).map_or(200.0, |(_, l)| *l)
        })
        .collect()
}

fn unit_in_cone(rng: &mut impl Rng, axis: [f64; 3], half_angle_deg: f64) -> [f64; 3] {
    let cos_max = half_angle_deg.to_radians().cos();
    let c = rng.random_range(cos_max..=1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    // orthonormal basis around the axis
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(axis, helper));
    let e2 = cross(axis, e1);
    let (sp, cp) = phi.sin_cos();
    std::array::from_fn(|k| c * axis[k] + s * (cp * e1[k] + sp * e2[k]))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Placement of the sampled subject relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    /// Root projects within this many pixels of the principal point.
    pub root_jitter_px: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Placement { depth_min_mm: 3000.0, depth_max_mm: 6000.0, root_jitter_px: 16.0 }
    }
}

/// Camera-space pose with exact bone lengths, deterministic in `seed`.
pub fn sample_pose(skel: &Skeleton, seed: u64, bone_lengths_mm: &[f64], cam: &Camera, place: &Placement) -> Result<Pose3D> {
    if bone_lengths_mm.len() != skel.num_bones() {
        return Err(Error::dim(skel.num_bones(), bone_lengths_mm.len()));
    }
    if bone_lengths_mm.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Input("bone lengths must be positive".into()));
    }
    if !(place.depth_min_mm > 0.0 && place.depth_min_mm <= place.depth_max_mm) {
        return Err(Error::Input("placement depth range must be positive and ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (sy, cy) = yaw.sin_cos();
    let turn = |d: [f64; 3]| [cy * d[0] + sy * d[2], d[1], -sy * d[0] + cy * d[2]];

    let z = rng.random_range(place.depth_min_mm..=place.depth_max_mm);
    let du = rng.random_range(-place.root_jitter_px..=place.root_jitter_px);
    let dv = rng.random_range(-place.root_jitter_px..=place.root_jitter_px);
    let mut coords = vec![[0.0; 3]; skel.num_joints()];
    coords[skel.root()] = [du * z / cam.fx, dv * z / cam.fy, z];

    let bone_index = |child: usize| skel.bones().iter().position(|&(_, c)| c == child).unwrap();
    for (parent, child) in skel.bones_topological() {
        let (axis, angle) = cone_for(&skel.joint_names()[child]);
        let dir = turn(unit_in_cone(&mut rng, axis, angle));
        let len = bone_lengths_mm[bone_index(child)];
        let p = coords[parent];
        coords[child] = [p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]];
    }
    Pose3D::new(coords, Frame::Camera)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub pose3d: Vec<[f64; 3]>,
    pub pose2d: Vec<[f64; 2]>,
    pub z_r: Vec<f64>,
    pub camera: Camera,
    pub subject_scale: f64,
}

impl SampleRecord {
    pub fn from_pose(pose: &Pose3D, cam: &Camera, root: usize, subject_scale: f64) -> Result<Self> {
        let (p2, z_r) = project(pose, cam, root)?;
        Ok(SampleRecord {
            pose3d: pose.coords.clone(),
            pose2d: p2.coords,
            z_r,
            camera: *cam,
            subject_scale,
        })
    }

    pub fn pose3d(&self) -> Result<Pose3D> {
        Pose3D::new(self.pose3d.clone(), Frame::Camera)
    }

    /// Checks that the stored projection and depths match `pose3d` exactly.
    pub fn validate(&self, root: usize) -> Result<()> {
        let again = SampleRecord::from_pose(&self.pose3d()?, &self.camera, root, self.subject_scale)?;
        if again != *self {
            return Err(Error::Input("record projection does not match its 3D pose".into()));
        }
        Ok(())
    }

    pub fn pose25d(&self, depth_scale: f64) -> Result<Pose25D> {
        Pose25D::new(self.pose2d.clone(), self.z_r.clone(), depth_scale)
    }

    /// The same subject rescaled about the camera center so its geodesic
    /// distance is the reference; image coordinates are unchanged. Returns
    /// the record and the applied factor.
    pub fn normalized(&self, skel: &Skeleton, root: usize) -> Result<(SampleRecord, f64)> {
        let pose = self.pose3d()?;
        let scaled = normalize_scale(&pose, skel, REFERENCE_GEODESIC_MM)?;
        let factor = scaled.coords[root][2] / pose.coords[root][2];
        let mut rec = SampleRecord::from_pose(&scaled, &self.camera, root, self.subject_scale)?;
        // keep the image exactly as observed
        rec.pose2d = self.pose2d.clone();
        Ok((rec, factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub camera: Camera,
    pub placement: Placement,
    /// Per-sample bone lengths are multiplied by a factor drawn uniformly
    /// from `[1 - scale_jitter, 1 + scale_jitter]`.
    pub scale_jitter: f64,
    pub bone_lengths_mm: Vec<f64>,
}

impl DatasetConfig {
    pub fn for_skeleton(skel: &Skeleton) -> Self {
        DatasetConfig {
            camera: Camera::default(),
            placement: Placement::default(),
            scale_jitter: 0.0,
            bone_lengths_mm: default_bone_lengths(skel),
        }
    }

    fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::Input(format!("scale jitter must be in [0, 1), got {}", self.scale_jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n: usize,
    pub config: DatasetConfig,
    pub config_sha256: String,
    pub samples_file: String,
    pub samples_sha256: String,
}

/// `n` records; record `i` depends only on `(seed, i)`.
pub fn generate_records(skel: &Skeleton, n: usize, seed: u64, cfg: &DatasetConfig) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &format!("sample/{i}"));
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, "scale"));
            let scale = if cfg.scale_jitter > 0.0 {
                rng.random_range(1.0 - cfg.scale_jitter..=1.0 + cfg.scale_jitter)
            } else {
                1.0
            };
            let lengths: Vec<f64> = cfg.bone_lengths_mm.iter().map(|l| l * scale).collect();
            let pose = sample_pose(skel, derive_seed(s, "pose"), &lengths, &cfg.camera, &cfg.placement)?;
            SampleRecord::from_pose(&pose, &cfg.camera, skel.root(), scale)
        })
        .collect()
}

/// Writes `samples.jsonl` and `manifest.json` into `out_dir`.
pub fn generate_dataset(skel: &Skeleton, n: usize, seed: u64, cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Input("dataset size must be >= 1".into()));
    }
    let records = generate_records(skel, n, seed, cfg)?;
    let body = to_jsonl(&records);
    let config_json = serde_json::to_string(cfg).expect("config serializes");
    let manifest = Manifest {
        seed,
        n,
        config: cfg.clone(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        samples_file: SAMPLES_FILE.into(),
        samples_sha256: sha256_hex(body.as_bytes()),
    };
    write_atomic(&out_dir.join(SAMPLES_FILE), body.as_bytes())?;
    let mut m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    m.push('\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), m.as_bytes())?;
    Ok(manifest)
}

/// Reads records from a JSONL file, or from `samples.jsonl` inside a directory.
pub fn load_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let file: PathBuf = if path.is_dir() { path.join(SAMPLES_FILE) } else { path.to_path_buf() };
    read_jsonl(&file)
}

/// Network inputs and root-relative targets from records. With `normalize`,
/// every subject is first rescaled to the reference geodesic distance; the
/// per-sample factors are returned so predictions can be mapped back to mm.
pub fn lifting_pairs(
    records: &[SampleRecord],
    skel: &Skeleton,
    depth_scale: f64,
    normalize: bool,
) -> Result<(Vec<(Pose25D, Pose3D)>, Vec<f64>)> {
    let root = skel.root();
    let mut pairs = Vec::with_capacity(records.len());
    let mut factors = Vec::with_capacity(records.len());
    for rec in records {
        if rec.pose3d.len() != skel.num_joints() {
            return Err(Error::dim(skel.num_joints(), rec.pose3d.len()));
        }
        let (rec, f) = if normalize { rec.normalized(skel, root)? } else { (rec.clone(), 1.0) };
        pairs.push((rec.pose25d(depth_scale)?, rec.pose3d()?.root_relative(root)));
        factors.push(f);
    }
    Ok((pairs, factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_skeleton, geodesic_distance};

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn projection_examples() {
        let cam = Camera::new(1000.0, 1000.0, 32.0, 32.0, 64, 64).unwrap();
        let pose = Pose3D::new(vec![[0.0, 0.0, 2000.0], [100.0, 0.0, 2000.0], [0.0, 0.0, 2500.0]], Frame::Camera).unwrap();
        let (p2, z_r) = project(&pose, &cam, 0).unwrap();
        assert_eq!(p2.coords[0], [32.0, 32.0]);
        assert_eq!(p2.coords[1], [82.0, 32.0]);
        assert_eq!(z_r, vec![0.0, 0.0, -500.0]);
        let behind = Pose3D::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], Frame::Camera).unwrap();
        assert!(matches!(project(&behind, &cam, 0), Err(Error::BehindCamera { joint: 1, .. })));
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, 2, 2).is_err());
        assert!(Camera::new(1.0, 1.0, 5.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn default_lengths_sum_to_reference_on_geodesic_path() {
        let skel = default_skeleton();
        let lengths = default_bone_lengths(&skel);
        let path = skel.geodesic_path();
        let total: f64 = path
            .windows(2)
            .map(|w| {
                let child = if skel.parent(w[0]) == Some(w[1]) { w[0] } else { w[1] };
                lengths[skel.bone_to(child).unwrap()]
            })
            .sum();
        assert_eq!(total, REFERENCE_GEODESIC_MM);
    }

    #[test]
    fn sampled_bones_have_requested_lengths() {
        let skel = default_skeleton();
        let lengths = default_bone_lengths(&skel);
        for seed in 0..50 {
            let pose = sample_pose(&skel, seed, &lengths, &Camera::default(), &Placement::default()).unwrap();
            for (b, &(p, c)) in skel.bones().iter().enumerate() {
                assert!((dist(pose.coords[p], pose.coords[c]) - lengths[b]).abs() < 1e-9);
            }
        }
        let a = sample_pose(&skel, 3, &lengths, &Camera::default(), &Placement::default()).unwrap();
        let b = sample_pose(&skel, 3, &lengths, &Camera::default(), &Placement::default()).unwrap();
        assert_eq!(a, b);
        assert!(sample_pose(&skel, 3, &lengths[1..], &Camera::default(), &Placement::default()).is_err());
    }

    #[test]
    fn geodesic_equals_path_length_sum() {
        let skel = default_skeleton();
        let cfg = DatasetConfig { scale_jitter: 0.2, ..DatasetConfig::for_skeleton(&skel) };
        for rec in generate_records(&skel, 1000, 11, &cfg).unwrap() {
            let geo = geodesic_distance(&rec.pose3d().unwrap(), &skel).unwrap();
            let want = REFERENCE_GEODESIC_MM * rec.subject_scale;
            assert!((geo - want).abs() < 1e-9 * want, "{geo} vs {want}");
        }
    }

    #[test]
    fn records_are_consistent_and_in_depth_range() {
        let skel = default_skeleton();
        let cfg = DatasetConfig::for_skeleton(&skel);
        let recs = generate_records(&skel, 500, 7, &cfg).unwrap();
        for rec in &recs {
            rec.validate(0).unwrap();
            assert_eq!(rec.z_r[0], 0.0);
            for (j, c) in rec.pose3d.iter().enumerate() {
                assert_eq!(rec.z_r[j], rec.pose3d[0][2] - c[2]);
            }
            assert!(rec.z_r.iter().all(|z| z.abs() < 1000.0));
        }
    }

    #[test]
    fn scaling_about_camera_keeps_image() {
        let skel = default_skeleton();
        let cfg = DatasetConfig { scale_jitter: 0.3, ..DatasetConfig::for_skeleton(&skel) };
        for rec in generate_records(&skel, 50, 5, &cfg).unwrap() {
            let (norm, f) = rec.normalized(&skel, 0).unwrap();
            let geo = geodesic_distance(&norm.pose3d().unwrap(), &skel).unwrap();
            assert!((geo / REFERENCE_GEODESIC_MM - 1.0).abs() < 1e-9);
            assert!((f * rec.subject_scale - 1.0).abs() < 1e-9);
            let (p2, z_r) = project(&norm.pose3d().unwrap(), &rec.camera, 0).unwrap();
            for (a, b) in p2.coords.iter().zip(&rec.pose2d) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
            for (a, b) in z_r.iter().zip(&rec.z_r) {
                assert!((a - b * f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_files_are_reproducible() {
        let skel = default_skeleton();
        let cfg = DatasetConfig::for_skeleton(&skel);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        generate_dataset(&skel, 64, 7, &cfg, &a).unwrap();
        generate_dataset(&skel, 64, 7, &cfg, &b).unwrap();
        for f in [SAMPLES_FILE, MANIFEST_FILE] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        let recs = load_records(&a).unwrap();
        assert_eq!(recs.len(), 64);
        assert!(generate_dataset(&skel, 0, 7, &cfg, &a).is_err());
    }
}
