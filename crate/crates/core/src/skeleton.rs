//! Skeleton topology, pose value types and geodesic scale normalization.
//!
//! Coordinates are stored in double precision. 3D poses are in millimeters,
//! 2D poses in crop pixels with pixel centers at integer coordinates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean neck-to-knee geodesic length used as the scale reference, in mm.
pub const REFERENCE_GEODESIC_MM: f64 = 1077.0;

/// Names of the canonical 17-joint skeleton, in index order.
pub const JOINT_NAMES: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "neck",
    "head",
    "head_top",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const BONES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

/// Kinematic tree over named joints.
///
/// Construct through [`Skeleton::new`] (or deserialize, which goes through the
/// same validation) so that the tree invariants always hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonDoc", into = "SkeletonDoc")]
pub struct Skeleton {
    joint_names: Vec<String>,
    bones: Vec<(usize, usize)>,
    root: usize,
    geodesic_path: Vec<usize>,
    parents: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    joint_names: Vec<String>,
    bones: Vec<(usize, usize)>,
    root: usize,
    geodesic_path: Vec<usize>,
}

impl TryFrom<SkeletonDoc> for Skeleton {
    type Error = Error;

    fn try_from(doc: SkeletonDoc) -> Result<Self> {
        Skeleton::new(doc.joint_names, doc.bones, doc.root, doc.geodesic_path)
    }
}

impl From<Skeleton> for SkeletonDoc {
    fn from(s: Skeleton) -> Self {
        SkeletonDoc {
            joint_names: s.joint_names,
            bones: s.bones,
            root: s.root,
            geodesic_path: s.geodesic_path,
        }
    }
}

impl Skeleton {
    /// Validates and builds a skeleton.
    ///
    /// Bones are `(parent, child)` pairs. They must form a tree rooted at `root`
    /// covering every joint. The geodesic path must start at a joint named
    /// `neck`, end at a joint whose name contains `knee`, and walk along bones.
    pub fn new(
        joint_names: Vec<String>,
        bones: Vec<(usize, usize)>,
        root: usize,
        geodesic_path: Vec<usize>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::Skeleton("no joints".into()));
        }
        if root >= n {
            return Err(Error::Skeleton(format!("root index {root} out of range")));
        }
        if bones.len() != n - 1 {
            return Err(Error::Skeleton(format!(
                "{} joints need {} bones, got {}",
                n,
                n - 1,
                bones.len()
            )));
        }
        let mut parents = vec![None; n];
        for &(p, c) in &bones {
            if p >= n || c >= n {
                return Err(Error::Skeleton(format!("bone ({p}, {c}) out of range")));
            }
            if c == root {
                return Err(Error::Skeleton("root joint cannot have a parent".into()));
            }
            if parents[c].is_some() {
                return Err(Error::Skeleton(format!("joint {c} has two parents")));
            }
            parents[c] = Some(p);
        }
        // Every joint must reach the root by following parents.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while j != root {
                match parents[j] {
                    Some(p) => j = p,
                    None => {
                        return Err(Error::Skeleton(format!(
                            "joint {start} is not connected to the root"
                        )))
                    }
                }
                steps += 1;
                if steps > n {
                    return Err(Error::Skeleton("bones contain a cycle".into()));
                }
            }
        }

        if geodesic_path.len() < 2 {
            return Err(Error::Skeleton("geodesic path needs at least 2 joints".into()));
        }
        if let Some(&j) = geodesic_path.iter().find(|&&j| j >= n) {
            return Err(Error::Skeleton(format!("geodesic path joint {j} out of range")));
        }
        let first = &joint_names[geodesic_path[0]];
        let last = &joint_names[*geodesic_path.last().unwrap()];
        if first != "neck" {
            return Err(Error::Skeleton(format!(
                "geodesic path must start at neck, starts at {first}"
            )));
        }
        if !last.contains("knee") {
            return Err(Error::Skeleton(format!(
                "geodesic path must end at a knee, ends at {last}"
            )));
        }
        for w in geodesic_path.windows(2) {
            let linked = parents[w[0]] == Some(w[1]) || parents[w[1]] == Some(w[0]);
            if !linked {
                return Err(Error::Skeleton(format!(
                    "geodesic path step {} -> {} is not a bone",
                    w[0], w[1]
                )));
            }
        }

        Ok(Skeleton {
            joint_names,
            bones,
            root,
            geodesic_path,
            parents,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn geodesic_path(&self) -> &[usize] {
        &self.geodesic_path
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Bones ordered so every parent is placed before its children.
    pub fn bones_topological(&self) -> Vec<(usize, usize)> {
        let mut placed = vec![false; self.num_joints()];
        placed[self.root] = true;
        let mut out = Vec::with_capacity(self.bones.len());
        while out.len() < self.bones.len() {
            for &(p, c) in &self.bones {
                if placed[p] && !placed[c] {
                    placed[c] = true;
                    out.push((p, c));
                }
            }
        }
        out
    }

    /// Index of the bone whose child is `joint`.
    pub fn bone_to(&self, joint: usize) -> Option<usize> {
        self.bones.iter().position(|&(_, c)| c == joint)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }
}

/// The canonical 17-joint tree rooted at the pelvis, with the geodesic path
/// neck, spine, pelvis, right hip, right knee.
pub fn default_skeleton() -> Skeleton {
    let names = JOINT_NAMES.iter().map(|s| s.to_string()).collect();
    Skeleton::new(names, BONES.to_vec(), 0, vec![8, 7, 0, 1, 2])
        .expect("built-in skeleton is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera,
    RootRelative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
    pub frame: Frame,
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>, frame: Frame) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite 3D coordinate".into()));
        }
        Ok(Pose3D { coords, frame })
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    /// Translates so that `root` sits at the origin.
    pub fn root_relative(&self, root: usize) -> Pose3D {
        let r = self.coords[root];
        Pose3D {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0] - r[0], c[1] - r[1], c[2] - r[2]])
                .collect(),
            frame: Frame::RootRelative,
        }
    }

    pub fn scaled(&self, s: f64) -> Pose3D {
        Pose3D {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0] * s, c[1] * s, c[2] * s])
                .collect(),
            frame: self.frame,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], frame: Frame) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::dim("multiple of 3", flat.len()));
        }
        Pose3D::new(
            flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            frame,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>, visibility: Vec<bool>) -> Result<Self> {
        if coords.len() != visibility.len() {
            return Err(Error::dim(coords.len(), visibility.len()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite 2D coordinate".into()));
        }
        Ok(Pose2D { coords, visibility })
    }

    pub fn all_visible(coords: Vec<[f64; 2]>) -> Result<Self> {
        let n = coords.len();
        Pose2D::new(coords, vec![true; n])
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }
}

/// Image-plane coordinates plus root-relative depth (`z_root - z_joint`, mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose25D {
    pub uv: Vec<[f64; 2]>,
    pub z: Vec<f64>,
    /// Half-range of root-relative depth mapped onto the depth cube, mm.
    pub depth_scale: f64,
}

impl Pose25D {
    pub fn new(uv: Vec<[f64; 2]>, z: Vec<f64>, depth_scale: f64) -> Result<Self> {
        if uv.len() != z.len() {
            return Err(Error::dim(uv.len(), z.len()));
        }
        if !(depth_scale > 0.0 && depth_scale.is_finite()) {
            return Err(Error::Input(format!("depth_scale must be positive, got {depth_scale}")));
        }
        if uv.iter().flatten().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite 2.5D coordinate".into()));
        }
        Ok(Pose25D { uv, z, depth_scale })
    }

    pub fn num_joints(&self) -> usize {
        self.uv.len()
    }

    /// Flattened `(u, v, z)` triples.
    pub fn flatten(&self) -> Vec<f64> {
        self.uv
            .iter()
            .zip(&self.z)
            .flat_map(|(uv, &z)| [uv[0], uv[1], z])
            .collect()
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Accumulated bone length along the skeleton's geodesic path, mm.
pub fn geodesic_distance(pose: &Pose3D, skel: &Skeleton) -> Result<f64> {
    if pose.num_joints() != skel.num_joints() {
        return Err(Error::dim(skel.num_joints(), pose.num_joints()));
    }
    Ok(skel
        .geodesic_path
        .windows(2)
        .map(|w| dist3(pose.coords[w[0]], pose.coords[w[1]]))
        .sum())
}

/// Rescales the pose so its geodesic distance equals `reference_mm`.
pub fn normalize_scale(pose: &Pose3D, skel: &Skeleton, reference_mm: f64) -> Result<Pose3D> {
    let geo = geodesic_distance(pose, skel)?;
    if !(geo > 0.0) {
        return Err(Error::DegeneratePose("zero geodesic distance".into()));
    }
    Ok(pose.scaled(reference_mm / geo))
}
