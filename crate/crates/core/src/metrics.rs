//! Pose error metrics: MPJPE, Procrustes-aligned MPJPE and 3DPCK.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, Pose3D};

pub const PCK_THRESHOLD_MM: f64 = 150.0;

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: Matrix3::identity(),
            scale: 1.0,
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        let coords = pose
            .coords
            .iter()
            .map(|c| {
                let p = self.rotation * Vector3::from(*c) * self.scale + self.translation;
                [p.x, p.y, p.z]
            })
            .collect();
        Pose3D { coords, frame: pose.frame }
    }
}

fn same_len(pred: &Pose3D, gt: &Pose3D) -> Result<()> {
    if pred.num_joints() != gt.num_joints() {
        return Err(Error::dim(gt.num_joints(), pred.num_joints()));
    }
    if gt.num_joints() == 0 {
        return Err(Error::Input("empty pose".into()));
    }
    Ok(())
}

fn root_aligned_distances(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<Vec<f64>> {
    same_len(pred, gt)?;
    if root >= gt.num_joints() {
        return Err(Error::Input(format!("root index {root} out of range")));
    }
    let (pr, gr) = (Vector3::from(pred.coords[root]), Vector3::from(gt.coords[root]));
    Ok(pred
        .coords
        .iter()
        .zip(&gt.coords)
        .map(|(p, g)| ((Vector3::from(*p) - pr) - (Vector3::from(*g) - gr)).norm())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean per-joint Euclidean distance after moving both roots to the origin.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<f64> {
    Ok(mean(&root_aligned_distances(pred, gt, root)?))
}

/// Fraction of joints within `threshold_mm` (inclusive) after root alignment.
pub fn pck3d(pred: &Pose3D, gt: &Pose3D, root: usize, threshold_mm: f64) -> Result<f64> {
    let d = root_aligned_distances(pred, gt, root)?;
    Ok(d.iter().filter(|&&x| x <= threshold_mm).count() as f64 / d.len() as f64)
}

fn centered(pose: &Pose3D) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let pts: Vec<Vector3<f64>> = pose.coords.iter().map(|c| Vector3::from(*c)).collect();
    let mu = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let c = pts.iter().map(|p| p - mu).collect();
    (mu, c)
}

fn check_spread(pts: &[Vector3<f64>], which: &str) -> Result<()> {
    let scatter: Matrix3<f64> = pts.iter().map(|p| p * p.transpose()).sum();
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Rank(format!("{which} points are coincident or collinear")));
    }
    Ok(())
}

/// Least-squares similarity transform taking `pred` onto `gt`, restricted to
/// proper rotations, and the transformed `pred`.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<(SimilarityTransform, Pose3D)> {
    same_len(pred, gt)?;
    if pred.num_joints() < 3 {
        return Err(Error::Rank(format!("need at least 3 joints, got {}", pred.num_joints())));
    }
    let (mu_p, xs) = centered(pred);
    let (mu_g, ys) = centered(gt);
    check_spread(&xs, "predicted")?;
    check_spread(&ys, "ground-truth")?;

    let cross: Matrix3<f64> = ys.iter().zip(&xs).map(|(y, x)| y * x.transpose()).sum();
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * fix * v_t;
    let var_p: f64 = xs.iter().map(|x| x.norm_squared()).sum();
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    let t = SimilarityTransform { rotation, scale, translation };
    let aligned = t.apply(pred);
    Ok((t, aligned))
}

/// Mean per-joint distance after optimal similarity alignment.
pub fn pa_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    let (_, aligned) = procrustes_align(pred, gt)?;
    let d: Vec<f64> = aligned
        .coords
        .iter()
        .zip(&gt.coords)
        .map(|(a, g)| (Vector3::from(*a) - Vector3::from(*g)).norm())
        .collect();
    Ok(mean(&d))
}

/// One line of a pose JSONL file. Extra keys are ignored, so dataset records
/// can be used directly as ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub pose3d: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl PoseRecord {
    pub fn pose(&self) -> Result<Pose3D> {
        Pose3D::new(self.pose3d.clone(), Frame::Camera)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub index: usize,
    pub group: Option<String>,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pck3d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    /// Means of `(mpjpe, pa_mpjpe, pck3d)` over the given samples.
    fn means<'a>(rows: impl Iterator<Item = &'a SampleMetrics>) -> (f64, f64, f64, usize) {
        let (mut a, mut b, mut c, mut n) = (0.0, 0.0, 0.0, 0);
        for r in rows {
            a += r.mpjpe;
            b += r.pa_mpjpe;
            c += r.pck3d;
            n += 1;
        }
        let n_f = n.max(1) as f64;
        (a / n_f, b / n_f, c / n_f, n)
    }

    pub fn mean(&self) -> (f64, f64, f64) {
        let (a, b, c, _) = Self::means(self.samples.iter());
        (a, b, c)
    }

    /// Per-sample rows followed by per-group means (when groups are present)
    /// and the overall mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,group,mpjpe_mm,pa_mpjpe_mm,pck3d\n");
        for r in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.index,
                r.group.as_deref().unwrap_or(""),
                r.mpjpe,
                r.pa_mpjpe,
                r.pck3d
            );
        }
        let mut groups: BTreeMap<&str, Vec<&SampleMetrics>> = BTreeMap::new();
        for r in &self.samples {
            if let Some(g) = r.group.as_deref() {
                groups.entry(g).or_default().push(r);
            }
        }
        for (g, rows) in groups {
            let (a, b, c, _) = Self::means(rows.into_iter());
            let _ = writeln!(out, "mean,{g},{a:.6},{b:.6},{c:.6}");
        }
        let (a, b, c) = self.mean();
        let _ = writeln!(out, "mean,,{a:.6},{b:.6},{c:.6}");
        out
    }
}

/// Scores paired predictions against ground truth.
pub fn evaluate_batch(
    preds: &[PoseRecord],
    gts: &[PoseRecord],
    root: usize,
    threshold_mm: f64,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::dim(format!("{} predictions", gts.len()), preds.len()));
    }
    let samples = preds
        .iter()
        .zip(gts)
        .enumerate()
        .map(|(index, (p, g))| {
            let (pp, gp) = (p.pose()?, g.pose()?);
            Ok(SampleMetrics {
                index,
                group: g.group.clone().or_else(|| p.group.clone()),
                mpjpe: mpjpe(&pp, &gp, root)?,
                pa_mpjpe: pa_mpjpe(&pp, &gp)?,
                pck3d: pck3d(&pp, &gp, root, threshold_mm)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { samples })
}
