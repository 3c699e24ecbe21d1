//! MPJPE, PA-MPJPE and 3DPCK on a rotated, rescaled and noised copy of a
//! synthetic pose.

use nalgebra::{Rotation3, Vector3};
use poselift::datagen::{generate_records, DatasetConfig};
use poselift::metrics::{mpjpe, pa_mpjpe, pck3d, SimilarityTransform, PCK_THRESHOLD_MM};
use poselift::skeleton::{default_skeleton, Frame, Pose3D};

fn main() -> poselift::Result<()> {
    let skel = default_skeleton();
    let gt = generate_records(&skel, 1, 8, &DatasetConfig::for_skeleton(&skel))?[0].pose3d()?;
    let tf = SimilarityTransform {
        rotation: Rotation3::from_euler_angles(0.1, -0.3, 0.2).into_inner(),
        scale: 1.1,
        translation: Vector3::new(40.0, -20.0, 100.0),
    };
    let moved = tf.apply(&gt);
    let noisy = Pose3D::new(
        moved.coords.iter().enumerate().map(|(j, c)| [c[0] + (j % 3) as f64 * 15.0, c[1], c[2] - 10.0]).collect(),
        Frame::Camera,
    )?;
    for (label, pred) in [("similarity copy", &moved), ("similarity + noise", &noisy)] {
        println!(
            "{label:20} MPJPE {:8.3} mm  PA-MPJPE {:8.3} mm  3DPCK {:5.1}%",
            mpjpe(pred, &gt, skel.root())?,
            pa_mpjpe(pred, &gt)?,
            100.0 * pck3d(pred, &gt, skel.root(), PCK_THRESHOLD_MM)?
        );
    }
    Ok(())
}
