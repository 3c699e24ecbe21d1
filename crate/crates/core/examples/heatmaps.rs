//! Renders joint and bone heatmaps for one pose and prints a coarse ASCII
//! view of their per-pixel maximum.

use poselift::heatmap::{render_bone_heatmaps, render_joint_heatmaps};
use poselift::skeleton::{default_skeleton, Pose2D};

fn main() -> poselift::Result<()> {
    let skel = default_skeleton();
    let (w, h) = (48, 32);
    // a standing figure, hand-placed on the grid
    let coords = vec![
        [24.0, 16.0], [20.0, 16.0], [20.0, 23.0], [20.0, 30.0], [28.0, 16.0], [28.0, 23.0], [28.0, 30.0],
        [24.0, 12.0], [24.0, 8.0], [24.0, 6.0], [24.0, 3.0], [28.0, 8.0], [33.0, 11.0], [37.0, 14.0],
        [20.0, 8.0], [15.0, 11.0], [11.0, 14.0],
    ];
    let pose = Pose2D::all_visible(coords)?;
    let joints = render_joint_heatmaps(&pose, w, h, 1.5)?;
    let bones = render_bone_heatmaps(&pose, &skel, w, h, 1.0)?;
    let ramp = [' ', '.', ':', '+', '#'];
    for (label, stack) in [("joints", &joints), ("bones", &bones)] {
        println!("{label} ({} maps):", stack.count);
        for y in (0..h).step_by(2) {
            let row: String = (0..w)
                .map(|x| {
                    let v = (0..stack.count).map(|k| stack.at(k, x, y)).fold(0.0, f64::max);
                    ramp[((v * 4.0).round() as usize).min(4)]
                })
                .collect();
            println!("  {row}");
        }
    }
    Ok(())
}
