//! Geodesic scale of a synthetic subject and its normalization to the
//! reference length.

use poselift::datagen::{generate_records, DatasetConfig};
use poselift::skeleton::{default_skeleton, geodesic_distance, normalize_scale, REFERENCE_GEODESIC_MM};

fn main() -> poselift::Result<()> {
    let skel = default_skeleton();
    let names: Vec<&str> = skel.geodesic_path().iter().map(|&j| skel.joint_names()[j].as_str()).collect();
    println!("geodesic path: {}", names.join(" -> "));

    let cfg = DatasetConfig { scale_jitter: 0.2, ..DatasetConfig::for_skeleton(&skel) };
    for rec in generate_records(&skel, 5, 42, &cfg)? {
        let pose = rec.pose3d()?;
        let before = geodesic_distance(&pose, &skel)?;
        let after = geodesic_distance(&normalize_scale(&pose, &skel, REFERENCE_GEODESIC_MM)?, &skel)?;
        println!("subject scale {:.3}: geodesic {before:8.2} mm -> {after:.6} mm", rec.subject_scale);
    }
    Ok(())
}
