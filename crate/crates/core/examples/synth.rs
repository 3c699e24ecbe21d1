//! Writes a small synthetic dataset and reads it back.
//!
//! `cargo run --example synth -- [out_dir] [n] [seed]`

use std::path::PathBuf;

use poselift::datagen::{generate_dataset, load_records, DatasetConfig, SAMPLES_FILE};
use poselift::skeleton::default_skeleton;

fn main() -> poselift::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synth-out".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let skel = default_skeleton();
    let cfg = DatasetConfig { scale_jitter: 0.1, ..DatasetConfig::for_skeleton(&skel) };
    let manifest = generate_dataset(&skel, n, seed, &cfg, &dir)?;
    println!("samples sha256 {}", manifest.samples_sha256);
    for (i, rec) in load_records(&dir.join(SAMPLES_FILE))?.iter().enumerate() {
        let root = rec.pose3d[skel.root()];
        println!("{i}: root at ({:.0}, {:.0}, {:.0}) mm, scale {:.3}", root[0], root[1], root[2], rec.subject_scale);
    }
    Ok(())
}
