//! Trains on one synthetic set and scores a held-out set from the same
//! generator.
//!
//! `cargo run --release --example generalize -- [train_n] [epochs] [lr] [gamma] [dropout] [jitter] [normalize] [batch]`

use std::time::Instant;

use poselift::datagen::{generate_records, DatasetConfig};
use poselift::lifting::{Architecture, TrainConfig};
use poselift::pipeline::{records_mpjpe, train_on_records, LiftingSetup};
use poselift::skeleton::default_skeleton;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> poselift::Result<()> {
    let n: usize = arg(1, 2048);
    let epochs: usize = arg(2, 20);
    let lr: f64 = arg(3, 1e-3);
    let gamma: f64 = arg(4, 0.9);
    let dropout: f64 = arg(5, 0.25);
    let jitter: f64 = arg(6, 0.0);
    let normalize: bool = arg(7, false);
    let batch: usize = arg(8, 64);

    let skel = default_skeleton();
    let data_cfg = DatasetConfig { scale_jitter: jitter, ..DatasetConfig::for_skeleton(&skel) };
    let train_set = generate_records(&skel, n, 1, &data_cfg)?;
    let test_set = generate_records(&skel, 256, 2, &data_cfg)?;
    let setup = LiftingSetup { arch: Architecture::standard(17), depth_scale: 1000.0, normalize_geodesic: normalize };
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        seed: 3,
        dropout_rate: dropout,
        lr_decay_epoch: None,
        lr_epoch_gamma: gamma,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let (net, history) = train_on_records(&train_set, &skel, &setup, &cfg)?;
    for r in &history {
        println!("epoch {:3}  lr {:.2e}  loss {:8.3}  train MPJPE {:7.3} mm", r.epoch, r.lr, r.train_loss, r.train_mpjpe);
    }
    let held_out = records_mpjpe(&net, &test_set, &skel, 1000.0, normalize)?;
    println!("held-out MPJPE {held_out:.3} mm ({:.0}s)", t.elapsed().as_secs_f64());
    Ok(())
}
