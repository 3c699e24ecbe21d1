//! Overfits the full-size lifter on a small synthetic set.
//!
//! `cargo run --release --example overfit -- [samples] [epochs] [batch] [dropout] [lr] [decay_epoch] [gamma]`

use std::time::Instant;

use poselift::datagen::{generate_records, DatasetConfig};
use poselift::lifting::{windowed_non_increasing, Architecture, TrainConfig};
use poselift::pipeline::{train_on_records, LiftingSetup};
use poselift::skeleton::default_skeleton;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> poselift::Result<()> {
    let (n, epochs, batch, dropout, lr) = (arg(1, 64), arg(2, 200), arg(3, 16), arg(4, 0.0), arg(5, 1e-3));
    let decay: usize = arg(6, 0);
    let gamma: f64 = arg(7, 1.0);
    let skel = default_skeleton();
    let records = generate_records(&skel, n, 7, &DatasetConfig::for_skeleton(&skel))?;
    let setup = LiftingSetup { arch: Architecture::standard(17), depth_scale: 1000.0, normalize_geodesic: false };
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        seed: 1,
        dropout_rate: dropout,
        lr_decay_epoch: (decay > 0).then_some(decay),
        lr_epoch_gamma: gamma,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let (_, history) = train_on_records(&records, &skel, &setup, &cfg)?;
    for r in history.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == 1) {
        println!("epoch {:4}  loss {:9.4}  train MPJPE {:8.3} mm", r.epoch, r.train_loss, r.train_mpjpe);
    }
    let losses: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
    let means: Vec<String> = losses.chunks(10).map(|c| format!("{:.2}", c.iter().sum::<f64>() / c.len() as f64)).collect();
    println!("window means: {}", means.join(" "));
    println!("windowed non-increasing: {}", windowed_non_increasing(&losses, 10));
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
