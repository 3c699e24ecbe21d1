//! Depth discretization, the depth-centric volume of one joint, and the
//! ordinal penalty as the predicted depth drifts from the true bin.

use poselift::depthvol::{
    discretize_depth, encode_volume, loss_ordinal_depth, ordinal_from_distribution, OrdinalProbs,
};
use poselift::skeleton::Pose25D;

fn main() -> poselift::Result<()> {
    let (channels, ds) = (16, 1000.0);
    for z in [-1000.0, -400.0, 0.0, 123.0, 999.0] {
        println!("z_r {z:7.1} mm -> channel {}", discretize_depth(z, ds, channels)?);
    }

    let pose = Pose25D::new(vec![[8.0, 8.0]], vec![300.0], ds)?;
    let vol = encode_volume(&pose, 16, 16, channels, 2.0)?;
    let occupied: Vec<usize> =
        (0..channels).filter(|&c| (0..16 * 16).any(|p| vol.slice(0)[c * 256 + p] > 0.0)).collect();
    println!("joint at z_r 300 mm occupies channel(s) {occupied:?}");

    let label = 5;
    for placed in label..channels {
        let mut dist = vec![0.0; channels];
        dist[placed] = 1.0;
        let probs = OrdinalProbs::new(ordinal_from_distribution(&dist, 1e-3), channels, 1, 1)?;
        let (loss, _) = loss_ordinal_depth(&probs, &[label], &[true])?;
        println!("true bin {label}, predicted bin {placed:2}: ordinal loss {loss:.3}");
    }
    Ok(())
}
