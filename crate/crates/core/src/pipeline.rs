//! Dataset-level glue between the generator, the lifting network and the
//! metrics.

use crate::datagen::{lifting_pairs, SampleRecord};
use crate::error::{Error, Result};
use crate::lifting::{predict_all, train, Architecture, EpochRecord, InputNorm, LiftingData, LiftingNetwork, TrainConfig};
use crate::metrics::mpjpe;
use crate::skeleton::{Frame, Pose3D, Skeleton};

/// Input normalization matching the records' image size.
pub fn input_norm(records: &[SampleRecord], depth_scale: f64) -> Result<InputNorm> {
    let cam = records.first().ok_or_else(|| Error::Input("no records".into()))?.camera;
    if records.iter().any(|r| (r.camera.w, r.camera.h) != (cam.w, cam.h)) {
        return Err(Error::Input("records mix different image sizes".into()));
    }
    Ok(InputNorm { image_width: cam.w as f64, image_height: cam.h as f64, depth_scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingSetup {
    pub arch: Architecture,
    pub depth_scale: f64,
    pub normalize_geodesic: bool,
}

/// Initializes a network from `cfg.seed` and trains it on `records`.
pub fn train_on_records(
    records: &[SampleRecord],
    skel: &Skeleton,
    setup: &LiftingSetup,
    cfg: &TrainConfig,
) -> Result<(LiftingNetwork, Vec<EpochRecord>)> {
    let (pairs, _) = lifting_pairs(records, skel, setup.depth_scale, setup.normalize_geodesic)?;
    let data = LiftingData::new(&pairs, skel.root())?;
    let mut net = LiftingNetwork::init(setup.arch, input_norm(records, setup.depth_scale)?, cfg.seed)?;
    let history = train(&mut net, &data, cfg)?;
    Ok((net, history))
}

/// Root-relative predictions in mm. Under geodesic normalization the network
/// sees rescaled subjects and its outputs are mapped back by the inverse
/// per-sample factor.
pub fn predict_records(
    net: &LiftingNetwork,
    records: &[SampleRecord],
    skel: &Skeleton,
    depth_scale: f64,
    normalize_geodesic: bool,
) -> Result<Vec<Pose3D>> {
    let (pairs, factors) = lifting_pairs(records, skel, depth_scale, normalize_geodesic)?;
    let inputs: Vec<f64> = pairs.iter().flat_map(|(x, _)| x.flatten()).collect();
    let out = predict_all(net, &inputs)?;
    out.chunks_exact(3 * skel.num_joints())
        .zip(factors)
        .map(|(p, f)| Ok(Pose3D::from_flat(p, Frame::RootRelative)?.scaled(1.0 / f)))
        .collect()
}

/// Mean MPJPE (mm) of the network on `records`.
pub fn records_mpjpe(
    net: &LiftingNetwork,
    records: &[SampleRecord],
    skel: &Skeleton,
    depth_scale: f64,
    normalize_geodesic: bool,
) -> Result<f64> {
    let preds = predict_records(net, records, skel, depth_scale, normalize_geodesic)?;
    let mut total = 0.0;
    for (p, r) in preds.iter().zip(records) {
        total += mpjpe(p, &r.pose3d()?, skel.root())?;
    }
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_records, DatasetConfig};
    use crate::skeleton::default_skeleton;

    #[test]
    fn normalized_predictions_return_to_mm() {
        let skel = default_skeleton();
        let cfg = DatasetConfig { scale_jitter: 0.2, ..DatasetConfig::for_skeleton(&skel) };
        let recs = generate_records(&skel, 12, 1, &cfg).unwrap();
        let setup = LiftingSetup {
            arch: Architecture { n_joints: 17, width: 32, blocks: 1 },
            depth_scale: 1000.0,
            normalize_geodesic: true,
        };
        let tc = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let (net, hist) = train_on_records(&recs, &skel, &setup, &tc).unwrap();
        assert_eq!(hist.len(), 2);
        let a = predict_records(&net, &recs, &skel, 1000.0, true).unwrap();
        let b = predict_records(&net, &recs, &skel, 1000.0, false).unwrap();
        assert_eq!(a.len(), 12);
        assert_ne!(a, b);
        assert!(records_mpjpe(&net, &recs, &skel, 1000.0, true).unwrap().is_finite());
    }
}
