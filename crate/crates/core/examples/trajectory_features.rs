//! Tracklets, foreground trajectories, Hankelets and MPH for one candidate,
//! and the trajectory energy against every candidate of another view.

use cip_core::pipeline::FeatureCache;
use cip_core::synth::{generate, preset};
use cip_core::trajfeat::{build_tracklet, psi_traj, DEFAULT_TRACKLET_IOU};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate(&preset("tiny", 11).unwrap())?.dataset;
    let (t, start, len) = (10, 0, 30);
    let cache = FeatureCache::new(&ds.videos, DEFAULT_TRACKLET_IOU);

    let tracklet = build_tracklet(&ds.videos[0], t, 0, DEFAULT_TRACKLET_IOU);
    println!("tracklet of v0:c0 from frame {t}: {} boxes", tracklet.boxes.len());

    let a = cache.traj_feature(0, t, 0, start, len)?;
    println!("v0:c0 keeps {} foreground trajectories", a.trajectory_count);
    for c in &ds.videos[1].candidates[t] {
        let b = cache.traj_feature(1, t, c.id, start, len)?;
        println!(
            "  vs v1:c{} ({} trajectories): psi_traj {:.4}",
            c.id,
            b.trajectory_count,
            psi_traj(&a, &b)
        );
    }
    Ok(())
}
