//! Writes a preset scene to disk and summarizes what the cameras see.
//!
//! cargo run --example synth_scene -- tiny /tmp/tiny

use std::path::PathBuf;

use cip_core::synth::{generate_to_disk, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "tiny".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_out".into()));
    let scene = preset(&name, 7).ok_or("unknown preset")?;

    let synth = generate_to_disk(&scene, &out)?;
    for w in &synth.warnings {
        println!("warning: {w}");
    }
    let ds = &synth.dataset;
    let gt = ds.ground_truth.as_ref().unwrap();
    for v in &ds.videos {
        let cands: usize = v.candidates.iter().map(Vec::len).sum();
        let visible = (0..v.frame_count()).filter(|&t| gt.get(v.video_id, t).is_some()).count();
        println!(
            "video {}: {:.1} candidates/frame, CIP visible on {}/{} frames, {} trajectories",
            v.video_id,
            cands as f64 / v.frame_count() as f64,
            visible,
            v.frame_count(),
            v.trajectories.len()
        );
    }
    println!("dataset written to {}", out.display());
    Ok(())
}
