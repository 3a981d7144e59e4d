//! Generates a preset scene, detects the CIP and scores the result.
//!
//! cargo run --release --example detect_and_evaluate -- clean6 600

use std::time::Instant;

use cip_core::config::Config;
use cip_core::pipeline::{evaluate_frames, exclude_undetectable, pair_frames, Detector};
use cip_core::synth::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "tiny".into());
    let seed = std::env::var("SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(42);
    let mut scene = preset(&name, seed).ok_or("unknown preset")?;
    if let Some(frames) = args.next() {
        scene = scene.truncated(frames.parse()?);
    }

    let t0 = Instant::now();
    let data = generate(&scene)?.dataset;
    println!("generated {} videos x {} frames in {:.1?}", data.num_videos(), data.frame_count(), t0.elapsed());

    let t0 = Instant::now();
    let config = Config::default();
    let out = Detector::new(&data, &config)?.run()?;
    println!("detected over {} windows in {:.1?}", out.windows.len(), t0.elapsed());

    let truth = data.ground_truth.as_ref().unwrap();
    let frames = pair_frames(&out.detections, truth)?;
    let n = data.num_videos();
    println!("{}\n", evaluate_frames(&frames, n, config.eval_iou_threshold));
    let kept = exclude_undetectable(frames, &data.videos, config.eval_iou_threshold);
    println!("excluding undetectable frames:\n{}", evaluate_frames(&kept, n, config.eval_iou_threshold));
    Ok(())
}
