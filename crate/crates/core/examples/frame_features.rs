//! Frame-based matching energies between the candidates of two cameras
//! facing each other.

use cip_core::flowfeat::{frame_feature, psi_frame};
use cip_core::synth::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two cameras facing each other, two actors
    let ds = generate(&preset("tiny", 11).unwrap())?.dataset;
    let gt = ds.ground_truth.as_ref().unwrap();
    let t = 12;

    let mut feats = Vec::new();
    for v in &ds.videos {
        let cip = gt.get(v.video_id, t).ok_or("CIP not visible")?;
        for c in &v.candidates[t] {
            let f = frame_feature(&v.flow[t], &c.bbox)?;
            feats.push((v.video_id, c.id, c.bbox == cip, f));
        }
    }
    println!("frame {t}: psi_frame between candidates of video 0 and video 1");
    for (va, ca, cip_a, fa) in feats.iter().filter(|f| f.0 == 0) {
        for (vb, cb, cip_b, fb) in feats.iter().filter(|f| f.0 == 1) {
            let tag = if *cip_a && *cip_b { "  <- CIP pair" } else { "" };
            println!("  v{va}:c{ca} vs v{vb}:c{cb}  {:.4}{tag}", psi_frame(fa, fb));
        }
    }
    Ok(())
}
