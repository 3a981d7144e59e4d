//! Window layout and lowest-energy merging on hand-made window results.

use cip_core::dataset::{BBox, DetectionState};
use cip_core::pipeline::{make_windows, merge_windows, WindowPick, WindowResult};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (total, len, stride) = (40, 10, 5);
    let starts = make_windows(total, len, stride)?;
    println!("windows of {len} frames over {total}: starts {starts:?}");

    let energies = [9.0, 8.0, 13.0, 12.0, 10.0, 13.0, 15.0];
    let results: Vec<WindowResult> = starts
        .iter()
        .zip(energies)
        .enumerate()
        .map(|(k, (&start, energy))| {
            // the first two windows agree on one person, the rest on another
            let id = if k < 2 { 0 } else { 1 };
            let pick = WindowPick {
                state: DetectionState::Candidate(id),
                bbox: Some(BBox::new(10.0 * id as f64, 0.0, 8.0, 20.0)),
            };
            WindowResult {
                index: k,
                start,
                picks: vec![vec![pick; len]],
                energy,
            }
        })
        .collect();

    let merged = merge_windows(&results, total)?;
    for d in merged.iter().step_by(5) {
        println!("frame {:2}: {:?} from a window with energy {}", d.frame, d.state, d.window_energy);
    }
    Ok(())
}
