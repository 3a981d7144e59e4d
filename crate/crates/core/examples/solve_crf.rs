//! Builds a small CRF by hand and solves it with TRW-S and by enumeration.

use cip_core::crf::{CostTable, CrfProblem, Edge, EdgeKind};
use cip_core::solver::{solve_exhaustive, solve_trws, TrwsOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two videos, two frames, two candidates each plus idle
    let table = |rows: [[f64; 3]; 3]| CostTable::from_rows(&rows.map(|r| r.to_vec()));
    let intra = table([[0.0, 0.6, 0.3], [0.6, 0.0, 0.3], [0.3, 0.3, 0.3]]);
    let inter = table([[0.2, 1.5, 1.0], [1.4, 1.6, 1.0], [1.0, 1.0, 1.0]]);
    let edge = |a, b, kind, costs: &CostTable| Edge {
        a,
        b,
        kind,
        costs: costs.clone(),
    };
    let problem = CrfProblem {
        n_videos: 2,
        n_frames: 2,
        candidates: vec![2; 4],
        edges: vec![
            edge(0, 1, EdgeKind::Intra, &intra),
            edge(2, 3, EdgeKind::Intra, &intra),
            edge(0, 2, EdgeKind::Inter, &inter),
            edge(1, 3, EdgeKind::Inter, &inter),
        ],
    };
    problem.validate()?;

    let report = solve_trws(&problem, &TrwsOptions::default())?;
    println!(
        "trws: states {:?} energy {:.3} bound {:.3} after {} iterations",
        report.labeling.states, report.labeling.energy, report.lower_bound, report.iterations
    );
    let exact = solve_exhaustive(&problem)?;
    println!("exhaustive: states {:?} energy {:.3}", exact.states, exact.energy);
    Ok(())
}
