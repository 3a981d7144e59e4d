#![allow(dead_code)]

use cip_core::crf::{augment_idle, CostTable, CrfProblem, Edge, EdgeKind};
use rand::Rng;

/// Random window-shaped CRF: intra edges between all frame pairs of a video,
/// inter edges between all video pairs on a frame, idle entries from the
/// window means.
pub fn random_window<R: Rng>(rng: &mut R, n_videos: usize, n_frames: usize, max_cands: usize) -> CrfProblem {
    let candidates: Vec<usize> = (0..n_videos * n_frames).map(|_| rng.random_range(0..=max_cands)).collect();
    let mut edges = Vec::new();
    let mut push = |a: usize, b: usize, kind: EdgeKind, rng: &mut R| {
        let mut costs = CostTable::filled(candidates[a] + 1, candidates[b] + 1, 0.0);
        for v in costs.data.iter_mut() {
            *v = rng.random_range(0.0..2.0);
        }
        edges.push(Edge { a, b, kind, costs });
    };
    for v in 0..n_videos {
        for t in 0..n_frames {
            for r in t + 1..n_frames {
                push(v * n_frames + t, v * n_frames + r, EdgeKind::Intra, rng);
            }
        }
    }
    for t in 0..n_frames {
        for va in 0..n_videos {
            for vb in va + 1..n_videos {
                push(va * n_frames + t, vb * n_frames + t, EdgeKind::Inter, rng);
            }
        }
    }
    augment_idle(CrfProblem {
        n_videos,
        n_frames,
        candidates,
        edges,
    })
}

/// Random single chain: one video, edges only between consecutive frames.
pub fn random_chain<R: Rng>(rng: &mut R, n_frames: usize, max_cands: usize) -> CrfProblem {
    let candidates: Vec<usize> = (0..n_frames).map(|_| rng.random_range(0..=max_cands)).collect();
    let edges = (0..n_frames.saturating_sub(1))
        .map(|t| {
            let mut costs = CostTable::filled(candidates[t] + 1, candidates[t + 1] + 1, 0.0);
            for v in costs.data.iter_mut() {
                *v = rng.random_range(0.0..3.0);
            }
            Edge {
                a: t,
                b: t + 1,
                kind: EdgeKind::Intra,
                costs,
            }
        })
        .collect();
    CrfProblem {
        n_videos: 1,
        n_frames,
        candidates,
        edges,
    }
}

/// Exact chain minimum by dynamic programming.
pub fn chain_minimum(p: &CrfProblem) -> f64 {
    let mut cost = vec![0.0; p.state_count(0)];
    for e in &p.edges {
        let next: Vec<f64> = (0..e.costs.cols)
            .map(|j| {
                (0..e.costs.rows)
                    .map(|i| cost[i] + e.costs.data[i * e.costs.cols + j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        cost = next;
    }
    cost.into_iter().fold(f64::INFINITY, f64::min)
}

/// Energy recomputed straight from the tables.
pub fn recompute_energy(p: &CrfProblem, states: &[usize]) -> f64 {
    let mut sum = 0.0;
    for e in &p.edges {
        sum += e.costs.data[states[e.a] * e.costs.cols + states[e.b]];
    }
    sum
}

/// Largest drop between consecutive bound values.
pub fn worst_bound_drop(history: &[f64]) -> f64 {
    history.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}
