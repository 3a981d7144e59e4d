//! Per-window pairwise CRF: one node per (video, frame), one state per
//! candidate plus a trailing idle state, no unary terms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, VideoStream};
use crate::error::{Error, Result};

/// Mean used for idle entries when a window has no candidate pairs of a kind.
pub const NEUTRAL_IDLE_ENERGY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub video: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Intra,
    Inter,
}

/// Dense row-major cost table over (state of `a`, state of `b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostTable {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CostTable {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        CostTable {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transposed(&self) -> CostTable {
        let mut t = CostTable::filled(self.cols, self.rows, 0.0);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Lower node index.
    pub a: usize,
    /// Higher node index.
    pub b: usize,
    pub kind: EdgeKind,
    pub costs: CostTable,
}

/// Nodes are numbered video-major, frame-minor: `video * n_frames + frame`.
/// Node `i` has `candidates[i] + 1` states; the last one is idle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfProblem {
    pub n_videos: usize,
    pub n_frames: usize,
    pub candidates: Vec<usize>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub states: Vec<usize>,
    pub energy: f64,
}

impl CrfProblem {
    pub fn num_nodes(&self) -> usize {
        self.candidates.len()
    }

    pub fn node(&self, video: usize, frame: usize) -> usize {
        video * self.n_frames + frame
    }

    pub fn node_id(&self, node: usize) -> NodeId {
        NodeId {
            video: node / self.n_frames,
            frame: node % self.n_frames,
        }
    }

    pub fn state_count(&self, node: usize) -> usize {
        self.candidates[node] + 1
    }

    pub fn idle_state(&self, node: usize) -> usize {
        self.candidates[node]
    }

    /// Sum of all edge costs under `states`.
    pub fn energy(&self, states: &[usize]) -> f64 {
        self.edges.iter().map(|e| e.costs.get(states[e.a], states[e.b])).sum()
    }

    pub fn labeling(&self, states: Vec<usize>) -> Labeling {
        let energy = self.energy(&states);
        Labeling { states, energy }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.n_videos == 0 || self.n_frames == 0 {
            return bad("problem has no nodes".into());
        }
        if self.candidates.len() != self.n_videos * self.n_frames {
            return bad(format!(
                "{} state counts for {} x {} nodes",
                self.candidates.len(),
                self.n_videos,
                self.n_frames
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, e) in self.edges.iter().enumerate() {
            if e.a >= e.b || e.b >= self.num_nodes() {
                return bad(format!("edge {} has endpoints ({}, {})", k, e.a, e.b));
            }
            if !seen.insert((e.a, e.b)) {
                return bad(format!("edge ({}, {}) appears twice", e.a, e.b));
            }
            let c = &e.costs;
            if c.rows != self.state_count(e.a) || c.cols != self.state_count(e.b) || c.data.len() != c.rows * c.cols {
                return bad(format!("edge {} table shape does not match its endpoints", k));
            }
            if c.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCost { edge: k });
            }
            if c.data.iter().any(|v| *v < 0.0) {
                return bad(format!("edge {} has a negative cost", k));
            }
        }
        Ok(())
    }
}

/// Edge count of a window graph: `N * C(T, 2) + T * C(N, 2)`.
pub fn expected_edge_count(n_videos: usize, n_frames: usize) -> usize {
    n_videos * n_frames * n_frames.saturating_sub(1) / 2 + n_frames * n_videos * n_videos.saturating_sub(1) / 2
}

/// Intra-video energy between candidates on two frames of one video. Centers
/// and sizes are normalized by the frame size; the size term applies only
/// to adjacent frames.
pub fn psi_intra(a: &BBox, b: &BBox, frame_dims: (u32, u32), adjacent: bool) -> f64 {
    let (w, h) = (frame_dims.0 as f64, frame_dims.1 as f64);
    let (ca, cb) = (a.center(), b.center());
    let dc = ((ca.0 - cb.0) / w).hypot((ca.1 - cb.1) / h);
    let mut e = 1.0 - 1.0 / (dc + 1.0);
    if adjacent {
        let ds = ((a.w - b.w) / w).hypot((a.h - b.h) / h);
        e += 1.0 - 1.0 / (ds + 1.0);
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub intra: f64,
    pub frame: f64,
    pub traj: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            intra: 1.0,
            frame: 1.0,
            traj: 1.0,
        }
    }
}

/// Source of inter-video energies between candidates on the same absolute frame.
pub trait InterVideoEnergy: Sync {
    fn inter_energy(&self, frame: usize, a: (usize, usize), b: (usize, usize)) -> Result<f64>;
}

impl<F> InterVideoEnergy for F
where
    F: Fn(usize, (usize, usize), (usize, usize)) -> Result<f64> + Sync,
{
    fn inter_energy(&self, frame: usize, a: (usize, usize), b: (usize, usize)) -> Result<f64> {
        self(frame, a, b)
    }
}

/// Builds the window CRF over frames `[start, start + len)`: intra edges
/// between every frame pair of a video, inter edges between every video
/// pair on each frame. Candidate entries come from `psi_intra` (scaled by
/// `intra_weight`) and `inter`; idle entries are filled by [`augment_idle`].
pub fn build_window_crf(
    streams: &[VideoStream],
    start: usize,
    len: usize,
    intra_weight: f64,
    inter: &dyn InterVideoEnergy,
) -> Result<CrfProblem> {
    if len == 0 || streams.is_empty() {
        return Err(Error::InvalidWindow("empty window".into()));
    }
    let total = streams[0].frame_count();
    if start + len > total {
        return Err(Error::WindowTooLong {
            window: start + len,
            total,
        });
    }
    let n_videos = streams.len();
    let mut candidates = Vec::with_capacity(n_videos * len);
    for s in streams {
        for t in start..start + len {
            candidates.push(s.candidates[t].len());
        }
    }

    let mut specs = Vec::with_capacity(expected_edge_count(n_videos, len));
    for v in 0..n_videos {
        for t in 0..len {
            for r in t + 1..len {
                specs.push((EdgeKind::Intra, (v, t), (v, r)));
            }
        }
    }
    for t in 0..len {
        for va in 0..n_videos {
            for vb in va + 1..n_videos {
                specs.push((EdgeKind::Inter, (va, t), (vb, t)));
            }
        }
    }

    let edges = specs
        .into_par_iter()
        .map(|(kind, (va, ta), (vb, tb))| {
            let ca = &streams[va].candidates[start + ta];
            let cb = &streams[vb].candidates[start + tb];
            let mut costs = CostTable::filled(ca.len() + 1, cb.len() + 1, 0.0);
            for (i, x) in ca.iter().enumerate() {
                for (j, y) in cb.iter().enumerate() {
                    let e = match kind {
                        EdgeKind::Intra => {
                            let dims = (streams[va].width, streams[va].height);
                            intra_weight * psi_intra(&x.bbox, &y.bbox, dims, tb - ta == 1)
                        }
                        EdgeKind::Inter => inter.inter_energy(start + ta, (va, x.id), (vb, y.id))?,
                    };
                    costs.set(i, j, e);
                }
            }
            Ok(Edge {
                a: va * len + ta,
                b: vb * len + tb,
                kind,
                costs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let problem = CrfProblem {
        n_videos,
        n_frames: len,
        candidates,
        edges,
    };
    Ok(augment_idle(problem))
}

/// Window-wide means of the candidate-candidate entries, per edge kind.
pub fn idle_means(problem: &CrfProblem) -> (f64, f64) {
    let mut sums = [(0.0f64, 0usize); 2];
    for e in &problem.edges {
        let slot = &mut sums[e.kind as usize];
        for i in 0..problem.candidates[e.a] {
            for j in 0..problem.candidates[e.b] {
                slot.0 += e.costs.get(i, j);
                slot.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n > 0 { s / n as f64 } else { NEUTRAL_IDLE_ENERGY };
    (mean(sums[0]), mean(sums[1]))
}

/// Sets every entry involving an idle state to the window mean of the
/// candidate-candidate entries of the same edge kind.
pub fn augment_idle(mut problem: CrfProblem) -> CrfProblem {
    let (intra_mean, inter_mean) = idle_means(&problem);
    for e in &mut problem.edges {
        let mu = match e.kind {
            EdgeKind::Intra => intra_mean,
            EdgeKind::Inter => inter_mean,
        };
        let (ia, ib) = (problem.candidates[e.a], problem.candidates[e.b]);
        for j in 0..e.costs.cols {
            e.costs.set(ia, j, mu);
        }
        for i in 0..e.costs.rows {
            e.costs.set(i, ib, mu);
        }
    }
    problem
}
