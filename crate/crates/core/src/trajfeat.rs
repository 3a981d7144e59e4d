//! Trajectory-based motion features: greedy IoU tracklets, foreground
//! trajectory selection, Hankelets and movement-pattern histograms.

use std::sync::Arc;

use nalgebra::SMatrix;

use crate::dataset::{iou, BBox, RawTrajectory, VideoStream, TRAJECTORY_LEN};
use crate::error::{Error, Result};
use crate::flowfeat::{direction_of, HOF_BINS};

pub const TRACKLET_LEN: usize = 15;
/// A trajectory is foreground when it lies in the tracklet on at least this many frames.
pub const MIN_COINCIDENT_FRAMES: usize = 8;
pub const DEFAULT_TRACKLET_IOU: f64 = 0.3;

const HANKEL_ROWS: usize = 16;
const HANKEL_COLS: usize = 8;

/// `2 - sqrt(2)`: the distance between Hankelets with orthogonal Gram
/// matrices, the largest value the metric can take.
pub fn max_hankelet_distance() -> f64 {
    2.0 - std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub video_id: usize,
    pub start_frame: usize,
    pub seed: usize,
    pub boxes: Vec<BBox>,
}

impl Tracklet {
    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame.checked_sub(self.start_frame).and_then(|i| self.boxes.get(i))
    }
}

/// Greedily follows the best-overlapping candidate frame to frame, starting
/// from candidate `seed` on `frame`. Stops after 15 boxes, at the end of the
/// stream, or when no successor reaches `iou_threshold`. Ties go to the lower id.
///
/// Panics if the seed candidate does not exist.
pub fn build_tracklet(stream: &VideoStream, frame: usize, seed: usize, iou_threshold: f64) -> Tracklet {
    let mut boxes = vec![stream.candidates[frame][seed].bbox];
    let mut t = frame;
    while boxes.len() < TRACKLET_LEN && t + 1 < stream.frame_count() {
        let last = *boxes.last().unwrap();
        let mut best: Option<(f64, BBox)> = None;
        for c in &stream.candidates[t + 1] {
            let o = iou(&last, &c.bbox);
            if best.map_or(true, |(b, _)| o > b) {
                best = Some((o, c.bbox));
            }
        }
        match best {
            Some((o, b)) if o >= iou_threshold => boxes.push(b),
            _ => break,
        }
        t += 1;
    }
    Tracklet {
        video_id: stream.video_id,
        start_frame: frame,
        seed,
        boxes,
    }
}

/// Number of frames on which the trajectory point lies inside the tracklet box.
pub fn coincident_frames(trajectory: &RawTrajectory, tracklet: &Tracklet) -> usize {
    trajectory
        .points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            tracklet
                .box_at(trajectory.start_frame + i)
                .is_some_and(|b| b.contains(p[0], p[1]))
        })
        .count()
}

/// Indices of the trajectories that coincide with the tracklet on at least
/// [`MIN_COINCIDENT_FRAMES`] frames; everything else counts as background.
pub fn filter_foreground<'a, I>(trajectories: I, tracklet: &Tracklet) -> Vec<usize>
where
    I: IntoIterator<Item = (usize, &'a RawTrajectory)>,
{
    trajectories
        .into_iter()
        .filter(|(_, tr)| coincident_frames(tr, tracklet) >= MIN_COINCIDENT_FRAMES)
        .map(|(i, _)| i)
        .collect()
}

/// Normalized 16x8 block-Hankel matrix of a translation-removed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Hankelet {
    pub matrix: SMatrix<f64, HANKEL_ROWS, HANKEL_COLS>,
    /// `K K^T`, cached for the distance.
    pub gram: SMatrix<f64, HANKEL_ROWS, HANKEL_ROWS>,
    /// Set for a motionless trajectory, whose matrix is all zeros.
    pub degenerate: bool,
}

pub fn hankelet(trajectory: &RawTrajectory) -> Result<Hankelet> {
    if trajectory.points.len() != TRAJECTORY_LEN {
        return Err(Error::TrajectoryLength(trajectory.points.len()));
    }
    let [x0, y0] = trajectory.points[0];
    let mut h = SMatrix::<f64, HANKEL_ROWS, HANKEL_COLS>::zeros();
    for j in 0..HANKEL_COLS {
        for i in 0..HANKEL_COLS {
            let [x, y] = trajectory.points[i + j];
            h[(2 * i, j)] = x - x0;
            h[(2 * i + 1, j)] = y - y0;
        }
    }
    let scale = (h * h.transpose()).norm().sqrt();
    if scale == 0.0 || !scale.is_finite() {
        return Ok(Hankelet {
            matrix: SMatrix::zeros(),
            gram: SMatrix::zeros(),
            degenerate: true,
        });
    }
    let k = h / scale;
    Ok(Hankelet {
        matrix: k,
        gram: k * k.transpose(),
        degenerate: false,
    })
}

/// `2 - |K_a K_a^T + K_b K_b^T|_F`, in `[0, 2 - sqrt 2]`. A degenerate
/// operand yields the maximum.
pub fn hankelet_dist(a: &Hankelet, b: &Hankelet) -> f64 {
    let max = max_hankelet_distance();
    if a.degenerate || b.degenerate {
        return max;
    }
    (2.0 - (a.gram + b.gram).norm()).clamp(0.0, max)
}

/// Movement-pattern histogram: for each merged direction, one bin per window
/// frame holding the summed trajectory displacement along that direction.
/// The five histograms are normalized jointly to unit L1 mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Mph {
    pub start_frame: usize,
    /// `bins[f][d]`: direction `d` at window frame `f`.
    pub bins: Vec<[f64; HOF_BINS]>,
}

impl Mph {
    pub fn total(&self) -> f64 {
        self.bins.iter().flatten().sum()
    }

    pub fn histogram(&self, direction: usize) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().map(move |b| b[direction])
    }
}

pub fn mph<'a, I>(trajectories: I, start_frame: usize, len: usize) -> Mph
where
    I: IntoIterator<Item = &'a RawTrajectory>,
{
    let mut bins = vec![[0.0; HOF_BINS]; len];
    for tr in trajectories {
        for (i, pair) in tr.points.windows(2).enumerate() {
            let f = tr.start_frame + i;
            if f < start_frame || f >= start_frame + len {
                continue;
            }
            let (du, dv) = (pair[1][0] - pair[0][0], pair[1][1] - pair[0][1]);
            if let Some(d) = direction_of(du, dv) {
                bins[f - start_frame][d as usize] += du.hypot(dv);
            }
        }
    }
    let mut m = Mph { start_frame, bins };
    let total = m.total();
    if total > 0.0 {
        m.bins.iter_mut().flatten().for_each(|v| *v /= total);
    }
    m
}

/// Mean over the five directions of the per-direction L1 histogram distance.
pub fn mph_dist(a: &Mph, b: &Mph) -> f64 {
    assert_eq!(a.bins.len(), b.bins.len(), "mph windows differ in length");
    let l1: f64 = a
        .bins
        .iter()
        .flatten()
        .zip(b.bins.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .sum();
    l1 / HOF_BINS as f64
}

#[derive(Debug, Clone)]
pub struct TrajFeature {
    pub hankelets: Arc<[Hankelet]>,
    pub mph: Mph,
    pub trajectory_count: usize,
}

/// Average Hankelet distance over all cross pairs plus the MPH distance.
/// Without Hankelets on either side the first term takes its maximum.
pub fn psi_traj(a: &TrajFeature, b: &TrajFeature) -> f64 {
    let hankel_term = if a.hankelets.is_empty() || b.hankelets.is_empty() {
        max_hankelet_distance()
    } else {
        let mut sum = 0.0;
        for ka in a.hankelets.iter() {
            for kb in b.hankelets.iter() {
                sum += hankelet_dist(ka, kb);
            }
        }
        sum / (a.hankelets.len() * b.hankelets.len()) as f64
    };
    hankel_term + mph_dist(&a.mph, &b.mph)
}
