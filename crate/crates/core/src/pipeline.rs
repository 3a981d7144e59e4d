//! Sliding-window detection and evaluation.
//!
//! The stream is cut into equal-length overlapping windows, each window is
//! solved as one CRF, and every (video, frame) takes the detection of the
//! covering window with the lowest total energy.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::crf::{build_window_crf, CrfProblem};
use crate::dataset::{iou, BBox, Dataset, Detection, DetectionState, GroundTruth, VideoStream};
use crate::error::{Error, Result};
use crate::flowfeat::{frame_feature, psi_frame, FrameFeature};
use crate::solver::{solve_trws, SolveReport};
use crate::trajfeat::{
    build_tracklet, filter_foreground, hankelet, mph, psi_traj, Hankelet, TrajFeature, TRACKLET_LEN,
};

/// Window start frames: `0, stride, 2 * stride, ...`, with the last window
/// moved left so it ends exactly at `total`.
pub fn make_windows(total: usize, len: usize, stride: usize) -> Result<Vec<usize>> {
    if len > total {
        return Err(Error::WindowTooLong { window: len, total });
    }
    if len == 0 || stride == 0 || stride > len {
        return Err(Error::InvalidWindow(format!(
            "need 1 <= stride <= length, got length {} and stride {}",
            len, stride
        )));
    }
    let last = total - len;
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|s| *s < last).collect();
    starts.push(last);
    starts.dedup();
    Ok(starts)
}

/// The state a window assigns to one (video, frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPick {
    pub state: DetectionState,
    pub bbox: Option<BBox>,
}

impl WindowPick {
    pub const IDLE: WindowPick = WindowPick {
        state: DetectionState::Idle,
        bbox: None,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub index: usize,
    pub start: usize,
    /// `picks[video][offset]` for the window's frames.
    pub picks: Vec<Vec<WindowPick>>,
    pub energy: f64,
}

impl WindowResult {
    pub fn len(&self) -> usize {
        self.picks.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.start + self.len()
    }
}

/// Per (video, frame), emits the pick of the covering window with the lowest
/// energy; ties go to the lower window index. The result does not depend on
/// the order of `results`.
pub fn merge_windows(results: &[WindowResult], n_frames: usize) -> Result<Vec<Detection>> {
    let n_videos = results.iter().map(|r| r.picks.len()).max().unwrap_or(0);
    if results.iter().any(|r| r.picks.len() != n_videos || r.picks.iter().any(|p| p.len() != r.len())) {
        return Err(Error::InvalidWindow("window results disagree on the number of videos".into()));
    }
    let mut best: Vec<Option<&WindowResult>> = vec![None; n_frames];
    for r in results {
        for t in r.start..(r.start + r.len()).min(n_frames) {
            let slot = &mut best[t];
            let better = match slot {
                None => true,
                Some(cur) => r.energy < cur.energy || (r.energy == cur.energy && r.index < cur.index),
            };
            if better {
                *slot = Some(r);
            }
        }
    }
    let mut out = Vec::with_capacity(n_videos * n_frames);
    for v in 0..n_videos.max(1) {
        for (t, w) in best.iter().enumerate() {
            let w = w.ok_or(Error::UncoveredFrame { video_id: v, frame: t })?;
            let pick = w.picks[v][t - w.start];
            out.push(Detection {
                video_id: v,
                frame: t,
                state: pick.state,
                bbox: pick.bbox,
                window_energy: w.energy,
            });
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct CandidateFeature {
    frame: FrameFeature,
    /// Foreground trajectory indices of the candidate's tracklet.
    foreground: Vec<usize>,
    hankelets: Arc<[Hankelet]>,
}

/// Per-candidate features shared by overlapping windows. Slots are filled
/// on first use and safe to fill concurrently.
pub struct FeatureCache<'d> {
    streams: &'d [VideoStream],
    tracklet_iou: f64,
    /// `slots[video][frame][candidate]`.
    slots: Vec<Vec<Vec<OnceLock<Arc<CandidateFeature>>>>>,
    /// `by_start[video][frame]`: trajectories starting on that frame.
    by_start: Vec<Vec<Vec<usize>>>,
    hankelets: Vec<Vec<OnceLock<Result<Hankelet, String>>>>,
}

impl<'d> FeatureCache<'d> {
    pub fn new(streams: &'d [VideoStream], tracklet_iou: f64) -> Self {
        let slots = streams
            .iter()
            .map(|s| {
                s.candidates
                    .iter()
                    .map(|c| (0..c.len()).map(|_| OnceLock::new()).collect())
                    .collect()
            })
            .collect();
        let by_start = streams
            .iter()
            .map(|s| {
                let mut idx = vec![Vec::new(); s.frame_count()];
                for (i, tr) in s.trajectories.iter().enumerate() {
                    if tr.start_frame < idx.len() {
                        idx[tr.start_frame].push(i);
                    }
                }
                idx
            })
            .collect();
        let hankelets = streams
            .iter()
            .map(|s| (0..s.trajectories.len()).map(|_| OnceLock::new()).collect())
            .collect();
        FeatureCache {
            streams,
            tracklet_iou,
            slots,
            by_start,
            hankelets,
        }
    }

    fn hankelet(&self, video: usize, index: usize) -> Result<Hankelet> {
        self.hankelets[video][index]
            .get_or_init(|| hankelet(&self.streams[video].trajectories[index]).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::InvalidDataset)
    }

    fn candidate(&self, video: usize, frame: usize, cand: usize) -> Result<Arc<CandidateFeature>> {
        if let Some(f) = self.slots[video][frame][cand].get() {
            return Ok(f.clone());
        }
        let stream = &self.streams[video];
        let bbox = stream.candidates[frame][cand].bbox;
        let frame_feat = frame_feature(&stream.flow[frame], &bbox)?;
        let tracklet = build_tracklet(stream, frame, cand, self.tracklet_iou);
        // a trajectory can share at most 15 - |start - frame| frames with the tracklet
        let reach = TRACKLET_LEN / 2;
        let lo = frame.saturating_sub(reach);
        let hi = (frame + reach + 1).min(stream.frame_count());
        let nearby = self.by_start[video][lo..hi]
            .iter()
            .flatten()
            .map(|&i| (i, &stream.trajectories[i]));
        let foreground = filter_foreground(nearby, &tracklet);
        let hankelets = foreground
            .iter()
            .map(|&i| self.hankelet(video, i))
            .collect::<Result<Vec<_>>>()?;
        let feature = Arc::new(CandidateFeature {
            frame: frame_feat,
            foreground,
            hankelets: hankelets.into(),
        });
        Ok(self.slots[video][frame][cand].get_or_init(|| feature).clone())
    }

    pub fn frame_feature(&self, video: usize, frame: usize, cand: usize) -> Result<FrameFeature> {
        Ok(self.candidate(video, frame, cand)?.frame.clone())
    }

    /// Trajectory feature of a candidate with its MPH taken over the window
    /// `[start, start + len)`.
    pub fn traj_feature(&self, video: usize, frame: usize, cand: usize, start: usize, len: usize) -> Result<TrajFeature> {
        let c = self.candidate(video, frame, cand)?;
        let trajs = &self.streams[video].trajectories;
        Ok(TrajFeature {
            hankelets: c.hankelets.clone(),
            mph: mph(c.foreground.iter().map(|&i| &trajs[i]), start, len),
            trajectory_count: c.foreground.len(),
        })
    }
}

struct WindowFeatures {
    frame: Vec<Vec<Vec<Arc<CandidateFeature>>>>,
    traj: Vec<Vec<Vec<TrajFeature>>>,
}

/// Runs the detection pipeline over one dataset.
pub struct Detector<'d> {
    dataset: &'d Dataset,
    config: Config,
    cache: FeatureCache<'d>,
    window_len: usize,
    stride: usize,
}

impl<'d> Detector<'d> {
    /// Windows longer than the stream are shortened to the stream length, and
    /// the stride to the window length.
    pub fn new(dataset: &'d Dataset, config: &Config) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let total = dataset.frame_count();
        if total == 0 {
            return Err(Error::InvalidDataset("dataset has no frames".into()));
        }
        let window_len = config.window_length.min(total);
        if window_len < config.window_length {
            info!("window length {} shortened to the {}-frame stream", config.window_length, total);
        }
        let stride = config.window_stride.min(window_len);
        Ok(Detector {
            dataset,
            config: config.clone(),
            cache: FeatureCache::new(&dataset.videos, config.tracklet_iou_threshold),
            window_len,
            stride,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn window_starts(&self) -> Vec<usize> {
        make_windows(self.dataset.frame_count(), self.window_len, self.stride).expect("window parameters checked in new")
    }

    fn window_features(&self, start: usize) -> Result<WindowFeatures> {
        let len = self.window_len;
        let streams = &self.dataset.videos;
        let cache = &self.cache;
        let per_video = |v: usize| -> Result<(Vec<Vec<Arc<CandidateFeature>>>, Vec<Vec<TrajFeature>>)> {
            let mut frames = Vec::with_capacity(len);
            let mut trajs = Vec::with_capacity(len);
            for t in start..start + len {
                let n = streams[v].candidates[t].len();
                frames.push((0..n).map(|c| cache.candidate(v, t, c)).collect::<Result<Vec<_>>>()?);
                trajs.push(
                    (0..n)
                        .map(|c| cache.traj_feature(v, t, c, start, len))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Ok((frames, trajs))
        };
        let (frame, traj) = (0..streams.len())
            .into_par_iter()
            .map(per_video)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(WindowFeatures { frame, traj })
    }

    /// CRF of the window starting at `start`.
    pub fn problem(&self, start: usize) -> Result<CrfProblem> {
        let feats = self.window_features(start)?;
        let w = self.config.weights();
        let inter = |frame: usize, (va, ca): (usize, usize), (vb, cb): (usize, usize)| -> Result<f64> {
            let t = frame - start;
            let mut e = 0.0;
            if w.frame != 0.0 {
                e += w.frame * psi_frame(&feats.frame[va][t][ca].frame, &feats.frame[vb][t][cb].frame);
            }
            if w.traj != 0.0 {
                e += w.traj * psi_traj(&feats.traj[va][t][ca], &feats.traj[vb][t][cb]);
            }
            Ok(e)
        };
        build_window_crf(&self.dataset.videos, start, self.window_len, w.intra, &inter)
    }

    pub fn solve_window(&self, index: usize, start: usize) -> Result<(WindowResult, SolveReport)> {
        let problem = self.problem(start)?;
        let report = solve_trws(&problem, &self.config.trws())?;
        debug!(
            "window {} at {}: energy {:.4}, bound {:.4}, {} iterations",
            index, start, report.labeling.energy, report.lower_bound, report.iterations
        );
        let picks = (0..problem.n_videos)
            .map(|v| {
                (0..problem.n_frames)
                    .map(|t| {
                        let s = report.labeling.states[problem.node(v, t)];
                        match self.dataset.videos[v].candidates[start + t].get(s) {
                            Some(c) => WindowPick {
                                state: DetectionState::Candidate(c.id),
                                bbox: Some(c.bbox),
                            },
                            None => WindowPick::IDLE,
                        }
                    })
                    .collect()
            })
            .collect();
        let result = WindowResult {
            index,
            start,
            picks,
            energy: report.labeling.energy,
        };
        Ok((result, report))
    }

    /// Solves every window concurrently and merges the results.
    pub fn run(&self) -> Result<DetectOutput> {
        let starts = self.window_starts();
        info!("{} windows of {} frames", starts.len(), self.window_len);
        let solved = starts
            .par_iter()
            .enumerate()
            .map(|(k, &s)| self.solve_window(k, s))
            .collect::<Result<Vec<_>>>()?;
        let (windows, reports): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        let detections = merge_windows(&windows, self.dataset.frame_count())?;
        Ok(DetectOutput {
            detections,
            windows,
            reports,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub detections: Vec<Detection>,
    pub windows: Vec<WindowResult>,
    pub reports: Vec<SolveReport>,
}

pub fn detect(dataset: &Dataset, config: &Config) -> Result<Vec<Detection>> {
    Ok(Detector::new(dataset, config)?.run()?.detections)
}

/// One evaluated (video, frame): the emitted box, if any, and the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalFrame {
    pub video_id: usize,
    pub frame: usize,
    pub detection: Option<BBox>,
    pub truth: Option<BBox>,
}

/// Lines detections up with ground-truth frames. Every ground-truth frame
/// needs exactly one detection and no detection may fall outside.
pub fn pair_frames(detections: &[Detection], truth: &GroundTruth) -> Result<Vec<EvalFrame>> {
    let mut by_key = BTreeMap::new();
    for d in detections {
        let inside = truth.videos.get(d.video_id).is_some_and(|v| d.frame < v.len());
        if !inside {
            return Err(Error::UnexpectedDetection {
                video_id: d.video_id,
                frame: d.frame,
            });
        }
        if by_key.insert((d.video_id, d.frame), d).is_some() {
            return Err(Error::DuplicateDetection {
                video_id: d.video_id,
                frame: d.frame,
            });
        }
    }
    let mut frames = Vec::with_capacity(by_key.len());
    for (v, boxes) in truth.videos.iter().enumerate() {
        for (t, gt) in boxes.iter().enumerate() {
            let d = by_key.get(&(v, t)).ok_or(Error::MissingDetection { video_id: v, frame: t })?;
            frames.push(EvalFrame {
                video_id: v,
                frame: t,
                detection: d.bbox,
                truth: *gt,
            });
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl From<Counts> for Metrics {
    fn from(c: Counts) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            counts: c,
            precision,
            recall,
            f_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_video: Vec<Metrics>,
    pub frames_evaluated: usize,
    pub iou_threshold: f64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, m: &Metrics| {
            writeln!(
                f,
                "{:<8} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                name, m.counts.tp, m.counts.fp, m.counts.fn_, m.precision, m.recall, m.f_score
            )
        };
        writeln!(f, "{:<8} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}", "video", "tp", "fp", "fn", "precision", "recall", "f-score")?;
        for (v, m) in self.per_video.iter().enumerate() {
            row(f, &v.to_string(), m)?;
        }
        row(f, "overall", &self.overall)?;
        write!(f, "{} frames evaluated at IoU > {}", self.frames_evaluated, self.iou_threshold)
    }
}

/// Counts for one frame. A box overlapping the truth by at most the
/// threshold is both a false positive and a false negative.
pub fn score_frame(frame: &EvalFrame, iou_threshold: f64) -> Counts {
    let mut c = Counts::default();
    match (frame.detection, frame.truth) {
        (Some(d), Some(g)) if iou(&d, &g) > iou_threshold => c.tp = 1,
        (Some(_), Some(_)) => {
            c.fp = 1;
            c.fn_ = 1;
        }
        (Some(_), None) => c.fp = 1,
        (None, Some(_)) => c.fn_ = 1,
        (None, None) => {}
    }
    c
}

/// Micro-averaged metrics over the given frames, overall and per video.
pub fn evaluate_frames(frames: &[EvalFrame], n_videos: usize, iou_threshold: f64) -> EvalReport {
    let mut per_video = vec![Counts::default(); n_videos];
    let mut overall = Counts::default();
    for f in frames {
        let c = score_frame(f, iou_threshold);
        for acc in [&mut overall, &mut per_video[f.video_id]] {
            acc.tp += c.tp;
            acc.fp += c.fp;
            acc.fn_ += c.fn_;
        }
    }
    EvalReport {
        overall: overall.into(),
        per_video: per_video.into_iter().map(Metrics::from).collect(),
        frames_evaluated: frames.len(),
        iou_threshold,
    }
}

pub fn evaluate(detections: &[Detection], truth: &GroundTruth, iou_threshold: f64) -> Result<EvalReport> {
    let frames = pair_frames(detections, truth)?;
    Ok(evaluate_frames(&frames, truth.videos.len(), iou_threshold))
}

/// Drops frames where the truth exists but no candidate overlaps it by
/// more than the threshold.
pub fn exclude_undetectable(frames: Vec<EvalFrame>, streams: &[VideoStream], iou_threshold: f64) -> Vec<EvalFrame> {
    frames
        .into_iter()
        .filter(|f| match f.truth {
            None => true,
            Some(g) => streams[f.video_id].candidates[f.frame]
                .iter()
                .any(|c| iou(&c.bbox, &g) > iou_threshold),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_starts() {
        assert_eq!(make_windows(10, 4, 2).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(make_windows(10, 4, 3).unwrap(), vec![0, 3, 6]);
        assert_eq!(make_windows(10, 10, 5).unwrap(), vec![0]);
        assert_eq!(make_windows(600, 100, 50).unwrap().len(), 11);
        assert!(matches!(make_windows(5, 6, 1), Err(Error::WindowTooLong { .. })));
        assert!(make_windows(10, 4, 5).is_err());
    }

    fn window(index: usize, start: usize, len: usize, energy: f64, id: usize) -> WindowResult {
        let pick = WindowPick {
            state: DetectionState::Candidate(id),
            bbox: Some(BBox::new(id as f64, 0.0, 1.0, 1.0)),
        };
        WindowResult {
            index,
            start,
            picks: vec![vec![pick; len]],
            energy,
        }
    }

    #[test]
    fn lower_energy_window_wins() {
        let ws = [window(0, 0, 4, 2.0, 1), window(1, 2, 4, 1.0, 2)];
        let d = merge_windows(&ws, 6).unwrap();
        let ids: Vec<_> = d.iter().map(|d| d.state).collect();
        use DetectionState::Candidate as C;
        assert_eq!(ids, vec![C(1), C(1), C(2), C(2), C(2), C(2)]);
        assert_eq!(d[0].window_energy, 2.0);
        assert_eq!(d[2].window_energy, 1.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let ws = [window(1, 0, 4, 1.0, 2), window(0, 0, 4, 1.0, 1)];
        let d = merge_windows(&ws, 4).unwrap();
        assert!(d.iter().all(|d| d.state == DetectionState::Candidate(1)));
    }

    #[test]
    fn uncovered_frame_is_reported() {
        let ws = [window(0, 0, 4, 1.0, 1)];
        assert!(matches!(
            merge_windows(&ws, 5),
            Err(Error::UncoveredFrame { video_id: 0, frame: 4 })
        ));
    }

    fn gt(boxes: Vec<Option<BBox>>) -> GroundTruth {
        GroundTruth { videos: vec![boxes] }
    }

    fn det(frame: usize, bbox: Option<BBox>) -> Detection {
        Detection {
            video_id: 0,
            frame,
            state: if bbox.is_some() {
                DetectionState::Candidate(0)
            } else {
                DetectionState::Idle
            },
            bbox,
            window_energy: 0.0,
        }
    }

    #[test]
    fn scoring_rules() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        // 4x10 overlap of two 10x10 boxes: IoU 40 / 160
        let off = BBox::new(6.0, 0.0, 10.0, 10.0);
        let truth = gt(vec![Some(g), Some(g), Some(g), None, None]);
        let dets = vec![det(0, Some(g)), det(1, Some(off)), det(2, None), det(3, Some(g)), det(4, None)];
        let r = evaluate(&dets, &truth, 0.5).unwrap();
        assert_eq!(r.overall.counts, Counts { tp: 1, fp: 2, fn_: 2 });
        assert!((r.overall.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.overall.f_score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_all_idle() {
        let g = BBox::new(1.0, 1.0, 5.0, 5.0);
        let truth = gt(vec![Some(g); 3]);
        let perfect: Vec<_> = (0..3).map(|t| det(t, Some(g))).collect();
        let r = evaluate(&perfect, &truth, 0.5).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f_score), (1.0, 1.0, 1.0));
        let idle: Vec<_> = (0..3).map(|t| det(t, None)).collect();
        let r = evaluate(&idle, &truth, 0.5).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f_score), (0.0, 0.0, 0.0));
    }

    #[test]
    fn coverage_errors_name_the_frame() {
        let truth = gt(vec![None; 3]);
        let dets = vec![det(0, None), det(2, None)];
        assert!(matches!(
            evaluate(&dets, &truth, 0.5),
            Err(Error::MissingDetection { video_id: 0, frame: 1 })
        ));
        let dets = vec![det(0, None), det(1, None), det(2, None), det(3, None)];
        assert!(matches!(evaluate(&dets, &truth, 0.5), Err(Error::UnexpectedDetection { .. })));
    }
}
