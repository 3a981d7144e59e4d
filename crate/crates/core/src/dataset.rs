//! On-disk dataset model: synchronized candidate boxes, flow rasters and
//! point trajectories for N videos, plus ground truth and detections.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.json                 {"videos": [{video_id, frame_count, width, height}, ...]}
//! ground_truth.json             [[{x,y,w,h} | null, ...per frame], ...per video]   (optional)
//! video_<k>/candidates.json     [[{id,x,y,w,h}, ...per candidate], ...per frame]
//! video_<k>/trajectories.json   [{start_frame, points: [[x,y] x 15]}, ...]
//! video_<k>/flow/<frame:06>.flo2
//! ```
//!
//! A `.flo2` file is the magic `CIP2`, width and height as little-endian
//! `u32`, then `width * height` interleaved `(u, v)` little-endian `f32`
//! pairs in row-major order. The raster of frame `t` holds the motion from
//! `t` to `t + 1`; the last frame carries a zero raster.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in every stored trajectory.
pub const TRAJECTORY_LEN: usize = 15;

const FLOW_MAGIC: &[u8; 4] = b"CIP2";

/// Axis-aligned box in pixels, origin top-left, y pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// True when the box overlaps the `width x height` frame with positive area.
    pub fn intersects_frame(&self, width: u32, height: u32) -> bool {
        self.x < width as f64 && self.y < height as f64 && self.right() > 0.0 && self.bottom() > 0.0
    }

    /// Point-in-box test, boundary inclusive.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Grows the box by `fraction` of its width (height) on each side.
    pub fn dilate(&self, fraction: f64) -> BBox {
        BBox {
            x: self.x - fraction * self.w,
            y: self.y - fraction * self.h,
            w: self.w * (1.0 + 2.0 * fraction),
            h: self.h * (1.0 + 2.0 * fraction),
        }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Dense per-frame motion field, `(u, v)` in pixels/frame, u rightward, v downward.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRaster {
    width: u32,
    height: u32,
    data: Vec<[f32; 2]>,
}

impl FlowRaster {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidDataset(format!(
                "flow raster {}x{} given {} vectors",
                width,
                height,
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("flow raster contains non-finite values".into()));
        }
        Ok(FlowRaster { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        FlowRaster {
            width,
            height,
            data: vec![[0.0; 2]; width as usize * height as usize],
        }
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        FlowRaster { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f32; 2]] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 2] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: [f32; 2]) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 8);
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for [u, v] in &self.data {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::FlowFormat {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
            return Err(bad("missing CIP2 header".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let expected = 12 + width as usize * height as usize * 8;
        if bytes.len() != expected {
            return Err(bad(format!(
                "{}x{} raster needs {} bytes, file has {}",
                width,
                height,
                expected,
                bytes.len()
            )));
        }
        let data: Vec<[f32; 2]> = bytes[12..]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                ]
            })
            .collect();
        FlowRaster::new(width, height, data).map_err(|e| bad(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrajectory {
    pub start_frame: usize,
    pub points: Vec<[f64; 2]>,
}

impl RawTrajectory {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.points.len()
    }

    /// Point at absolute frame `frame`, if the trajectory is alive then.
    pub fn point_at(&self, frame: usize) -> Option<[f64; 2]> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.points.get(i))
            .copied()
    }
}

/// One synchronized video: candidates and flow per frame, trajectories for the whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoStream {
    pub video_id: usize,
    pub width: u32,
    pub height: u32,
    pub candidates: Vec<Vec<Candidate>>,
    pub flow: Vec<FlowRaster>,
    pub trajectories: Vec<RawTrajectory>,
}

impl VideoStream {
    pub fn frame_count(&self) -> usize {
        self.candidates.len()
    }
}

/// Per video, per frame box of the true co-interest person, `None` where it is not visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub videos: Vec<Vec<Option<BBox>>>,
}

impl GroundTruth {
    pub fn get(&self, video_id: usize, frame: usize) -> Option<BBox> {
        self.videos.get(video_id).and_then(|v| v.get(frame)).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoStream>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.videos.first().map_or(0, VideoStream::frame_count)
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    /// Checks every structural invariant the loader enforces.
    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::InvalidDataset("dataset has no videos".into()));
        }
        let frames = self.videos[0].frame_count();
        for (k, v) in self.videos.iter().enumerate() {
            if v.video_id != k {
                return Err(Error::InvalidDataset(format!(
                    "video ids must be 0..N-1 in order, found {} at position {}",
                    v.video_id, k
                )));
            }
            if v.frame_count() != frames {
                return Err(Error::FrameCountMismatch {
                    video_id: k,
                    expected: frames,
                    found: v.frame_count(),
                });
            }
            if v.flow.len() != frames {
                return Err(Error::InvalidDataset(format!(
                    "video {} has {} flow rasters for {} frames",
                    k,
                    v.flow.len(),
                    frames
                )));
            }
            for raster in &v.flow {
                if raster.width() != v.width || raster.height() != v.height {
                    return Err(Error::InvalidDataset(format!(
                        "video {} flow raster is {}x{}, frames are {}x{}",
                        k,
                        raster.width(),
                        raster.height(),
                        v.width,
                        v.height
                    )));
                }
            }
            for (t, cands) in v.candidates.iter().enumerate() {
                for (i, c) in cands.iter().enumerate() {
                    if c.id != i {
                        return Err(Error::InvalidDataset(format!(
                            "video {} frame {}: candidate ids must be contiguous from 0",
                            k, t
                        )));
                    }
                    if !c.bbox.is_valid() || !c.bbox.intersects_frame(v.width, v.height) {
                        return Err(Error::InvalidDataset(format!(
                            "video {} frame {}: candidate {} box {:?} is degenerate or outside the frame",
                            k, t, i, c.bbox
                        )));
                    }
                }
            }
            for tr in &v.trajectories {
                if tr.points.len() != TRAJECTORY_LEN || tr.end_frame() > frames {
                    return Err(Error::InvalidDataset(format!(
                        "video {} trajectory starting at {} does not fit the stream",
                        k, tr.start_frame
                    )));
                }
                if tr.points.iter().flatten().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidDataset(format!(
                        "video {} trajectory starting at {} has non-finite points",
                        k, tr.start_frame
                    )));
                }
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.videos.len() != self.videos.len() {
                return Err(Error::InvalidDataset(format!(
                    "ground truth covers {} videos, dataset has {}",
                    gt.videos.len(),
                    self.videos.len()
                )));
            }
            for (k, frames_gt) in gt.videos.iter().enumerate() {
                if frames_gt.len() != frames {
                    return Err(Error::FrameCountMismatch {
                        video_id: k,
                        expected: frames,
                        found: frames_gt.len(),
                    });
                }
                let (w, h) = (self.videos[k].width, self.videos[k].height);
                if frames_gt.iter().flatten().any(|b| !b.is_valid() || !b.intersects_frame(w, h)) {
                    return Err(Error::InvalidDataset(format!(
                        "ground truth of video {} has a box outside the frame",
                        k
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    videos: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    video_id: usize,
    frame_count: usize,
    width: u32,
    height: u32,
}

/// A loaded dataset plus the number of load-time warnings (dropped short trajectories).
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = if pretty {
        serde_json::to_writer_pretty(&mut w, value)
    } else {
        serde_json::to_writer(&mut w, value)
    };
    res.map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub(crate) fn video_dir(root: &Path, video_id: usize) -> std::path::PathBuf {
    root.join(format!("video_{}", video_id))
}

fn flow_path(root: &Path, video_id: usize, frame: usize) -> std::path::PathBuf {
    video_dir(root, video_id).join("flow").join(format!("{:06}.flo2", frame))
}

pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let manifest_path = root.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let mut manifest: Manifest = read_json(&manifest_path)?;
    manifest.videos.sort_by_key(|v| v.video_id);
    if manifest.videos.is_empty() {
        return Err(Error::InvalidDataset("manifest lists no videos".into()));
    }
    let frames = manifest.videos[0].frame_count;
    for (k, entry) in manifest.videos.iter().enumerate() {
        if entry.video_id != k {
            return Err(Error::InvalidDataset(format!(
                "manifest video ids must be 0..N-1, missing video {}",
                k
            )));
        }
        if entry.frame_count != frames {
            return Err(Error::FrameCountMismatch {
                video_id: entry.video_id,
                expected: frames,
                found: entry.frame_count,
            });
        }
        if entry.width == 0 || entry.height == 0 {
            return Err(Error::InvalidDataset(format!("video {} has empty frames", k)));
        }
    }

    let mut warnings = 0;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let dir = video_dir(root, entry.video_id);
        let candidates: Vec<Vec<Candidate>> = read_json(&dir.join("candidates.json"))?;
        if candidates.len() != entry.frame_count {
            return Err(Error::FrameCountMismatch {
                video_id: entry.video_id,
                expected: entry.frame_count,
                found: candidates.len(),
            });
        }
        let raw: Vec<RawTrajectory> = read_json(&dir.join("trajectories.json"))?;
        let mut trajectories = Vec::with_capacity(raw.len());
        for tr in raw {
            if tr.points.len() < TRAJECTORY_LEN {
                warnings += 1;
                log::warn!(
                    "video {}: dropping trajectory at frame {} with {} points",
                    entry.video_id,
                    tr.start_frame,
                    tr.points.len()
                );
                continue;
            }
            trajectories.push(tr);
        }
        let mut flow = Vec::with_capacity(entry.frame_count);
        for t in 0..entry.frame_count {
            let path = flow_path(root, entry.video_id, t);
            let raster = FlowRaster::read(&path)?;
            if raster.width() != entry.width || raster.height() != entry.height {
                return Err(Error::FlowFormat {
                    path,
                    reason: format!(
                        "raster is {}x{}, manifest says {}x{}",
                        raster.width(),
                        raster.height(),
                        entry.width,
                        entry.height
                    ),
                });
            }
            flow.push(raster);
        }
        videos.push(VideoStream {
            video_id: entry.video_id,
            width: entry.width,
            height: entry.height,
            candidates,
            flow,
            trajectories,
        });
    }

    let gt_path = root.join("ground_truth.json");
    let ground_truth = if gt_path.is_file() {
        Some(read_json(&gt_path)?)
    } else {
        None
    };
    let dataset = Dataset {
        videos,
        ground_truth,
    };
    dataset.validate()?;
    Ok(LoadedDataset { dataset, warnings })
}

pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = Manifest {
        videos: dataset
            .videos
            .iter()
            .map(|v| ManifestEntry {
                video_id: v.video_id,
                frame_count: v.frame_count(),
                width: v.width,
                height: v.height,
            })
            .collect(),
    };
    write_json(&root.join("manifest.json"), &manifest, true)?;
    for v in &dataset.videos {
        let dir = video_dir(root, v.video_id);
        let flow_dir = dir.join("flow");
        fs::create_dir_all(&flow_dir).map_err(|e| Error::io(&flow_dir, e))?;
        write_json(&dir.join("candidates.json"), &v.candidates, false)?;
        write_json(&dir.join("trajectories.json"), &v.trajectories, false)?;
        for (t, raster) in v.flow.iter().enumerate() {
            raster.write(&flow_path(root, v.video_id, t))?;
        }
    }
    if let Some(gt) = &dataset.ground_truth {
        write_json(&root.join("ground_truth.json"), gt, false)?;
    }
    Ok(())
}

/// Chosen state of one node: a candidate id or the idle state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub enum DetectionState {
    Idle,
    Candidate(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StateRepr {
    Id(usize),
    Label(String),
}

impl From<DetectionState> for StateRepr {
    fn from(s: DetectionState) -> Self {
        match s {
            DetectionState::Idle => StateRepr::Label("idle".into()),
            DetectionState::Candidate(id) => StateRepr::Id(id),
        }
    }
}

impl TryFrom<StateRepr> for DetectionState {
    type Error = String;

    fn try_from(r: StateRepr) -> std::result::Result<Self, String> {
        match r {
            StateRepr::Id(id) => Ok(DetectionState::Candidate(id)),
            StateRepr::Label(s) if s == "idle" => Ok(DetectionState::Idle),
            StateRepr::Label(s) => Err(format!("unknown detection state {:?}", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: usize,
    pub frame: usize,
    pub state: DetectionState,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub window_energy: f64,
}

/// Sorts detections video-major, frame-minor, rejecting duplicates and
/// state/box mismatches.
pub fn sort_detections(detections: &[Detection]) -> Result<Vec<Detection>> {
    let mut by_key = BTreeMap::new();
    for d in detections {
        let idle = d.state == DetectionState::Idle;
        if idle != d.bbox.is_none() {
            return Err(Error::InvalidDataset(format!(
                "detection for video {}, frame {}: box must be present iff state is a candidate",
                d.video_id, d.frame
            )));
        }
        if by_key.insert((d.video_id, d.frame), *d).is_some() {
            return Err(Error::DuplicateDetection {
                video_id: d.video_id,
                frame: d.frame,
            });
        }
    }
    Ok(by_key.into_values().collect())
}

pub fn write_detections(detections: &[Detection], path: &Path) -> Result<()> {
    let sorted = sort_detections(detections)?;
    write_json(path, &sorted, true)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let detections: Vec<Detection> = read_json(path)?;
    sort_detections(&detections)
}
