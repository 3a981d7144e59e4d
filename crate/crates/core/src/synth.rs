//! Synthetic multi-view scenes with known ground truth.
//!
//! Actors move on the ground plane of a 3D world under piecewise-constant
//! velocity scripts. Each camera projects orthographically: a world offset
//! `(dX, dY, dZ)` from the camera's aim point lands at image offset
//! `(s * (cos(yaw) * dX + sin(yaw) * dZ), -s * dY)` from the image center.
//! A camera normally keeps the CIP centered; a camera worn by the CIP looks
//! around instead. Inside each actor box the flow is the actor's image
//! motion plus a vertical limb oscillation on the lower half, unique per
//! actor. Trajectories are traced through the same motion.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_dataset, BBox, Candidate, Dataset, FlowRaster, GroundTruth, RawTrajectory, VideoStream, TRAJECTORY_LEN,
};
use crate::error::{Error, Result};

/// Frames over which a camera pans to a new CIP.
pub const PAN_FRAMES: usize = 10;

/// Period and half-width (world units) of the gaze sweep of a camera worn by the CIP.
const SWEEP_FRAMES: f64 = 40.0;
const SWEEP_REACH: f64 = 8.0;

pub const PRESET_NAMES: [&str; 4] = ["clean6", "egoview", "noisy", "tiny"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub frames: usize,
    /// World units per frame: lateral, vertical (up), depth.
    pub velocity: [f64; 3],
}

/// Vertical flow `amplitude * sin(omega * t + phase + 2 pi * rx)` on the
/// lower half of the box, `rx` being the relative x inside the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limb {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionScript {
    /// Ground position at frame 0.
    pub start: [f64; 3],
    pub segments: Vec<Segment>,
    pub limb: Limb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraScript {
    pub yaw: f64,
    /// Actor wearing the camera; never visible in it.
    #[serde(default)]
    pub wearer: Option<usize>,
    /// Amplitude in pixels of the head-shake offset.
    #[serde(default)]
    pub shake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability that a visible actor gets no candidate on a frame.
    pub miss_rate: f64,
    /// Probability of one spurious candidate per frame.
    pub fp_rate: f64,
    /// Pixel std of the candidate position perturbation.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            miss_rate: 0.0,
            fp_rate: 0.0,
            jitter: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipSpan {
    pub start_frame: usize,
    pub actor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Pixels per world unit.
    pub scale: f64,
    /// Actor width and height in world units.
    pub actor_size: [f64; 2],
    pub actors: Vec<MotionScript>,
    pub cameras: Vec<CameraScript>,
    /// CIP changes, sorted, the first at frame 0.
    pub cip: Vec<CipSpan>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// A new batch of actor trajectories starts every this many frames.
    #[serde(default = "default_traj_interval")]
    pub traj_interval: usize,
    #[serde(default = "default_traj_per_actor")]
    pub traj_per_actor: usize,
    /// Background trajectories per batch.
    #[serde(default = "default_traj_background")]
    pub traj_background: usize,
}

fn default_traj_interval() -> usize {
    4
}

fn default_traj_per_actor() -> usize {
    2
}

fn default_traj_background() -> usize {
    1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scene(m));
        if self.actors.is_empty() || self.cameras.len() < 2 {
            return fail("a scene needs at least one actor and two cameras".into());
        }
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return fail("frames, width and height must be positive".into());
        }
        if !(self.scale > 0.0) || self.actor_size.iter().any(|v| !(*v > 0.0)) {
            return fail("scale and actor size must be positive".into());
        }
        for (a, m) in self.actors.iter().enumerate() {
            let total: usize = m.segments.iter().map(|s| s.frames).sum();
            if total != self.frames {
                return fail(format!("actor {} segments cover {} of {} frames", a, total, self.frames));
            }
            let finite = m.start.iter().chain(m.segments.iter().flat_map(|s| s.velocity.iter())).all(|v| v.is_finite())
                && [m.limb.amplitude, m.limb.omega, m.limb.phase].iter().all(|v| v.is_finite());
            if !finite {
                return fail(format!("actor {} has non-finite motion", a));
            }
        }
        for (k, c) in self.cameras.iter().enumerate() {
            if c.wearer.is_some_and(|w| w >= self.actors.len()) || !c.yaw.is_finite() || !c.shake.is_finite() {
                return fail(format!("camera {} is malformed", k));
            }
        }
        if self.cip.first().map(|c| c.start_frame) != Some(0)
            || self.cip.windows(2).any(|w| w[0].start_frame >= w[1].start_frame)
            || self.cip.iter().any(|c| c.actor >= self.actors.len())
        {
            return fail("cip spans must start at frame 0, be increasing and name existing actors".into());
        }
        let n = &self.noise;
        if ![n.miss_rate, n.fp_rate].iter().all(|r| (0.0..=1.0).contains(r)) || !(n.jitter >= 0.0) {
            return fail("noise rates must lie in [0, 1] and jitter must be non-negative".into());
        }
        if self.traj_interval == 0 {
            return fail("traj_interval must be positive".into());
        }
        Ok(())
    }

    /// The same scene cut to its first `frames` frames.
    pub fn truncated(&self, frames: usize) -> SceneSpec {
        let mut s = self.clone();
        s.frames = frames.min(self.frames);
        for m in &mut s.actors {
            let mut left = s.frames;
            m.segments.retain_mut(|seg| {
                let take = seg.frames.min(left);
                left -= take;
                seg.frames = take;
                take > 0
            });
        }
        s.cip.retain(|c| c.start_frame < s.frames);
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn cip_at(&self, frame: usize) -> usize {
        self.cip.iter().rev().find(|c| c.start_frame <= frame).map_or(0, |c| c.actor)
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Actor ground positions for frames `0..=frames`.
fn actor_paths(scene: &SceneSpec) -> Vec<Vec<[f64; 3]>> {
    scene
        .actors
        .iter()
        .map(|m| {
            let mut p = m.start;
            let mut path = Vec::with_capacity(scene.frames + 1);
            path.push(p);
            for seg in &m.segments {
                for _ in 0..seg.frames {
                    for (x, v) in p.iter_mut().zip(seg.velocity) {
                        *x += v;
                    }
                    path.push(p);
                }
            }
            path
        })
        .collect()
}

struct View<'s> {
    scene: &'s SceneSpec,
    index: usize,
    cos: f64,
    sin: f64,
    /// Aim point per frame `0..=frames`.
    aim: Vec<[f64; 3]>,
    /// Head-shake image offset per frame.
    shake: Vec<[f64; 2]>,
}

impl<'s> View<'s> {
    fn new(scene: &'s SceneSpec, index: usize, paths: &[Vec<[f64; 3]>]) -> Self {
        let cam = &scene.cameras[index];
        let torso = 0.5 * scene.actor_size[1];
        let wander_phase = index as f64 * 17.0;
        let target = |cip: usize, t: usize| -> [f64; 3] {
            let [x, y, z] = paths[cip][t];
            let mut a = [x, y + torso, z];
            if cam.wearer == Some(cip) {
                // the CIP keeps turning its head: a steady lateral sweep that snaps back
                let phase = ((t as f64 + wander_phase) / SWEEP_FRAMES).fract();
                let offset = SWEEP_REACH * (2.0 * phase - 1.0);
                a[0] += offset * cam.yaw.cos();
                a[2] += offset * cam.yaw.sin();
            }
            a
        };
        let aim = (0..=scene.frames)
            .map(|t| {
                let now = target(scene.cip_at(t), t);
                let span = scene.cip.iter().rev().find(|c| c.start_frame <= t).unwrap();
                let since = t - span.start_frame;
                if span.start_frame == 0 || since >= PAN_FRAMES {
                    return now;
                }
                let before = target(scene.cip_at(span.start_frame - 1), t);
                let alpha = (since + 1) as f64 / (PAN_FRAMES + 1) as f64;
                [0, 1, 2].map(|i| before[i] + alpha * (now[i] - before[i]))
            })
            .collect();
        let k = index as f64;
        let shake = (0..=scene.frames)
            .map(|t| {
                let t = t as f64;
                [
                    cam.shake * (0.21 * t + k).sin(),
                    cam.shake * (0.17 * t + 2.0 * k).cos(),
                ]
            })
            .collect();
        View {
            scene,
            index,
            cos: cam.yaw.cos(),
            sin: cam.yaw.sin(),
            aim,
            shake,
        }
    }

    fn project(&self, p: [f64; 3], t: usize) -> [f64; 2] {
        let s = self.scene.scale;
        let a = self.aim[t];
        let dx = self.cos * (p[0] - a[0]) + self.sin * (p[2] - a[2]);
        let dy = p[1] - a[1];
        [
            0.5 * self.scene.width as f64 + s * dx + self.shake[t][0],
            0.5 * self.scene.height as f64 - s * dy + self.shake[t][1],
        ]
    }

    fn depth(&self, p: [f64; 3]) -> f64 {
        -self.sin * p[0] + self.cos * p[2]
    }

    fn actor_box(&self, ground: [f64; 3], t: usize) -> BBox {
        let [w, h] = self.scene.actor_size.map(|v| v * self.scene.scale);
        let [cx, cy] = self.project([ground[0], ground[1] + 0.5 * self.scene.actor_size[1], ground[2]], t);
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    /// Image motion of static scenery from `t` to `t + 1`.
    fn ego(&self, t: usize) -> [f64; 2] {
        let a = self.project([0.0; 3], t + 1);
        let b = self.project([0.0; 3], t);
        [a[0] - b[0], a[1] - b[1]]
    }

    fn visible(&self, actor: usize, bbox: &BBox) -> bool {
        let (cx, cy) = bbox.center();
        self.scene.cameras[self.index].wearer != Some(actor)
            && cx >= 0.0
            && cx < self.scene.width as f64
            && cy >= 0.0
            && cy < self.scene.height as f64
    }
}

fn limb_flow(limb: &Limb, bbox: &BBox, x: f64, y: f64, t: usize) -> f64 {
    let ry = (y - bbox.y) / bbox.h;
    if ry < 0.5 || !bbox.contains(x, y) {
        return 0.0;
    }
    let rx = (x - bbox.x) / bbox.w;
    limb.amplitude * (limb.omega * t as f64 + limb.phase + TAU * rx).sin()
}

/// Renders the scene. Candidate ids are assigned left to right.
pub fn generate(scene: &SceneSpec) -> Result<Synthesized> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.noise.seed);
    let jitter = Normal::new(0.0, scene.noise.jitter).map_err(|e| Error::Scene(e.to_string()))?;
    let paths = actor_paths(scene);
    let (w, h) = (scene.width, scene.height);
    let frames = scene.frames;
    let mut videos = Vec::with_capacity(scene.cameras.len());
    let mut truth = Vec::with_capacity(scene.cameras.len());
    let mut ever_visible = vec![false; scene.actors.len()];

    for k in 0..scene.cameras.len() {
        let view = View::new(scene, k, &paths);
        let boxes: Vec<Vec<BBox>> = (0..=frames)
            .map(|t| paths.iter().map(|p| view.actor_box(p[t], t)).collect())
            .collect();

        let mut flow = Vec::with_capacity(frames);
        for t in 0..frames {
            if t + 1 == frames {
                flow.push(FlowRaster::zeros(w, h));
                continue;
            }
            let ego = view.ego(t);
            let mut raster = FlowRaster::from_fn(w, h, |_, _| [ego[0] as f32, ego[1] as f32]);
            let mut order: Vec<usize> = (0..scene.actors.len())
                .filter(|&a| scene.cameras[k].wearer != Some(a))
                .collect();
            // far to near, so nearer actors overwrite
            order.sort_by(|&a, &b| view.depth(paths[b][t]).total_cmp(&view.depth(paths[a][t])));
            for a in order {
                let (b0, b1) = (boxes[t][a], boxes[t + 1][a]);
                let (c0, c1) = (b0.center(), b1.center());
                let d = [c1.0 - c0.0, c1.1 - c0.1];
                let limb = &scene.actors[a].limb;
                let xs = pixel_range(b0.x, b0.w, w);
                let ys = pixel_range(b0.y, b0.h, h);
                for py in ys {
                    for px in xs.clone() {
                        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                        let v = d[1] + limb_flow(limb, &b0, x, y, t);
                        raster.set(px, py, [d[0] as f32, v as f32]);
                    }
                }
            }
            flow.push(raster);
        }

        let mut candidates = Vec::with_capacity(frames);
        let mut gt = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut found = Vec::new();
            for (a, b) in boxes[t].iter().enumerate() {
                if !view.visible(a, b) {
                    continue;
                }
                ever_visible[a] = true;
                if scene.noise.miss_rate > 0.0 && rng.random::<f64>() < scene.noise.miss_rate {
                    continue;
                }
                let mut c = *b;
                if scene.noise.jitter > 0.0 {
                    c.x += jitter.sample(&mut rng);
                    c.y += jitter.sample(&mut rng);
                }
                found.push(c);
            }
            if scene.noise.fp_rate > 0.0 && rng.random::<f64>() < scene.noise.fp_rate {
                let bw = scene.actor_size[0] * scene.scale * rng.random_range(0.8..1.2);
                let bh = scene.actor_size[1] * scene.scale * rng.random_range(0.8..1.2);
                let cx = rng.random_range(0.0..w as f64);
                let cy = rng.random_range(0.0..h as f64);
                found.push(BBox::new(cx - 0.5 * bw, cy - 0.5 * bh, bw, bh));
            }
            found.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
            candidates.push(
                found
                    .into_iter()
                    .enumerate()
                    .map(|(id, bbox)| Candidate { id, bbox })
                    .collect(),
            );
            let cip = scene.cip_at(t);
            let b = boxes[t][cip];
            gt.push(view.visible(cip, &b).then_some(b));
        }

        let trajectories = trace_trajectories(scene, &view, &boxes, &mut rng);
        videos.push(VideoStream {
            video_id: k,
            width: w,
            height: h,
            candidates,
            flow,
            trajectories,
        });
        truth.push(gt);
    }

    let mut warnings = Vec::new();
    for (a, seen) in ever_visible.iter().enumerate() {
        if !seen {
            let msg = format!("actor {} is never visible in any camera", a);
            warn!("{}", msg);
            warnings.push(msg);
        }
    }
    let dataset = Dataset {
        videos,
        ground_truth: Some(GroundTruth { videos: truth }),
    };
    dataset.validate()?;
    Ok(Synthesized { dataset, warnings })
}

fn pixel_range(start: f64, len: f64, limit: u32) -> std::ops::Range<u32> {
    let lo = (start - 0.5).ceil().clamp(0.0, limit as f64) as u32;
    let hi = (start + len - 0.5).ceil().clamp(0.0, limit as f64) as u32;
    lo..hi.max(lo)
}

fn trace_trajectories(
    scene: &SceneSpec,
    view: &View,
    boxes: &[Vec<BBox>],
    rng: &mut ChaCha8Rng,
) -> Vec<RawTrajectory> {
    let mut out = Vec::new();
    if scene.frames < TRAJECTORY_LEN {
        return out;
    }
    let (w, h) = (scene.width as f64, scene.height as f64);
    for start in (0..=scene.frames - TRAJECTORY_LEN).step_by(scene.traj_interval) {
        for a in 0..scene.actors.len() {
            let b = boxes[start][a];
            if !view.visible(a, &b) {
                continue;
            }
            for _ in 0..scene.traj_per_actor {
                let rx = rng.random_range(0.15..0.85);
                let ry = rng.random_range(0.6..0.8);
                let mut q = [b.x + rx * b.w, b.y + ry * b.h];
                let mut points = Vec::with_capacity(TRAJECTORY_LEN);
                for t in start..start + TRAJECTORY_LEN {
                    points.push(q);
                    let (c0, c1) = (boxes[t][a].center(), boxes[t + 1][a].center());
                    // the point rides with the box, so place it relative to it
                    let limb = limb_flow(&scene.actors[a].limb, &boxes[t][a], q[0], q[1], t);
                    q = [q[0] + c1.0 - c0.0, q[1] + c1.1 - c0.1 + limb];
                }
                out.push(RawTrajectory {
                    start_frame: start,
                    points,
                });
            }
        }
        for _ in 0..scene.traj_background {
            let mut q = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            let mut points = Vec::with_capacity(TRAJECTORY_LEN);
            for t in start..start + TRAJECTORY_LEN {
                points.push(q);
                let e = view.ego(t);
                q = [q[0] + e[0], q[1] + e[1]];
            }
            out.push(RawTrajectory {
                start_frame: start,
                points,
            });
        }
    }
    out
}

pub fn generate_to_disk(scene: &SceneSpec, root: &Path) -> Result<Synthesized> {
    let out = generate(scene)?;
    write_dataset(&out.dataset, root)?;
    Ok(out)
}

fn random_actors(rng: &mut ChaCha8Rng, count: usize, frames: usize) -> Vec<MotionScript> {
    const BOUND: f64 = 3.5;
    let mut starts: Vec<[f64; 3]> = Vec::with_capacity(count);
    while starts.len() < count {
        let p = [rng.random_range(-2.5..2.5), 0.0, rng.random_range(-2.5..2.5)];
        if starts.iter().all(|q| (p[0] - q[0]).hypot(p[2] - q[2]) > 1.2) {
            starts.push(p);
        }
    }
    starts
        .into_iter()
        .map(|start| {
            let mut p = start;
            let mut segments = Vec::new();
            let mut left = frames;
            while left > 0 {
                let n = rng.random_range(15..40).min(left);
                let mut v = [
                    rng.random_range(-0.04..0.04),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.04..0.04),
                ];
                for (i, lim) in [(0, BOUND), (1, 0.3), (2, BOUND)] {
                    if (p[i] + v[i] * n as f64).abs() > lim {
                        v[i] = -v[i];
                    }
                }
                for i in 0..3 {
                    p[i] += v[i] * n as f64;
                }
                segments.push(Segment { frames: n, velocity: v });
                left -= n;
            }
            MotionScript {
                start,
                segments,
                limb: Limb {
                    amplitude: rng.random_range(1.5..2.5),
                    omega: rng.random_range(0.25..0.6),
                    phase: rng.random_range(0.0..TAU),
                },
            }
        })
        .collect()
}

fn base_scene(seed: u64, actors: usize, cameras: Vec<CameraScript>, frames: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneSpec {
        frames,
        width: 96,
        height: 72,
        scale: 24.0,
        actor_size: [0.6, 1.7],
        actors: random_actors(&mut rng, actors, frames),
        cameras,
        cip: vec![CipSpan {
            start_frame: 0,
            actor: 0,
        }],
        noise: NoiseSpec {
            seed,
            ..NoiseSpec::default()
        },
        traj_interval: default_traj_interval(),
        traj_per_actor: default_traj_per_actor(),
        traj_background: default_traj_background(),
    }
}

fn ring_cameras(n: usize, wearers: bool) -> Vec<CameraScript> {
    (0..n)
        .map(|k| CameraScript {
            yaw: k as f64 * TAU / n as f64,
            wearer: wearers.then_some(k),
            shake: 0.4,
        })
        .collect()
}

/// Named scene. `clean6`: six bystander cameras around six actors, 1200
/// frames, the CIP changing every 200 frames. `egoview`: each camera worn by
/// one actor, actor 0 the CIP throughout. `noisy`: a 600-frame `clean6` with
/// misses, false positives and jitter. `tiny`: two opposite cameras, two
/// actors, 30 frames.
pub fn preset(name: &str, seed: u64) -> Option<SceneSpec> {
    let scene = match name {
        "clean6" => {
            let mut s = base_scene(seed, 6, ring_cameras(6, false), 1200);
            s.cip = (0..6)
                .map(|k| CipSpan {
                    start_frame: 200 * k,
                    actor: k,
                })
                .collect();
            s
        }
        "egoview" => base_scene(seed, 6, ring_cameras(6, true), 600),
        "noisy" => {
            let mut s = preset("clean6", seed)?.truncated(600);
            s.noise = NoiseSpec {
                miss_rate: 0.1,
                fp_rate: 0.1,
                jitter: 2.0,
                seed,
            };
            s
        }
        "tiny" => {
            let cams = vec![
                CameraScript {
                    yaw: 0.0,
                    wearer: None,
                    shake: 0.4,
                },
                CameraScript {
                    yaw: PI,
                    wearer: None,
                    shake: 0.4,
                },
            ];
            base_scene(seed, 2, cams, 30)
        }
        _ => return None,
    };
    Some(scene)
}

pub fn scenario_presets(seed: u64) -> Vec<(&'static str, SceneSpec)> {
    PRESET_NAMES
        .iter()
        .map(|n| (*n, preset(n, seed).expect("known preset")))
        .collect()
}
