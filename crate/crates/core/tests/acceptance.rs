//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::path::Path;
use std::time::Instant;

use cip_core::config::Config;
use cip_core::crf::{build_window_crf, expected_edge_count, CrfProblem};
use cip_core::dataset::{
    load_dataset, write_dataset, BBox, Candidate, DetectionState, FlowRaster, RawTrajectory, VideoStream,
};
use cip_core::flowfeat::{frame_feature, hof5, HOF_DIM, MAG_DIM};
use cip_core::pipeline::{
    evaluate_frames, exclude_undetectable, make_windows, merge_windows, pair_frames, Detector, WindowPick,
    WindowResult,
};
use cip_core::solver::{solve_exhaustive, solve_trws, SolveReport, TrwsOptions};
use cip_core::synth::{generate, preset};
use cip_core::trajfeat::{hankelet, hankelet_dist, max_hankelet_distance, mph, mph_dist};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Every TRW-S run in this harness reports here.
#[derive(Default)]
struct BoundLog {
    runs: usize,
    worst_drop: f64,
}

impl BoundLog {
    fn record(&mut self, r: &SolveReport) {
        self.runs += 1;
        self.worst_drop = self.worst_drop.max(worst_bound_drop(&r.bound_history));
    }
}

/// Every TRW-S energy compared against the tables.
#[derive(Default)]
struct EnergyLog {
    runs: usize,
    worst: f64,
}

impl EnergyLog {
    fn check(&mut self, p: &CrfProblem, r: &SolveReport) {
        self.runs += 1;
        self.worst = self.worst.max((recompute_energy(p, &r.labeling.states) - r.labeling.energy).abs());
    }
}

fn solver_correctness(bounds: &mut BoundLog, energies: &mut EnergyLog) -> Outcome {
    let opts = TrwsOptions::default();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut agree, mut bound_ok) = (0, 0);
    for _ in 0..200 {
        let p = random_window(&mut rng, 2, 3, 3);
        let exact = solve_exhaustive(&p).unwrap();
        let r = solve_trws(&p, &opts).unwrap();
        bounds.record(&r);
        energies.check(&p, &r);
        agree += usize::from((r.labeling.energy - exact.energy).abs() <= 1e-9);
        bound_ok += usize::from(r.lower_bound <= exact.energy + 1e-9);
    }
    let mut chain_agree = 0;
    for _ in 0..100 {
        let t = rng.random_range(2..=8);
        let p = random_chain(&mut rng, t, 3);
        let exact = solve_exhaustive(&p).unwrap();
        let r = solve_trws(&p, &opts).unwrap();
        bounds.record(&r);
        energies.check(&p, &r);
        let dp = chain_minimum(&p);
        chain_agree += usize::from((r.labeling.energy - exact.energy).abs() <= 1e-9 && (dp - exact.energy).abs() <= 1e-9);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        agree >= 190 && bound_ok == 200 && chain_agree == 100 && secs < 5.0,
        format!(
            "windows agree {agree}/200, bound <= optimum {bound_ok}/200, chains agree {chain_agree}/100, {secs:.3}s"
        ),
    )
}

fn eighth(rng: &mut ChaCha8Rng, range: i32) -> f64 {
    rng.random_range(-range..range) as f64 / 8.0
}

fn random_raster(rng: &mut ChaCha8Rng, w: u32, h: u32) -> FlowRaster {
    FlowRaster::from_fn(w, h, |_, _| [eighth(rng, 32) as f32, eighth(rng, 32) as f32])
}

fn random_trajectory(rng: &mut ChaCha8Rng, start_frame: usize) -> RawTrajectory {
    RawTrajectory {
        start_frame,
        points: (0..15).map(|_| [eighth(rng, 512), eighth(rng, 512)]).collect(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn feature_invariants() -> Outcome {
    const N: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut hof_mirror, mut mph_mirror, mut camera, mut flip_changes, mut dims) = (0, 0, 0, 0, 0);
    for _ in 0..N {
        let n = rng.random_range(1..80);
        let patch: Vec<[f64; 2]> = (0..n).map(|_| [eighth(&mut rng, 32), eighth(&mut rng, 32)]).collect();
        let mirrored: Vec<[f64; 2]> = patch.iter().map(|[u, v]| [-u, *v]).collect();
        hof_mirror += usize::from(max_diff(&hof5(&patch), &hof5(&mirrored)) <= 1e-6);

        let trajs: Vec<RawTrajectory> = (0..rng.random_range(1..6))
            .map(|_| {
                let start = rng.random_range(0..20);
                random_trajectory(&mut rng, start)
            })
            .collect();
        let axis = eighth(&mut rng, 800);
        let mirrored: Vec<RawTrajectory> = trajs
            .iter()
            .map(|t| RawTrajectory {
                start_frame: t.start_frame,
                points: t.points.iter().map(|[x, y]| [axis - x, *y]).collect(),
            })
            .collect();
        mph_mirror += usize::from(mph_dist(&mph(&trajs, 0, 40), &mph(&mirrored, 0, 40)) <= 1e-6);

        let r = random_raster(&mut rng, 48, 48);
        let b = BBox::new(
            rng.random_range(4..20) as f64,
            rng.random_range(4..20) as f64,
            rng.random_range(4..20) as f64,
            rng.random_range(6..24) as f64,
        );
        let (cu, cv) = (eighth(&mut rng, 128) as f32, eighth(&mut rng, 128) as f32);
        let shifted = FlowRaster::new(48, 48, r.data().iter().map(|[u, v]| [u + cu, v + cv]).collect()).unwrap();
        let (fa, fs) = (frame_feature(&r, &b).unwrap(), frame_feature(&shifted, &b).unwrap());
        camera += usize::from(max_diff(&fa.hof, &fs.hof) <= 1e-6 && max_diff(&fa.mag, &fs.mag) <= 1e-6);
        dims += usize::from(fa.hof.len() == HOF_DIM && fa.mag.len() == MAG_DIM && HOF_DIM == 75 && MAG_DIM == 60);

        let flipped = FlowRaster::new(48, 48, r.data().iter().map(|[u, v]| [*u, -v]).collect()).unwrap();
        let ff = frame_feature(&flipped, &b).unwrap();
        flip_changes += usize::from(max_diff(&fa.hof, &ff.hof) > 1e-6);
    }
    let pass = hof_mirror == N && mph_mirror == N && camera == N && dims == N && flip_changes * 10 >= N * 9;
    outcome(
        pass,
        format!(
            "hof5 mirror {hof_mirror}/{N}, mph mirror {mph_mirror}/{N}, camera-constant {camera}/{N}, \
             vertical flip changes feature {flip_changes}/{N}, dims 75/60 {dims}/{N}"
        ),
    )
}

fn hankelet_metric() -> Outcome {
    const N: usize = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let max = max_hankelet_distance();
    let mut failures = Vec::new();
    let mut degenerate = 0;
    for i in 0..N {
        let a = if i % 50 == 0 {
            let p = [eighth(&mut rng, 512), eighth(&mut rng, 512)];
            RawTrajectory {
                start_frame: 0,
                points: vec![p; 15],
            }
        } else {
            random_trajectory(&mut rng, 0)
        };
        let b = random_trajectory(&mut rng, 0);
        let (ka, kb) = (hankelet(&a).unwrap(), hankelet(&b).unwrap());
        let d = hankelet_dist(&ka, &kb);
        if !(0.0..=max + 1e-9).contains(&d) {
            failures.push(format!("range {d}"));
        }
        if d != hankelet_dist(&kb, &ka) {
            failures.push("symmetry".into());
        }
        if ka.degenerate {
            degenerate += 1;
        } else {
            if hankelet_dist(&ka, &ka).abs() > 1e-9 {
                failures.push("self distance".into());
            }
            if ((ka.matrix * ka.matrix.transpose()).norm() - 1.0).abs() > 1e-9 {
                failures.push("norm".into());
            }
        }
        let (dx, dy) = (rng.random_range(-500..500) as f64, rng.random_range(-500..500) as f64);
        let moved = RawTrajectory {
            start_frame: a.start_frame,
            points: a.points.iter().map(|[x, y]| [x + dx, y + dy]).collect(),
        };
        if hankelet(&moved).unwrap() != ka {
            failures.push("translation".into());
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        format!("{N} pairs ({degenerate} motionless), failures: {failures:?}"),
    )
}

fn dummy_streams(n: usize, t: usize) -> Vec<VideoStream> {
    (0..n)
        .map(|v| VideoStream {
            video_id: v,
            width: 64,
            height: 48,
            candidates: (0..t)
                .map(|f| {
                    vec![Candidate {
                        id: 0,
                        bbox: BBox::new(10.0 + (f % 7) as f64, 8.0, 10.0, 20.0),
                    }]
                })
                .collect(),
            flow: Vec::new(),
            trajectories: Vec::new(),
        })
        .collect()
}

fn energy_bookkeeping(bounds: &mut BoundLog, energies: &mut EnergyLog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    for _ in 0..50 {
        let p = random_window(&mut rng, 3, 5, 3);
        let r = solve_trws(&p, &TrwsOptions::default()).unwrap();
        bounds.record(&r);
        energies.check(&p, &r);
    }
    let pairs = [
        (1, 1),
        (1, 2),
        (2, 1),
        (2, 2),
        (2, 3),
        (3, 2),
        (3, 3),
        (2, 10),
        (4, 5),
        (5, 4),
        (3, 17),
        (6, 6),
        (6, 20),
        (7, 13),
        (1, 50),
        (8, 1),
        (4, 31),
        (5, 60),
        (2, 100),
        (6, 100),
    ];
    let inter = |_: usize, _: (usize, usize), _: (usize, usize)| Ok(0.5);
    let mut wrong = Vec::new();
    for (n, t) in pairs {
        let streams = dummy_streams(n, t);
        let p = build_window_crf(&streams, 0, t, 1.0, &inter).unwrap();
        let formula = n * t * (t - 1) / 2 + t * n * (n - 1) / 2;
        if p.edges.len() != formula || expected_edge_count(n, t) != formula {
            wrong.push((n, t, p.edges.len()));
        }
    }
    let big = build_window_crf(&dummy_streams(6, 100), 0, 100, 1.0, &inter).unwrap().edges.len();
    outcome(
        energies.worst <= 1e-6 && wrong.is_empty() && big == 31200,
        format!(
            "energy recompute worst {:.1e} over {} runs, edge counts {}/20 correct, (6,100) -> {big}",
            energies.worst,
            energies.runs,
            20 - wrong.len()
        ),
    )
}

fn synthetic_scenes(bounds: &mut BoundLog) -> Outcome {
    let config = Config::default();
    let thr = config.eval_iou_threshold;
    let mut notes = Vec::new();
    let mut pass = true;

    let data = generate(&preset("clean6", SEED).unwrap().truncated(600)).unwrap().dataset;
    let t0 = Instant::now();
    let out = Detector::new(&data, &config).unwrap().run().unwrap();
    let secs = t0.elapsed().as_secs_f64();
    out.reports.iter().for_each(|r| bounds.record(r));
    let frames = pair_frames(&out.detections, data.ground_truth.as_ref().unwrap()).unwrap();
    let f = evaluate_frames(&frames, data.num_videos(), thr).overall.f_score;
    pass &= f >= 0.9 && secs < 300.0;
    notes.push(format!("clean6 F {f:.3} in {secs:.1}s"));

    let data = generate(&preset("egoview", SEED).unwrap()).unwrap().dataset;
    let out = Detector::new(&data, &config).unwrap().run().unwrap();
    out.reports.iter().for_each(|r| bounds.record(r));
    let wearer: Vec<_> = out.detections.iter().filter(|d| d.video_id == 0).collect();
    let idle = wearer.iter().filter(|d| d.state == DetectionState::Idle).count();
    let share = idle as f64 / wearer.len() as f64;
    pass &= share >= 0.9;
    notes.push(format!("egoview wearer idle {idle}/{} ({:.1}%)", wearer.len(), 100.0 * share));

    let data = generate(&preset("noisy", SEED).unwrap()).unwrap().dataset;
    let out = Detector::new(&data, &config).unwrap().run().unwrap();
    out.reports.iter().for_each(|r| bounds.record(r));
    let frames = pair_frames(&out.detections, data.ground_truth.as_ref().unwrap()).unwrap();
    let plain = evaluate_frames(&frames, data.num_videos(), thr).overall;
    let kept = exclude_undetectable(frames, &data.videos, thr);
    let excl = evaluate_frames(&kept, data.num_videos(), thr).overall;
    pass &= plain.f_score >= 0.7
        && excl.f_score >= plain.f_score
        && excl.precision >= plain.precision
        && excl.recall >= plain.recall;
    notes.push(format!(
        "noisy F {:.3} (P {:.3} R {:.3}), excluding undetectable F {:.3} (P {:.3} R {:.3})",
        plain.f_score, plain.precision, plain.recall, excl.f_score, excl.precision, excl.recall
    ));
    outcome(pass, notes.join("; "))
}

fn result(index: usize, start: usize, len: usize, n_videos: usize, pick: usize, energy: f64) -> WindowResult {
    let p = WindowPick {
        state: DetectionState::Candidate(pick),
        bbox: Some(BBox::new(pick as f64, 0.0, 1.0, 1.0)),
    };
    WindowResult {
        index,
        start,
        picks: vec![vec![p; len]; n_videos],
        energy,
    }
}

/// Picks the covering window with the lowest (energy, index).
fn brute_force_merge(results: &[WindowResult], n_videos: usize, n_frames: usize) -> Option<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for v in 0..n_videos {
        for t in 0..n_frames {
            let w = results
                .iter()
                .filter(|r| r.covers(t))
                .min_by(|a, b| a.energy.total_cmp(&b.energy).then(a.index.cmp(&b.index)))?;
            match w.picks[v][t - w.start].state {
                DetectionState::Candidate(id) => out.push((id, w.energy)),
                DetectionState::Idle => out.push((usize::MAX, w.energy)),
            }
        }
    }
    Some(out)
}

fn merging() -> Outcome {
    let energies = [9.0, 8.0, 13.0, 12.0, 10.0, 13.0, 15.0];
    let (p1, p2) = (1, 2);
    let windows: Vec<WindowResult> = energies
        .iter()
        .enumerate()
        .map(|(i, &e)| result(i, 5 * i, 10, 2, if i < 2 { p1 } else { p2 }, e))
        .collect();
    let merged = merge_windows(&windows, 40).unwrap();
    let expected_blocks = [(p1, 9.0), (p1, 8.0), (p1, 8.0), (p2, 12.0), (p2, 10.0), (p2, 10.0), (p2, 13.0), (p2, 15.0)];
    let structure_ok = merged.iter().all(|d| {
        let (pick, e) = expected_blocks[d.frame / 5];
        d.state == DetectionState::Candidate(pick) && d.window_energy == e
    }) && merged.len() == 80;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut agree = 0;
    for _ in 0..1000 {
        let n_frames = rng.random_range(1..80);
        let n_videos = rng.random_range(1..4);
        let mut results: Vec<WindowResult> = if rng.random_bool(0.9) {
            let len = rng.random_range(1..=n_frames);
            let stride = rng.random_range(1..=len);
            make_windows(n_frames, len, stride)
                .unwrap()
                .into_iter()
                .enumerate()
                .map(|(i, s)| result(i, s, len, n_videos, 0, 0.0))
                .collect()
        } else {
            (0..rng.random_range(1..6))
                .map(|i| {
                    let s = rng.random_range(0..n_frames);
                    let len = rng.random_range(1..=n_frames - s);
                    result(i, s, len, n_videos, 0, 0.0)
                })
                .collect()
        };
        for r in &mut results {
            r.energy = rng.random_range(0..4) as f64;
            for row in &mut r.picks {
                for p in row.iter_mut() {
                    if rng.random_bool(0.2) {
                        *p = WindowPick::IDLE;
                    } else {
                        let id = rng.random_range(0..5);
                        *p = WindowPick {
                            state: DetectionState::Candidate(id),
                            bbox: Some(BBox::new(id as f64, 0.0, 1.0, 1.0)),
                        };
                    }
                }
            }
        }
        let oracle = brute_force_merge(&results, n_videos, n_frames);
        results.shuffle(&mut rng);
        let got = merge_windows(&results, n_frames).ok().map(|ds| {
            ds.iter()
                .map(|d| match d.state {
                    DetectionState::Candidate(id) => (id, d.window_energy),
                    DetectionState::Idle => (usize::MAX, d.window_energy),
                })
                .collect::<Vec<_>>()
        });
        agree += usize::from(got == oracle);
    }
    outcome(
        structure_ok && agree == 1000,
        format!("seven-window scenario {}, random window sets agree {agree}/1000", if structure_ok { "ok" } else { "wrong" }),
    )
}

fn files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn format_fidelity() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let scene = preset("noisy", SEED).unwrap().truncated(120);
    let original = generate(&scene).unwrap().dataset;
    write_dataset(&original, &a).unwrap();
    let loaded = load_dataset(&a).unwrap();
    write_dataset(&loaded.dataset, &b).unwrap();

    let listing = files(&a);
    let same_listing = listing == files(&b);
    let (mut flo, mut flo_same, mut json, mut json_same) = (0, 0, 0, 0);
    for rel in &listing {
        let (x, y) = (std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap_or_default());
        match rel.extension().and_then(|e| e.to_str()) {
            Some("flo2") => {
                flo += 1;
                flo_same += usize::from(x == y);
            }
            Some("json") => {
                json += 1;
                let parse = |bytes: &[u8]| serde_json::from_slice::<serde_json::Value>(bytes).ok();
                json_same += usize::from(parse(&x).is_some() && parse(&x) == parse(&y));
            }
            _ => {}
        }
    }
    let equal = loaded.dataset == original && loaded.warnings == 0;

    let config = Config {
        window_length: 40,
        window_stride: 20,
        ..Config::default()
    };
    let run = || {
        let out = Detector::new(&loaded.dataset, &config).unwrap().run().unwrap();
        serde_json::to_vec(&out.detections).unwrap()
    };
    let deterministic = run() == run();
    outcome(
        same_listing && flo > 0 && flo_same == flo && json > 0 && json_same == json && equal && deterministic,
        format!(
            ".flo2 byte-stable {flo_same}/{flo}, JSON identical {json_same}/{json}, loaded == written {equal}, \
             detect deterministic {deterministic}"
        ),
    )
}

fn main() {
    let mut bounds = BoundLog::default();
    let mut energies = EnergyLog::default();
    let mut results = vec![
        (1, "solver correctness", solver_correctness(&mut bounds, &mut energies)),
        (3, "feature invariants", feature_invariants()),
        (4, "hankelet metric", hankelet_metric()),
        (5, "energy bookkeeping", energy_bookkeeping(&mut bounds, &mut energies)),
        (6, "synthetic scenes", synthetic_scenes(&mut bounds)),
        (7, "window merging", merging()),
        (8, "format fidelity", format_fidelity()),
    ];
    results.insert(
        1,
        (
            2,
            "bound monotonicity",
            outcome(
                bounds.worst_drop <= 1e-9,
                format!("worst drop {:.1e} over {} solver runs", bounds.worst_drop, bounds.runs),
            ),
        ),
    );
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("[{}] {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
