//! The `cip` command line: `synth`, `detect`, `eval`, `solve` and `features`.
//!
//! Exit status is 0 on success, 1 for usage and validation errors and 2 for
//! I/O errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;

use crate::config::Config;
use crate::crf::CrfProblem;
use crate::dataset::{load_dataset, read_detections, write_detections, Dataset, DetectionState};
use crate::error::{Error, Result};
use crate::flowfeat::{FrameFeature, HOF_BINS, MAG_STATS};
use crate::pipeline::{evaluate_frames, exclude_undetectable, pair_frames, Detector, FeatureCache};
use crate::solver::{solve_exhaustive, solve_trws};
use crate::synth::{generate_to_disk, preset, SceneSpec, PRESET_NAMES};

#[derive(Parser, Debug)]
#[command(name = "cip", version, about = "Co-interest person detection across synchronized videos")]
struct Cli {
    /// Worker threads for the pipeline (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Detect the CIP on every frame of a dataset.
    Detect(DetectArgs),
    /// Score detections against the dataset's ground truth.
    Eval(EvalArgs),
    /// Solve a CRF problem stored as JSON.
    Solve(SolveArgs),
    /// Print the frame features of the candidates on one frame.
    Features(FeaturesArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    preset: Option<String>,
    /// Scene description (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the first this many frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    window_stride: Option<usize>,
    #[arg(long)]
    trws_max_iters: Option<usize>,
    #[arg(long)]
    trws_epsilon: Option<f64>,
    #[arg(long)]
    tracklet_iou_threshold: Option<f64>,
    #[arg(long)]
    w_intra: Option<f64>,
    #[arg(long)]
    w_frame: Option<f64>,
    #[arg(long)]
    w_traj: Option<f64>,
    #[arg(long)]
    eval_iou_threshold: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        over!(
            window_length,
            window_stride,
            trws_max_iters,
            trws_epsilon,
            tracklet_iou_threshold,
            w_intra,
            w_frame,
            w_traj,
            eval_iou_threshold
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "detections.json")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write every frame's candidate boxes and the chosen one as text.
    #[arg(long)]
    dump_overlay_boxes: Option<PathBuf>,
    /// Write each window's CRF as JSON into this directory.
    #[arg(long)]
    dump_problems: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Skip frames where no candidate overlaps the ground truth.
    #[arg(long)]
    exclude_undetectable: bool,
    /// Where to write the JSON report (default: `<detections>.eval.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Enumerate all labelings instead of running TRW-S.
    #[arg(long)]
    exhaustive: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    video: usize,
    #[arg(long)]
    frame: usize,
}

/// Runs the command line given in `args` (program name first) and returns
/// the exit status.
pub fn run(args: &[OsString]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{}", out);
            0
        }
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<String> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Solve(a) => solve(a),
        Command::Features(a) => features(a),
    })
}

fn load(root: &Path) -> Result<Dataset> {
    let loaded = load_dataset(root)?;
    if loaded.warnings > 0 {
        warn!("{} malformed trajectories dropped", loaded.warnings);
    }
    Ok(loaded.dataset)
}

fn synth(a: SynthArgs) -> Result<String> {
    let mut scene = match (&a.preset, &a.scene) {
        (Some(name), _) => preset(name, a.seed).ok_or_else(|| {
            Error::Scene(format!("unknown preset {:?}, expected one of {}", name, PRESET_NAMES.join(", ")))
        })?,
        (None, Some(path)) => {
            let mut s = SceneSpec::load(path)?;
            s.noise.seed = a.seed;
            s
        }
        (None, None) => unreachable!("clap requires one of --preset and --scene"),
    };
    if let Some(f) = a.frames {
        if f == 0 {
            return Err(Error::Scene("--frames must be positive".into()));
        }
        scene = scene.truncated(f);
    }
    let out = generate_to_disk(&scene, &a.out)?;
    let ds = &out.dataset;
    Ok(format!(
        "wrote {} videos x {} frames to {}\n",
        ds.num_videos(),
        ds.frame_count(),
        a.out.display()
    ))
}

fn detect(a: DetectArgs) -> Result<String> {
    let config = a.config.resolve()?;
    let data = load(&a.data)?;
    let detector = Detector::new(&data, &config)?;
    if let Some(dir) = &a.dump_problems {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, start) in detector.window_starts().into_iter().enumerate() {
            let path = dir.join(format!("window_{:04}.json", k));
            let text = serde_json::to_string(&detector.problem(start)?).expect("problem serializes");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    let out = detector.run()?;
    write_detections(&out.detections, &a.out)?;
    if let Some(path) = &a.dump_overlay_boxes {
        let mut text = String::new();
        for d in &out.detections {
            let chosen = match d.state {
                DetectionState::Idle => "idle".to_string(),
                DetectionState::Candidate(id) => id.to_string(),
            };
            let _ = write!(text, "{} {} {}", d.video_id, d.frame, chosen);
            for c in &data.videos[d.video_id].candidates[d.frame] {
                let b = c.bbox;
                let _ = write!(text, " {}:{:.2},{:.2},{:.2},{:.2}", c.id, b.x, b.y, b.w, b.h);
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    let idle = out.detections.iter().filter(|d| d.state == DetectionState::Idle).count();
    Ok(format!(
        "{} windows, {} detections ({} idle) written to {}\n",
        out.windows.len(),
        out.detections.len(),
        idle,
        a.out.display()
    ))
}

fn eval(a: EvalArgs) -> Result<String> {
    let config = a.config.resolve()?;
    let data = load(&a.data)?;
    let truth = data
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidDataset("dataset has no ground truth".into()))?;
    let detections = read_detections(&a.detections)?;
    let thr = config.eval_iou_threshold;
    let mut frames = pair_frames(&detections, truth)?;
    if a.exclude_undetectable {
        frames = exclude_undetectable(frames, &data.videos, thr);
    }
    let report = evaluate_frames(&frames, data.num_videos(), thr);
    let path = a.report.unwrap_or_else(|| {
        let mut p = a.detections.clone().into_os_string();
        p.push(".eval.json");
        PathBuf::from(p)
    });
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(format!("{}\nF-score: {:.4}\n", report, report.overall.f_score))
}

fn solve(a: SolveArgs) -> Result<String> {
    let config = a.config.resolve()?;
    let text = std::fs::read_to_string(&a.problem).map_err(|e| Error::io(&a.problem, e))?;
    let problem: CrfProblem = serde_json::from_str(&text).map_err(|e| Error::json(&a.problem, e))?;
    let json = if a.exhaustive {
        serde_json::to_string_pretty(&solve_exhaustive(&problem)?)
    } else {
        serde_json::to_string_pretty(&solve_trws(&problem, &config.trws())?)
    };
    Ok(json.expect("report serializes") + "\n")
}

fn features(a: FeaturesArgs) -> Result<String> {
    let data = load(&a.data)?;
    let stream = data
        .videos
        .get(a.video)
        .ok_or_else(|| Error::InvalidDataset(format!("no video {}", a.video)))?;
    let cands = stream
        .candidates
        .get(a.frame)
        .ok_or_else(|| Error::InvalidDataset(format!("video {} has no frame {}", a.video, a.frame)))?;
    let cache = FeatureCache::new(&data.videos, Config::default().tracklet_iou_threshold);
    let mut out = String::new();
    for c in cands {
        let f = cache.frame_feature(a.video, a.frame, c.id)?;
        let b = c.bbox;
        let _ = writeln!(out, "candidate {} box {:.2} {:.2} {:.2} {:.2}", c.id, b.x, b.y, b.w, b.h);
        out.push_str(&format_feature(&f));
    }
    if cands.is_empty() {
        out.push_str("no candidates\n");
    }
    Ok(out)
}

fn format_feature(f: &FrameFeature) -> String {
    let row = |v: &[f64]| v.iter().map(|x| format!("{:.4}", x)).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    for (b, (h, m)) in f.hof.chunks(HOF_BINS).zip(f.mag.chunks(MAG_STATS)).enumerate() {
        let _ = writeln!(s, "  box {:2}  hof {}  mag {}", b, row(h), row(m));
    }
    s
}
