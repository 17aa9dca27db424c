//! `structdepth` command-line runner.
//!
//! Every subcommand reads its inputs, writes its artifacts into `--out`, and
//! finishes with `manifest.json` listing input and output hashes, the
//! effective configuration and the seed.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use structdepth::geometry::{
    backproject, compute_normals, estimate_dominant_directions, CameraIntrinsics, DepthMap,
    DirectionEstimate, DominantDirections, LineSegment, NormalMap, PointMap, Pose, Vec3,
};
use structdepth::grid::{Grid, RgbImage};
use structdepth::io::{self, Pfm};
use structdepth::manhattan::{adaptive_threshold, align_normals, manhattan_mask};
use structdepth::metrics::{depth_metrics, normal_metrics, DepthMetrics, NormalMetrics};
use structdepth::optimize::{
    compute_signals, refine_depth, total_loss, SceneInputs, HISTORY_HEADER,
};
use structdepth::photometric::SourceView;
use structdepth::plane::{coplanar_depth, fit_plane, fit_segment_planes, PlaneParams};
use structdepth::segmentation::{detect_planar_regions, SegmentationResult};
use structdepth::synth::{generate_room, multiplicative_noise, perturb_lines, SceneSpec};
use structdepth::{Error, Result};

use config::RunConfig;
use run::Run;

#[derive(Parser)]
#[command(
    name = "structdepth",
    version,
    about = "Structural supervision signals for depth refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Configuration override, e.g. `refine.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic room into a scene bundle.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: PathBuf,
    },
    /// Estimate dominant directions from line segments.
    Dirs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lines: PathBuf,
        #[arg(long)]
        k: PathBuf,
    },
    /// Surface normals of a depth map.
    Normals {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        k: PathBuf,
    },
    /// Align normals with the dominant directions and threshold them.
    Manhattan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        k: PathBuf,
        #[arg(long)]
        dirs: PathBuf,
    },
    /// Planar segmentation, plus the color-only baseline.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        k: PathBuf,
        #[arg(long)]
        dirs: PathBuf,
    },
    /// Fit one plane per labeled segment and render co-planar depth.
    Planes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        k: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Evaluate every loss term for a depth map against a scene bundle.
    Loss {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// Directions file; defaults to the reference camera's axes.
        #[arg(long)]
        dirs: Option<PathBuf>,
    },
    /// Refine a depth map on a scene bundle.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Initial depth; defaults to ground truth with seeded noise.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        dirs: Option<PathBuf>,
    },
    /// Depth (and optionally normal) metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Intrinsics; when given, normal metrics are reported too.
        #[arg(long)]
        k: Option<PathBuf>,
    },
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Synth { common, .. } => ("synth", common),
            Command::Dirs { common, .. } => ("dirs", common),
            Command::Normals { common, .. } => ("normals", common),
            Command::Manhattan { common, .. } => ("manhattan", common),
            Command::Segment { common, .. } => ("segment", common),
            Command::Planes { common, .. } => ("planes", common),
            Command::Loss { common, .. } => ("loss", common),
            Command::Refine { common, .. } => ("refine", common),
            Command::Eval { common, .. } => ("eval", common),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("structdepth: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Degenerate(_) | Error::NoValidFrame(_) => 3,
        Error::Diverged { .. } => 1,
        _ => 2,
    }
}

fn execute(command: &Command) -> Result<()> {
    let (name, common) = command.parts();
    let config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    let mut run = Run::new(name, &common.out, config, common.seed)?;
    if let Some(path) = &common.config {
        run.read(path)?;
    }
    match command {
        Command::Synth { spec, .. } => synth(&mut run, spec)?,
        Command::Dirs { lines, k, .. } => dirs(&mut run, lines, k)?,
        Command::Normals { depth, k, .. } => normals(&mut run, depth, k)?,
        Command::Manhattan { depth, k, dirs, .. } => manhattan(&mut run, depth, k, dirs)?,
        Command::Segment {
            image,
            depth,
            k,
            dirs,
            ..
        } => segment(&mut run, image, depth, k, dirs)?,
        Command::Planes {
            depth, k, labels, ..
        } => planes(&mut run, depth, k, labels)?,
        Command::Loss {
            scene, depth, dirs, ..
        } => loss(&mut run, scene, depth, dirs.as_deref())?,
        Command::Refine {
            scene, init, dirs, ..
        } => refine(&mut run, scene, init.as_deref(), dirs.as_deref())?,
        Command::Eval { pred, gt, k, .. } => eval(&mut run, pred, gt, k.as_deref())?,
    }
    run.finish()
}

// ---------------------------------------------------------------- inputs

fn read_k(run: &mut Run, path: &Path) -> Result<CameraIntrinsics> {
    run.json(path)
}

fn read_depth(run: &mut Run, path: &Path) -> Result<DepthMap> {
    io::pfm_to_depth(&Pfm::decode(&run.read(path)?)?)
}

fn read_image(run: &mut Run, path: &Path) -> Result<RgbImage> {
    io::decode_rgb_png(&run.read(path)?)
}

#[derive(Serialize, serde::Deserialize)]
struct DirectionsFile {
    directions: DominantDirections,
    support: [usize; 3],
    inliers: usize,
}

impl From<DirectionEstimate> for DirectionsFile {
    fn from(e: DirectionEstimate) -> Self {
        DirectionsFile {
            directions: e.directions,
            support: e.support,
            inliers: e.inliers,
        }
    }
}

fn read_dirs(run: &mut Run, path: &Path) -> Result<DominantDirections> {
    Ok(run.json::<DirectionsFile>(path)?.directions)
}

/// A rendered scene bundle: intrinsics, poses and per-view color, with the
/// reference view's ground-truth depth.
struct Scene {
    k: CameraIntrinsics,
    poses: Vec<Pose>,
    images: Vec<RgbImage>,
    gt: DepthMap,
}

impl Scene {
    fn load(run: &mut Run, dir: &Path) -> Result<Scene> {
        let k = read_k(run, &dir.join("intrinsics.json"))?;
        let poses: Vec<Pose> = run.json(&dir.join("poses.json"))?;
        if poses.len() < 2 {
            return Err(Error::Input("scene needs at least two views".into()));
        }
        let images = (0..poses.len())
            .map(|i| read_image(run, &dir.join(format!("color_{i}.png"))))
            .collect::<Result<Vec<_>>>()?;
        let gt = read_depth(run, &dir.join("depth_0.pfm"))?;
        Ok(Scene {
            k,
            poses,
            images,
            gt,
        })
    }

    fn inputs(&self, directions: DominantDirections) -> SceneInputs<'_> {
        let target_inv = self.poses[0].inverse();
        SceneInputs {
            intrinsics: self.k,
            target: &self.images[0],
            sources: (1..self.poses.len())
                .map(|i| SourceView {
                    image: &self.images[i],
                    pose: self.poses[i].compose(&target_inv),
                })
                .collect(),
            directions,
            ground_truth: Some(&self.gt),
        }
    }

    fn directions(&self, run: &mut Run, dirs: Option<&Path>) -> Result<DominantDirections> {
        match dirs {
            Some(p) => read_dirs(run, p),
            None => Ok(DominantDirections::from_rotation(&self.poses[0].rotation)),
        }
    }
}

// ---------------------------------------------------------------- commands

fn synth(run: &mut Run, spec_path: &Path) -> Result<()> {
    let mut spec: SceneSpec = run.json(spec_path)?;
    if let Some(seed) = run.seed {
        spec.seed = seed;
    }
    let render = generate_room(&spec)?;
    let noise = run.config.line_noise_deg;
    run.write_json("scene.json", &spec)?;
    run.write_json("intrinsics.json", &render.intrinsics)?;
    let poses: Vec<Pose> = render.views.iter().map(|v| v.pose).collect();
    run.write_json("poses.json", &poses)?;
    for (i, view) in render.views.iter().enumerate() {
        let lines = if noise > 0.0 {
            perturb_lines(&view.lines, noise, spec.seed.wrapping_add(i as u64))
        } else {
            view.lines.clone()
        };
        if i == 0 {
            run.write_json("lines.json", &lines)?;
        }
        run.write_json(&format!("lines_{i}.json"), &lines)?;
        run.write(&format!("color_{i}.png"), io::encode_rgb_png(&view.image)?)?;
        run.write(
            &format!("depth_{i}.pfm"),
            io::depth_to_pfm(&view.depth).encode(),
        )?;
        run.write(
            &format!("normals_{i}.pfm"),
            io::normals_to_pfm(&view.normals).encode(),
        )?;
        let ids = view.plane_ids.map(|&v| v as u32);
        run.write(&format!("planes_{i}.png"), io::encode_labels_png(&ids)?)?;
    }
    Ok(())
}

fn dirs(run: &mut Run, lines: &Path, k: &Path) -> Result<()> {
    let lines: Vec<LineSegment> = run.json(lines)?;
    let k = read_k(run, k)?;
    let est = estimate_dominant_directions(&lines, &k, run.config.angle_tol_deg)?;
    run.write_json("directions.json", &DirectionsFile::from(est))
}

fn normals(run: &mut Run, depth: &Path, k: &Path) -> Result<()> {
    let depth = read_depth(run, depth)?;
    let k = read_k(run, k)?;
    let normals = compute_normals(&backproject(&depth, &k)?, &run.config.refine.radii);
    run.write("normals.pfm", io::normals_to_pfm(&normals).encode())
}

fn manhattan(run: &mut Run, depth: &Path, k: &Path, dirs: &Path) -> Result<()> {
    let depth = read_depth(run, depth)?;
    let k = read_k(run, k)?;
    let dirs = read_dirs(run, dirs)?;
    let normals = compute_normals(&backproject(&depth, &k)?, &run.config.refine.radii);
    let align = align_normals(&normals, &dirs);
    let gamma = adaptive_threshold(run.config.epoch, &run.config.refine.schedule);
    let mask = manhattan_mask(&align, gamma);
    run.write(
        "aligned.pfm",
        io::vectors_to_pfm(&align.aligned, &align.valid).encode(),
    )?;
    run.write("smax.pfm", io::scalar_to_pfm(&align.smax).encode())?;
    run.write("mask.png", io::encode_mask_png(&mask.mask)?)?;
    #[derive(Serialize)]
    struct Summary {
        gamma: f64,
        valid: usize,
        masked: usize,
    }
    run.write_json(
        "manhattan.json",
        &Summary {
            gamma,
            valid: align.valid.iter().filter(|&&v| v).count(),
            masked: mask.count(),
        },
    )
}

#[derive(Serialize)]
struct SegmentSummary {
    id: u32,
    area: usize,
    /// Raster index of the segment's first pixel.
    first_pixel: usize,
    /// Normalized mean of the estimated normals; null when none is valid.
    mean_normal: Option<[f64; 3]>,
    /// Least-squares plane; null when the segment is degenerate.
    theta: Option<[f64; 3]>,
}

fn summaries(
    seg: &SegmentationResult,
    points: &PointMap,
    normals: &NormalMap,
) -> Vec<SegmentSummary> {
    seg.segments
        .iter()
        .map(|s| {
            let sum: Vec3 = s
                .pixels
                .iter()
                .filter(|&&p| normals.valid[p])
                .map(|&p| normals.normals[p])
                .sum();
            let pts: Vec<Vec3> = s
                .pixels
                .iter()
                .filter(|&&p| points.valid[p])
                .map(|&p| points.points[p])
                .collect();
            SegmentSummary {
                id: s.id,
                area: s.area(),
                first_pixel: s.pixels[0],
                mean_normal: (sum.norm() > 0.0).then(|| sum.normalize().into()),
                theta: fit_plane(&pts).ok().map(|p| p.theta),
            }
        })
        .collect()
}

/// Deterministic label colors; 0 is black.
fn label_color(l: u32) -> [f64; 3] {
    if l == 0 {
        return [0.0; 3];
    }
    let h = l.wrapping_mul(2_654_435_761);
    [(h >> 24) & 0xff, (h >> 16) & 0xff, (h >> 8) & 0xff]
        .map(|c| (64 + (c * 191) / 255) as f64 / 255.0)
}

fn segment(run: &mut Run, image: &Path, depth: &Path, k: &Path, dirs: &Path) -> Result<()> {
    let image = read_image(run, image)?;
    let depth = read_depth(run, depth)?;
    let k = read_k(run, k)?;
    let dirs = read_dirs(run, dirs)?;
    let params = run.config.refine.segmentation;
    let detection = detect_planar_regions(&image, &depth, &k, &dirs, &params)?;
    let fused = &detection.segmentation;
    let color_only = detection.color_only(&params);
    let normals = compute_normals(&detection.points, &run.config.refine.radii);
    run.write("labels.png", io::encode_labels_png(&fused.labels)?)?;
    run.write_json(
        "segments.json",
        &summaries(fused, &detection.points, &normals),
    )?;
    run.write(
        "labels_color_only.png",
        io::encode_labels_png(&color_only.labels)?,
    )?;
    run.write_json(
        "segments_color_only.json",
        &summaries(&color_only, &detection.points, &normals),
    )?;
    let (w, h) = image.dims();
    let side_by_side = Grid::from_fn(2 * w + 1, h, |x, y| {
        if x < w {
            label_color(fused.labels[(x, y)])
        } else if x == w {
            [1.0; 3]
        } else {
            label_color(color_only.labels[(x - w - 1, y)])
        }
    });
    run.write("comparison.png", io::encode_rgb_png(&side_by_side)?)
}

#[derive(Serialize)]
struct PlaneSummary {
    #[serde(flatten)]
    params: PlaneParams,
    normal: [f64; 3],
    distance: f64,
}

fn planes(run: &mut Run, depth: &Path, k: &Path, labels: &Path) -> Result<()> {
    let depth = read_depth(run, depth)?;
    let k = read_k(run, k)?;
    let labels = io::decode_labels_png(&run.read(labels)?)?;
    let seg = SegmentationResult::from_labels(labels);
    let points = backproject(&depth, &k)?;
    let planes = fit_segment_planes(&points, &seg);
    let coplanar = coplanar_depth(&planes, &seg, &k, run.config.refine.clamp)?;
    let summary: Vec<PlaneSummary> = planes
        .iter()
        .map(|p| PlaneSummary {
            params: *p,
            normal: p.normal().into(),
            distance: 1.0 / p.theta().norm(),
        })
        .collect();
    run.write_json("planes.json", &summary)?;
    let values = Grid::from_fn(seg.labels.width(), seg.labels.height(), |x, y| {
        if coplanar.defined[(x, y)] {
            coplanar.values[(x, y)]
        } else {
            0.0
        }
    });
    run.write("coplanar.pfm", io::scalar_to_pfm(&values).encode())
}

fn loss(run: &mut Run, scene: &Path, depth: &Path, dirs: Option<&Path>) -> Result<()> {
    let scene = Scene::load(run, scene)?;
    let depth = read_depth(run, depth)?;
    let directions = scene.directions(run, dirs)?;
    let inputs = scene.inputs(directions);
    let cfg = &run.config.refine;
    let signals = compute_signals(&depth, &inputs, cfg, run.config.epoch as usize)?;
    let report = total_loss(&depth, &inputs, Some(&signals), cfg, false)?;
    #[derive(Serialize)]
    struct LossJson {
        photo: f64,
        smooth: f64,
        norm: f64,
        plane: f64,
        total: f64,
        lambda: [f64; 3],
        omega: f64,
        gamma: f64,
        segments: usize,
        manhattan_pixels: usize,
    }
    let json = LossJson {
        photo: report.photo,
        smooth: report.smooth,
        norm: report.norm,
        plane: report.plane,
        total: report.total,
        lambda: [cfg.lambda1, cfg.lambda2, cfg.lambda3],
        omega: cfg.omega,
        gamma: signals.gamma,
        segments: signals.segmentation.segment_count(),
        manhattan_pixels: signals.manhattan.count(),
    };
    run.write_json("loss.json", &json)
}

fn refine(run: &mut Run, scene: &Path, init: Option<&Path>, dirs: Option<&Path>) -> Result<()> {
    let scene = Scene::load(run, scene)?;
    let directions = scene.directions(run, dirs)?;
    let init = match init {
        Some(p) => read_depth(run, p)?,
        None => multiplicative_noise(&scene.gt, run.config.init_noise, run.seed.unwrap_or(0)),
    };
    let inputs = scene.inputs(directions);
    let cfg = run.config.refine.clone();
    let outcome = refine_depth(&init, &inputs, &cfg)?;
    run.write("init.pfm", io::depth_to_pfm(&init).encode())?;
    run.write("refined.pfm", io::depth_to_pfm(&outcome.depth).encode())?;
    let rows: Vec<Vec<f64>> = outcome.history.iter().map(|r| r.row()).collect();
    run.write("history.csv", io::encode_csv(&HISTORY_HEADER, &rows)?)?;
    for (i, snap) in outcome.snapshots.iter().enumerate() {
        run.write(
            &format!("snapshots/depth_{:04}.pfm", i + 1),
            io::depth_to_pfm(snap).encode(),
        )?;
    }
    Ok(())
}

fn eval(run: &mut Run, pred: &Path, gt: &Path, k: Option<&Path>) -> Result<()> {
    let pred = read_depth(run, pred)?;
    let gt = read_depth(run, gt)?;
    let depth = depth_metrics(&pred, &gt, run.config.metric_cap, run.config.median_scale)?;
    let normals = match k {
        Some(path) => {
            let k = read_k(run, path)?;
            let radii = &run.config.refine.radii;
            let n_pred = compute_normals(&backproject(&pred, &k)?, radii);
            let n_gt = compute_normals(&backproject(&gt, &k)?, radii);
            Some(normal_metrics(&n_pred, &n_gt)?)
        }
        None => None,
    };
    #[derive(Serialize)]
    struct Metrics {
        depth: DepthMetrics,
        #[serde(skip_serializing_if = "Option::is_none")]
        normals: Option<NormalMetrics>,
    }
    run.write_json("metrics.json", &Metrics { depth, normals })
}
