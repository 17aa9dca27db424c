//! Depth-field refinement under the combined loss
//! `L = L_photo + λ1 L_smooth + λ2 L_norm + λ3 L_plane`.
//!
//! The field is optimized in log-depth by gradient descent with a halving
//! line search. Supervisory signals (alignment, Manhattan mask, planar
//! segmentation, plane fits) are regenerated from the current depth every
//! refresh period and held fixed in between.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, compute_normals, CameraIntrinsics, DepthMap, DominantDirections, NormalMap,
    DEFAULT_RADII,
};
use crate::grid::{Grid, RgbImage};
use crate::manhattan::{
    adaptive_threshold, align_normals, manhattan_mask, normal_loss_from_depth, AlignmentResult,
    ManhattanMask, ThresholdSchedule,
};
use crate::metrics::{depth_metrics, normal_metrics};
use crate::photometric::{photometric_loss, smoothness_loss, PatchConfig, SourceView};
use crate::plane::{
    coplanar_depth, coplanar_loss, fit_segment_planes, CoplanarDepth, DepthClamp, PlaneParams,
};
use crate::segmentation::{segment_aligned, SegmentParams, SegmentationResult};

/// Halvings tried before a step is abandoned.
pub const MAX_HALVINGS: usize = 20;
/// The run aborts once the total loss exceeds this multiple of its initial
/// value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Upper bound on the step, measured as the largest per-pixel change of
    /// log-depth.
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub omega: f64,
    pub schedule: ThresholdSchedule,
    pub segmentation: SegmentParams,
    pub patches: PatchConfig,
    pub clamp: DepthClamp,
    /// Leading epochs optimized with photometric and smoothness terms only.
    pub warmup_epochs: usize,
    /// Epochs between signal regenerations.
    pub refresh_period: usize,
    pub radii: Vec<usize>,
    /// Depth cap (meters) for the history metrics.
    pub metric_cap: f64,
    /// Keep a copy of the depth after every epoch.
    pub snapshots: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            epochs: 30,
            steps_per_epoch: 20,
            learning_rate: 0.05,
            lambda1: 0.001,
            lambda2: 0.05,
            lambda3: 0.1,
            omega: 0.85,
            schedule: ThresholdSchedule::default(),
            segmentation: SegmentParams::default(),
            patches: PatchConfig::default(),
            clamp: DepthClamp::default(),
            warmup_epochs: 2,
            refresh_period: 1,
            radii: DEFAULT_RADII.to_vec(),
            metric_cap: 10.0,
            snapshots: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.lambda3];
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning_rate must be positive"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::input("loss weights must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::input("omega must lie in [0, 1]"));
        }
        if self.refresh_period == 0 {
            return Err(Error::input("refresh_period must be at least 1"));
        }
        if self.radii.is_empty() || self.radii.contains(&0) {
            return Err(Error::input(
                "radii must be a non-empty list of positive integers",
            ));
        }
        if !(self.metric_cap > 0.0) {
            return Err(Error::input("metric_cap must be positive"));
        }
        if !(self.clamp.d_min > 0.0 && self.clamp.d_min < self.clamp.d_max) {
            return Err(Error::input("depth clamp needs 0 < d_min < d_max"));
        }
        self.schedule.validate()?;
        self.segmentation.validate()?;
        self.patches.validate()
    }

    /// Whether the Manhattan and co-planar terms contribute at all.
    fn structural(&self) -> bool {
        self.lambda2 > 0.0 || self.lambda3 > 0.0
    }
}

/// Everything the losses need besides the depth itself.
#[derive(Debug, Clone)]
pub struct SceneInputs<'a> {
    pub intrinsics: CameraIntrinsics,
    pub target: &'a RgbImage,
    pub sources: Vec<SourceView<'a>>,
    pub directions: DominantDirections,
    pub ground_truth: Option<&'a DepthMap>,
}

/// Detached supervisory signals derived from one depth estimate.
#[derive(Debug, Clone)]
pub struct Signals {
    pub epoch: usize,
    pub gamma: f64,
    pub alignment: AlignmentResult,
    pub manhattan: ManhattanMask,
    pub segmentation: SegmentationResult,
    pub planes: Vec<PlaneParams>,
    pub coplanar: CoplanarDepth,
}

/// Normals → alignment → Manhattan mask (threshold for `epoch`) →
/// segmentation → plane fits → co-planar depth.
pub fn compute_signals(
    depth: &DepthMap,
    inputs: &SceneInputs<'_>,
    config: &RefineConfig,
    epoch: usize,
) -> Result<Signals> {
    let k = &inputs.intrinsics;
    let points = backproject(depth, k)?;
    let normals = compute_normals(&points, &config.radii);
    let alignment = align_normals(&normals, &inputs.directions);
    let gamma = adaptive_threshold(epoch as u64, &config.schedule);
    let manhattan = manhattan_mask(&alignment, gamma);
    let detection = segment_aligned(inputs.target, points, alignment, &config.segmentation)?;
    let planes = fit_segment_planes(&detection.points, &detection.segmentation);
    let coplanar = coplanar_depth(&planes, &detection.segmentation, k, config.clamp)?;
    Ok(Signals {
        epoch,
        gamma,
        alignment: detection.alignment,
        manhattan,
        segmentation: detection.segmentation,
        planes,
        coplanar,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub photo: f64,
    pub smooth: f64,
    pub norm: f64,
    pub plane: f64,
    pub total: f64,
    /// Gradient of `total` with respect to log-depth.
    pub gradient: Option<Grid<f64>>,
}

/// The combined loss at `depth`. Without `signals` (warmup) the Manhattan
/// and co-planar terms are zero.
pub fn total_loss(
    depth: &DepthMap,
    inputs: &SceneInputs<'_>,
    signals: Option<&Signals>,
    config: &RefineConfig,
    want_grad: bool,
) -> Result<LossReport> {
    let k = &inputs.intrinsics;
    let photo = photometric_loss(
        inputs.target,
        &inputs.sources,
        depth,
        k,
        &config.patches,
        config.omega,
        want_grad,
    )?;
    let smooth = smoothness_loss(depth, inputs.target, want_grad)?;
    let mut terms = vec![(1.0, photo), (config.lambda1, smooth)];
    let (mut norm, mut plane) = (0.0, 0.0);
    if let Some(s) = signals {
        let planar = &s.segmentation.planar_mask;
        let n = normal_loss_from_depth(
            depth,
            k,
            &config.radii,
            &s.alignment,
            &s.manhattan,
            planar,
            want_grad,
        )?;
        let p = coplanar_loss(depth, &s.coplanar, planar, want_grad)?;
        norm = n.value;
        plane = p.value;
        terms.push((config.lambda2, n));
        terms.push((config.lambda3, p));
    }
    let (photo, smooth) = (terms[0].1.value, terms[1].1.value);
    let total = photo + config.lambda1 * smooth + config.lambda2 * norm + config.lambda3 * plane;
    let gradient = want_grad.then(|| {
        let (w, h) = depth.dims();
        let mut g = Grid::filled(w, h, 0.0);
        for (weight, term) in &terms {
            let tg = term.grad.as_ref().expect("gradient requested");
            for i in 0..g.len() {
                g[i] += weight * tg[i];
            }
        }
        // Chain rule into log-depth: dL/ds = dL/dD · D.
        for i in 0..g.len() {
            g[i] = if depth.valid[i] {
                g[i] * depth.values[i]
            } else {
                0.0
            };
        }
        g
    });
    Ok(LossReport {
        photo,
        smooth,
        norm,
        plane,
        total,
        gradient,
    })
}

/// Central differences `(L(D + εe_p) - L(D - εe_p)) / 2ε` at each queried
/// pixel index.
pub fn finite_diff_grad(
    mut loss: impl FnMut(&DepthMap) -> Result<f64>,
    depth: &DepthMap,
    eps: f64,
    pixels: &[usize],
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::input("finite-difference step must be positive"));
    }
    let mut probe = depth.clone();
    pixels
        .iter()
        .map(|&p| {
            let base = depth.values[p];
            probe.values[p] = base + eps;
            let plus = loss(&probe)?;
            probe.values[p] = base - eps;
            let minus = loss(&probe)?;
            probe.values[p] = base;
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// One row of the refinement history. Epoch 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub photo: f64,
    pub smooth: f64,
    pub norm: f64,
    pub plane: f64,
    pub total: f64,
    /// NaN without ground truth.
    pub absrel: f64,
    pub rms: f64,
    pub normal_angle_deg: f64,
}

pub const HISTORY_HEADER: [&str; 9] = [
    "epoch",
    "photo",
    "smooth",
    "norm",
    "plane",
    "total",
    "absrel",
    "rms",
    "mean_normal_angle_deg",
];

impl EpochRecord {
    pub fn row(&self) -> Vec<f64> {
        vec![
            self.epoch as f64,
            self.photo,
            self.smooth,
            self.norm,
            self.plane,
            self.total,
            self.absrel,
            self.rms,
            self.normal_angle_deg,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub depth: DepthMap,
    pub history: Vec<EpochRecord>,
    pub snapshots: Vec<DepthMap>,
    /// Signals in force during the last epoch, if any were computed.
    pub signals: Option<Signals>,
}

struct Evaluator<'a> {
    gt: Option<(&'a DepthMap, NormalMap)>,
    k: CameraIntrinsics,
    cap: f64,
    radii: Vec<usize>,
}

impl Evaluator<'_> {
    fn record(&self, epoch: usize, report: &LossReport, depth: &DepthMap) -> Result<EpochRecord> {
        let (mut absrel, mut rms, mut angle) = (f64::NAN, f64::NAN, f64::NAN);
        if let Some((gt, gt_normals)) = &self.gt {
            let m = depth_metrics(depth, gt, self.cap, false)?;
            absrel = m.absrel;
            rms = m.rms;
            let normals = compute_normals(&backproject(depth, &self.k)?, &self.radii);
            if let Ok(n) = normal_metrics(&normals, gt_normals) {
                angle = n.mean_deg;
            }
        }
        Ok(EpochRecord {
            epoch,
            photo: report.photo,
            smooth: report.smooth,
            norm: report.norm,
            plane: report.plane,
            total: report.total,
            absrel,
            rms,
            normal_angle_deg: angle,
        })
    }
}

/// `D · exp(-t · g / max|g|)` on valid pixels.
fn step(depth: &DepthMap, grad: &Grid<f64>, scale: f64, t: f64) -> DepthMap {
    let mut out = depth.clone();
    for i in 0..out.values.len() {
        if out.valid[i] {
            out.values[i] *= (-t * grad[i] / scale).exp();
        }
    }
    out
}

/// Refines `init` by gradient descent on the combined loss.
///
/// Per epoch: regenerate signals when due (never during warmup), then take
/// `steps_per_epoch` line-searched steps with the signals frozen. A step
/// starts at `min(2 · last accepted, learning_rate)` and is halved until the
/// loss does not increase; after [`MAX_HALVINGS`] failures the depth is
/// left unchanged for that step.
pub fn refine_depth(
    init: &DepthMap,
    inputs: &SceneInputs<'_>,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    config.validate()?;
    inputs.intrinsics.check_grid(&init.values)?;
    let gt = match inputs.ground_truth {
        Some(gt) => {
            init.values.check_dims(&gt.values)?;
            let normals = compute_normals(&backproject(gt, &inputs.intrinsics)?, &config.radii);
            Some((gt, normals))
        }
        None => None,
    };
    let eval = Evaluator {
        gt,
        k: inputs.intrinsics,
        cap: config.metric_cap,
        radii: config.radii.clone(),
    };

    let signals_for =
        |depth: &DepthMap, epoch: usize, current: Option<Signals>| -> Result<Option<Signals>> {
            if !config.structural() || epoch < config.warmup_epochs {
                return Ok(None);
            }
            if (epoch - config.warmup_epochs).is_multiple_of(config.refresh_period)
                || current.is_none()
            {
                return compute_signals(depth, inputs, config, epoch).map(Some);
            }
            Ok(current)
        };

    let mut depth = init.clone();
    // The reference for the divergence guard (and history row 0) includes
    // the structural terms even when the run starts with a warmup.
    let reference = if config.structural() {
        Some(compute_signals(&depth, inputs, config, 0)?)
    } else {
        None
    };
    let initial = total_loss(&depth, inputs, reference.as_ref(), config, false)?;
    let mut signals = if config.warmup_epochs == 0 {
        reference
    } else {
        None
    };
    let mut history = vec![eval.record(0, &initial, &depth)?];
    let mut snapshots = Vec::new();
    let mut last_step = config.learning_rate;

    for epoch in 0..config.epochs {
        if epoch > 0 || signals.is_none() {
            signals = signals_for(&depth, epoch, signals)?;
        }
        let mut report = total_loss(&depth, inputs, signals.as_ref(), config, true)?;
        for step_index in 0..config.steps_per_epoch {
            check_divergence(report.total, initial.total, epoch, step_index)?;
            let grad = report.gradient.take().expect("gradient requested");
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if !(scale > 0.0) || !scale.is_finite() {
                report.gradient = Some(grad);
                break;
            }
            let mut t = (2.0 * last_step).min(config.learning_rate);
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let candidate = step(&depth, &grad, scale, t);
                let value = total_loss(&candidate, inputs, signals.as_ref(), config, false)?.total;
                if value <= report.total {
                    accepted = Some(candidate);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(candidate) => {
                    depth = candidate;
                    last_step = t;
                    report = total_loss(&depth, inputs, signals.as_ref(), config, true)?;
                }
                None => {
                    report.gradient = Some(grad);
                    break;
                }
            }
        }
        check_divergence(report.total, initial.total, epoch, config.steps_per_epoch)?;
        history.push(eval.record(epoch + 1, &report, &depth)?);
        if config.snapshots {
            snapshots.push(depth.clone());
        }
    }
    Ok(RefineOutcome {
        depth,
        history,
        snapshots,
        signals,
    })
}

fn check_divergence(loss: f64, initial: f64, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Diverged {
            epoch,
            step,
            loss,
            initial,
        });
    }
    Ok(())
}
