//! Shared fixtures and independent reference implementations for the
//! integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structdepth::geometry::{CameraIntrinsics, DepthMap, DominantDirections, NormalMap, Vec3};
use structdepth::grid::Grid;
use structdepth::manhattan::normal_loss_from_depth;
use structdepth::optimize::{
    compute_signals, finite_diff_grad, total_loss, RefineConfig, SceneInputs, Signals,
};
use structdepth::photometric::{photometric_loss, smoothness_loss, warp_pixel, SourceView};
use structdepth::plane::coplanar_loss;
use structdepth::segmentation::{Edge, EdgeGraph};
use structdepth::synth::{
    generate_room, look_at, multiplicative_noise, SceneRender, SceneSpec, Texture,
};

pub const ROOM_MIN: [f64; 3] = [-2.0, -1.5, -2.5];
pub const ROOM_MAX: [f64; 3] = [2.0, 1.5, 3.0];

pub fn noise_texture() -> Texture {
    Texture::Noise {
        base: [0.5; 3],
        amplitude: 0.35,
        scale: 0.8,
    }
}

pub fn room_spec(
    intrinsics: CameraIntrinsics,
    eyes: &[Vec3],
    target: Vec3,
    texture: Texture,
    seed: u64,
) -> SceneSpec {
    SceneSpec {
        room_min: ROOM_MIN,
        room_max: ROOM_MAX,
        intrinsics,
        poses: eyes
            .iter()
            .map(|e| look_at(*e, target, Vec3::y()).unwrap())
            .collect(),
        textures: std::array::from_fn(|_| texture.clone()),
        seed,
    }
}

/// A reference view plus one nearby source view, camera placement seeded.
pub fn two_view_room(
    w: usize,
    h: usize,
    focal_ratio: f64,
    texture: Texture,
    seed: u64,
) -> SceneRender {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eye0 = Vec3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.4..0.4),
        rng.random_range(-1.2..-0.6),
    );
    let eye1 = eye0
        + Vec3::new(
            rng.random_range(0.1..0.25),
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.05..0.05),
        );
    let target = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.7..0.7),
        3.0,
    );
    let k = CameraIntrinsics::centered(focal_ratio * w as f64, w, h).unwrap();
    generate_room(&room_spec(k, &[eye0, eye1], target, texture, seed)).unwrap()
}

pub fn scene_inputs(render: &SceneRender) -> SceneInputs<'_> {
    SceneInputs {
        intrinsics: render.intrinsics,
        target: &render.views[0].image,
        sources: (1..render.views.len())
            .map(|i| SourceView {
                image: &render.views[i].image,
                pose: render.relative_pose(0, i),
            })
            .collect(),
        directions: DominantDirections::from_rotation(&render.views[0].pose.rotation),
        ground_truth: Some(&render.views[0].depth),
    }
}

/// `‖a - b‖ / ‖b‖` over the listed entries (0 when both vanish).
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

/// One 16×16 gradient-check instance: a textured two-view room, a depth
/// perturbed off ground truth, and signals computed from ground truth.
pub struct GradInstance {
    pub render: SceneRender,
    pub depth: DepthMap,
    pub config: RefineConfig,
}

impl GradInstance {
    pub fn new(seed: u64) -> GradInstance {
        let render = two_view_room(16, 16, 0.9, noise_texture(), seed);
        let depth = multiplicative_noise(&render.views[0].depth, 0.05, seed ^ 0xabcd);
        GradInstance {
            render,
            depth,
            config: RefineConfig::default(),
        }
    }

    pub fn inputs(&self) -> SceneInputs<'_> {
        scene_inputs(&self.render)
    }

    pub fn signals(&self) -> Signals {
        compute_signals(&self.render.views[0].depth, &self.inputs(), &self.config, 0).unwrap()
    }

    pub fn pixels(&self) -> Vec<usize> {
        (0..self.depth.values.len()).collect()
    }

    /// Pixels whose ±ε perturbation moves their warped sample across a
    /// bilinear cell boundary or in or out of view.
    pub fn photometric_kinks(&self, eps: f64) -> Vec<bool> {
        let inputs = self.inputs();
        let k = inputs.intrinsics;
        let w = self.depth.width();
        (0..self.depth.values.len())
            .map(|p| {
                let d = self.depth.values[p];
                inputs.sources.iter().any(|s| {
                    let a = warp_pixel(s.image, &k, &s.pose, p % w, p / w, d - eps);
                    let b = warp_pixel(s.image, &k, &s.pose, p % w, p / w, d + eps);
                    match (a, b) {
                        (Some(a), Some(b)) => {
                            a.u.floor() != b.u.floor() || a.v.floor() != b.v.floor()
                        }
                        (None, None) => false,
                        _ => true,
                    }
                })
            })
            .collect()
    }

    /// Pixels whose ±ε perturbation flips the sign of an inverse-depth
    /// difference with a 4-neighbor (the |·| kink of the smoothness term).
    pub fn smoothness_kinks(&self, eps: f64) -> Vec<bool> {
        let (w, h) = self.depth.dims();
        let d = &self.depth.values;
        (0..d.len())
            .map(|p| {
                let (x, y) = (p % w, p / w);
                let mut neighbors = Vec::new();
                if x > 0 {
                    neighbors.push(p - 1);
                }
                if x + 1 < w {
                    neighbors.push(p + 1);
                }
                if y > 0 {
                    neighbors.push(p - w);
                }
                if y + 1 < h {
                    neighbors.push(p + w);
                }
                neighbors.iter().any(|&q| {
                    let lo = 1.0 / d[q] - 1.0 / (d[p] - eps);
                    let hi = 1.0 / d[q] - 1.0 / (d[p] + eps);
                    lo.signum() != hi.signum()
                })
            })
            .collect()
    }

    /// Pixels within `10ε` of their co-planar target.
    pub fn plane_kinks(&self, signals: &Signals, eps: f64) -> Vec<bool> {
        (0..self.depth.values.len())
            .map(|p| (self.depth.values[p] - signals.coplanar.values[p]).abs() < 10.0 * eps)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradErrors {
    pub norm: f64,
    pub plane: f64,
    pub smooth: f64,
    pub photo: f64,
    pub total: f64,
    pub active_norm: bool,
    pub active_plane: bool,
}

fn compare(analytic: &Grid<f64>, fd: &[f64], pixels: &[usize], skip: &[bool]) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = pixels
        .iter()
        .zip(fd)
        .filter(|(&p, _)| !skip[p])
        .map(|(&p, &g)| (analytic[p], g))
        .unzip();
    relative_error(&a, &b)
}

/// Analytic gradients of every loss term against central differences.
pub fn gradient_errors(inst: &GradInstance, eps: f64) -> GradErrors {
    let inputs = inst.inputs();
    let signals = inst.signals();
    let cfg = &inst.config;
    let k = inputs.intrinsics;
    let pixels = inst.pixels();
    let none = vec![false; pixels.len()];
    let photo_kinks = inst.photometric_kinks(eps);
    let plane_kinks = inst.plane_kinks(&signals, eps);
    let smooth_kinks = inst.smoothness_kinks(eps);
    let planar = &signals.segmentation.planar_mask;

    let norm_at = |d: &DepthMap, g: bool| {
        normal_loss_from_depth(
            d,
            &k,
            &cfg.radii,
            &signals.alignment,
            &signals.manhattan,
            planar,
            g,
        )
        .unwrap()
    };
    let norm = norm_at(&inst.depth, true);
    let norm_fd =
        finite_diff_grad(|d| Ok(norm_at(d, false).value), &inst.depth, eps, &pixels).unwrap();

    let plane_at = |d: &DepthMap, g: bool| coplanar_loss(d, &signals.coplanar, planar, g).unwrap();
    let plane = plane_at(&inst.depth, true);
    let plane_fd =
        finite_diff_grad(|d| Ok(plane_at(d, false).value), &inst.depth, eps, &pixels).unwrap();

    let smooth_at = |d: &DepthMap, g: bool| smoothness_loss(d, inputs.target, g).unwrap();
    let smooth = smooth_at(&inst.depth, true);
    let smooth_fd =
        finite_diff_grad(|d| Ok(smooth_at(d, false).value), &inst.depth, eps, &pixels).unwrap();

    let photo_at = |d: &DepthMap, g: bool| {
        photometric_loss(
            inputs.target,
            &inputs.sources,
            d,
            &k,
            &cfg.patches,
            cfg.omega,
            g,
        )
        .unwrap()
    };
    let photo = photo_at(&inst.depth, true);
    let photo_fd =
        finite_diff_grad(|d| Ok(photo_at(d, false).value), &inst.depth, eps, &pixels).unwrap();

    let total = total_loss(&inst.depth, &inputs, Some(&signals), cfg, true).unwrap();
    let total_fd = finite_diff_grad(
        |d| total_loss(d, &inputs, Some(&signals), cfg, false).map(|r| r.total),
        &inst.depth,
        eps,
        &pixels,
    )
    .unwrap();
    // The report's gradient is with respect to log-depth.
    let total_depth_grad = Grid::from_fn(inst.depth.width(), inst.depth.height(), |x, y| {
        total.gradient.as_ref().unwrap()[(x, y)] / inst.depth.values[(x, y)]
    });
    let any_kink: Vec<bool> = (0..pixels.len())
        .map(|p| photo_kinks[p] || plane_kinks[p] || smooth_kinks[p])
        .collect();

    GradErrors {
        norm: compare(norm.grad.as_ref().unwrap(), &norm_fd, &pixels, &none),
        plane: compare(
            plane.grad.as_ref().unwrap(),
            &plane_fd,
            &pixels,
            &plane_kinks,
        ),
        smooth: compare(
            smooth.grad.as_ref().unwrap(),
            &smooth_fd,
            &pixels,
            &smooth_kinks,
        ),
        photo: compare(
            photo.grad.as_ref().unwrap(),
            &photo_fd,
            &pixels,
            &photo_kinks,
        ),
        total: compare(&total_depth_grad, &total_fd, &pixels, &any_kink),
        active_norm: norm.value > 0.0,
        active_plane: plane.value > 0.0,
    }
}

// ------------------------------------------------- segmentation reference

/// Random graph on a `w × h` 8-connected grid with some inactive nodes.
/// Weights are drawn from a coarse set so that ties are common.
pub fn random_graph(rng: &mut ChaCha8Rng, w: usize, h: usize) -> EdgeGraph {
    let nodes = Grid::from_fn(w, h, |_, _| rng.random_bool(0.9));
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for (dx, dy) in [(1isize, 0isize), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (p, q) = (y * w + x, ny as usize * w + nx as usize);
                if nodes[p] && nodes[q] {
                    let weight = if rng.random_bool(0.5) {
                        rng.random_range(0..=10) as f64 / 10.0
                    } else {
                        rng.random_range(0.0..1.0)
                    };
                    edges.push(Edge {
                        p: p as u32,
                        q: q as u32,
                        weight,
                    });
                }
            }
        }
    }
    EdgeGraph { edges, nodes }
}

/// Felzenszwalb–Huttenlocher merging by direct relabeling: component
/// sizes are recounted from scratch at every decision, `Int` is the largest
/// merged edge.
pub fn reference_segment(graph: &EdgeGraph, k: f64, min_area: usize) -> Vec<u32> {
    let n = graph.nodes.len();
    let mut comp: Vec<usize> = (0..n).collect();
    let mut internal = vec![0.0f64; n];
    let mut edges = graph.edges.clone();
    edges.sort_by(|a, b| {
        a.weight
            .partial_cmp(&b.weight)
            .unwrap()
            .then((a.p, a.q).cmp(&(b.p, b.q)))
    });
    for e in &edges {
        let (a, b) = (comp[e.p as usize], comp[e.q as usize]);
        if a == b {
            continue;
        }
        let size_a = comp.iter().filter(|&&c| c == a).count() as f64;
        let size_b = comp.iter().filter(|&&c| c == b).count() as f64;
        let threshold = (internal[a] + k / size_a).min(internal[b] + k / size_b);
        if e.weight <= threshold {
            for c in comp.iter_mut() {
                if *c == b {
                    *c = a;
                }
            }
            internal[a] = internal[a].max(internal[b]).max(e.weight);
        }
    }
    let mut labels = vec![0u32; n];
    let mut names: Vec<(usize, u32)> = Vec::new();
    for p in 0..n {
        if !graph.nodes[p] {
            continue;
        }
        let size = comp
            .iter()
            .enumerate()
            .filter(|&(q, &c)| c == comp[p] && graph.nodes[q])
            .count();
        if size < min_area {
            continue;
        }
        let id = match names.iter().find(|(c, _)| *c == comp[p]) {
            Some(&(_, id)) => id,
            None => {
                names.push((comp[p], names.len() as u32 + 1));
                names.len() as u32
            }
        };
        labels[p] = id;
    }
    labels
}

/// Equal partitions with 0 fixed: a bijection between nonzero labels.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut ab: HashMap<u32, u32> = HashMap::new();
    let mut ba: HashMap<u32, u32> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

// ------------------------------------------------------- metric oracles

pub struct ScalarDepthMetrics {
    pub rms: f64,
    pub absrel: f64,
    pub log10: f64,
    pub delta: [f64; 3],
}

/// Straight loops, no median scaling.
pub fn scalar_depth_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> ScalarDepthMetrics {
    let mut n = 0.0;
    let (mut se, mut ar, mut lg) = (0.0, 0.0, 0.0);
    let mut delta = [0.0; 3];
    for i in 0..gt.values.len() {
        if !(pred.valid[i] && gt.valid[i]) {
            continue;
        }
        let p = if pred.values[i] > cap {
            cap
        } else {
            pred.values[i]
        };
        let g = if gt.values[i] > cap {
            cap
        } else {
            gt.values[i]
        };
        n += 1.0;
        se += (p - g).powi(2);
        ar += ((p - g) / g).abs();
        lg += (p.ln() / std::f64::consts::LN_10 - g.ln() / std::f64::consts::LN_10).abs();
        let r = if p > g { p / g } else { g / p };
        if r < 1.25 {
            delta[0] += 1.0;
        }
        if r < 1.5625 {
            delta[1] += 1.0;
        }
        if r < 1.953125 {
            delta[2] += 1.0;
        }
    }
    ScalarDepthMetrics {
        rms: (se / n).sqrt(),
        absrel: ar / n,
        log10: lg / n,
        delta: delta.map(|d| d / n),
    }
}

/// Mean angle in degrees and fractions below 11.25°, 22.5° and 30°.
pub fn scalar_normal_metrics(pred: &NormalMap, gt: &NormalMap) -> (f64, [f64; 3]) {
    let (mut n, mut sum) = (0.0, 0.0);
    let mut within = [0.0; 3];
    for i in 0..gt.normals.len() {
        if !(pred.valid[i] && gt.valid[i]) {
            continue;
        }
        let a = pred.normals[i];
        let b = gt.normals[i];
        let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        let deg = c.acos() * 180.0 / std::f64::consts::PI;
        n += 1.0;
        sum += deg;
        for (t, lim) in [11.25, 22.5, 30.0].iter().enumerate() {
            if deg < *lim {
                within[t] += 1.0;
            }
        }
    }
    (sum / n, within.map(|w| w / n))
}

pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize, holes: f64) -> DepthMap {
    DepthMap::new(Grid::from_fn(w, h, |_, _| {
        if rng.random_bool(holes) {
            0.0
        } else {
            rng.random_range(0.2..14.0)
        }
    }))
}

pub fn random_normals(rng: &mut ChaCha8Rng, w: usize, h: usize) -> NormalMap {
    let mut unit = || {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
    };
    let normals = Grid::from_fn(w, h, |_, _| unit());
    let valid = Grid::from_fn(w, h, |x, y| (x * 7 + y * 3) % 11 != 0);
    NormalMap { normals, valid }
}
