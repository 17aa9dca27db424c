//! Planar region detection: color and geometry are fused into per-edge
//! dissimilarities on the 8-connected pixel grid, then merged with the
//! Felzenszwalb–Huttenlocher predicate and filtered by area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, compute_normals, CameraIntrinsics, DepthMap, DominantDirections, PointMap,
    DEFAULT_RADII,
};
use crate::grid::{Grid, RgbImage};
use crate::manhattan::{align_normals, AlignmentResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: u32,
    pub q: u32,
    pub weight: f64,
}

/// Weighted pixel adjacency. Pixels with `nodes[p] == false` take part in
/// no edge and always end up unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph {
    pub edges: Vec<Edge>,
    pub nodes: Grid<bool>,
}

impl EdgeGraph {
    pub fn width(&self) -> usize {
        self.nodes.width()
    }

    pub fn height(&self) -> usize {
        self.nodes.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u32,
    pub pixels: Vec<usize>,
}

impl Segment {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// 0 marks filtered or non-planar pixels; segments are numbered from 1
    /// in raster order of their first pixel.
    pub labels: Grid<u32>,
    pub segments: Vec<Segment>,
    pub planar_mask: Grid<bool>,
}

impl SegmentationResult {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Rebuilds segments from a label image (0 = unlabeled). Segments are
    /// ordered by id; pixels within a segment in raster order.
    pub fn from_labels(labels: Grid<u32>) -> Self {
        let mut by_id: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (p, &l) in labels.iter().enumerate() {
            if l > 0 {
                by_id.entry(l).or_default().push(p);
            }
        }
        let segments = by_id
            .into_iter()
            .map(|(id, pixels)| Segment { id, pixels })
            .collect();
        let planar_mask = labels.map(|&l| l > 0);
        SegmentationResult {
            labels,
            segments,
            planar_mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    /// Merge constant `k` of the Felzenszwalb predicate.
    pub k: f64,
    /// Minimum retained segment area as a fraction of the image.
    pub min_area_fraction: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            k: 0.15,
            min_area_fraction: 0.01,
        }
    }
}

impl SegmentParams {
    pub fn min_area(&self, width: usize, height: usize) -> usize {
        ((self.min_area_fraction * (width * height) as f64).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > 0.0 && (0.0..=1.0).contains(&self.min_area_fraction) {
            Ok(())
        } else {
            Err(Error::input(
                "segmentation needs k > 0 and min_area_fraction in [0, 1]",
            ))
        }
    }
}

/// `d_p = -X_p · n_align_p`; zero where the alignment is invalid.
pub fn plane_distance_map(points: &PointMap, align: &AlignmentResult) -> Grid<f64> {
    Grid::from_fn(points.points.width(), points.points.height(), |x, y| {
        if align.valid[(x, y)] && points.valid[(x, y)] {
            -points.points[(x, y)].dot(&align.aligned[(x, y)])
        } else {
            0.0
        }
    })
}

/// Each undirected 8-neighbor pair `(p, q)` with `p < q` once, both ends
/// active, in raster order of `p` then right, down-left, down, down-right.
pub fn grid_edges(nodes: &Grid<bool>) -> Vec<(u32, u32)> {
    let (w, h) = nodes.dims();
    let mut out = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            if !nodes[(x, y)] {
                continue;
            }
            let p = (y * w + x) as u32;
            let mut push = |qx: usize, qy: usize| {
                if nodes[(qx, qy)] {
                    out.push((p, (qy * w + qx) as u32));
                }
            };
            if x + 1 < w {
                push(x + 1, y);
            }
            if y + 1 < h {
                if x > 0 {
                    push(x - 1, y + 1);
                }
                push(x, y + 1);
                if x + 1 < w {
                    push(x + 1, y + 1);
                }
            }
        }
    }
    out
}

/// Min-max normalization over all edges. A spread below `1e-9 * scale`
/// counts as degenerate and normalizes to zero, so floating-point noise on
/// an exactly constant field is not stretched to `[0, 1]`.
fn normalize(values: &mut [f64], scale: f64) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let spread = hi - lo;
    if values.is_empty() || !(spread > 1e-9 * scale.max(f64::MIN_POSITIVE)) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / spread).clamp(0.0, 1.0);
    }
}

fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-edge dissimilarity components, each already normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissimilarities {
    pub pairs: Vec<(u32, u32)>,
    pub color: Vec<f64>,
    pub normal: Vec<f64>,
    pub distance: Vec<f64>,
    pub geometric: Vec<f64>,
}

/// Computes `[D_c]`, `[D_n]`, `[D_d]` and `[D_g] = [[D_n] + [D_d]]` on the
/// edges between validly aligned pixels.
pub fn dissimilarities(
    image: &RgbImage,
    align: &AlignmentResult,
    dmap: &Grid<f64>,
) -> Result<Dissimilarities> {
    image.check_dims(&align.aligned)?;
    image.check_dims(dmap)?;
    if image.len() < 2 {
        return Err(Error::input("segmentation needs at least two pixels"));
    }
    let pairs = grid_edges(&align.valid);
    let mut color = Vec::with_capacity(pairs.len());
    let mut normal = Vec::with_capacity(pairs.len());
    let mut distance = Vec::with_capacity(pairs.len());
    let mut d_scale: f64 = 0.0;
    for &(p, q) in &pairs {
        let (p, q) = (p as usize, q as usize);
        color.push(color_distance(&image[p], &image[q]));
        normal.push((align.aligned[p] - align.aligned[q]).norm());
        distance.push((dmap[p] - dmap[q]).abs());
        d_scale = d_scale.max(dmap[p].abs()).max(dmap[q].abs());
    }
    normalize(&mut color, 3f64.sqrt());
    normalize(&mut normal, 2.0);
    normalize(&mut distance, d_scale);
    let mut geometric: Vec<f64> = normal.iter().zip(&distance).map(|(n, d)| n + d).collect();
    normalize(&mut geometric, 2.0);
    Ok(Dissimilarities {
        pairs,
        color,
        normal,
        distance,
        geometric,
    })
}

impl Dissimilarities {
    fn graph(&self, nodes: &Grid<bool>, weight: impl Fn(usize) -> f64) -> EdgeGraph {
        EdgeGraph {
            edges: self
                .pairs
                .iter()
                .enumerate()
                .map(|(i, &(p, q))| Edge {
                    p,
                    q,
                    weight: weight(i),
                })
                .collect(),
            nodes: nodes.clone(),
        }
    }

    /// `max([D_c], [D_g])`.
    pub fn fused(&self, nodes: &Grid<bool>) -> EdgeGraph {
        self.graph(nodes, |i| self.color[i].max(self.geometric[i]))
    }

    /// `[D_c]` alone: the color-only baseline.
    pub fn color_only(&self, nodes: &Grid<bool>) -> EdgeGraph {
        self.graph(nodes, |i| self.color[i])
    }
}

/// Fused color + geometry edge weights.
pub fn edge_dissimilarity(
    image: &RgbImage,
    align: &AlignmentResult,
    dmap: &Grid<f64>,
) -> Result<EdgeGraph> {
    Ok(dissimilarities(image, align, dmap)?.fused(&align.valid))
}

/// Felzenszwalb–Huttenlocher merging followed by small-area filtering.
///
/// Edges are processed by nondecreasing weight, ties broken by `(p, q)`.
/// Components `C1`, `C2` merge on an edge of weight `w` iff
/// `w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`.
pub fn graph_segment(graph: &EdgeGraph, k: f64, min_area: usize) -> SegmentationResult {
    let n = graph.nodes.len();
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&graph.edges[a], &graph.edges[b]);
        ea.weight
            .total_cmp(&eb.weight)
            .then(ea.p.cmp(&eb.p))
            .then(ea.q.cmp(&eb.q))
    });

    let mut sets = DisjointSets::new(n);
    for i in order {
        let e = &graph.edges[i];
        let a = sets.find(e.p as usize);
        let b = sets.find(e.q as usize);
        if a == b {
            continue;
        }
        let tau_a = sets.internal[a] + k / sets.size[a] as f64;
        let tau_b = sets.internal[b] + k / sets.size[b] as f64;
        if e.weight <= tau_a.min(tau_b) {
            sets.union(a, b, e.weight);
        }
    }

    let (w, h) = graph.nodes.dims();
    let mut labels = Grid::filled(w, h, 0u32);
    let mut root_label: Vec<u32> = vec![0; n];
    let mut segments: Vec<Segment> = Vec::new();
    for p in 0..n {
        if !graph.nodes[p] {
            continue;
        }
        let r = sets.find(p);
        if sets.size[r] < min_area {
            continue;
        }
        if root_label[r] == 0 {
            segments.push(Segment {
                id: segments.len() as u32 + 1,
                pixels: Vec::with_capacity(sets.size[r]),
            });
            root_label[r] = segments.len() as u32;
        }
        labels[p] = root_label[r];
        segments[root_label[r] as usize - 1].pixels.push(p);
    }
    let planar_mask = labels.map(|&l| l > 0);
    SegmentationResult {
        labels,
        segments,
        planar_mask,
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize, w: f64) {
        let (big, small) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(w);
    }
}

/// Everything the planar detector computed along the way.
#[derive(Debug, Clone)]
pub struct PlanarDetection {
    pub points: PointMap,
    pub alignment: AlignmentResult,
    pub distances: Grid<f64>,
    pub dissimilarities: Dissimilarities,
    pub segmentation: SegmentationResult,
}

impl PlanarDetection {
    /// The color-only baseline on the same edges and parameters.
    pub fn color_only(&self, params: &SegmentParams) -> SegmentationResult {
        let nodes = &self.alignment.valid;
        graph_segment(
            &self.dissimilarities.color_only(nodes),
            params.k,
            params.min_area(nodes.width(), nodes.height()),
        )
    }
}

/// Segmentation from already-aligned normals.
pub fn segment_aligned(
    image: &RgbImage,
    points: PointMap,
    alignment: AlignmentResult,
    params: &SegmentParams,
) -> Result<PlanarDetection> {
    params.validate()?;
    let distances = plane_distance_map(&points, &alignment);
    let dissimilarities = dissimilarities(image, &alignment, &distances)?;
    let graph = dissimilarities.fused(&alignment.valid);
    let (w, h) = image.dims();
    let segmentation = graph_segment(&graph, params.k, params.min_area(w, h));
    Ok(PlanarDetection {
        points,
        alignment,
        distances,
        dissimilarities,
        segmentation,
    })
}

/// Depth → points → normals → alignment → plane distance → fused
/// dissimilarity → graph segmentation.
pub fn detect_planar_regions(
    image: &RgbImage,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    dirs: &DominantDirections,
    params: &SegmentParams,
) -> Result<PlanarDetection> {
    k.check_grid(image)?;
    let points = backproject(depth, k)?;
    let normals = compute_normals(&points, &DEFAULT_RADII);
    let alignment = align_normals(&normals, dirs);
    segment_aligned(image, points, alignment, params)
}
