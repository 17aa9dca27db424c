//! Least-squares plane fits per segment and the co-planar depth signal.
//!
//! A plane with unit normal `n` at distance `d` is parameterized as
//! `θ = -n / d`, so every point on it satisfies `Xᵀθ = 1` and the inverse
//! depth along a pixel ray is linear: `ρ = θᵀ K⁻¹ (u, v, 1)`.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, PointMap, Vec3};
use crate::grid::Grid;
use crate::loss::LossTerm;
use crate::segmentation::SegmentationResult;

/// Fits whose normal matrix exceeds this condition number are degenerate.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub theta: [f64; 3],
    pub segment_id: u32,
    pub inlier_count: usize,
}

impl PlaneParams {
    pub fn theta(&self) -> Vec3 {
        Vec3::from(self.theta)
    }

    /// Unit normal, oriented so that `θ = -n/d` with `d > 0`.
    pub fn normal(&self) -> Vec3 {
        -self.theta().normalize()
    }
}

/// Solves `min ‖Xᵀθ - 1‖²` through the normal equations `(XXᵀ) θ = X·1`,
/// with one step of iterative refinement.
pub fn fit_plane(points: &[Vec3]) -> Result<PlaneParams> {
    if points.len() < 3 {
        return Err(Error::degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xxt = Matrix3::zeros();
    let mut x1 = Vec3::zeros();
    for p in points {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::input("plane fit points must be finite"));
        }
        xxt += p * p.transpose();
        x1 += p;
    }
    let eig = SymmetricEigen::new(xxt).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::degenerate(format!(
            "plane fit is rank deficient (eigenvalues {lo:e}..{hi:e}); points collinear or on a plane through the origin"
        )));
    }
    let chol = xxt
        .cholesky()
        .ok_or_else(|| Error::degenerate("normal equations are not positive definite"))?;
    let mut theta = chol.solve(&x1);
    let mut correction_rhs = Vec3::zeros();
    for p in points {
        correction_rhs += p * (1.0 - p.dot(&theta));
    }
    theta += chol.solve(&correction_rhs);
    if !theta.iter().all(|v| v.is_finite()) || theta.norm() == 0.0 {
        return Err(Error::degenerate(
            "plane fit produced a non-finite solution",
        ));
    }
    Ok(PlaneParams {
        theta: [theta.x, theta.y, theta.z],
        segment_id: 0,
        inlier_count: points.len(),
    })
}

/// Fits one plane per segment. Degenerate fits are dropped.
pub fn fit_segment_planes(points: &PointMap, seg: &SegmentationResult) -> Vec<PlaneParams> {
    seg.segments
        .iter()
        .filter_map(|s| {
            let pts: Vec<Vec3> = s
                .pixels
                .iter()
                .filter(|&&p| points.valid[p])
                .map(|&p| points.points[p])
                .collect();
            fit_plane(&pts).ok().map(|mut plane| {
                plane.segment_id = s.id;
                plane
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthClamp {
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for DepthClamp {
    fn default() -> Self {
        DepthClamp {
            d_min: 0.1,
            d_max: 10.0,
        }
    }
}

impl DepthClamp {
    /// `1/ρ` clamped to `[d_min, d_max]`; `ρ <= 0` (behind the camera)
    /// maps to `d_max`.
    pub fn depth_from_inverse(&self, rho: f64) -> f64 {
        if !(rho > 0.0) {
            return self.d_max;
        }
        (1.0 / rho).clamp(self.d_min, self.d_max)
    }
}

/// Depth re-synthesized from fitted planes on their segments' pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CoplanarDepth {
    pub values: Grid<f64>,
    /// Pixels covered by a segment with a successful fit.
    pub defined: Grid<bool>,
    pub clamp: DepthClamp,
}

/// Inverse depth of `θ` along the ray through pixel `(u, v)`.
pub fn plane_inverse_depth(theta: &Vec3, k: &CameraIntrinsics, u: f64, v: f64) -> f64 {
    theta.dot(&k.ray(u, v))
}

pub fn coplanar_depth(
    planes: &[PlaneParams],
    seg: &SegmentationResult,
    k: &CameraIntrinsics,
    clamp: DepthClamp,
) -> Result<CoplanarDepth> {
    k.check_grid(&seg.labels)?;
    let (w, h) = seg.labels.dims();
    let mut values = Grid::filled(w, h, 0.0);
    let mut defined = Grid::filled(w, h, false);
    for plane in planes {
        let theta = plane.theta();
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::input("plane parameters must be finite"));
        }
        let Some(segment) = seg.segments.iter().find(|s| s.id == plane.segment_id) else {
            continue;
        };
        for &p in &segment.pixels {
            let (x, y) = seg.labels.coords_of(p);
            let rho = plane_inverse_depth(&theta, k, x as f64, y as f64);
            values[p] = clamp.depth_from_inverse(rho);
            defined[p] = true;
        }
    }
    Ok(CoplanarDepth {
        values,
        defined,
        clamp,
    })
}

/// `L = (1/N) Σ M^P |D - D_plane|`, with `D_plane` held constant.
///
/// The active set is `planar ∧ plane.defined ∧ depth.valid`.
pub fn coplanar_loss(
    depth: &DepthMap,
    plane: &CoplanarDepth,
    planar: &Grid<bool>,
    want_grad: bool,
) -> Result<LossTerm> {
    depth.values.check_dims(&plane.values)?;
    depth.values.check_dims(planar)?;
    let (w, h) = depth.dims();
    let active: Vec<usize> = (0..w * h)
        .filter(|&i| planar[i] && plane.defined[i] && depth.valid[i])
        .collect();
    let mut term = LossTerm::zero(w, h, want_grad);
    if active.is_empty() {
        return Ok(term);
    }
    let inv_n = 1.0 / active.len() as f64;
    let mut sum = 0.0;
    for &i in &active {
        let r = depth.values[i] - plane.values[i];
        sum += r.abs();
        if let Some(g) = term.grad.as_mut() {
            g[i] = if r > 0.0 {
                inv_n
            } else if r < 0.0 {
                -inv_n
            } else {
                0.0
            };
        }
    }
    term.value = sum * inv_n;
    Ok(term)
}
