//! Differentiable surface normals from backprojected points.
//!
//! For an interior pixel `p` and each radius `r`, the vertical chord
//! `a_r = X(p + (0, r)) - X(p - (0, r))` and horizontal chord
//! `b_r = X(p + (r, 0)) - X(p - (r, 0))` span the local tangent plane. The
//! normal is `normalize(Σ_r a_r × b_r)`, flipped to face the camera. With
//! radii `{1, 2, 3}` the stencil spans a 7×7 neighborhood.

use super::camera::{point_grad_to_depth, CameraIntrinsics, PointMap, Vec3};
use crate::grid::Grid;

pub const DEFAULT_RADII: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub normals: Grid<Vec3>,
    pub valid: Grid<bool>,
}

impl NormalMap {
    pub fn dims(&self) -> (usize, usize) {
        self.normals.dims()
    }
}

/// Forward pass state needed by [`NormalTape::backward`].
#[derive(Debug, Clone)]
pub struct NormalTape {
    radii: Vec<usize>,
    /// Unnormalized sum of cross products.
    raw: Grid<Vec3>,
    /// +1 or -1 from the camera-facing flip.
    sign: Grid<f64>,
    /// Bit `i` set when `radii[i]` contributed.
    used: Grid<u32>,
    valid: Grid<bool>,
}

/// Normals only; see [`compute_normals_with_tape`] for the differentiable form.
pub fn compute_normals(points: &PointMap, radii: &[usize]) -> NormalMap {
    compute_normals_with_tape(points, radii).0
}

/// Computes normals and records what the backward pass needs.
///
/// A pixel is valid when it is at least `max(radii)` pixels from every
/// border, its own point is valid, at least one radius has all four chord
/// endpoints valid, and the cross-product sum is nonzero.
pub fn compute_normals_with_tape(points: &PointMap, radii: &[usize]) -> (NormalMap, NormalTape) {
    assert!(radii.len() <= 32, "at most 32 radii are supported");
    let (w, h) = points.points.dims();
    let border = radii.iter().copied().max().unwrap_or(0);
    let mut normals = Grid::filled(w, h, Vec3::zeros());
    let mut valid = Grid::filled(w, h, false);
    let mut raw = Grid::filled(w, h, Vec3::zeros());
    let mut sign = Grid::filled(w, h, 1.0);
    let mut used = Grid::filled(w, h, 0u32);

    if !radii.is_empty() && w > 2 * border && h > 2 * border {
        let pts = &points.points;
        let ok = &points.valid;
        for y in border..h - border {
            for x in border..w - border {
                if !ok[(x, y)] {
                    continue;
                }
                let mut m = Vec3::zeros();
                let mut scale = 0.0;
                let mut mask = 0u32;
                for (i, &r) in radii.iter().enumerate() {
                    let taps = [(x, y + r), (x, y - r), (x + r, y), (x - r, y)];
                    if !taps.iter().all(|&t| ok[t]) {
                        continue;
                    }
                    let a = pts[(x, y + r)] - pts[(x, y - r)];
                    let b = pts[(x + r, y)] - pts[(x - r, y)];
                    m += a.cross(&b);
                    scale += a.norm() * b.norm();
                    mask |= 1 << i;
                }
                let len = m.norm();
                if mask == 0 || !(len > 1e-12 * scale) || !len.is_finite() {
                    continue;
                }
                let mut n = m / len;
                let s = if n.dot(&pts[(x, y)]) > 0.0 { -1.0 } else { 1.0 };
                n *= s;
                normals[(x, y)] = n;
                valid[(x, y)] = true;
                raw[(x, y)] = m;
                sign[(x, y)] = s;
                used[(x, y)] = mask;
            }
        }
    }

    let tape = NormalTape {
        radii: radii.to_vec(),
        raw,
        sign,
        used,
        valid: valid.clone(),
    };
    (NormalMap { normals, valid }, tape)
}

impl NormalTape {
    /// Vector-Jacobian product: maps `dL/dn` (per pixel, ignored where the
    /// normal is invalid) to `dL/dX`.
    pub fn backward_points(&self, points: &PointMap, grad_normals: &Grid<Vec3>) -> Grid<Vec3> {
        let (w, h) = self.raw.dims();
        let pts = &points.points;
        let mut grad = Grid::filled(w, h, Vec3::zeros());
        for y in 0..h {
            for x in 0..w {
                if !self.valid[(x, y)] {
                    continue;
                }
                let g_n = grad_normals[(x, y)];
                if g_n == Vec3::zeros() {
                    continue;
                }
                let m = self.raw[(x, y)];
                let len = m.norm();
                let unit = m / len;
                // n = s m/|m|  =>  dL/dm = s (I - m̂ m̂ᵀ) g_n / |m|
                let g_m = (g_n - unit * unit.dot(&g_n)) * (self.sign[(x, y)] / len);
                let mask = self.used[(x, y)];
                for (i, &r) in self.radii.iter().enumerate() {
                    if mask & (1 << i) == 0 {
                        continue;
                    }
                    let a = pts[(x, y + r)] - pts[(x, y - r)];
                    let b = pts[(x + r, y)] - pts[(x - r, y)];
                    let g_a = b.cross(&g_m);
                    let g_b = g_m.cross(&a);
                    grad[(x, y + r)] += g_a;
                    grad[(x, y - r)] -= g_a;
                    grad[(x + r, y)] += g_b;
                    grad[(x - r, y)] -= g_b;
                }
            }
        }
        grad
    }

    /// Vector-Jacobian product all the way back to depth.
    pub fn backward_depth(
        &self,
        points: &PointMap,
        k: &CameraIntrinsics,
        grad_normals: &Grid<Vec3>,
    ) -> Grid<f64> {
        point_grad_to_depth(&self.backward_points(points, grad_normals), k)
    }
}
