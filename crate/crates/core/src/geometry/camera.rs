use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub type Vec3 = Vector3<f64>;

/// Pinhole intrinsics. Pixel coordinates are pixel centers with the origin
/// at the center of the top-left pixel, so pixel `(x, y)` sits at `u = x`,
/// `v = y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = Error;

    fn try_from(r: RawIntrinsics) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for RawIntrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        RawIntrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::input(format!(
                "focal lengths must be finite and positive (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::input("image size must be nonzero"));
        }
        // A principal point on the top-left pixel center is allowed.
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::input(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// `K^-1 (u, v, 1)`: the viewing ray with unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Pixel coordinates of a camera-frame point. `None` when `z <= 0`.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub(crate) fn check_grid<T>(&self, grid: &Grid<T>) -> Result<()> {
        if grid.dims() != self.dims() {
            return Err(Error::Dimensions {
                expected: self.dims(),
                actual: grid.dims(),
            });
        }
        Ok(())
    }
}

/// Per-pixel depth in meters. Invalid pixels (holes) carry no constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    /// Wraps raw values, marking every finite positive value valid.
    pub fn new(values: Grid<f64>) -> Self {
        let valid = values.map(|&d| d.is_finite() && d > 0.0);
        DepthMap { values, valid }
    }

    pub fn with_mask(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        values.check_dims(&valid)?;
        for (d, &ok) in values.iter().zip(valid.iter()) {
            if ok && !(d.is_finite() && *d > 0.0) {
                return Err(Error::input(format!(
                    "valid depth must be finite and positive, found {d}"
                )));
            }
        }
        Ok(DepthMap { values, valid })
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Camera-frame 3D point per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub points: Grid<Vec3>,
    pub valid: Grid<bool>,
}

/// `X_p = D(p) K^-1 p` for every valid pixel; invalid pixels stay at the
/// origin and stay invalid.
pub fn backproject(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointMap> {
    k.check_grid(&depth.values)?;
    let points = Grid::from_fn(depth.width(), depth.height(), |x, y| {
        if *depth.valid.get(x, y) {
            k.ray(x as f64, y as f64) * *depth.values.get(x, y)
        } else {
            Vec3::zeros()
        }
    });
    Ok(PointMap {
        points,
        valid: depth.valid.clone(),
    })
}

/// Chain rule through [`backproject`]: converts a gradient with respect to
/// the points into a gradient with respect to depth.
pub fn point_grad_to_depth(grad_points: &Grid<Vec3>, k: &CameraIntrinsics) -> Grid<f64> {
    Grid::from_fn(grad_points.width(), grad_points.height(), |x, y| {
        grad_points.get(x, y).dot(&k.ray(x as f64, y as f64))
    })
}

/// Rigid transform `X' = R X + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<RawPose> for Pose {
    type Error = Error;

    fn try_from(raw: RawPose) -> Result<Self> {
        Pose::new(Matrix3::from_row_slice(&raw.r), Vec3::from(raw.t))
    }
}

impl From<Pose> for RawPose {
    fn from(p: Pose) -> Self {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = p.rotation[(row, col)];
            }
        }
        RawPose {
            r,
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(ortho <= 1e-9) || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::input(
                "pose rotation must be orthonormal with determinant +1",
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::input("pose translation must be finite"));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}
