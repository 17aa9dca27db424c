//! Ray-cast axis-aligned box rooms with exact depth, normals, plane ids,
//! edge line segments and Lambertian textures.
//!
//! World frame: the room spans `min..max` on each axis. Poses map world to
//! camera (`X_c = R X_w + t`); cameras look along +z with +y pointing down
//! in the image.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, LineSegment, NormalMap, Pose, Vec3};
use crate::grid::{Grid, Rgb, RgbImage};

/// Faces in plane-id order: id = index + 1, with 0 meaning "no plane".
pub const FACES: [&str; 6] = ["x_min", "x_max", "y_min", "y_max", "z_min", "z_max"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Uniform {
        color: Rgb,
    },
    /// Squares of `size` meters alternating between `a` and `b`.
    Checkerboard {
        size: f64,
        a: Rgb,
        b: Rgb,
    },
    /// Smooth band-limited pattern: a sum of seeded sinusoids with
    /// wavelength around `scale` meters.
    Noise {
        base: Rgb,
        amplitude: f64,
        scale: f64,
    },
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Uniform { color: [1.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera poses; view 0 is the reference view.
    pub poses: Vec<Pose>,
    /// Per face, in [`FACES`] order.
    #[serde(default)]
    pub textures: [Texture; 6],
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.room_max[i] - self.room_min[i] > 0.0) {
                return Err(Error::input("room extents must be positive"));
            }
        }
        if self.poses.is_empty() {
            return Err(Error::input("scene needs at least one camera pose"));
        }
        for (i, pose) in self.poses.iter().enumerate() {
            let c = camera_center(pose);
            let inside = (0..3).all(|a| c[a] > self.room_min[a] && c[a] < self.room_max[a]);
            if !inside {
                return Err(Error::input(format!(
                    "camera {i} at {c:?} is outside the room"
                )));
            }
        }
        Ok(())
    }
}

pub fn camera_center(pose: &Pose) -> Vec3 {
    -(pose.rotation.transpose() * pose.translation)
}

/// World-to-camera pose of a camera at `eye` looking at `target`, with
/// `up` (world) pointing up in the image.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Pose> {
    let f = (target - eye).normalize();
    let r = f.cross(&up);
    if !(r.norm() > 1e-9) {
        return Err(Error::input(
            "look_at: up is parallel to the viewing direction",
        ));
    }
    let r = r.normalize();
    let d = f.cross(&r);
    let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    Pose::new(rot, -(rot * eye))
}

#[derive(Debug, Clone)]
pub struct ViewRender {
    pub pose: Pose,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub plane_ids: Grid<u16>,
    pub lines: Vec<LineSegment>,
}

#[derive(Debug, Clone)]
pub struct SceneRender {
    pub intrinsics: CameraIntrinsics,
    pub views: Vec<ViewRender>,
}

impl SceneRender {
    /// Transform from view `target`'s camera frame to view `source`'s.
    pub fn relative_pose(&self, target: usize, source: usize) -> Pose {
        self.views[source]
            .pose
            .compose(&self.views[target].pose.inverse())
    }
}

struct Wave {
    freq: [f64; 2],
    phase: f64,
    channel_gain: Rgb,
}

/// Seeded sinusoid sets per face for `Noise` textures.
fn face_waves(seed: u64, face: usize, scale: f64) -> Vec<Wave> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(face as u64));
    (0..4)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / (scale * rng.random_range(0.7..1.4));
            Wave {
                freq: [k * angle.cos(), k * angle.sin()],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                channel_gain: [
                    rng.random_range(0.5..1.0),
                    rng.random_range(0.5..1.0),
                    rng.random_range(0.5..1.0),
                ],
            }
        })
        .collect()
}

fn shade(texture: &Texture, waves: &[Wave], a: f64, b: f64) -> Rgb {
    match texture {
        Texture::Uniform { color } => *color,
        Texture::Checkerboard { size, a: ca, b: cb } => {
            let parity = ((a / size).floor() + (b / size).floor()).rem_euclid(2.0);
            if parity < 0.5 {
                *ca
            } else {
                *cb
            }
        }
        Texture::Noise {
            base, amplitude, ..
        } => {
            let mut out = *base;
            for w in waves {
                let s = (w.freq[0] * a + w.freq[1] * b + w.phase).sin() / waves.len() as f64;
                for (o, g) in out.iter_mut().zip(w.channel_gain) {
                    *o += amplitude * g * s;
                }
            }
            out.map(|v| v.clamp(0.0, 1.0))
        }
    }
}

/// Plane-local coordinates of a hit on `face`: the two in-plane axes.
fn local_coords(face: usize, p: &Vec3) -> (f64, f64) {
    match face / 2 {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    }
}

pub fn generate_room(spec: &SceneSpec) -> Result<SceneRender> {
    spec.validate()?;
    let k = spec.intrinsics;
    let (w, h) = k.dims();
    let lo = Vec3::from(spec.room_min);
    let hi = Vec3::from(spec.room_max);
    let waves: Vec<Vec<Wave>> = spec
        .textures
        .iter()
        .enumerate()
        .map(|(f, t)| match t {
            Texture::Noise { scale, .. } => face_waves(spec.seed, f, *scale),
            _ => Vec::new(),
        })
        .collect();

    let mut views = Vec::with_capacity(spec.poses.len());
    for pose in &spec.poses {
        let center = camera_center(pose);
        let rt = pose.rotation.transpose();
        let mut image = Grid::filled(w, h, [0.0; 3]);
        let mut depth = Grid::filled(w, h, 0.0);
        let mut normals = Grid::filled(w, h, Vec3::zeros());
        let mut plane_ids = Grid::filled(w, h, 0u16);
        for y in 0..h {
            for x in 0..w {
                let ray_c = k.ray(x as f64, y as f64);
                let ray_w = rt * ray_c;
                let mut best = (f64::INFINITY, 0usize);
                for axis in 0..3 {
                    let dir = ray_w[axis];
                    if dir == 0.0 {
                        continue;
                    }
                    let (bound, face) = if dir > 0.0 {
                        (hi[axis], 2 * axis + 1)
                    } else {
                        (lo[axis], 2 * axis)
                    };
                    let t = (bound - center[axis]) / dir;
                    if t < best.0 {
                        best = (t, face);
                    }
                }
                let (t, face) = best;
                // ray_c has unit z, so the ray parameter is the depth.
                depth[(x, y)] = t;
                let mut inward = Vec3::zeros();
                inward[face / 2] = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
                normals[(x, y)] = pose.rotation * inward;
                plane_ids[(x, y)] = face as u16 + 1;
                let hit = center + ray_w * t;
                let (a, b) = local_coords(face, &hit);
                image[(x, y)] = shade(&spec.textures[face], &waves[face], a, b);
            }
        }
        views.push(ViewRender {
            pose: *pose,
            image,
            depth: DepthMap::new(depth),
            normals: NormalMap {
                normals,
                valid: Grid::filled(w, h, true),
            },
            plane_ids,
            lines: project_room_edges(&lo, &hi, pose, &k),
        });
    }
    Ok(SceneRender {
        intrinsics: k,
        views,
    })
}

const NEAR: f64 = 1e-3;
const MIN_LINE_PX: f64 = 2.0;

/// The twelve room edges, clipped to the near plane and the image, as
/// segments at least two pixels long.
pub fn project_room_edges(
    lo: &Vec3,
    hi: &Vec3,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Vec<LineSegment> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for &c1 in &[lo[a1], hi[a1]] {
            for &c2 in &[lo[a2], hi[a2]] {
                let mut p = Vec3::zeros();
                let mut q = Vec3::zeros();
                p[axis] = lo[axis];
                q[axis] = hi[axis];
                p[a1] = c1;
                q[a1] = c1;
                p[a2] = c2;
                q[a2] = c2;
                let (pc, qc) = (pose.apply(&p), pose.apply(&q));
                let Some((pc, qc)) = clip_near(pc, qc) else {
                    continue;
                };
                let (Some(u0), Some(u1)) = (k.project(&pc), k.project(&qc)) else {
                    continue;
                };
                let Some((s0, s1)) = clip_rect(u0, u1, (k.width - 1) as f64, (k.height - 1) as f64)
                else {
                    continue;
                };
                if let Ok(seg) = LineSegment::new([s0.0, s0.1], [s1.0, s1.1]) {
                    if seg.length() >= MIN_LINE_PX {
                        out.push(seg);
                    }
                }
            }
        }
    }
    out
}

fn clip_near(p: Vec3, q: Vec3) -> Option<(Vec3, Vec3)> {
    match (p.z >= NEAR, q.z >= NEAR) {
        (true, true) => Some((p, q)),
        (false, false) => None,
        (true, false) => Some((p, p + (q - p) * ((NEAR - p.z) / (q.z - p.z)))),
        (false, true) => Some((q + (p - q) * ((NEAR - q.z) / (p.z - q.z)), q)),
    }
}

/// Liang–Barsky clipping to `[0, xmax] × [0, ymax]`.
fn clip_rect(
    a: (f64, f64),
    b: (f64, f64),
    xmax: f64,
    ymax: f64,
) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.0), (dx, xmax - a.0), (-dy, a.1), (dy, ymax - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| {
        (
            (a.0 + t * dx).clamp(0.0, xmax),
            (a.1 + t * dy).clamp(0.0, ymax),
        )
    };
    Some((at(t0), at(t1)))
}

/// Rotates each segment about its midpoint by a Gaussian angle with
/// standard deviation `sigma_deg`.
pub fn perturb_lines(lines: &[LineSegment], sigma_deg: f64, seed: u64) -> Vec<LineSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_deg.to_radians()).expect("finite sigma");
    lines
        .iter()
        .map(|l| {
            let angle: f64 = normal.sample(&mut rng);
            let (s, c) = angle.sin_cos();
            let m = [(l.p0[0] + l.p1[0]) / 2.0, (l.p0[1] + l.p1[1]) / 2.0];
            let rot = |p: [f64; 2]| {
                let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
                [m[0] + c * dx - s * dy, m[1] + s * dx + c * dy]
            };
            LineSegment {
                p0: rot(l.p0),
                p1: rot(l.p1),
            }
        })
        .collect()
}

/// `D · (1 + U(-amplitude, amplitude))` per valid pixel, seeded.
pub fn multiplicative_noise(depth: &DepthMap, amplitude: f64, seed: u64) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = depth.clone();
    for i in 0..out.values.len() {
        let e: f64 = rng.random_range(-amplitude..=amplitude);
        if out.valid[i] {
            out.values[i] *= 1.0 + e;
        }
    }
    out
}
