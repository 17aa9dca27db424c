//! Manhattan frame estimation from vanishing points and line segments.
//!
//! A line segment together with the camera center spans an interpretation
//! plane; a 3D direction `d` whose vanishing point lies on the segment's
//! image line satisfies `m · d = 0`, where `m` is that plane's normal. Two
//! segments sharing a vanishing point therefore fix the direction as
//! `m_i × m_j`, and two such pairs fix a full orthogonal frame.

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraIntrinsics, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment", into = "RawSegment")]
pub struct LineSegment {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl TryFrom<RawSegment> for LineSegment {
    type Error = Error;

    fn try_from(r: RawSegment) -> Result<Self> {
        LineSegment::new([r.x0, r.y0], [r.x1, r.y1])
    }
}

impl From<LineSegment> for RawSegment {
    fn from(s: LineSegment) -> Self {
        RawSegment {
            x0: s.p0[0],
            y0: s.p0[1],
            x1: s.p1[0],
            y1: s.p1[1],
        }
    }
}

impl LineSegment {
    pub fn new(p0: [f64; 2], p1: [f64; 2]) -> Result<Self> {
        if !p0.iter().chain(p1.iter()).all(|v| v.is_finite()) {
            return Err(Error::input("line segment endpoints must be finite"));
        }
        if p0 == p1 {
            return Err(Error::input("line segment endpoints coincide"));
        }
        Ok(LineSegment { p0, p1 })
    }

    pub fn length(&self) -> f64 {
        (self.p1[0] - self.p0[0]).hypot(self.p1[1] - self.p0[1])
    }

    pub fn within(&self, k: &CameraIntrinsics) -> bool {
        let inside = |p: &[f64; 2]| {
            (0.0..=(k.width - 1) as f64).contains(&p[0])
                && (0.0..=(k.height - 1) as f64).contains(&p[1])
        };
        inside(&self.p0) && inside(&self.p1)
    }

    /// Unit normal of the plane through the camera center and the segment.
    pub fn interpretation_normal(&self, k: &CameraIntrinsics) -> Vec3 {
        let a = Vec3::new(self.p0[0], self.p0[1], 1.0);
        let b = Vec3::new(self.p1[0], self.p1[1], 1.0);
        (k.matrix().transpose() * a.cross(&b)).normalize()
    }
}

/// Three mutually orthogonal unit directions in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct DominantDirections {
    pub dirs: [Vec3; 3],
}

impl TryFrom<[[f64; 3]; 3]> for DominantDirections {
    type Error = Error;

    fn try_from(raw: [[f64; 3]; 3]) -> Result<Self> {
        DominantDirections::new(raw.map(Vec3::from))
    }
}

impl From<DominantDirections> for [[f64; 3]; 3] {
    fn from(d: DominantDirections) -> Self {
        d.dirs.map(|v| [v.x, v.y, v.z])
    }
}

impl DominantDirections {
    pub fn new(dirs: [Vec3; 3]) -> Result<Self> {
        for d in &dirs {
            if !d.iter().all(|v| v.is_finite()) || (d.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::input("dominant directions must be unit vectors"));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if dirs[i].dot(&dirs[j]).abs() >= 1e-3 {
                    return Err(Error::input(
                        "dominant directions must be mutually orthogonal",
                    ));
                }
            }
        }
        Ok(DominantDirections { dirs })
    }

    /// The camera axes.
    pub fn canonical() -> Self {
        DominantDirections {
            dirs: [Vec3::x(), Vec3::y(), Vec3::z()],
        }
    }

    /// Columns of a rotation matrix, e.g. a world frame seen from a camera.
    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        DominantDirections {
            dirs: [
                r.column(0).into_owned(),
                r.column(1).into_owned(),
                r.column(2).into_owned(),
            ],
        }
    }

    /// The six signed candidates in tie-break order `d1, -d1, d2, -d2, d3, -d3`.
    pub fn candidates(&self) -> [Vec3; 6] {
        let [a, b, c] = self.dirs;
        [a, -a, b, -b, c, -c]
    }
}

/// Flips `d` so that z >= 0, falling back to x >= 0 then y >= 0 on ties.
fn canonical_sign(d: Vec3) -> Vec3 {
    let key = if d.z != 0.0 {
        d.z
    } else if d.x != 0.0 {
        d.x
    } else {
        d.y
    };
    if key < 0.0 {
        -d
    } else {
        d
    }
}

/// `normalize(K^-1 v)` for a homogeneous vanishing point `v`.
pub fn vanishing_point_to_direction(v: &Vec3, k: &CameraIntrinsics) -> Result<Vec3> {
    if !v.iter().all(|c| c.is_finite()) || v.norm() == 0.0 {
        return Err(Error::input(
            "vanishing point must be a nonzero finite vector",
        ));
    }
    let d = k.inverse_matrix() * v;
    let n = d.norm();
    if !(n > 1e-12 * v.norm() / k.fx.max(k.fy).max(1.0)) {
        return Err(Error::degenerate("K^-1 v is numerically zero"));
    }
    Ok(canonical_sign(d / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub directions: DominantDirections,
    /// Lines explained by some direction within the angular tolerance.
    pub inliers: usize,
    /// Inlier lines per direction, aligned with `directions.dirs`.
    pub support: [usize; 3],
}

/// Above this many pair-pair hypotheses the search switches from exhaustive
/// enumeration to seeded random sampling.
const EXHAUSTIVE_LIMIT: usize = 4_000_000;
const SAMPLED_HYPOTHESES: usize = 400_000;
const SAMPLING_SEED: u64 = 0x5eed_1ee5;
const REFINE_ITERATIONS: usize = 20;

/// Estimates the Manhattan frame by consensus search over pairs of line pairs.
///
/// Each hypothesis takes `d1` from one pair of lines, `d2` from a second
/// pair orthogonalized against `d1`, and `d3 = d1 × d2`. A line supports the
/// hypothesis when `min_k |m · d_k| <= sin(angle_tol)`. The best hypothesis
/// (most inliers, then smallest summed residual) is polished by Gauss-Newton
/// on the rotation. Directions come back ordered by descending support.
pub fn estimate_dominant_directions(
    lines: &[LineSegment],
    k: &CameraIntrinsics,
    angle_tol_deg: f64,
) -> Result<DirectionEstimate> {
    if lines.len() < 4 {
        return Err(Error::NoValidFrame(format!(
            "need at least 4 line segments, got {}",
            lines.len()
        )));
    }
    if !(angle_tol_deg > 0.0 && angle_tol_deg < 90.0) {
        return Err(Error::input("angle tolerance must lie in (0, 90) degrees"));
    }
    let tol = angle_tol_deg.to_radians().sin();
    let normals: Vec<Vec3> = lines.iter().map(|l| l.interpretation_normal(k)).collect();

    let mut pairs = Vec::new();
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            let c = normals[i].cross(&normals[j]);
            let n = c.norm();
            if n > 1e-9 {
                pairs.push(c / n);
            }
        }
    }
    if pairs.len() < 2 {
        return Err(Error::NoValidFrame(
            "fewer than two usable line pairs".into(),
        ));
    }

    let mut best: Option<(usize, f64, [Vec3; 3])> = None;
    let mut consider = |d1: &Vec3, d2_raw: &Vec3| {
        let d2 = d2_raw - d1 * d2_raw.dot(d1);
        let n2 = d2.norm();
        if n2 < 1e-6 {
            return;
        }
        let d2 = d2 / n2;
        let frame = [*d1, d2, d1.cross(&d2)];
        let (count, residual) = score(&normals, &frame, tol);
        let better = match &best {
            None => true,
            Some((bc, br, _)) => count > *bc || (count == *bc && residual < *br),
        };
        if better {
            best = Some((count, residual, frame));
        }
    };

    if pairs.len().saturating_mul(pairs.len()) <= EXHAUSTIVE_LIMIT {
        for (a, d1) in pairs.iter().enumerate() {
            for (b, d2) in pairs.iter().enumerate() {
                if a != b {
                    consider(d1, d2);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
        for _ in 0..SAMPLED_HYPOTHESES {
            let a = rng.random_range(0..pairs.len());
            let b = rng.random_range(0..pairs.len());
            if a != b {
                consider(&pairs[a], &pairs[b]);
            }
        }
    }

    let Some((count, _, frame)) = best else {
        return Err(Error::NoValidFrame(
            "every hypothesis was degenerate (all lines share one vanishing point?)".into(),
        ));
    };
    if count < 4 {
        return Err(Error::NoValidFrame(format!(
            "best consensus has only {count} lines"
        )));
    }

    let frame = refine_frame(&normals, frame, tol);
    let assignment = assign(&normals, &frame, tol);
    let mut support = [0usize; 3];
    for a in assignment.iter().flatten() {
        support[*a] += 1;
    }
    if support.iter().filter(|&&s| s >= 2).count() < 2 {
        return Err(Error::NoValidFrame(format!(
            "only one direction is supported by two or more lines (support {support:?})"
        )));
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| support[b].cmp(&support[a]));
    let d1 = canonical_sign(frame[order[0]]);
    let d2 = canonical_sign(frame[order[1]]);
    let d3 = d1.cross(&d2);
    Ok(DirectionEstimate {
        directions: DominantDirections { dirs: [d1, d2, d3] },
        inliers: support.iter().sum(),
        support: [support[order[0]], support[order[1]], support[order[2]]],
    })
}

fn score(normals: &[Vec3], frame: &[Vec3; 3], tol: f64) -> (usize, f64) {
    let mut count = 0;
    let mut residual = 0.0;
    for m in normals {
        let r = frame
            .iter()
            .map(|d| m.dot(d).abs())
            .fold(f64::INFINITY, f64::min);
        if r <= tol {
            count += 1;
            residual += r;
        }
    }
    (count, residual)
}

fn assign(normals: &[Vec3], frame: &[Vec3; 3], tol: f64) -> Vec<Option<usize>> {
    normals
        .iter()
        .map(|m| {
            let (best, r) =
                (0..3)
                    .map(|i| (i, m.dot(&frame[i]).abs()))
                    .fold(
                        (0, f64::INFINITY),
                        |acc, c| if c.1 < acc.1 { c } else { acc },
                    );
            (r <= tol).then_some(best)
        })
        .collect()
}

/// Gauss-Newton on SO(3) minimizing `Σ (m · d_k)²` over assigned inliers.
fn refine_frame(normals: &[Vec3], mut frame: [Vec3; 3], tol: f64) -> [Vec3; 3] {
    for _ in 0..REFINE_ITERATIONS {
        let assignment = assign(normals, &frame, tol);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vec3::zeros();
        for (m, a) in normals.iter().zip(&assignment) {
            let Some(a) = *a else { continue };
            let d = frame[a];
            let r = m.dot(&d);
            let j = d.cross(m);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(inv) = jtj.try_inverse() else { break };
        let step = -(inv * jtr);
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let rot = Rotation3::new(step);
        frame = frame.map(|d| (rot * d).normalize());
        // Re-orthogonalize against drift.
        let d2 = (frame[1] - frame[0] * frame[1].dot(&frame[0])).normalize();
        frame = [frame[0], d2, frame[0].cross(&d2)];
        if step.norm() < 1e-15 {
            break;
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let d = vanishing_point_to_direction(&Vec3::new(320.0, 240.0, 1.0), &vga()).unwrap();
        assert!((d - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn ideal_point_keeps_its_axis() {
        let d = vanishing_point_to_direction(&Vec3::new(1.0, 0.0, 0.0), &vga()).unwrap();
        assert!((d - Vec3::x()).norm() < 1e-15);
        let d = vanishing_point_to_direction(&Vec3::new(-1.0, 0.0, 0.0), &vga()).unwrap();
        assert!((d - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn off_axis_vanishing_point() {
        let d = vanishing_point_to_direction(&Vec3::new(820.0, 240.0, 1.0), &vga()).unwrap();
        let oracle =
            (vga().matrix().try_inverse().unwrap() * Vec3::new(820.0, 240.0, 1.0)).normalize();
        assert!((d - oracle).norm() < 1e-12);
        assert!((d - Vec3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-12);
    }

    #[test]
    fn zero_vanishing_point_is_rejected() {
        assert!(vanishing_point_to_direction(&Vec3::zeros(), &vga()).is_err());
    }

    #[test]
    fn too_few_lines() {
        let l = LineSegment::new([0.0, 0.0], [10.0, 1.0]).unwrap();
        let err = estimate_dominant_directions(&[l, l, l], &vga(), 2.0).unwrap_err();
        assert!(matches!(err, Error::NoValidFrame(_)));
    }

    #[test]
    fn parallel_lines_cannot_fix_a_frame() {
        // Four image lines through one finite vanishing point.
        let vp = [400.0, 100.0];
        let lines: Vec<_> = [
            [10.0, 400.0],
            [200.0, 470.0],
            [600.0, 460.0],
            [630.0, 300.0],
        ]
        .iter()
        .map(|p| LineSegment::new(*p, [(p[0] + vp[0]) / 2.0, (p[1] + vp[1]) / 2.0]).unwrap())
        .collect();
        let err = estimate_dominant_directions(&lines, &vga(), 2.0).unwrap_err();
        assert!(matches!(err, Error::NoValidFrame(_)), "{err}");
    }

    #[test]
    fn segment_json_shape() {
        let l: LineSegment = serde_json::from_str(r#"{"x0":1,"y0":2,"x1":3,"y1":4}"#).unwrap();
        assert_eq!(l.p1, [3.0, 4.0]);
        assert!(serde_json::from_str::<LineSegment>(r#"{"x0":1,"y0":2,"x1":1,"y1":2}"#).is_err());
    }

    #[test]
    fn directions_json_rejects_non_orthogonal() {
        assert!(serde_json::from_str::<DominantDirections>("[[1,0,0],[1,0,0],[0,0,1]]").is_err());
        let d: DominantDirections = serde_json::from_str("[[1,0,0],[0,1,0],[0,0,1]]").unwrap();
        assert_eq!(d, DominantDirections::canonical());
    }
}
