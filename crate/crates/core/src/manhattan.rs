//! Manhattan normal detection: align each estimated normal with the closest
//! signed dominant direction, threshold the similarity, and penalize the
//! remaining misalignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, compute_normals_with_tape, CameraIntrinsics, DepthMap, DominantDirections,
    NormalMap, Vec3,
};
use crate::grid::Grid;
use crate::loss::LossTerm;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub aligned: Grid<Vec3>,
    pub smax: Grid<f64>,
    pub valid: Grid<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanMask {
    pub mask: Grid<bool>,
}

impl ManhattanMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Linear growth of the Manhattan threshold with the epoch index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_max: f64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule {
            alpha: 1.633e-3,
            beta: 0.9,
            gamma_max: 0.9999,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.alpha.is_finite()
            && self.beta > 0.0
            && self.beta <= self.gamma_max
            && self.gamma_max < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::input(
                "threshold schedule needs alpha >= 0 and 0 < beta <= gamma_max < 1",
            ))
        }
    }
}

/// `γ = min(α · epoch + β, γ_max)`.
pub fn adaptive_threshold(epoch: u64, sched: &ThresholdSchedule) -> f64 {
    (sched.alpha * epoch as f64 + sched.beta).min(sched.gamma_max)
}

/// Picks, per valid pixel, the signed dominant direction with the highest
/// cosine similarity. Ties keep the earlier candidate.
pub fn align_normals(normals: &NormalMap, dirs: &DominantDirections) -> AlignmentResult {
    let (w, h) = normals.dims();
    let candidates = dirs.candidates();
    let mut aligned = Grid::filled(w, h, Vec3::zeros());
    let mut smax = Grid::filled(w, h, 0.0);
    for i in 0..normals.normals.len() {
        if !normals.valid[i] {
            continue;
        }
        let n = normals.normals[i];
        let len = n.norm();
        let mut best = (0, f64::NEG_INFINITY);
        for (c, cand) in candidates.iter().enumerate() {
            let s = n.dot(cand) / (len * cand.norm());
            if s > best.1 {
                best = (c, s);
            }
        }
        aligned[i] = candidates[best.0];
        smax[i] = best.1;
    }
    AlignmentResult {
        aligned,
        smax,
        valid: normals.valid.clone(),
    }
}

/// `M^M[p] = valid[p] && smax[p] >= γ`.
pub fn manhattan_mask(align: &AlignmentResult, gamma: f64) -> ManhattanMask {
    let mask = Grid::from_fn(align.smax.width(), align.smax.height(), |x, y| {
        align.valid[(x, y)] && align.smax[(x, y)] >= gamma
    });
    ManhattanMask { mask }
}

/// Value of the Manhattan normal loss and its gradient with respect to the
/// normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalLoss {
    pub value: f64,
    /// Pixels with `M^M · M^P = 1`.
    pub count: usize,
    pub grad_normals: Grid<Vec3>,
}

/// `L = (1/N) Σ M^M M^P (1 - n · n_align)` with `n_align` held constant.
pub fn manhattan_normal_loss(
    normals: &NormalMap,
    align: &AlignmentResult,
    manhattan: &ManhattanMask,
    planar: &Grid<bool>,
) -> Result<NormalLoss> {
    normals.normals.check_dims(&align.aligned)?;
    normals.normals.check_dims(&manhattan.mask)?;
    normals.normals.check_dims(planar)?;
    let (w, h) = normals.dims();
    let active: Vec<usize> = (0..w * h)
        .filter(|&i| manhattan.mask[i] && planar[i] && normals.valid[i])
        .collect();
    let mut grad_normals = Grid::filled(w, h, Vec3::zeros());
    if active.is_empty() {
        return Ok(NormalLoss {
            value: 0.0,
            count: 0,
            grad_normals,
        });
    }
    let inv_n = 1.0 / active.len() as f64;
    let mut sum = 0.0;
    for &i in &active {
        let target = align.aligned[i];
        sum += 1.0 - normals.normals[i].dot(&target);
        grad_normals[i] = -target * inv_n;
    }
    Ok(NormalLoss {
        value: sum * inv_n,
        count: active.len(),
        grad_normals,
    })
}

/// The Manhattan normal loss evaluated from depth, with the gradient taken
/// through backprojection and the point-to-normal layer.
pub fn normal_loss_from_depth(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    radii: &[usize],
    align: &AlignmentResult,
    manhattan: &ManhattanMask,
    planar: &Grid<bool>,
    want_grad: bool,
) -> Result<LossTerm> {
    let points = backproject(depth, k)?;
    let (normals, tape) = compute_normals_with_tape(&points, radii);
    let loss = manhattan_normal_loss(&normals, align, manhattan, planar)?;
    let grad = want_grad.then(|| tape.backward_depth(&points, k, &loss.grad_normals));
    Ok(LossTerm {
        value: loss.value,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(n: Vec3) -> NormalMap {
        NormalMap {
            normals: Grid::filled(1, 1, n),
            valid: Grid::filled(1, 1, true),
        }
    }

    #[test]
    fn exact_candidate() {
        let a = align_normals(&single(Vec3::x()), &DominantDirections::canonical());
        assert_eq!(a.aligned[0], Vec3::x());
        assert_eq!(a.smax[0], 1.0);
    }

    #[test]
    fn tilted_normal_matches_exhaustive_cosines() {
        let n = Vec3::new(0.1, 0.0, 0.995).normalize();
        let a = align_normals(&single(n), &DominantDirections::canonical());
        // Oracle: cosine against each of the six signed axes, by hand.
        let cosines = [n.x, -n.x, n.y, -n.y, n.z, -n.z];
        let best = cosines.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.aligned[0], Vec3::z());
        assert!((a.smax[0] - best).abs() < 1e-15);
        assert!((a.smax[0] - 0.9950).abs() < 5e-5);
    }

    #[test]
    fn scaled_normals_align_identically() {
        let n = Vec3::new(0.3, -0.2, 0.9);
        let a = align_normals(&single(n.normalize()), &DominantDirections::canonical());
        let b = align_normals(&single(n * 7.5), &DominantDirections::canonical());
        assert_eq!(a.aligned, b.aligned);
        assert!((a.smax[0] - b.smax[0]).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_first_candidate() {
        let n = Vec3::new(1.0, 1.0, 0.0).normalize();
        let a = align_normals(&single(n), &DominantDirections::canonical());
        assert_eq!(a.aligned[0], Vec3::x());
    }

    #[test]
    fn threshold_schedule() {
        let s = ThresholdSchedule::default();
        assert_eq!(adaptive_threshold(0, &s), 0.9);
        assert!((adaptive_threshold(50, &s) - 0.98165).abs() < 1e-12);
        assert_eq!(adaptive_threshold(1_000_000, &s), 0.9999);
        assert!(s.validate().is_ok());
        assert!(ThresholdSchedule {
            beta: 1.0,
            gamma_max: 1.0,
            ..s
        }
        .validate()
        .is_err());
    }

    fn alignment(smax: &[f64]) -> AlignmentResult {
        let n = smax.len();
        AlignmentResult {
            aligned: Grid::filled(n, 1, Vec3::z()),
            smax: Grid::from_vec(n, 1, smax.to_vec()).unwrap(),
            valid: Grid::filled(n, 1, true),
        }
    }

    #[test]
    fn mask_uses_closed_threshold() {
        let mut a = alignment(&[1.0, 0.89, 0.9, 0.95]);
        a.valid[3] = false;
        let m = manhattan_mask(&a, 0.9);
        assert_eq!(m.mask.as_slice(), &[true, false, true, false]);
        let full = manhattan_mask(&alignment(&[1.0; 4]), 0.9);
        assert_eq!(full.count(), 4);
    }

    #[test]
    fn loss_arithmetic() {
        let target = Vec3::z();
        let tilted = Vec3::new((1.0f64 - 0.81).sqrt(), 0.0, 0.9);
        let normals = NormalMap {
            normals: Grid::filled(3, 1, tilted),
            valid: Grid::filled(3, 1, true),
        };
        let align = AlignmentResult {
            aligned: Grid::filled(3, 1, target),
            smax: Grid::filled(3, 1, 0.9),
            valid: Grid::filled(3, 1, true),
        };
        let mm = manhattan_mask(&align, 0.5);
        let mut planar = Grid::filled(3, 1, true);
        let l = manhattan_normal_loss(&normals, &align, &mm, &planar).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
        assert_eq!(l.count, 3);

        planar[1] = false;
        let l = manhattan_normal_loss(&normals, &align, &mm, &planar).unwrap();
        assert_eq!(l.count, 2);
        assert_eq!(l.grad_normals[1], Vec3::zeros());

        let exact = NormalMap {
            normals: Grid::filled(3, 1, target),
            valid: Grid::filled(3, 1, true),
        };
        assert_eq!(
            manhattan_normal_loss(&exact, &align, &mm, &planar)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn empty_mask_gives_zero_loss() {
        let normals = single(Vec3::z());
        let align = align_normals(&normals, &DominantDirections::canonical());
        let mm = manhattan_mask(&align, 0.9);
        let l = manhattan_normal_loss(&normals, &align, &mm, &Grid::filled(1, 1, false)).unwrap();
        assert_eq!((l.value, l.count), (0.0, 0));
    }

    #[test]
    fn mismatched_masks_are_rejected() {
        let normals = single(Vec3::z());
        let align = align_normals(&normals, &DominantDirections::canonical());
        let mm = manhattan_mask(&align, 0.9);
        assert!(manhattan_normal_loss(&normals, &align, &mm, &Grid::filled(2, 1, true)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn smax_is_bounded_below_by_the_body_diagonal(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            yaw in -3.0f64..3.0, pitch in -1.5f64..1.5,
        ) {
            let n = Vec3::new(x, y, z);
            proptest::prop_assume!(n.norm() > 1e-3);
            let r = nalgebra::Rotation3::from_euler_angles(0.2, pitch, yaw).into_inner();
            let dirs = DominantDirections::from_rotation(&r);
            let a = align_normals(&single(n.normalize()), &dirs);
            let floor = 54.7356f64.to_radians().cos();
            proptest::prop_assert!(a.smax[0] >= floor - 1e-6 && a.smax[0] <= 1.0 + 1e-12);
            for c in dirs.candidates() {
                proptest::prop_assert!(a.smax[0] >= n.normalize().dot(&c) - 1e-12);
            }
        }

        #[test]
        fn threshold_monotonicity(seed in 0u64..500, g1 in 0.5f64..0.99, dg in 0.0f64..0.3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let smax: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..1.0)).collect();
            let a = alignment(&smax);
            let m1 = manhattan_mask(&a, g1);
            let m2 = manhattan_mask(&a, (g1 + dg).min(0.9999));
            for i in 0..64 {
                proptest::prop_assert!(!m2.mask[i] || m1.mask[i]);
            }
        }
    }
}
