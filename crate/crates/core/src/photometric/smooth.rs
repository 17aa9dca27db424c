//! Edge-aware smoothness of mean-normalized inverse depth.

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::grid::RgbImage;
use crate::loss::LossTerm;

fn image_step(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
}

/// Mean over valid pixels of `|∂x ρ̂| e^{-|∂x I|} + |∂y ρ̂| e^{-|∂y I|}`
/// with forward differences, `ρ̂ = ρ / mean(ρ)`, `ρ = 1/D`, and image
/// differences averaged over channels. Differences that would leave the
/// image or touch an invalid pixel contribute nothing.
pub fn smoothness_loss(depth: &DepthMap, image: &RgbImage, want_grad: bool) -> Result<LossTerm> {
    depth.values.check_dims(image)?;
    let (w, h) = depth.dims();
    let valid_count = depth.valid_count();
    if valid_count == 0 {
        return Err(Error::input("smoothness needs at least one valid depth"));
    }
    let rho = depth.values.map(|&d| 1.0 / d);
    let mean = (0..w * h)
        .filter(|&i| depth.valid[i])
        .map(|i| rho[i])
        .sum::<f64>()
        / valid_count as f64;

    // (p, q, edge weight) for x then y differences.
    let mut x_terms = Vec::new();
    let mut y_terms = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !depth.valid[p] {
                continue;
            }
            if x + 1 < w && depth.valid[p + 1] {
                x_terms.push((p, p + 1, (-image_step(&image[p], &image[p + 1])).exp()));
            }
            if y + 1 < h && depth.valid[p + w] {
                y_terms.push((p, p + w, (-image_step(&image[p], &image[p + w])).exp()));
            }
        }
    }

    let mut term = LossTerm::zero(w, h, want_grad);
    // Gradient with respect to ρ̂ first.
    let mut g_hat = vec![0.0; w * h];
    let inv = 1.0 / valid_count as f64;
    for terms in [&x_terms, &y_terms] {
        for &(p, q, weight) in terms.iter() {
            let diff = (rho[q] - rho[p]) / mean;
            term.value += diff.abs() * weight * inv;
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            g_hat[q] += s * weight * inv;
            g_hat[p] -= s * weight * inv;
        }
    }

    if let Some(grad) = term.grad.as_mut() {
        // ρ̂_i = ρ_i / m with m = mean(ρ):
        //   dL/dρ_j = g_j / m - (1 / (n m²)) Σ_i g_i ρ_i
        let coupling = (0..w * h)
            .filter(|&i| depth.valid[i])
            .map(|i| g_hat[i] * rho[i])
            .sum::<f64>()
            / (valid_count as f64 * mean * mean);
        for i in 0..w * h {
            if depth.valid[i] {
                let g_rho = g_hat[i] / mean - coupling;
                grad[i] = -g_rho * rho[i] * rho[i];
            }
        }
    }
    Ok(term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn constant_depth_is_smooth() {
        let d = DepthMap::new(Grid::filled(8, 8, 2.5));
        let img = Grid::filled(8, 8, [0.3, 0.2, 0.1]);
        let l = smoothness_loss(&d, &img, true).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_by_one_by_hand() {
        // ρ = (1, 0.5), mean 0.75, ρ̂ = (4/3, 2/3); one x-difference of 2/3
        // with image weight e^{-0.3}, averaged over the two pixels.
        let d = DepthMap::new(Grid::from_vec(2, 1, vec![1.0, 2.0]).unwrap());
        let img = Grid::from_vec(2, 1, vec![[0.0; 3], [0.3; 3]]).unwrap();
        let l = smoothness_loss(&d, &img, false).unwrap().value;
        assert!((l - (2.0 / 3.0) * (-0.3f64).exp() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn edges_in_the_image_discount_depth_changes() {
        let ramp = DepthMap::new(Grid::from_fn(8, 8, |x, y| {
            1.0 + 0.1 * x as f64 + 0.05 * y as f64
        }));
        let flat = Grid::filled(8, 8, [0.5; 3]);
        let stripes = Grid::from_fn(
            8,
            8,
            |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [1.0; 3] },
        );
        let a = smoothness_loss(&ramp, &flat, false).unwrap().value;
        let b = smoothness_loss(&ramp, &stripes, false).unwrap().value;
        assert!(b < a);
    }

    proptest::proptest! {
        #[test]
        fn scale_invariant(seed in 0u64..300, c in 0.1f64..10.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = Grid::from_fn(9, 7, |_, _| rng.random_range(0.5..4.0));
            let img = Grid::from_fn(9, 7, |_, _| [rng.random(), rng.random(), rng.random()]);
            let a = smoothness_loss(&DepthMap::new(values.clone()), &img, false).unwrap().value;
            let b = smoothness_loss(&DepthMap::new(values.map(|d| d * c)), &img, false).unwrap().value;
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert!(a >= 0.0 && a.is_finite());
        }
    }
}
