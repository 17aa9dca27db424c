//! SSIM with 3×3 mean windows on `[0, 1]` intensities.

use crate::error::Result;
use crate::grid::Grid;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// SSIM of one window given as flat, equally long value lists.
pub fn ssim_window(a: &[f64], b: &[f64]) -> f64 {
    ssim_window_grad(a, b, None)
}

/// SSIM of one window; when `grad` is given, `dSSIM/db_i` is added to it.
pub fn ssim_window_grad(a: &[f64], b: &[f64], grad: Option<&mut [f64]>) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        var_a += (x - mu_a) * (x - mu_a);
        var_b += (y - mu_b) * (y - mu_b);
        cov += (x - mu_a) * (y - mu_b);
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let num1 = 2.0 * mu_a * mu_b + C1;
    let num2 = 2.0 * cov + C2;
    let den1 = mu_a * mu_a + mu_b * mu_b + C1;
    let den2 = var_a + var_b + C2;
    let s = num1 * num2 / (den1 * den2);
    if let Some(g) = grad {
        for i in 0..a.len() {
            let d_num1 = 2.0 * mu_a / n;
            let d_num2 = 2.0 * (a[i] - mu_a) / n;
            let d_den1 = 2.0 * mu_b / n;
            let d_den2 = 2.0 * (b[i] - mu_b) / n;
            g[i] += s * (d_num1 / num1 + d_num2 / num2 - d_den1 / den1 - d_den2 / den2);
        }
    }
    s
}

/// The loss form `(1 - SSIM) / 2`, in `[0, 1]`.
#[inline]
pub fn ssim_loss(s: f64) -> f64 {
    (1.0 - s) / 2.0
}

/// SSIM map over every 3×3 window fully inside both images ("valid" mode),
/// so the output is `(w - 2) × (h - 2)`. Images smaller than 3 in either
/// direction are treated as one window.
pub fn ssim_map(a: &Grid<f64>, b: &Grid<f64>) -> Result<Grid<f64>> {
    a.check_dims(b)?;
    let (w, h) = a.dims();
    if w < 3 || h < 3 {
        return Ok(Grid::filled(1, 1, ssim_window(a.as_slice(), b.as_slice())));
    }
    Ok(Grid::from_fn(w - 2, h - 2, |x, y| {
        let mut wa = [0.0; 9];
        let mut wb = [0.0; 9];
        for j in 0..3 {
            for i in 0..3 {
                wa[j * 3 + i] = a[(x + i, y + j)];
                wb[j * 3 + i] = b[(x + i, y + j)];
            }
        }
        ssim_window(&wa, &wb)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_windows() {
        let a: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        assert!((ssim_window(&a, &a) - 1.0).abs() < 1e-15);
        assert!(ssim_loss(ssim_window(&a, &a)).abs() < 1e-15);
    }

    #[test]
    fn constant_black_against_white() {
        let a = Grid::filled(3, 3, 0.0);
        let b = Grid::filled(3, 3, 1.0);
        let s = ssim_map(&a, &b).unwrap()[0];
        // Closed form with zero variances: C1 / (1 + C1).
        assert!((s - C1 / (1.0 + C1)).abs() < 1e-15);
        assert!(s < 0.01);
        assert!(ssim_loss(s) > 0.49);
    }

    #[test]
    fn map_has_valid_mode_shape() {
        let a = Grid::filled(7, 5, 0.3);
        assert_eq!(ssim_map(&a, &a).unwrap().dims(), (5, 3));
        assert!(ssim_map(&a, &Grid::filled(5, 5, 0.3)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4, 0.7, 0.6, 0.8];
        let b = [0.2, 0.4, 0.35, 0.8, 0.25, 0.5, 0.6, 0.65, 0.7];
        let mut g = [0.0; 9];
        ssim_window_grad(&a, &b, Some(&mut g));
        let eps = 1e-6;
        for i in 0..9 {
            let mut bp = b;
            let mut bm = b;
            bp[i] += eps;
            bm[i] -= eps;
            let fd = (ssim_window(&a, &bp) - ssim_window(&a, &bm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest::proptest! {
        #[test]
        fn symmetric(a in proptest::collection::vec(0.0f64..1.0, 9), b in proptest::collection::vec(0.0f64..1.0, 9)) {
            proptest::prop_assert!((ssim_window(&a, &b) - ssim_window(&b, &a)).abs() < 1e-14);
        }
    }
}
