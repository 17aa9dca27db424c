//! Patch-based photometric consistency between a target view and warped
//! source views, plus edge-aware depth smoothness.

mod smooth;
mod ssim;

pub use smooth::smoothness_loss;
pub use ssim::{ssim_loss, ssim_map, ssim_window, ssim_window_grad, C1, C2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{Rgb, RgbImage};
use crate::loss::LossTerm;

/// Square patches of `size × size` taps spaced `dilation` pixels apart,
/// anchored every `stride` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub size: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 3,
            dilation: 1,
            stride: 4,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 1 && self.dilation >= 1 && self.stride >= 1 {
            Ok(())
        } else {
            Err(Error::input(
                "patch size must be odd, dilation and stride >= 1",
            ))
        }
    }

    fn reach(&self) -> usize {
        self.size / 2 * self.dilation
    }

    /// Row-major tap offsets relative to the anchor.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let half = (self.size / 2) as isize;
        let d = self.dilation as isize;
        let mut out = Vec::with_capacity(self.size * self.size);
        for j in -half..=half {
            for i in -half..=half {
                out.push((i * d, j * d));
            }
        }
        out
    }

    /// Anchors whose whole patch lies inside a `width × height` target.
    pub fn anchors(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let r = self.reach();
        let mut out = Vec::new();
        if width <= 2 * r || height <= 2 * r {
            return out;
        }
        for y in (r..height - r).step_by(self.stride) {
            for x in (r..width - r).step_by(self.stride) {
                out.push((x, y));
            }
        }
        out
    }
}

/// A bilinear sample and its derivative with respect to the target depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub u: f64,
    pub v: f64,
    pub color: Rgb,
    pub d_color_d_depth: Rgb,
}

/// Warps target pixel `(x, y)` at `depth` into `source` and samples it.
/// `None` when the point lands behind the source camera or outside the
/// image.
pub fn warp_pixel(
    source: &RgbImage,
    k: &CameraIntrinsics,
    pose: &Pose,
    x: usize,
    y: usize,
    depth: f64,
) -> Option<WarpSample> {
    let ray = k.ray(x as f64, y as f64);
    let e = pose.rotation * ray;
    let p = e * depth + pose.translation;
    if !(p.z > 0.0) {
        return None;
    }
    let (u, v) = k.project(&p)?;
    let (w, h) = source.dims();
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let z2 = p.z * p.z;
    let du = k.fx * (e.x * p.z - p.x * e.z) / z2;
    let dv = k.fy * (e.y * p.z - p.y * e.z) / z2;

    let x0 = (u.floor() as usize).min(w - 1);
    let y0 = (v.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let (c00, c10, c01, c11) = (
        source[(x0, y0)],
        source[(x1, y0)],
        source[(x0, y1)],
        source[(x1, y1)],
    );
    let mut color = [0.0; 3];
    let mut grad = [0.0; 3];
    for c in 0..3 {
        let top = c00[c] + fx * (c10[c] - c00[c]);
        let bottom = c01[c] + fx * (c11[c] - c01[c]);
        color[c] = top + fy * (bottom - top);
        let d_du = (1.0 - fy) * (c10[c] - c00[c]) + fy * (c11[c] - c01[c]);
        let d_dv = bottom - top;
        grad[c] = d_du * du + d_dv * dv;
    }
    Some(WarpSample {
        u,
        v,
        color,
        d_color_d_depth: grad,
    })
}

/// One warped target patch.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPatch {
    pub anchor: (usize, usize),
    /// Flat target pixel indices, row-major over the patch taps.
    pub pixels: Vec<usize>,
    /// Empty when the patch is masked out.
    pub samples: Vec<WarpSample>,
}

impl WarpedPatch {
    pub fn in_bounds(&self) -> bool {
        !self.samples.is_empty()
    }
}

/// Backprojects every tap of every patch with `depth`, moves it into the
/// source frame with `pose` and samples the source bilinearly. A patch with
/// any invalid depth or any out-of-view tap is masked as a whole.
pub fn warp_patches(
    source: &RgbImage,
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    patches: &PatchConfig,
) -> Result<Vec<WarpedPatch>> {
    k.check_grid(&depth.values)?;
    k.check_grid(source)?;
    patches.validate()?;
    let offsets = patches.offsets();
    let w = depth.width();
    Ok(patches
        .anchors(depth.width(), depth.height())
        .into_iter()
        .map(|(ax, ay)| {
            let pixels: Vec<usize> = offsets
                .iter()
                .map(|&(dx, dy)| (ay as isize + dy) as usize * w + (ax as isize + dx) as usize)
                .collect();
            let samples: Option<Vec<WarpSample>> = pixels
                .iter()
                .map(|&p| {
                    if !depth.valid[p] {
                        return None;
                    }
                    warp_pixel(source, k, pose, p % w, p / w, depth.values[p])
                })
                .collect();
            WarpedPatch {
                anchor: (ax, ay),
                pixels,
                samples: samples.unwrap_or_default(),
            }
        })
        .collect())
}

/// Photometric error of one patch against its warped samples,
/// `ω · mean((1 - SSIM)/2) + (1 - ω) · mean|I_t - I_s|`, and (optionally)
/// its derivative with respect to each sample channel.
fn patch_error(
    target: &[Rgb],
    warped: &[Rgb],
    size: usize,
    omega: f64,
    mut grad: Option<&mut [Rgb]>,
) -> f64 {
    let n = target.len();
    let l1_scale = (1.0 - omega) / (3 * n) as f64;
    let mut l1 = 0.0;
    for i in 0..n {
        for c in 0..3 {
            let r = warped[i][c] - target[i][c];
            l1 += r.abs();
            if let Some(g) = grad.as_deref_mut() {
                g[i][c] += l1_scale
                    * if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
            }
        }
    }

    // 3×3 windows in valid mode, or one window for tiny patches.
    let windows: Vec<Vec<usize>> = if size >= 3 {
        let mut out = Vec::new();
        for wy in 0..=size - 3 {
            for wx in 0..=size - 3 {
                let mut idx = Vec::with_capacity(9);
                for j in 0..3 {
                    for i in 0..3 {
                        idx.push((wy + j) * size + wx + i);
                    }
                }
                out.push(idx);
            }
        }
        out
    } else {
        vec![(0..n).collect()]
    };
    let ssim_scale = omega / (3 * windows.len()) as f64;
    let mut ssim_term = 0.0;
    for idx in &windows {
        for c in 0..3 {
            let a: Vec<f64> = idx.iter().map(|&i| target[i][c]).collect();
            let b: Vec<f64> = idx.iter().map(|&i| warped[i][c]).collect();
            let s = match grad.as_deref_mut() {
                Some(g) => {
                    let mut gs = vec![0.0; idx.len()];
                    let s = ssim_window_grad(&a, &b, Some(&mut gs));
                    // d/db of (1 - S)/2 is -dS/db / 2.
                    for (k, &i) in idx.iter().enumerate() {
                        g[i][c] -= 0.5 * ssim_scale * gs[k];
                    }
                    s
                }
                None => ssim_window(&a, &b),
            };
            ssim_term += ssim_loss(s);
        }
    }
    omega * ssim_term / (3 * windows.len()) as f64 + (1.0 - omega) * l1 / (3 * n) as f64
}

/// A source view and the target-to-source transform.
#[derive(Debug, Clone)]
pub struct SourceView<'a> {
    pub image: &'a RgbImage,
    pub pose: Pose,
}

/// Patch photometric loss of `target` against one or more warped sources.
///
/// Per patch the error is minimized over the sources that see the whole
/// patch (ties keep the earlier source), then averaged over patches seen by
/// at least one source. The gradient flows through the bilinear sampling
/// and the warp into each tap's depth.
pub fn photometric_loss(
    target: &RgbImage,
    sources: &[SourceView<'_>],
    depth: &DepthMap,
    k: &CameraIntrinsics,
    patches: &PatchConfig,
    omega: f64,
    want_grad: bool,
) -> Result<LossTerm> {
    if sources.is_empty() {
        return Err(Error::input(
            "photometric loss needs at least one source view",
        ));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::input("omega must lie in [0, 1]"));
    }
    k.check_grid(target)?;
    let warped: Vec<Vec<WarpedPatch>> = sources
        .iter()
        .map(|s| warp_patches(s.image, depth, &s.pose, k, patches))
        .collect::<Result<_>>()?;

    let (w, h) = depth.dims();
    let mut term = LossTerm::zero(w, h, want_grad);
    let n_patches = warped[0].len();
    let mut seen = 0usize;
    let mut total = 0.0;
    let mut best_grad: Vec<Rgb> = Vec::new();
    let mut scratch: Vec<Rgb> = Vec::new();
    for pi in 0..n_patches {
        let pixels = &warped[0][pi].pixels;
        let tgt: Vec<Rgb> = pixels.iter().map(|&p| target[p]).collect();
        let mut best: Option<(f64, usize)> = None;
        for (si, per_source) in warped.iter().enumerate() {
            let patch = &per_source[pi];
            if !patch.in_bounds() {
                continue;
            }
            let colors: Vec<Rgb> = patch.samples.iter().map(|s| s.color).collect();
            let grad = if want_grad {
                scratch.clear();
                scratch.resize(pixels.len(), [0.0; 3]);
                Some(scratch.as_mut_slice())
            } else {
                None
            };
            let e = patch_error(&tgt, &colors, patches.size, omega, grad);
            if best.is_none_or(|(b, _)| e < b) {
                best = Some((e, si));
                if want_grad {
                    std::mem::swap(&mut best_grad, &mut scratch);
                }
            }
        }
        let Some((e, si)) = best else { continue };
        seen += 1;
        total += e;
        if let Some(g) = term.grad.as_mut() {
            for (t, &p) in pixels.iter().enumerate() {
                let ds = warped[si][pi].samples[t].d_color_d_depth;
                g[p] += best_grad[t][0] * ds[0] + best_grad[t][1] * ds[1] + best_grad[t][2] * ds[2];
            }
        }
    }
    if seen == 0 {
        return Ok(LossTerm::zero(w, h, want_grad));
    }
    let inv = 1.0 / seen as f64;
    term.value = total * inv;
    if let Some(g) = term.grad.as_mut() {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    }
    Ok(term)
}
