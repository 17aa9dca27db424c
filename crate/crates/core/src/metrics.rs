//! Depth and surface-normal evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, NormalMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rms: f64,
    pub absrel: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub within_11_25: f64,
    pub within_22_5: f64,
    pub within_30: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// RMS, AbsRel, Log10 and δ-accuracies over pixels valid in both maps.
///
/// With `median_scale`, `pred` is first multiplied by
/// `median(gt) / median(pred)`. Both maps are then capped at `cap` meters.
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    cap: f64,
    median_scale: bool,
) -> Result<DepthMetrics> {
    pred.values.check_dims(&gt.values)?;
    let idx: Vec<usize> = (0..gt.values.len())
        .filter(|&i| pred.valid[i] && gt.valid[i])
        .collect();
    if idx.is_empty() {
        return Err(Error::input("no pixel is valid in both depth maps"));
    }
    let scale = if median_scale {
        let mut p: Vec<f64> = idx.iter().map(|&i| pred.values[i]).collect();
        let mut g: Vec<f64> = idx.iter().map(|&i| gt.values[i]).collect();
        median(&mut g) / median(&mut p)
    } else {
        1.0
    };
    let n = idx.len() as f64;
    let (mut sq, mut rel, mut lg) = (0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    for &i in &idx {
        let p = (pred.values[i] * scale).min(cap);
        let g = gt.values[i].min(cap);
        sq += (p - g) * (p - g);
        rel += (p - g).abs() / g;
        lg += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        for (t, count) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(t as i32 + 1) {
                *count += 1;
            }
        }
    }
    Ok(DepthMetrics {
        rms: (sq / n).sqrt(),
        absrel: rel / n,
        log10: lg / n,
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
    })
}

/// Mean angular error and the fraction of pixels within 11.25°, 22.5° and
/// 30°, over pixels valid in both maps.
pub fn normal_metrics(pred: &NormalMap, gt: &NormalMap) -> Result<NormalMetrics> {
    pred.normals.check_dims(&gt.normals)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut within = [0usize; 3];
    for i in 0..gt.normals.len() {
        if !(pred.valid[i] && gt.valid[i]) {
            continue;
        }
        let c = pred.normals[i].dot(&gt.normals[i]).clamp(-1.0, 1.0);
        let angle = c.acos().to_degrees();
        sum += angle;
        count += 1;
        for (t, limit) in [11.25, 22.5, 30.0].iter().enumerate() {
            if angle < *limit {
                within[t] += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::input("no pixel is valid in both normal maps"));
    }
    let n = count as f64;
    Ok(NormalMetrics {
        mean_deg: sum / n,
        within_11_25: within[0] as f64 / n,
        within_22_5: within[1] as f64 / n,
        within_30: within[2] as f64 / n,
    })
}
