//! Saliency evaluation measures: MAE, maximal F-measure, S-measure and
//! E-measure, plus dataset-level aggregation and the TSV report writer.
//!
//! Predictions are continuous maps in `[0,1]`; ground truths are binary
//! masks. All statistics run in f64.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binarization policy for the E-measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmThresholdMode {
    /// Threshold at `min(1, 2*mean(P))`.
    Adaptive,
    /// Maximum over the same threshold grid the F-measure sweeps.
    MaxSweep,
}

#[derive(Clone, Copy, Debug)]
pub struct MetricConfig {
    /// F-measure beta^2 weighting precision over recall.
    pub beta2: f64,
    /// S-measure mix between object- and region-aware terms.
    pub alpha: f64,
    /// Number of evenly spaced binarization thresholds.
    pub thresholds: usize,
    pub eps: f64,
    pub em_mode: EmThresholdMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta2: 0.3,
            alpha: 0.5,
            thresholds: 256,
            eps: 1e-12,
            em_mode: EmThresholdMode::Adaptive,
        }
    }
}

/// Plain owned map; unlike tensors this is Send and can cross the rayon
/// boundary in dataset evaluation.
struct Map {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

fn to_map<T: Scalar>(t: &Tensor<T>) -> Result<Map> {
    let (h, w) = match t.shape() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        [1, 1, h, w] => (*h, *w),
        other => {
            return Err(Error::Shape(format!(
                "expected a single-channel map, got {:?}",
                other
            )))
        }
    };
    Ok(Map {
        h,
        w,
        v: t.data().iter().map(|&x| x.to_f64()).collect(),
    })
}

fn same_size(p: &Map, g: &Map) -> Result<()> {
    if p.h != g.h || p.w != g.w {
        return Err(Error::Shape(format!(
            "map size mismatch: {}x{} vs {}x{}",
            p.h, p.w, g.h, g.w
        )));
    }
    Ok(())
}

fn binary(g: &Map) -> Vec<bool> {
    g.v.iter().map(|&v| v >= 0.5).collect()
}

/// Mean absolute per-pixel difference.
pub fn mae<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let p = to_map(pred)?;
    let g = to_map(gt)?;
    mae_map(&p, &g)
}

fn mae_map(p: &Map, g: &Map) -> Result<f64> {
    same_size(p, g)?;
    let sum: f64 = p.v.iter().zip(&g.v).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / (p.h * p.w) as f64)
}

/// Threshold grid: `k/256` for `k = 1..=256`. The grid starts strictly
/// above zero so the degenerate everything-positive binarization does not
/// enter the sweep.
fn threshold_grid(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| k as f64 / n as f64)
}

/// Maximum over binarization thresholds of the weighted F-measure.
/// Precision at empty-prediction thresholds is defined as 1 (so the score
/// is 0 through zero recall); an all-negative ground truth scores 0.
pub fn max_f_beta<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let p = to_map(pred)?;
    let g = to_map(gt)?;
    max_f_map(&p, &g, cfg)
}

fn max_f_map(p: &Map, g: &Map, cfg: &MetricConfig) -> Result<f64> {
    same_size(p, g)?;
    let gb = binary(g);
    let positives = gb.iter().filter(|&&b| b).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let n = cfg.thresholds;
    // level = number of grid thresholds a pixel satisfies: p >= k/n with
    // k = floor(p*n) (exact: multiplying by the grid size only scales).
    let mut pos = vec![0usize; n + 1];
    let mut neg = vec![0usize; n + 1];
    for (&v, &b) in p.v.iter().zip(&gb) {
        let level = ((v * n as f64).floor() as usize).min(n);
        if b {
            pos[level] += 1;
        } else {
            neg[level] += 1;
        }
    }
    let mut best = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for k in (1..=n).rev() {
        tp += pos[k];
        fp += neg[k];
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / positives as f64;
        let denom = cfg.beta2 * precision + recall;
        let f = if denom == 0.0 {
            0.0
        } else {
            (1.0 + cfg.beta2) * precision * recall / denom
        };
        if f > best {
            best = f;
        }
    }
    Ok(best)
}

/// Structure measure: alpha-weighted object-aware and region-aware
/// structural similarity, with the all-background / all-foreground edge
/// rules.
pub fn s_measure<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let p = to_map(pred)?;
    let g = to_map(gt)?;
    s_measure_map(&p, &g, cfg)
}

fn s_measure_map(p: &Map, g: &Map, cfg: &MetricConfig) -> Result<f64> {
    same_size(p, g)?;
    let gb = binary(g);
    let total = (p.h * p.w) as f64;
    let mu = gb.iter().filter(|&&b| b).count() as f64 / total;
    let mean_p: f64 = p.v.iter().sum::<f64>() / total;
    if mu == 0.0 {
        return Ok(1.0 - mean_p);
    }
    if mu == 1.0 {
        return Ok(mean_p);
    }
    let so = object_score(&p.v, &gb, mu, cfg.eps);
    let sr = region_score(p, &gb, cfg.eps);
    Ok((cfg.alpha * so + (1.0 - cfg.alpha) * sr).max(0.0))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

fn object_score(p: &[f64], gb: &[bool], mu: f64, eps: f64) -> f64 {
    let score = |mean: f64, std: f64| 2.0 * mean / (mean * mean + 1.0 + std + eps);
    let (fg_mean, fg_std, _) = mean_std(
        p.iter()
            .zip(gb)
            .filter(|(_, &b)| b)
            .map(|(&v, _)| v),
    );
    let (bg_mean, bg_std, _) = mean_std(
        p.iter()
            .zip(gb)
            .filter(|(_, &b)| !b)
            .map(|(&v, _)| 1.0 - v),
    );
    mu * score(fg_mean, fg_std) + (1.0 - mu) * score(bg_mean, bg_std)
}

/// Split both maps into four blocks at the ground-truth centroid, weight
/// each block by its pixel share, and score it with a structural
/// similarity statistic.
fn region_score(p: &Map, gb: &[bool], eps: f64) -> f64 {
    let (h, w) = (p.h, p.w);
    let total: f64 = gb.iter().filter(|&&b| b).count() as f64;
    // 1-based centroid, rounded; doubles as the top-left block extent.
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..h {
        for x in 0..w {
            if gb[y * w + x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    let cx = (sx / total).round() as usize;
    let cy = (sy / total).round() as usize;

    let area = (h * w) as f64;
    let mut score = 0.0;
    for (y0, y1, x0, x1) in [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ] {
        let n = (y1.saturating_sub(y0)) * (x1.saturating_sub(x0));
        if n == 0 {
            continue;
        }
        let weight = n as f64 / area;
        score += weight * block_ssim(p, gb, y0, y1, x0, x1, eps);
    }
    score
}

fn block_ssim(p: &Map, gb: &[bool], y0: usize, y1: usize, x0: usize, x1: usize, eps: f64) -> f64 {
    let n = ((y1 - y0) * (x1 - x0)) as f64;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            sum_x += p.v[y * p.w + x];
            sum_y += f64::from(gb[y * p.w + x]);
        }
    }
    let mx = sum_x / n;
    let my = sum_y / n;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cov = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = p.v[y * p.w + x] - mx;
            let dy = f64::from(gb[y * p.w + x]) - my;
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
    }
    let denom = n - 1.0 + eps;
    let (vx, vy, cov) = (vx / denom, vy / denom, cov / denom);
    let alpha = 4.0 * mx * my * cov;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Enhanced-alignment measure: combine the mean-centered agreement of the
/// binarized prediction and the ground truth through the alignment matrix.
pub fn e_measure<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let p = to_map(pred)?;
    let g = to_map(gt)?;
    e_measure_map(&p, &g, cfg)
}

fn e_measure_map(p: &Map, g: &Map, cfg: &MetricConfig) -> Result<f64> {
    same_size(p, g)?;
    let gb = binary(g);
    match cfg.em_mode {
        EmThresholdMode::Adaptive => {
            let mean_p: f64 = p.v.iter().sum::<f64>() / p.v.len() as f64;
            let tau = (2.0 * mean_p).min(1.0);
            // A zero threshold only arises for an all-zero prediction,
            // which binarizes to all-background.
            let b: Vec<bool> = p.v.iter().map(|&v| tau > 0.0 && v >= tau).collect();
            Ok(alignment_score(&b, &gb, cfg.eps))
        }
        EmThresholdMode::MaxSweep => {
            let mut best = 0.0f64;
            for tau in threshold_grid(cfg.thresholds) {
                let b: Vec<bool> = p.v.iter().map(|&v| v >= tau).collect();
                best = best.max(alignment_score(&b, &gb, cfg.eps));
            }
            Ok(best)
        }
    }
}

fn alignment_score(b: &[bool], gb: &[bool], eps: f64) -> f64 {
    let n = b.len() as f64;
    let sum: f64 = if gb.iter().all(|&v| !v) {
        b.iter().map(|&v| 1.0 - f64::from(v)).sum()
    } else if gb.iter().all(|&v| v) {
        b.iter().map(|&v| f64::from(v)).sum()
    } else {
        let mu_g = gb.iter().filter(|&&v| v).count() as f64 / n;
        let mu_b = b.iter().filter(|&&v| v).count() as f64 / n;
        b.iter()
            .zip(gb)
            .map(|(&bv, &gv)| {
                let db = f64::from(bv) - mu_b;
                let dg = f64::from(gv) - mu_g;
                let xi = 2.0 * dg * db / (dg * dg + db * db + eps);
                (xi + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    (sum / (n - 1.0 + eps)).clamp(0.0, 1.0)
}

/// Per-image scores plus the dataset flags.
#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub name: String,
    pub mae: f64,
    pub max_f_beta: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    /// Ground truth had no positive pixels (recall undefined; the
    /// F-measure is reported as 0 by convention).
    pub empty_ground_truth: bool,
}

/// Dataset evaluation result: per-image records, skipped inputs with
/// reasons, and unweighted means over the scored images.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub skipped: Vec<(String, String)>,
    pub mean_mae: f64,
    pub mean_max_f_beta: f64,
    pub mean_s_measure: f64,
    pub mean_e_measure: f64,
}

/// Input to dataset evaluation: a name plus either the loaded
/// (prediction, ground truth) pair or the reason it could not be loaded.
pub type PairInput = (String, Result<(Tensor<f32>, Tensor<f32>)>);

pub fn evaluate_dataset(pairs: Vec<PairInput>, cfg: &MetricConfig) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Config("no image pairs to evaluate".into()));
    }
    // Tensors are thread-confined; convert to plain maps before fanning
    // the per-image work out to the pool.
    let staged: Vec<(String, std::result::Result<(Map, Map), String>)> = pairs
        .into_iter()
        .map(|(name, loaded)| {
            let maps = loaded
                .and_then(|(p, g)| Ok((to_map(&p)?, to_map(&g)?)))
                .map_err(|e| e.to_string());
            (name, maps)
        })
        .collect();
    let results: Vec<(String, std::result::Result<ImageMetrics, String>)> = staged
        .into_par_iter()
        .map(|(name, maps)| {
            let scored = maps.and_then(|(p, g)| {
                image_metrics(&name, &p, &g, cfg).map_err(|e| e.to_string())
            });
            (name, scored)
        })
        .collect();

    let mut report = MetricReport::default();
    for (name, r) in results {
        match r {
            Ok(m) => report.images.push(m),
            Err(reason) => report.skipped.push((name, reason)),
        }
    }
    if report.images.is_empty() {
        return Err(Error::Config("every image pair was skipped".into()));
    }
    let n = report.images.len() as f64;
    report.mean_mae = report.images.iter().map(|m| m.mae).sum::<f64>() / n;
    report.mean_max_f_beta = report.images.iter().map(|m| m.max_f_beta).sum::<f64>() / n;
    report.mean_s_measure = report.images.iter().map(|m| m.s_measure).sum::<f64>() / n;
    report.mean_e_measure = report.images.iter().map(|m| m.e_measure).sum::<f64>() / n;
    Ok(report)
}

fn image_metrics(name: &str, p: &Map, g: &Map, cfg: &MetricConfig) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        name: name.to_string(),
        mae: mae_map(p, g)?,
        max_f_beta: max_f_map(p, g, cfg)?,
        s_measure: s_measure_map(p, g, cfg)?,
        e_measure: e_measure_map(p, g, cfg)?,
        empty_ground_truth: g.v.iter().all(|&v| v < 0.5),
    })
}

/// Render the report: `#`-prefixed notes, one TSV line per image with six
/// decimal places, and the final MEAN line.
pub fn render_report(report: &MetricReport) -> String {
    let mut out = String::new();
    for (name, reason) in &report.skipped {
        out.push_str(&format!("# skipped\t{name}\t{reason}\n"));
    }
    for m in &report.images {
        if m.empty_ground_truth {
            out.push_str(&format!(
                "# empty-ground-truth\t{}\tF-measure reported as 0\n",
                m.name
            ));
        }
    }
    for m in &report.images {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            m.name, m.mae, m.max_f_beta, m.s_measure, m.e_measure
        ));
    }
    out.push_str(&format!(
        "MEAN\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
        report.mean_mae, report.mean_max_f_beta, report.mean_s_measure, report.mean_e_measure
    ));
    out
}
