//! Seeded synthetic-shapes dataset generator: colored shapes on a
//! low-frequency noise background, with the shape union as ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{write_pgm, write_ppm, DatasetManifest};
use crate::error::{Error, Result};
use crate::kernels::{bilinear_axis, bilinear_resize_plane};
use crate::tensor::Tensor;

const MIN_FG: f64 = 0.05;
const MAX_FG: f64 = 0.6;

#[derive(Clone, Copy)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Triangle { pts: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Shape::Triangle { pts } => {
                let sign = |a: (f64, f64), b: (f64, f64)| {
                    (x - b.0) * (a.1 - b.1) - (a.0 - b.0) * (y - b.1)
                };
                let d1 = sign(pts[0], pts[1]);
                let d2 = sign(pts[1], pts[2]);
                let d3 = sign(pts[2], pts[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

fn sample_shape(size: f64, rng: &mut ChaCha8Rng) -> Shape {
    match rng.gen_range(0..3u32) {
        0 => {
            let w = rng.gen_range(0.15..0.45) * size;
            let h = rng.gen_range(0.15..0.45) * size;
            let x0 = rng.gen_range(0.02 * size..size - w - 0.02 * size);
            let y0 = rng.gen_range(0.02 * size..size - h - 0.02 * size);
            Shape::Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }
        }
        1 => {
            let rx = rng.gen_range(0.08..0.22) * size;
            let ry = rng.gen_range(0.08..0.22) * size;
            let cx = rng.gen_range(rx + 0.02 * size..size - rx - 0.02 * size);
            let cy = rng.gen_range(ry + 0.02 * size..size - ry - 0.02 * size);
            Shape::Ellipse { cx, cy, rx, ry }
        }
        _ => loop {
            let r = rng.gen_range(0.12..0.3) * size;
            let cx = rng.gen_range(r + 0.02 * size..size - r - 0.02 * size);
            let cy = rng.gen_range(r + 0.02 * size..size - r - 0.02 * size);
            let mut pts = [(0.0, 0.0); 3];
            for p in &mut pts {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let rad = rng.gen_range(0.5..1.0) * r;
                *p = (cx + rad * ang.cos(), cy + rad * ang.sin());
            }
            let area = ((pts[1].0 - pts[0].0) * (pts[2].1 - pts[0].1)
                - (pts[2].0 - pts[0].0) * (pts[1].1 - pts[0].1))
                .abs()
                / 2.0;
            if area > 0.004 * size * size {
                break Shape::Triangle { pts };
            }
        },
    }
}

fn render_shape_mask(shape: &Shape, size: usize) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            mask[y * size + x] = shape.contains(x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    mask
}

/// Low-frequency background: per-channel coarse noise grid upsampled to
/// full resolution around a random base color.
fn render_background(size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    const GRID: usize = 5;
    let ys = bilinear_axis::<f32>(GRID, size);
    let xs = bilinear_axis::<f32>(GRID, size);
    let mut bg = vec![0.0f32; 3 * size * size];
    for c in 0..3 {
        let base: f32 = rng.gen_range(0.2..0.8);
        let coarse: Vec<f32> = (0..GRID * GRID)
            .map(|_| (base + rng.gen_range(-0.15..0.15f32)).clamp(0.02, 0.98))
            .collect();
        bilinear_resize_plane(
            &coarse,
            GRID,
            &mut bg[c * size * size..][..size * size],
            size,
            &ys,
            &xs,
        );
    }
    bg
}

fn shape_color(bg_mean: f32, rng: &mut ChaCha8Rng) -> [f32; 3] {
    for _ in 0..50 {
        let color = [
            rng.gen_range(0.02..0.98f32),
            rng.gen_range(0.02..0.98),
            rng.gen_range(0.02..0.98),
        ];
        let mean = (color[0] + color[1] + color[2]) / 3.0;
        if (mean - bg_mean).abs() >= 0.25 {
            return color;
        }
    }
    // Deterministic fallback keeps the contrast guarantee.
    let v = if bg_mean > 0.5 { 0.05 } else { 0.95 };
    [v, v, v]
}

fn render_sample(size: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<bool>) {
    for _ in 0..64 {
        let bg = render_background(size, rng);
        let bg_mean = bg.iter().sum::<f32>() / bg.len() as f32;
        let mut image = bg;
        let mut union = vec![false; size * size];
        let shapes = rng.gen_range(1..=3u32);
        let mut placed = 0;
        for _ in 0..shapes {
            for _attempt in 0..40 {
                let shape = sample_shape(size as f64, rng);
                let mask = render_shape_mask(&shape, size);
                if mask.iter().zip(&union).any(|(&m, &u)| m && u) {
                    continue;
                }
                let color = shape_color(bg_mean, rng);
                for (p, &m) in mask.iter().enumerate() {
                    if m {
                        union[p] = true;
                        for c in 0..3 {
                            image[c * size * size + p] = color[c];
                        }
                    }
                }
                placed += 1;
                break;
            }
        }
        let frac = union.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
        if placed >= 1 && (MIN_FG..=MAX_FG).contains(&frac) {
            return (image, union);
        }
    }
    // Rejection exhausted: fall back to a centered rectangle (~12% cover).
    let mut rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
    let bg = render_background(size, &mut rng2);
    let bg_mean = bg.iter().sum::<f32>() / bg.len() as f32;
    let mut image = bg;
    let s = size as f64;
    let shape = Shape::Rect {
        x0: 0.325 * s,
        y0: 0.325 * s,
        x1: 0.675 * s,
        y1: 0.675 * s,
    };
    let union = render_shape_mask(&shape, size);
    let color = shape_color(bg_mean, &mut rng2);
    for (p, &m) in union.iter().enumerate() {
        if m {
            for c in 0..3 {
                image[c * size * size + p] = color[c];
            }
        }
    }
    (image, union)
}

/// Generate `count` image/mask pairs of side `size` under `out_dir`
/// (subdirectories `img/` and `msk/` plus `manifest.tsv`). Every mask has
/// a foreground fraction in `[0.05, 0.6]`; output bytes depend only on
/// the arguments.
pub fn gen_synthetic(count: usize, size: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if size < 16 {
        return Err(Error::Config(format!("size must be at least 16, got {size}")));
    }
    std::fs::create_dir_all(out_dir.join("img"))?;
    std::fs::create_dir_all(out_dir.join("msk"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (image, union) = render_sample(size, &mut rng);
        let img_t = Tensor::from_vec(vec![3, size, size], image)?;
        let msk_t = Tensor::from_fn([1, size, size], |p| if union[p] { 1.0 } else { 0.0 });
        let img_rel = format!("img/{i:05}.ppm");
        let msk_rel = format!("msk/{i:05}.pgm");
        write_ppm(&out_dir.join(&img_rel), &img_t)?;
        write_pgm(&out_dir.join(&msk_rel), &msk_t)?;
        entries.push((out_dir.join(&img_rel), out_dir.join(&msk_rel)));
        rel.push((img_rel, msk_rel));
    }
    DatasetManifest::write(&out_dir.join("manifest.tsv"), &rel)?;
    Ok(DatasetManifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().display().to_string();
                    files.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn same_seed_gives_byte_identical_datasets() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(6, 32, 99, a.path()).unwrap();
        gen_synthetic(6, 32, 99, b.path()).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    }

    #[test]
    fn masks_are_valid_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_synthetic(10, 48, 3, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 10);
        for (_, msk) in &manifest.entries {
            let r = crate::data::read_image(msk).unwrap();
            // Binary after >=128 thresholding, nonempty, not full-frame.
            assert!(r.data.iter().all(|&b| b == 0 || b == 255));
            let fg = r.data.iter().filter(|&&b| b >= 128).count();
            let frac = fg as f64 / r.data.len() as f64;
            assert!(
                (MIN_FG..=MAX_FG).contains(&frac),
                "foreground fraction {frac}"
            );
        }
    }

    #[test]
    fn manifest_lists_existing_pairs() {
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic(4, 32, 5, dir.path()).unwrap();
        let m = DatasetManifest::read(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(m.entries.len(), 4);
        let samples = m.load_samples().unwrap();
        assert_eq!(samples.len(), 4);
        assert_eq!(samples[0].image.shape(), &[3, 32, 32]);
        assert_eq!(samples[0].mask.shape(), &[1, 32, 32]);
    }
}
