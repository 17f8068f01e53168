//! Image IO, the training preprocessing pipeline, and the synthetic
//! shapes dataset generator.

pub mod pnm;
mod synth;

pub use pnm::{parse_pnm, read_image, write_pgm, write_ppm, Raster};
pub use synth::gen_synthetic;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{bilinear_axis, bilinear_resize_plane};
use crate::tensor::Tensor;

/// One training example: an RGB image and its mask, both scaled to `[0,1]`.
pub struct Sample {
    pub name: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

/// Ordered (image, mask) path pairs backing a dataset.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl DatasetManifest {
    /// Parse a manifest file: one `image_path<TAB>mask_path` per line with
    /// `#` comments; relative paths resolve against the manifest location.
    /// Every listed file must exist and sample names must be unique.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        let mut names = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (img, msk) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!(
                    "manifest line {} is not image<TAB>mask: {line:?}",
                    lineno + 1
                ))
            })?;
            let img = base.join(img);
            let msk = base.join(msk);
            for p in [&img, &msk] {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "manifest references missing file {}",
                        p.display()
                    )));
                }
            }
            let name = stem_of(&img);
            if !names.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate sample name {name:?}")));
            }
            entries.push((img, msk));
        }
        if entries.is_empty() {
            return Err(Error::Config(format!(
                "manifest {} lists no samples",
                path.display()
            )));
        }
        Ok(DatasetManifest { entries })
    }

    pub fn write(path: &Path, relative_entries: &[(String, String)]) -> Result<()> {
        let mut out = Vec::new();
        for (img, msk) in relative_entries {
            writeln!(out, "{img}\t{msk}")?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|(img, msk)| {
                Ok(Sample {
                    name: stem_of(img),
                    image: image_tensor(&read_image(img)?),
                    mask: mask_tensor(&read_image(msk)?)?,
                })
            })
            .collect()
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `[3,H,W]` tensor in `[0,1]`; grayscale rasters are replicated per channel.
pub fn image_tensor(r: &Raster) -> Tensor<f32> {
    let plane = r.height * r.width;
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        let cc = if r.channels == 3 { c } else { 0 };
        data.extend(
            (0..plane).map(|p| r.data[p * r.channels + cc] as f32 / 255.0),
        );
    }
    Tensor::from_vec(vec![3, r.height, r.width], data).expect("sized by construction")
}

/// `[1,H,W]` tensor in `[0,1]` from a grayscale raster.
pub fn mask_tensor(r: &Raster) -> Result<Tensor<f32>> {
    if r.channels != 1 {
        return Err(Error::Config(
            "masks must be grayscale (PGM)".into(),
        ));
    }
    let data = r.data.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(vec![1, r.height, r.width], data)
}

/// Plain bilinear resize of a `[C,H,W]` tensor (not graph-recorded).
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let s = t.shape();
    assert_eq!(s.len(), 3, "resize_bilinear expects [C,H,W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    let ys = bilinear_axis::<f32>(h, out_h);
    let xs = bilinear_axis::<f32>(w, out_w);
    let data = t.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ci in 0..c {
        bilinear_resize_plane(
            &data[ci * h * w..][..h * w],
            w,
            &mut out[ci * out_h * out_w..][..out_h * out_w],
            out_w,
            &ys,
            &xs,
        );
    }
    Tensor::from_vec(vec![c, out_h, out_w], out).expect("sized by construction")
}

fn crop(t: &Tensor<f32>, dy: usize, dx: usize, size: usize) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(dy + size <= h && dx + size <= w);
    let data = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ci in 0..c {
        for i in 0..size {
            let base = ci * h * w + (dy + i) * w + dx;
            out.extend_from_slice(&data[base..base + size]);
        }
    }
    Tensor::from_vec(vec![c, size, size], out).expect("sized by construction")
}

fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = t.data();
    let mut out = Vec::with_capacity(data.len());
    for ci in 0..c {
        for i in 0..h {
            let row = &data[ci * h * w + i * w..][..w];
            out.extend(row.iter().rev());
        }
    }
    Tensor::from_vec(vec![c, h, w], out).expect("sized by construction")
}

/// Resize target used before cropping to `size` (320 for size 288; scaled
/// proportionally for toy sizes).
pub fn resize_target(size: usize) -> usize {
    (10 * size).div_ceil(9)
}

/// The shared geometric transform of one training draw: bilinear resize to
/// `resize_target(size)`, crop at `(dy, dx)`, optional horizontal flip.
/// Image and mask receive identical geometry.
pub fn apply_geometry(
    sample: &Sample,
    size: usize,
    dy: usize,
    dx: usize,
    flip: bool,
) -> (Tensor<f32>, Tensor<f32>) {
    let r = resize_target(size);
    let mut img = crop(&resize_bilinear(&sample.image, r, r), dy, dx, size);
    let mut msk = crop(&resize_bilinear(&sample.mask, r, r), dy, dx, size);
    if flip {
        img = hflip(&img);
        msk = hflip(&msk);
    }
    (img, msk)
}

/// Training preprocessing: resize, random crop, 50% horizontal flip, with
/// all randomness drawn from `rng` in a fixed order. The mask keeps its
/// continuous interpolated values.
pub fn preprocess_train<R: Rng>(
    sample: &Sample,
    size: usize,
    rng: &mut R,
) -> (Tensor<f32>, Tensor<f32>) {
    let r = resize_target(size);
    let dy = rng.gen_range(0..=r - size);
    let dx = rng.gen_range(0..=r - size);
    let flip = rng.gen_bool(0.5);
    apply_geometry(sample, size, dy, dx, flip)
}

/// Test-time preprocessing: resize to `target` and remember the original
/// dimensions so the predicted map can be restored.
pub fn preprocess_test(r: &Raster, target: usize) -> (Tensor<f32>, (usize, usize)) {
    let img = image_tensor(r);
    let resized = if (r.height, r.width) == (target, target) {
        img
    } else {
        resize_bilinear(&img, target, target)
    };
    let data = resized.to_vec();
    let batched = Tensor::from_vec(vec![1, 3, target, target], data).expect("same length");
    (batched, (r.height, r.width))
}

/// Restore a predicted `[1,1,h,w]` map to the original image dimensions.
pub fn restore_map(map: &Tensor<f32>, orig: (usize, usize)) -> Result<Tensor<f32>> {
    let s = map.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 1 {
        return Err(Error::Shape(format!(
            "restore_map expects [1,1,h,w], got {:?}",
            s
        )));
    }
    let flat = Tensor::from_vec(vec![1, s[2], s[3]], map.to_vec())?;
    Ok(resize_bilinear(&flat, orig.0, orig.1))
}

/// Stack per-sample `[C,S,S]` pairs into `[B,C,S,S]` batch tensors.
pub fn stack_batch(items: &[(Tensor<f32>, Tensor<f32>)]) -> (Tensor<f32>, Tensor<f32>) {
    assert!(!items.is_empty());
    let (is, ms) = (items[0].0.shape().to_vec(), items[0].1.shape().to_vec());
    let mut images = Vec::with_capacity(items.len() * items[0].0.numel());
    let mut masks = Vec::with_capacity(items.len() * items[0].1.numel());
    for (img, msk) in items {
        images.extend_from_slice(&img.data());
        masks.extend_from_slice(&msk.data());
    }
    let b = items.len();
    (
        Tensor::from_vec(vec![b, is[0], is[1], is[2]], images).expect("sized"),
        Tensor::from_vec(vec![b, ms[0], ms[1], ms[2]], masks).expect("sized"),
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn delta_sample(size: usize, y: usize, x: usize) -> Sample {
        let image = Tensor::from_fn([3, size, size], |i| {
            let p = i % (size * size);
            if p == y * size + x {
                1.0
            } else {
                0.0
            }
        });
        let mask = Tensor::from_fn([1, size, size], |p| {
            if p == y * size + x {
                1.0
            } else {
                0.0
            }
        });
        Sample {
            name: "delta".into(),
            image,
            mask,
        }
    }

    #[test]
    fn forced_zero_offset_crop_is_top_left_window() {
        let size = 288;
        let r = resize_target(size);
        assert_eq!(r, 320);
        // Input already at the resize target: the resize is an identity and
        // a (0,0) crop picks the top-left window.
        let image = Tensor::from_fn([3, 320, 320], |i| ((i % 97) as f32) / 96.0);
        let mask = Tensor::from_fn([1, 320, 320], |i| ((i % 7) as f32) / 6.0);
        let sample = Sample {
            name: "w".into(),
            image: image.clone(),
            mask,
        };
        let (img, _) = apply_geometry(&sample, size, 0, 0, false);
        assert_eq!(img.shape(), &[3, 288, 288]);
        let full = image.to_vec();
        let got = img.to_vec();
        for c in 0..3 {
            for i in 0..288 {
                for j in 0..288 {
                    assert_eq!(
                        got[c * 288 * 288 + i * 288 + j],
                        full[c * 320 * 320 + i * 320 + j]
                    );
                }
            }
        }
    }

    #[test]
    fn double_flip_restores_crop() {
        let sample = delta_sample(36, 10, 20);
        let (img1, msk1) = apply_geometry(&sample, 18, 1, 2, false);
        let (img2, msk2) = apply_geometry(&sample, 18, 1, 2, true);
        assert_eq!(hflip(&img2).to_vec(), img1.to_vec());
        assert_eq!(hflip(&msk2).to_vec(), msk1.to_vec());
    }

    #[test]
    fn image_and_mask_share_geometry_across_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let size = 32;
            let y = 4 + (trial * 7) % 24;
            let x = 4 + (trial * 11) % 24;
            let sample = delta_sample(size, y, x);
            let (img, msk) = preprocess_train(&sample, 16, &mut rng);
            let id = img.to_vec();
            let md = msk.to_vec();
            let img_peak = (0..256)
                .max_by(|&a, &b| id[a].partial_cmp(&id[b]).unwrap())
                .unwrap();
            let msk_peak = (0..256)
                .max_by(|&a, &b| md[a].partial_cmp(&md[b]).unwrap())
                .unwrap();
            // The delta may fall outside the crop; when visible, the peaks
            // of the two maps must coincide.
            if md[msk_peak] > 0.05 && id[img_peak] > 0.05 {
                assert_eq!(img_peak, msk_peak, "trial {trial}");
            }
        }
    }

    #[test]
    fn test_preprocessing_records_original_size() {
        let r = Raster {
            channels: 3,
            height: 480,
            width: 640,
            data: vec![7u8; 480 * 640 * 3],
        };
        let (t, orig) = preprocess_test(&r, 320);
        assert_eq!(t.shape(), &[1, 3, 320, 320]);
        assert_eq!(orig, (480, 640));

        let map = Tensor::zeros([1, 1, 320, 320]);
        let restored = restore_map(&map, orig).unwrap();
        assert_eq!(restored.shape(), &[1, 480, 640]);
    }

    #[test]
    fn identity_size_test_preprocess_is_unchanged() {
        let data: Vec<u8> = (0..320 * 320 * 3).map(|i| (i % 251) as u8).collect();
        let r = Raster {
            channels: 3,
            height: 320,
            width: 320,
            data,
        };
        let (t, _) = preprocess_test(&r, 320);
        let expect = image_tensor(&r);
        assert_eq!(t.to_vec(), expect.to_vec());
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.ppm");
        let msk = dir.path().join("a.pgm");
        write_ppm(&img, &Tensor::full([3, 2, 2], 0.5)).unwrap();
        write_pgm(&msk, &Tensor::full([1, 2, 2], 1.0)).unwrap();
        let mpath = dir.path().join("manifest.tsv");
        DatasetManifest::write(&mpath, &[("a.ppm".into(), "a.pgm".into())]).unwrap();
        let m = DatasetManifest::read(&mpath).unwrap();
        assert_eq!(m.entries.len(), 1);
        let samples = m.load_samples().unwrap();
        assert_eq!(samples[0].name, "a");
        assert_eq!(samples[0].image.shape(), &[3, 2, 2]);

        // Missing files are rejected.
        DatasetManifest::write(&mpath, &[("gone.ppm".into(), "a.pgm".into())]).unwrap();
        assert!(DatasetManifest::read(&mpath).is_err());
    }
}
