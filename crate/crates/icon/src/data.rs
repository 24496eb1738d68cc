//! Image/mask pairs: loading, normalization, joint augmentation.

use std::path::{Path, PathBuf};

use icon_core::ops::resample::resample_tensor;
use icon_core::ops::ResampleMode;
use icon_core::Tensor;
use rand::Rng;
use rayon::prelude::*;

use crate::config::DataConfig;
use crate::error::{CliError, Result};
use crate::imageio::{list_images, read_gray, read_rgb, Image8};

/// Masks are foreground where the resized value exceeds this.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PairPaths {
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Matched image/mask files of one split. A dataset directory holds
/// `images/` and `masks/` with one mask per image stem.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub split: String,
    pub pairs: Vec<PairPaths>,
}

impl DatasetIndex {
    pub fn from_dir(dir: &Path, split: &str) -> Result<Self> {
        let images = list_images(&dir.join("images"))?;
        let masks = list_images(&dir.join("masks"))?;
        let unmatched: Vec<&String> = images
            .keys()
            .filter(|k| !masks.contains_key(*k))
            .chain(masks.keys().filter(|k| !images.contains_key(*k)))
            .collect();
        if !unmatched.is_empty() {
            return Err(CliError::Validation(format!("{}: unmatched stems {:?}", dir.display(), unmatched)));
        }
        if images.is_empty() {
            return Err(CliError::Validation(format!("{}: no images", dir.display())));
        }
        let pairs =
            images.into_iter().map(|(name, image)| PairPaths { mask: masks[&name].clone(), name, image }).collect();
        Ok(Self { split: split.into(), pairs })
    }
}

/// A normalized image `[3,H,W]` and its binary mask `[1,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor<f64>,
    pub mask: Tensor<f64>,
}

fn to_tensor(img: &Image8) -> Tensor<f64> {
    let (c, h, w) = (img.channels, img.height, img.width);
    Tensor::from_fn(&[1, c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        img.data[p * c + ch] as f64 / 255.0
    })
}

fn resize(t: &Tensor<f64>, size: (usize, usize)) -> Tensor<f64> {
    let s = t.shape();
    if (s[2], s[3]) == size {
        return t.clone();
    }
    resample_tensor(t, size, ResampleMode::Bilinear).expect("4-d input and positive size")
}

fn normalize(rgb: &Tensor<f64>, cfg: &DataConfig) -> Tensor<f64> {
    let (_, _, h, w) = rgb.dims4().unwrap();
    Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        (rgb.data()[i] - cfg.mean[c]) / cfg.std[c]
    })
}

fn binarize(m: &Tensor<f64>) -> Tensor<f64> {
    let (_, _, h, w) = m.dims4().unwrap();
    Tensor::from_fn(&[1, h, w], |i| if m.data()[i] > MASK_THRESHOLD { 1.0 } else { 0.0 })
}

/// Builds a sample from decoded pixels, resizing both to `size` (H, W).
pub fn make_sample(name: &str, rgb: &Image8, mask: &Image8, size: (usize, usize), cfg: &DataConfig) -> Result<Sample> {
    if (rgb.width, rgb.height) != (mask.width, mask.height) {
        return Err(CliError::Validation(format!(
            "{name}: image is {}x{} but mask is {}x{}",
            rgb.width, rgb.height, mask.width, mask.height
        )));
    }
    Ok(Sample {
        name: name.into(),
        image: normalize(&resize(&to_tensor(rgb), size), cfg),
        mask: binarize(&resize(&to_tensor(mask), size)),
    })
}

pub fn load_pair(
    image: &Path,
    mask: &Path,
    size: (usize, usize),
    cfg: &DataConfig,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let rgb = read_rgb(image)?;
    let m = read_gray(mask)?;
    if (rgb.width, rgb.height) != (m.width, m.height) {
        return Err(CliError::format(
            mask,
            format!("mask is {}x{} but {} is {}x{}", m.width, m.height, image.display(), rgb.width, rgb.height),
        ));
    }
    let s = make_sample("", &rgb, &m, size, cfg)?;
    Ok((s.image, s.mask))
}

/// Loads every pair of `index` in parallel; output order follows the index.
pub fn load_dataset(index: &DatasetIndex, size: (usize, usize), cfg: &DataConfig) -> Result<Vec<Sample>> {
    index
        .pairs
        .par_iter()
        .map(|p| {
            let (image, mask) = load_pair(&p.image, &p.mask, size, cfg)?;
            Ok(Sample { name: p.name.clone(), image, mask })
        })
        .collect()
}

fn flip_w(t: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    let w = s[s.len() - 1];
    Tensor::from_fn(s, |i| t.data()[i - i % w + (w - 1 - i % w)])
}

fn crop(t: &Tensor<f64>, top: usize, left: usize, ch: usize, cw: usize) -> Tensor<f64> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Tensor::from_fn(&[1, c, ch, cw], |i| {
        let (k, r, col) = (i / (ch * cw), (i / cw) % ch, i % cw);
        t.data()[(k * h + top + r) * w + left + col]
    })
}

/// Random horizontal flip and random crop resized back to the original
/// extent, applied identically to image and mask.
pub fn augment<R: Rng + ?Sized>(s: &Sample, flip: bool, crop_scale: f64, rng: &mut R) -> Sample {
    let (mut image, mut mask) = (s.image.clone(), s.mask.clone());
    if flip && rng.random_bool(0.5) {
        image = flip_w(&image);
        mask = flip_w(&mask);
    }
    if crop_scale < 1.0 {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let f = rng.random_range(crop_scale..=1.0);
        let (ch, cw) = (((h as f64 * f).round() as usize).clamp(1, h), ((w as f64 * f).round() as usize).clamp(1, w));
        let (top, left) = (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw));
        let img = resize(&crop(&image, top, left, ch, cw), (h, w));
        image = img.reshaped(&[3, h, w]).unwrap();
        mask = binarize(&resize(&crop(&mask, top, left, ch, cw), (h, w)));
    }
    Sample { name: s.name.clone(), image, mask }
}

/// Stacks samples into `[B,3,H,W]` and `[B,1,H,W]` batches.
pub fn stack(samples: &[Sample]) -> (Tensor<f64>, Tensor<f64>) {
    let (h, w) = (samples[0].image.shape()[1], samples[0].image.shape()[2]);
    let b = samples.len();
    let img: Vec<f64> = samples.iter().flat_map(|s| s.image.data().iter().copied()).collect();
    let msk: Vec<f64> = samples.iter().flat_map(|s| s.mask.data().iter().copied()).collect();
    (Tensor::new(&[b, 3, h, w], img).unwrap(), Tensor::new(&[b, 1, h, w], msk).unwrap())
}
