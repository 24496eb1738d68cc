//! Saliency maps for a directory of images.

use std::path::{Path, PathBuf};

use icon_core::ops::resample::resample_tensor;
use icon_core::ops::ResampleMode;

use crate::checkpoint::Checkpoint;
use crate::config::{DataConfig, Settings};
use crate::data::make_sample;
use crate::error::Result;
use crate::imageio::{list_images, read_rgb, write_image, Image8};
use crate::model::Model;

/// Nearest positive multiple of 32.
pub fn network_side(v: usize) -> usize {
    (((v + 16) / 32) * 32).max(32)
}

/// Probability map at the image's own resolution. Images whose sides are
/// not multiples of 32 are resized for the network and the map is resized
/// back, with a warning.
pub fn predict_image(model: &Model, img: &Image8, data: &DataConfig, label: &str) -> Result<Vec<f64>> {
    let (h, w) = (img.height, img.width);
    let size = (network_side(h), network_side(w));
    if size != (h, w) {
        eprintln!("warning: {label} is {w}x{h}; resized to {}x{} for the network", size.1, size.0);
    }
    let blank = Image8 { width: w, height: h, channels: 1, data: vec![0; w * h] };
    let s = make_sample(label, img, &blank, size, data)?;
    let x = s.image.reshaped(&[1, 3, size.0, size.1])?;
    let mut p = model.predict(&x)?;
    if size != (h, w) {
        p = resample_tensor(&p, (h, w), ResampleMode::Bilinear)?;
    }
    Ok(p.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

pub fn to_bytes(p: &[f64]) -> Vec<u8> {
    p.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Writes `out_dir/<stem>.png` for every image in `image_dir`; returns the
/// written paths in stem order.
pub fn infer_dir(checkpoint: &Path, image_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(checkpoint)?;
    let (model, settings): (Model, Settings) = Model::from_checkpoint(&ck)?;
    let mut written = Vec::new();
    for (stem, path) in list_images(image_dir)? {
        let img = read_rgb(&path)?;
        let p = predict_image(&model, &img, &settings.data, &path.display().to_string())?;
        let out = out_dir.join(format!("{stem}.png"));
        write_image(&out, &Image8 { width: img.width, height: img.height, channels: 1, data: to_bytes(&p) })?;
        written.push(out);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sides_and_bytes() {
        assert_eq!(network_side(64), 64);
        assert_eq!(network_side(70), 64);
        assert_eq!(network_side(80), 96);
        assert_eq!(network_side(5), 32);
        assert_eq!(to_bytes(&[0.0, 0.5, 1.0, 0.998, 0.002]), [0, 128, 255, 254, 1]);
    }
}
