//! 8-bit PNG and PNM (PGM/PPM) reading and writing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::error::{read, write, CliError, Result};

pub const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Interleaved 8-bit pixels, `channels` is 1 or 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = read(path)?;
    let format = ImageFormat::from_path(path).or_else(|_| image::guess_format(&bytes));
    let format = format.map_err(|e| CliError::format(path, e.to_string()))?;
    image::load_from_memory_with_format(&bytes, format).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<Image8> {
    let img = decode(path)?.to_rgb8();
    Ok(Image8 { width: img.width() as usize, height: img.height() as usize, channels: 3, data: img.into_raw() })
}

pub fn read_gray(path: &Path) -> Result<Image8> {
    let img = decode(path)?;
    if !matches!(img, DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_)) {
        eprintln!("warning: {} is not 8-bit grayscale; converting", path.display());
    }
    let img = img.to_luma8();
    Ok(Image8 { width: img.width() as usize, height: img.height() as usize, channels: 1, data: img.into_raw() })
}

/// Writes PNG, or binary PGM/PPM when the extension asks for it.
pub fn write_image(path: &Path, img: &Image8) -> Result<()> {
    let color = if img.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let format = if matches!(ext.as_str(), "pgm" | "ppm" | "pnm") { ImageFormat::Pnm } else { ImageFormat::Png };
    let mut buf = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut buf, &img.data, img.width as u32, img.height as u32, color, format)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    write(path, &buf.into_inner())
}

/// Image files in `dir` keyed by file stem. Two files sharing a stem are a
/// validation error.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(CliError::Validation(format!(
                "{} and {} share the stem `{stem}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}
