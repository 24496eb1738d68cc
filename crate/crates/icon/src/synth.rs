//! Synthetic saliency scenes: one to three high-contrast shapes on a
//! textured background, with exact masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetIndex, PairPaths};
use crate::error::Result;
use crate::imageio::{write_image, Image8};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rect { cy: f64, cx: f64, hy: f64, hx: f64, angle: f64 },
    Triangle { pts: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (u, v) = rotate(y - cy, x - cx, angle);
                (u / ry).powi(2) + (v / rx).powi(2) <= 1.0
            }
            Shape::Rect { cy, cx, hy, hx, angle } => {
                let (u, v) = rotate(y - cy, x - cx, angle);
                u.abs() <= hy && v.abs() <= hx
            }
            Shape::Triangle { pts } => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let s = [side(pts[0], pts[1]), side(pts[1], pts[2]), side(pts[2], pts[0])];
                s.iter().all(|&v| v >= 0.0) || s.iter().all(|&v| v <= 0.0)
            }
        }
    }
}

fn rotate(y: f64, x: f64, a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * y - s * x, s * y + c * x)
}

/// A generated scene: RGB pixels, the 0/255 mask and the object count.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub name: String,
    pub image: Image8,
    pub mask: Image8,
    pub objects: usize,
}

fn random_shape(rng: &mut ChaCha8Rng, side: f64, cy: f64, cx: f64, r: f64) -> Shape {
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    match rng.random_range(0..4) {
        0 => Shape::Disk { cy, cx, r },
        1 => Shape::Ellipse { cy, cx, ry: r, rx: r * rng.random_range(0.5..0.9), angle },
        2 => Shape::Rect { cy, cx, hy: r * 0.85, hx: r * rng.random_range(0.5..0.85), angle },
        _ => {
            let pts = std::array::from_fn(|k| {
                let a = angle + k as f64 * 2.0 * std::f64::consts::PI / 3.0 + rng.random_range(-0.3..0.3);
                ((cy + 1.2 * r * a.sin()).clamp(0.0, side), (cx + 1.2 * r * a.cos()).clamp(0.0, side))
            });
            Shape::Triangle { pts }
        }
    }
}

/// Scene `index` of the stream defined by `seed`; each scene has its own
/// generator stream so scenes can be produced in any order.
pub fn scene(index: usize, size: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let side = size as f64;
    let objects = if rng.random_bool(2.0 / 3.0) { 1 } else { rng.random_range(2..=3) };
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut shapes = Vec::new();
    for k in 0..objects {
        let scale = if objects == 1 { rng.random_range(0.16..0.3) } else { rng.random_range(0.1..0.18) };
        let r = scale * side;
        let mut pos = (side / 2.0, side / 2.0);
        for _ in 0..30 {
            pos = (rng.random_range(r..side - r), rng.random_range(r..side - r));
            if placed.iter().all(|&(y, x, q)| ((y - pos.0).powi(2) + (x - pos.1).powi(2)).sqrt() > r + q + 2.0) {
                break;
            }
        }
        placed.push((pos.0, pos.1, r));
        shapes.push((random_shape(&mut rng, side, pos.0, pos.1, r), k));
    }

    let dark = rng.random_bool(0.5);
    let base: [f64; 3] =
        std::array::from_fn(|_| if dark { rng.random_range(20.0..90.0) } else { rng.random_range(150.0..220.0) });
    let colors: Vec<[f64; 3]> = (0..objects)
        .map(|_| {
            std::array::from_fn(|_| if dark { rng.random_range(180.0..255.0) } else { rng.random_range(0.0..70.0) })
        })
        .collect();
    let (freq, phase, orient) =
        (rng.random_range(0.15..0.6), rng.random_range(0.0..6.3), rng.random_range(0.0..std::f64::consts::PI));
    let amp = rng.random_range(8.0..25.0);

    let mut rgb = Vec::with_capacity(size * size * 3);
    let mut mask = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let hit = shapes.iter().rev().find(|(s, _)| s.contains(y, x)).map(|&(_, k)| k);
            mask.push(if hit.is_some() { 255 } else { 0 });
            let stripe = amp * (freq * (x * orient.cos() + y * orient.sin()) + phase).sin();
            for ch in 0..3 {
                let noise = rng.random_range(-10.0..10.0);
                let v = match hit {
                    Some(k) => colors[k][ch] + 0.4 * noise,
                    None => base[ch] + stripe + noise,
                };
                rgb.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Scene {
        name: format!("synth_{index:05}"),
        image: Image8 { width: size, height: size, channels: 3, data: rgb },
        mask: Image8 { width: size, height: size, channels: 1, data: mask },
        objects,
    }
}

pub fn scenes(n: usize, size: usize, seed: u64) -> Vec<Scene> {
    (0..n).map(|i| scene(i, size, seed)).collect()
}

/// Writes `n` scenes under `dir/images` and `dir/masks` as PNG.
pub fn synth_dataset(n: usize, size: usize, seed: u64, dir: &Path) -> Result<DatasetIndex> {
    let mut pairs = Vec::with_capacity(n);
    for s in scenes(n, size, seed) {
        let image = dir.join("images").join(format!("{}.png", s.name));
        let mask = dir.join("masks").join(format!("{}.png", s.name));
        write_image(&image, &s.image)?;
        write_image(&mask, &s.mask)?;
        pairs.push(PairPaths { name: s.name, image, mask });
    }
    Ok(DatasetIndex { split: "synth".into(), pairs })
}
