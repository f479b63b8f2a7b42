//! Procedural corpora for desk-scale experiments.
//!
//! * shapes: flat-colored polygons on a fixed canvas color, where the fill
//!   is determined by the shape type, so outlines carry all the information.
//! * ambiguous: every shape is the same kind of blob and its category is
//!   random; the category palette has equal luma, so edge maps cannot tell
//!   categories apart. Coarse octagonal annotations recover the category.
//! * texture: one large piecewise-constant image crossed by thin dark
//!   crack lines, for superresolution tiles.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::masks::{rasterize, Category, Polygon, PolygonAnnotation, CATEGORY_PALETTE};

pub const CANVAS: [u8; 3] = [236, 228, 212];

/// Rec.601 luma 120 ± 0.3 for every entry; indexed like [`Category::LABELED`].
pub const EQUAL_LUMA_PALETTE: [[u8; 3]; 4] = [
    [220, 71, 110],
    [50, 158, 110],
    [80, 115, 250],
    [180, 107, 30],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Diamond,
}

impl ShapeKind {
    const ALL: [ShapeKind; 4] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Diamond];

    fn category(self) -> Category {
        match self {
            ShapeKind::Disk => Category::Skin,
            ShapeKind::Square => Category::Hair,
            ShapeKind::Triangle => Category::Clothes,
            ShapeKind::Diamond => Category::Wings,
        }
    }

    fn outline(self, cx: f64, cy: f64, r: f64, angle: f64) -> Vec<[f64; 2]> {
        let regular = |n: usize, phase: f64| -> Vec<[f64; 2]> {
            (0..n)
                .map(|k| {
                    let t = phase + 2.0 * PI * k as f64 / n as f64;
                    [cx + r * t.cos(), cy + r * t.sin()]
                })
                .collect()
        };
        match self {
            ShapeKind::Disk => regular(48, 0.0),
            ShapeKind::Square => regular(4, PI / 4.0 + angle * 0.3),
            ShapeKind::Triangle => regular(3, -PI / 2.0 + angle * 0.3),
            ShapeKind::Diamond => {
                let (a, b) = (r, r * 0.55);
                vec![[cx, cy - a], [cx + b, cy], [cx, cy + a], [cx - b, cy]]
            }
        }
    }
}

fn paint(size: usize, polygons: &[Polygon], palette: &[[u8; 3]; 4]) -> Result<Image> {
    let ann = PolygonAnnotation {
        image_ref: String::new(),
        polygons: polygons.to_vec(),
        author: String::new(),
        opacity_hint: 1.0,
    };
    let mask = rasterize(&ann, size, size)?;
    let mut data = Vec::with_capacity(size * size * 3);
    for &c in mask.labels() {
        data.extend(c.plane().map_or(CANVAS, |p| palette[p]));
    }
    Image::new(size, size, data)
}

fn random_center(rng: &mut ChaCha8Rng, size: usize, r: f64) -> (f64, f64) {
    let lo = r + 1.0;
    let hi = size as f64 - r - 1.0;
    (rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// One shapes-corpus image: 1–3 shapes whose fill is fixed by shape type.
pub fn shapes_image(size: usize, seed: u64, index: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let count = rng.random_range(1..=3);
    let polygons: Vec<Polygon> = (0..count)
        .map(|z| {
            let kind = ShapeKind::ALL[rng.random_range(0..4)];
            let r = rng.random_range(size as f64 * 0.14..size as f64 * 0.26);
            let (cx, cy) = random_center(&mut rng, size, r);
            let angle = rng.random_range(-1.0..1.0);
            Polygon { category: kind.category(), vertices: kind.outline(cx, cy, r, angle), z_order: z as i64 }
        })
        .collect();
    paint(size, &polygons, &CATEGORY_PALETTE)
}

/// One ambiguous-corpus image and its coarse annotation.
pub fn ambiguous_image(size: usize, seed: u64, index: u64, image_ref: &str) -> Result<(Image, PolygonAnnotation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let count = rng.random_range(1..=3);
    let mut exact = Vec::with_capacity(count);
    let mut coarse = Vec::with_capacity(count);
    for z in 0..count as i64 {
        let category = Category::LABELED[rng.random_range(0..4)];
        let r = rng.random_range(size as f64 * 0.14..size as f64 * 0.24);
        let (cx, cy) = random_center(&mut rng, size, r);
        exact.push(Polygon { category, vertices: ShapeKind::Disk.outline(cx, cy, r, 0.0), z_order: z });
        // Hand-drawn stand-in: a slightly oversized, jittered octagon.
        let vertices = (0..8)
            .map(|k| {
                let t = PI / 8.0 + 2.0 * PI * k as f64 / 8.0;
                let rr = r * rng.random_range(1.0..1.2);
                [cx + rr * t.cos(), cy + rr * t.sin()]
            })
            .collect();
        coarse.push(Polygon { category, vertices, z_order: z });
    }
    let img = paint(size, &exact, &EQUAL_LUMA_PALETTE)?;
    let ann = PolygonAnnotation {
        image_ref: image_ref.to_string(),
        polygons: coarse,
        author: "synthetic".into(),
        opacity_hint: 0.3,
    };
    Ok((img, ann))
}

fn check_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Parameter("a corpus needs at least 2 images".into()));
    }
    Ok(())
}

/// Writes `n` shapes images as `shape_NNNN.png` into `dir`.
pub fn write_shapes_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    check_count(n)?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("shape_{i:04}.png"));
            shapes_image(size, seed, i as u64)?.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Writes `n` ambiguous images into `dir` and `<stem>.json` annotations into `masks_dir`.
pub fn write_ambiguous_corpus(dir: &Path, masks_dir: &Path, n: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    check_count(n)?;
    std::fs::create_dir_all(masks_dir).map_err(|e| Error::io(masks_dir, e))?;
    (0..n)
        .map(|i| {
            let stem = format!("blob_{i:04}");
            let (img, ann) = ambiguous_image(size, seed, i as u64, &stem)?;
            let path = dir.join(format!("{stem}.png"));
            img.save(&path)?;
            let mpath = masks_dir.join(format!("{stem}.json"));
            std::fs::write(&mpath, ann.to_json()).map_err(|e| Error::io(&mpath, e))?;
            Ok(path)
        })
        .collect()
}

/// Piecewise-constant texture (jittered Voronoi cells) with dark crack lines.
pub fn texture_image(width: usize, height: usize, seed: u64) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension("texture must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = 24.0;
    let (gx, gy) = ((width as f64 / cell).ceil() as usize + 1, (height as f64 / cell).ceil() as usize + 1);
    let sites: Vec<([f64; 2], [u8; 3])> = (0..gx * gy)
        .map(|k| {
            let (i, j) = (k % gx, k / gx);
            let p = [(i as f64 + rng.random_range(0.1..0.9)) * cell, (j as f64 + rng.random_range(0.1..0.9)) * cell];
            let base = [rng.random_range(90..230u8), rng.random_range(60..200u8), rng.random_range(30..160u8)];
            (p, base)
        })
        .collect();
    let mut data = vec![0u8; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let (ci, cj) = ((x as f64 / cell) as i64, (y as f64 / cell) as i64);
            let mut best = (f64::INFINITY, 0usize);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i as usize >= gx || j as usize >= gy {
                        continue;
                    }
                    let k = j as usize * gx + i as usize;
                    let [sx, sy] = sites[k].0;
                    let d = (sx - x as f64).powi(2) + (sy - y as f64).powi(2);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
            }
            data[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&sites[best.1].1);
        }
    }
    // Craquelure: one-pixel dark random walks.
    let cracks = (width * height) / 2500;
    for _ in 0..cracks {
        let (mut x, mut y) = (rng.random_range(0..width) as f64, rng.random_range(0..height) as f64);
        let mut dir: f64 = rng.random_range(0.0..2.0 * PI);
        for _ in 0..rng.random_range(20..60) {
            let (xi, yi) = (x as usize, y as usize);
            if xi >= width || yi >= height {
                break;
            }
            let p = &mut data[(yi * width + xi) * 3..(yi * width + xi) * 3 + 3];
            p.iter_mut().for_each(|v| *v /= 3);
            dir += rng.random_range(-0.5..0.5);
            x += dir.cos();
            y += dir.sin();
            if x < 0.0 || y < 0.0 {
                break;
            }
        }
    }
    Image::new(width, height, data)
}
