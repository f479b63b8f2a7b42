//! Coarse hand-drawn segmentations.
//!
//! Annotators outline regions as polygons tagged with one of four categories;
//! everything else is background. Polygons are rasterized with the even-odd
//! rule at pixel centres and encoded as hard one-hot conditioning planes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{quantize, Image};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Skin,
    Hair,
    Clothes,
    Wings,
    Background,
}

impl Category {
    /// Conditioning plane order.
    pub const LABELED: [Category; 4] = [Category::Skin, Category::Hair, Category::Clothes, Category::Wings];

    pub fn plane(self) -> Option<usize> {
        Category::LABELED.iter().position(|&c| c == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Skin => "skin",
            Category::Hair => "hair",
            Category::Clothes => "clothes",
            Category::Wings => "wings",
            Category::Background => "background",
        }
    }
}

/// Preview colors, indexed like [`Category::LABELED`].
pub const CATEGORY_PALETTE: [[u8; 3]; 4] = [
    [255, 170, 127], // skin
    [128, 64, 0],    // hair
    [0, 96, 255],    // clothes
    [0, 200, 120],   // wings
];

pub fn palette_color(c: Category) -> Option<[u8; 3]> {
    c.plane().map(|i| CATEGORY_PALETTE[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polygon {
    pub category: Category,
    pub vertices: Vec<[f64; 2]>,
    #[serde(default)]
    pub z_order: i64,
}

/// Wire document emitted by the annotation tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonAnnotation {
    pub image_ref: String,
    pub polygons: Vec<Polygon>,
    #[serde(default)]
    pub author: String,
    #[serde(default = "default_opacity")]
    pub opacity_hint: f64,
}

fn default_opacity() -> f64 {
    0.3
}

impl PolygonAnnotation {
    /// Field-level validation; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity_hint > 0.0 && self.opacity_hint <= 1.0) {
            return Err(Error::Annotation(format!(
                "opacity_hint: must be in (0, 1], got {}",
                self.opacity_hint
            )));
        }
        for (i, p) in self.polygons.iter().enumerate() {
            if p.vertices.len() < 3 {
                return Err(Error::Annotation(format!(
                    "polygons[{i}].vertices: need at least 3 vertices, got {}",
                    p.vertices.len()
                )));
            }
            if let Some(j) = p.vertices.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
                return Err(Error::Annotation(format!("polygons[{i}].vertices[{j}]: non-finite coordinate")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ann: PolygonAnnotation =
            serde_json::from_str(text).map_err(|e| Error::Annotation(e.to_string()))?;
        ann.validate()?;
        Ok(ann)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

/// Per-pixel category labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    labels: Vec<Category>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, labels: Vec<Category>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels do not fill a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(SegMask { width, height, labels })
    }

    pub fn background(width: usize, height: usize) -> Result<Self> {
        SegMask::new(width, height, vec![Category::Background; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Category] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Category {
        self.labels[y * self.width + x]
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<SegMask> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                labels.push(self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        SegMask::new(width, height, labels)
    }
}

/// Even-odd crossings of the horizontal line `y = yc` with a closed polygon.
fn crossings(vertices: &[[f64; 2]], yc: f64) -> Vec<f64> {
    let n = vertices.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let [x0, y0] = vertices[i];
        let [x1, y1] = vertices[(i + 1) % n];
        if (y0 > yc) != (y1 > yc) {
            xs.push((x1 - x0) * (yc - y0) / (y1 - y0) + x0);
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    xs
}

fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = vertices[i];
            let [x1, y1] = vertices[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

/// Rasterizes an annotation onto a `width × height` grid.
///
/// Higher `z_order` wins where polygons overlap (ties go to the later
/// polygon); polygons with zero area after clamping are skipped.
pub fn rasterize(ann: &PolygonAnnotation, width: usize, height: usize) -> Result<SegMask> {
    ann.validate()?;
    let mut mask = SegMask::background(width, height)?;
    let mut order: Vec<usize> = (0..ann.polygons.len()).collect();
    order.sort_by_key(|&i| ann.polygons[i].z_order);
    for i in order {
        let poly = &ann.polygons[i];
        let verts: Vec<[f64; 2]> = poly
            .vertices
            .iter()
            .map(|v| [v[0].clamp(0.0, width as f64), v[1].clamp(0.0, height as f64)])
            .collect();
        if shoelace(&verts).abs() < 1e-12 {
            tracing::warn!(polygon = i, image_ref = %ann.image_ref, "skipping degenerate polygon");
            continue;
        }
        for y in 0..height {
            let xs = crossings(&verts, y as f64 + 0.5);
            for span in xs.chunks_exact(2) {
                // pixel centres x + 0.5 in [span0, span1)
                let start = (span[0] - 0.5).ceil().max(0.0) as usize;
                let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
                for x in start..end {
                    mask.labels[y * width + x] = poly.category;
                }
            }
        }
    }
    Ok(mask)
}

/// One-hot planes `[1, 4, H, W]` in [`Category::LABELED`] order.
pub fn encode_channels(mask: &SegMask) -> Tensor {
    let plane = mask.width * mask.height;
    let mut data = vec![0f32; 4 * plane];
    for (i, c) in mask.labels.iter().enumerate() {
        if let Some(p) = c.plane() {
            data[p * plane + i] = 1.0;
        }
    }
    Tensor::from_vec([1, 4, mask.height, mask.width], data).expect("sized from mask")
}

/// Inverse of [`encode_channels`]: argmax over planes, background when all are zero.
pub fn decode_channels(planes: &Tensor) -> Result<SegMask> {
    let [n, c, h, w] = planes.shape();
    if n != 1 || c != 4 {
        return Err(Error::Shape(format!("expected [1, 4, H, W] planes, got {:?}", planes.shape())));
    }
    let plane = h * w;
    let labels = (0..plane)
        .map(|i| {
            let mut best = Category::Background;
            let mut best_v = 0f32;
            for (p, &cat) in Category::LABELED.iter().enumerate() {
                let v = planes.data()[p * plane + i];
                if v > best_v {
                    best = cat;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    SegMask::new(w, h, labels)
}

/// Alpha-composites the category palette over `img` for display.
pub fn overlay_preview(img: &Image, mask: &SegMask, opacity: f64) -> Result<Image> {
    if img.width() != mask.width || img.height() != mask.height {
        return Err(Error::Shape(format!(
            "image {}x{} and mask {}x{} differ",
            img.width(),
            img.height(),
            mask.width,
            mask.height
        )));
    }
    if !(opacity > 0.0 && opacity <= 1.0) {
        return Err(Error::Parameter(format!("opacity must be in (0, 1], got {opacity}")));
    }
    let mut data = img.as_bytes().to_vec();
    for (i, c) in mask.labels.iter().enumerate() {
        if let Some(color) = palette_color(*c) {
            for k in 0..3 {
                let base = data[i * 3 + k] as f64 / 255.0;
                let top = color[k] as f64 / 255.0;
                data[i * 3 + k] = quantize(((1.0 - opacity) * base + opacity * top) as f32);
            }
        }
    }
    Image::new(img.width(), img.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly(category: Category, vertices: &[[f64; 2]], z: i64) -> Polygon {
        Polygon { category, vertices: vertices.to_vec(), z_order: z }
    }

    fn ann(polygons: Vec<Polygon>) -> PolygonAnnotation {
        PolygonAnnotation {
            image_ref: "test".into(),
            polygons,
            author: "tester".into(),
            opacity_hint: 0.3,
        }
    }

    /// Independent ray-casting point-in-polygon test.
    fn pnpoly(v: &[[f64; 2]], px: f64, py: f64) -> bool {
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi, xj, yj) = (v[i][0], v[i][1], v[j][0], v[j][1]);
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    #[test]
    fn full_frame_and_empty() {
        let full = ann(vec![poly(Category::Skin, &[[0.0, 0.0], [8.0, 0.0], [8.0, 6.0], [0.0, 6.0]], 0)]);
        let m = rasterize(&full, 8, 6).unwrap();
        assert!(m.labels().iter().all(|&c| c == Category::Skin));
        let m = rasterize(&ann(vec![]), 8, 6).unwrap();
        assert!(m.labels().iter().all(|&c| c == Category::Background));
    }

    #[test]
    fn overlap_goes_to_higher_z_and_matches_brute_force() {
        let skin = [[2.0, 3.0], [25.0, 4.5], [20.0, 28.0], [4.0, 22.0]];
        let hair = [[10.0, 1.0], [30.5, 12.0], [14.0, 31.0]];
        // hair listed first but drawn on top
        let a = ann(vec![poly(Category::Hair, &hair, 1), poly(Category::Skin, &skin, 0)]);
        let m = rasterize(&a, 32, 32).unwrap();
        let mut overlap = 0;
        for y in 0..32 {
            for x in 0..32 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let want = if pnpoly(&hair, px, py) {
                    Category::Hair
                } else if pnpoly(&skin, px, py) {
                    Category::Skin
                } else {
                    Category::Background
                };
                if pnpoly(&hair, px, py) && pnpoly(&skin, px, py) {
                    overlap += 1;
                }
                assert_eq!(m.get(x, y), want, "pixel ({x}, {y})");
            }
        }
        assert!(overlap > 20);
    }

    #[test]
    fn degenerate_polygon_is_skipped() {
        let a = ann(vec![poly(Category::Skin, &[[-5.0, 1.0], [-2.0, 3.0], [-1.0, 7.0]], 0)]);
        let m = rasterize(&a, 4, 8).unwrap();
        assert!(m.labels().iter().all(|&c| c == Category::Background));
    }

    #[test]
    fn validation_names_fields() {
        let a = ann(vec![poly(Category::Skin, &[[0.0, 0.0], [1.0, 1.0]], 0)]);
        let msg = a.validate().unwrap_err().to_string();
        assert!(msg.contains("polygons[0].vertices"), "{msg}");
        let bad = PolygonAnnotation { opacity_hint: 0.0, ..ann(vec![]) };
        assert!(bad.validate().unwrap_err().to_string().contains("opacity_hint"));
        assert!(PolygonAnnotation::from_json(r#"{"image_ref":"x","polygons":[],"extra":1}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = ann(vec![poly(Category::Wings, &[[0.25, 1.0], [3.0, 1.0], [2.0, 4.75]], 3)]);
        assert_eq!(PolygonAnnotation::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn encode_known_masks() {
        let bg = SegMask::background(3, 2).unwrap();
        assert!(encode_channels(&bg).data().iter().all(|&v| v == 0.0));
        let skin = SegMask::new(3, 2, vec![Category::Skin; 6]).unwrap();
        let t = encode_channels(&skin);
        assert!(t.data()[..6].iter().all(|&v| v == 1.0));
        assert!(t.data()[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preview_bounds() {
        let img = Image::new(2, 1, vec![10, 200, 30, 250, 0, 128]).unwrap();
        let bg = SegMask::background(2, 1).unwrap();
        assert_eq!(overlay_preview(&img, &bg, 0.7).unwrap(), img);
        let all = SegMask::new(2, 1, vec![Category::Clothes; 2]).unwrap();
        let full = overlay_preview(&img, &all, 1.0).unwrap();
        assert!(full.as_bytes().chunks(3).all(|p| p == CATEGORY_PALETTE[2]));
        let faint = overlay_preview(&img, &all, 0.01).unwrap();
        for (a, b) in faint.as_bytes().iter().zip(img.as_bytes()) {
            assert!((*a as i32 - *b as i32).abs() <= 3);
        }
        assert!(overlay_preview(&img, &SegMask::background(1, 1).unwrap(), 0.5).is_err());
        assert!(overlay_preview(&img, &bg, 0.0).is_err());
    }

    fn category() -> impl Strategy<Value = Category> {
        prop_oneof![
            Just(Category::Skin),
            Just(Category::Hair),
            Just(Category::Clothes),
            Just(Category::Wings),
            Just(Category::Background),
        ]
    }

    proptest! {
        #[test]
        fn plane_sum_is_labeled_indicator(labels in proptest::collection::vec(category(), 20)) {
            let m = SegMask::new(5, 4, labels).unwrap();
            let t = encode_channels(&m);
            for i in 0..20 {
                let s: f32 = (0..4).map(|p| t.data()[p * 20 + i]).sum();
                prop_assert_eq!(s, if m.labels()[i] == Category::Background { 0.0 } else { 1.0 });
            }
            prop_assert_eq!(decode_channels(&t).unwrap(), m);
        }

        #[test]
        fn vertex_rotation_invariance(
            pts in proptest::collection::vec((0.0f64..24.0, 0.0f64..24.0), 3..8),
            shift in 0usize..8,
        ) {
            let verts: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let mut rotated = verts.clone();
            rotated.rotate_left(shift % verts.len());
            let a = rasterize(&ann(vec![poly(Category::Hair, &verts, 0)]), 24, 24).unwrap();
            let b = rasterize(&ann(vec![poly(Category::Hair, &rotated, 0)]), 24, 24).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
