//! Annotated grayscale images and their class-wise mean gray profiles.
//!
//! Boxes are half-open integer rectangles `[x, x+w) × [y, y+h)`. Pixels are
//! normalized to `[0, 1]` at load time.

mod coco;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coco::{coco_document, encode_pgm, load_dataset, read_gray_image};

/// Category identifier. `0` is reserved for the background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Row-major grid of gray intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    source_bit_depth: u8,
}

impl GrayImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        source_bit_depth: u8,
    ) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::domain(format!(
                "pixel buffer has {} values, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain(format!(
                "pixel {} has intensity {} outside [0, 1]",
                bad, pixels[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_bit_depth,
        })
    }

    /// Builds an image from 8-bit samples, dividing by 255.
    pub fn from_u8(width: usize, height: usize, samples: &[u8]) -> Result<Self> {
        let pixels = samples.iter().map(|&s| f64::from(s) / 255.0).collect();
        Self::new(width, height, pixels, 8)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], 8)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn source_bit_depth(&self) -> u8 {
        self.source_bit_depth
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Quantizes back to 8-bit samples with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Clipped, non-empty annotated rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub class_id: ClassId,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32, class_id: ClassId) -> Self {
        Self {
            x,
            y,
            w,
            h,
            class_id,
        }
    }

    /// Intersects the half-open rectangle `[x0, x1) × [y0, y1)` with the
    /// image; `None` when nothing is left.
    pub fn clipped(
        x0: i64,
        y0: i64,
        x1: i64,
        y1: i64,
        class_id: ClassId,
        width: usize,
        height: usize,
    ) -> Option<Self> {
        let cx0 = x0.max(0);
        let cy0 = y0.max(0);
        let cx1 = x1.min(width as i64);
        let cy1 = y1.min(height as i64);
        if cx1 <= cx0 || cy1 <= cy0 {
            return None;
        }
        Some(Self {
            x: cx0 as u32,
            y: cy0 as u32,
            w: (cx1 - cx0) as u32,
            h: (cy1 - cy0) as u32,
            class_id,
        })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as u64, y as u64);
        x >= u64::from(self.x)
            && x < u64::from(self.x) + u64::from(self.w)
            && y >= u64::from(self.y)
            && y < u64::from(self.y) + u64::from(self.h)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0
            && self.h > 0
            && u64::from(self.x) + u64::from(self.w) <= width as u64
            && u64::from(self.y) + u64::from(self.h) <= height as u64
    }
}

/// Boolean grid marking the pixels of a region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Annotated dataset: images, their boxes, and category names.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub images: Vec<(ImageId, GrayImage)>,
    pub annotations: BTreeMap<ImageId, Vec<BoundingBox>>,
    pub class_names: BTreeMap<ClassId, String>,
    /// Non-fatal issues met while loading (e.g. boxes dropped by clipping).
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn boxes(&self, id: ImageId) -> &[BoundingBox] {
        self.annotations.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationFlag {
    /// Boxes cover every pixel, so the background is the full-image mean.
    BackgroundFromFullImage,
}

/// Class-wise mean gray profile of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRelation {
    pub image_id: ImageId,
    pub background_gray: f64,
    pub class_grays: BTreeMap<ClassId, f64>,
    #[serde(default)]
    pub flags: Vec<RelationFlag>,
}

impl ImageRelation {
    pub fn new(
        image_id: ImageId,
        background_gray: f64,
        class_grays: BTreeMap<ClassId, f64>,
    ) -> Self {
        Self {
            image_id,
            background_gray,
            class_grays,
            flags: Vec::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_grays.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.class_grays.keys().copied()
    }

    /// Foreground `(class, gray)` entries in class order.
    pub fn foreground(&self) -> Vec<(ClassId, f64)> {
        self.class_grays.iter().map(|(&k, &v)| (k, v)).collect()
    }

    /// Background (as class 0) followed by the foreground entries.
    pub fn with_background(&self) -> Vec<(ClassId, f64)> {
        std::iter::once((ClassId::BACKGROUND, self.background_gray))
            .chain(self.class_grays.iter().map(|(&k, &v)| (k, v)))
            .collect()
    }
}

/// Union of the boxes as a mask; overlapping pixels count once.
pub fn region_mask(width: usize, height: usize, boxes: &[BoundingBox]) -> PixelMask {
    let mut mask = PixelMask::empty(width, height);
    for b in boxes {
        let x1 = (b.x as usize + b.w as usize).min(width);
        let y1 = (b.y as usize + b.h as usize).min(height);
        for y in (b.y as usize)..y1 {
            let row = y * width;
            for x in (b.x as usize)..x1 {
                mask.bits[row + x] = true;
            }
        }
    }
    mask
}

/// Arithmetic mean of the intensities under the mask.
pub fn class_mean_gray(image: &GrayImage, mask: &PixelMask) -> Result<f64> {
    if mask.width != image.width || mask.height != image.height {
        return Err(Error::domain(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width, mask.height, image.width, image.height
        )));
    }
    let (sum, n) = image
        .pixels
        .iter()
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&p, _)| (s + p, n + 1));
    if n == 0 {
        return Err(Error::domain("empty region"));
    }
    Ok(sum / n as f64)
}

/// Reduces one image to `{G_0, G_1, …, G_K}`.
///
/// Each class mean is taken over the union of that class's boxes. The
/// background is the mean over pixels outside every box; when the boxes
/// cover the whole image the full-image mean is used and a flag is set.
pub fn image_relation(
    image_id: ImageId,
    image: &GrayImage,
    boxes: &[BoundingBox],
) -> Result<ImageRelation> {
    if boxes.is_empty() {
        return Err(Error::domain("no foreground classes"));
    }
    let mut by_class: BTreeMap<ClassId, Vec<BoundingBox>> = BTreeMap::new();
    for b in boxes {
        if b.class_id.is_background() {
            return Err(Error::domain("box uses reserved background class 0"));
        }
        by_class.entry(b.class_id).or_default().push(*b);
    }

    let mut class_grays = BTreeMap::new();
    for (class, class_boxes) in &by_class {
        let mask = region_mask(image.width, image.height, class_boxes);
        let g = class_mean_gray(image, &mask)
            .map_err(|e| Error::domain(format!("image {image_id}, class {class}: {e}")))?;
        class_grays.insert(*class, g);
    }

    let background = region_mask(image.width, image.height, boxes).complement();
    let mut relation = ImageRelation::new(image_id, 0.0, class_grays);
    match class_mean_gray(image, &background) {
        Ok(g) => relation.background_gray = g,
        Err(_) => {
            relation.background_gray = class_mean_gray(
                image,
                &PixelMask {
                    bits: vec![true; image.pixels.len()],
                    ..background
                },
            )?;
            relation.flags.push(RelationFlag::BackgroundFromFullImage);
        }
    }
    Ok(relation)
}
