use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader};
use serde::Deserialize;
use serde_json::Value;

use super::{BoundingBox, ClassId, Dataset, GrayImage, ImageId};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<Value>,
    #[serde(default)]
    annotations: Vec<Value>,
    #[serde(default)]
    categories: Vec<Value>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: Option<usize>,
    height: Option<usize>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

fn parse_record<T: for<'de> Deserialize<'de>>(
    path: &Path,
    section: &str,
    index: usize,
    v: &Value,
) -> Result<T> {
    T::deserialize(v).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        index,
        message: format!("{section}: {e}"),
    })
}

/// Loads a COCO-style annotation file and the grayscale images it references.
///
/// Boxes are clipped to the image; boxes left empty by clipping are dropped
/// and reported in [`Dataset::warnings`].
pub fn load_dataset(annotation_path: &Path, image_dir: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: annotation_path.to_path_buf(),
        index: 0,
        message: format!("not a COCO annotation document: {e}"),
    })?;

    let mut dataset = Dataset::default();
    for (i, v) in file.categories.iter().enumerate() {
        let cat: CocoCategory = parse_record(annotation_path, "categories", i, v)?;
        if cat.id == 0 {
            return Err(Error::Parse {
                path: annotation_path.to_path_buf(),
                index: i,
                message: "categories: id 0 is reserved for the background".into(),
            });
        }
        dataset.class_names.insert(ClassId(cat.id), cat.name);
    }

    let mut dims = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (i, v) in file.images.iter().enumerate() {
        let rec: CocoImage = parse_record(annotation_path, "images", i, v)?;
        if !seen.insert(rec.id) {
            return Err(Error::Parse {
                path: annotation_path.to_path_buf(),
                index: i,
                message: format!("images: duplicate id {}", rec.id),
            });
        }
        let path = image_dir.join(&rec.file_name);
        let img = read_gray_image(&path)?;
        if rec.width.is_some_and(|w| w != img.width())
            || rec.height.is_some_and(|h| h != img.height())
        {
            return Err(Error::Format {
                path,
                message: format!(
                    "image is {}x{} but annotation record {} declares {}x{}",
                    img.width(),
                    img.height(),
                    i,
                    rec.width.unwrap_or(img.width()),
                    rec.height.unwrap_or(img.height())
                ),
            });
        }
        dims.insert(ImageId(rec.id), (img.width(), img.height()));
        dataset.images.push((ImageId(rec.id), img));
    }

    for (i, v) in file.annotations.iter().enumerate() {
        let ann: CocoAnnotation = parse_record(annotation_path, "annotations", i, v)?;
        let bad = |message: String| Error::Parse {
            path: annotation_path.to_path_buf(),
            index: i,
            message,
        };
        let image_id = ImageId(ann.image_id);
        let &(width, height) = dims
            .get(&image_id)
            .ok_or_else(|| bad(format!("annotations: unknown image_id {}", ann.image_id)))?;
        let class_id = ClassId(ann.category_id);
        if !dataset.class_names.contains_key(&class_id) {
            return Err(bad(format!(
                "annotations: unknown category_id {}",
                ann.category_id
            )));
        }
        let [x, y, w, h] = ann.bbox;
        if !(x.is_finite() && y.is_finite() && w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())
        {
            return Err(bad(format!("annotations: invalid bbox {:?}", ann.bbox)));
        }
        let clipped = BoundingBox::clipped(
            x.floor() as i64,
            y.floor() as i64,
            (x + w).ceil() as i64,
            (y + h).ceil() as i64,
            class_id,
            width,
            height,
        );
        match clipped {
            Some(b) => dataset.annotations.entry(image_id).or_default().push(b),
            None => {
                let msg =
                    format!("annotation {i} on image {image_id} is empty after clipping; dropped");
                log::warn!("{msg}");
                dataset.warnings.push(msg);
            }
        }
    }
    Ok(dataset)
}

/// COCO annotation document for a single image.
pub fn coco_document(
    image_id: ImageId,
    file_name: &str,
    image: &GrayImage,
    boxes: &[BoundingBox],
    class_names: &BTreeMap<ClassId, String>,
) -> Value {
    let annotations: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            serde_json::json!({
                "id": i + 1,
                "image_id": image_id.0,
                "category_id": b.class_id.0,
                "bbox": [b.x, b.y, b.w, b.h],
                "area": b.area(),
                "iscrowd": 0,
            })
        })
        .collect();
    let categories: Vec<Value> = class_names
        .iter()
        .map(|(id, name)| serde_json::json!({ "id": id.0, "name": name }))
        .collect();
    serde_json::json!({
        "images": [{
            "id": image_id.0,
            "file_name": file_name,
            "width": image.width(),
            "height": image.height(),
        }],
        "annotations": annotations,
        "categories": categories,
    })
}

/// Reads an 8-bit grayscale PGM (P5) or PNG file.
pub fn read_gray_image(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported image format {other:?}; expected PGM (P5) or PNG"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            GrayImage::from_u8(buf.width() as usize, buf.height() as usize, buf.as_raw())
        }
        other => {
            let msg = match other.color() {
                ColorType::L16 => "16-bit grayscale is not supported; expected 8-bit".to_string(),
                c => format!("color image ({c:?}); expected 8-bit grayscale"),
            };
            Err(Error::Format {
                path: path.to_path_buf(),
                message: msg,
            })
        }
    }
}

/// Encodes an image as binary PGM (P5) with maxval 255.
pub fn encode_pgm(image: &GrayImage) -> Result<Vec<u8>> {
    let buf =
        image::GrayImage::from_raw(image.width() as u32, image.height() as u32, image.to_u8())
            .ok_or_else(|| Error::domain("image buffer does not match its dimensions"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Pnm)
        .map_err(|e| Error::domain(format!("PGM encoding failed: {e}")))?;
    Ok(out.into_inner())
}
