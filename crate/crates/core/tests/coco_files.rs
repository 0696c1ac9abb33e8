use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use kgat_core::ingest::{encode_pgm, image_relation, load_dataset, read_gray_image};
use kgat_core::{ClassId, Error, GrayImage, ImageId};
use serde_json::json;

fn write_pgm(dir: &Path, name: &str, image: &GrayImage) {
    std::fs::write(dir.join(name), encode_pgm(image).unwrap()).unwrap();
}

fn write_coco(dir: &Path, doc: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("annotations.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn empty_dataset_loads() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_coco(
        dir.path(),
        json!({ "images": [], "annotations": [], "categories": [] }),
    );
    let ds = load_dataset(&ann, dir.path()).unwrap();
    assert!(ds.images.is_empty());
    assert!(ds.annotations.is_empty());
}

#[test]
fn single_box_relation_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    // 4x4 image, the 2x2 top-left block at 200, the rest at 50
    let mut samples = vec![50u8; 16];
    for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        samples[y * 4 + x] = 200;
    }
    write_pgm(
        dir.path(),
        "a.pgm",
        &GrayImage::from_u8(4, 4, &samples).unwrap(),
    );
    let ann = write_coco(
        dir.path(),
        json!({
            "images": [{ "id": 3, "file_name": "a.pgm", "width": 4, "height": 4 }],
            "annotations": [{ "image_id": 3, "category_id": 1, "bbox": [0, 0, 2, 2] }],
            "categories": [{ "id": 1, "name": "person" }],
        }),
    );
    let ds = load_dataset(&ann, dir.path()).unwrap();
    let (id, img) = &ds.images[0];
    assert_eq!(*id, ImageId(3));
    let rel = image_relation(*id, img, ds.boxes(*id)).unwrap();
    assert!((rel.class_grays[&ClassId(1)] - 200.0 / 255.0).abs() < 1e-15);
    assert!((rel.background_gray - 50.0 / 255.0).abs() < 1e-15);
}

#[test]
fn out_of_bounds_boxes_are_clipped() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(dir.path(), "b.pgm", &GrayImage::filled(8, 8, 0.5).unwrap());
    let ann = write_coco(
        dir.path(),
        json!({
            "images": [{ "id": 1, "file_name": "b.pgm" }],
            "annotations": [
                { "image_id": 1, "category_id": 2, "bbox": [5.5, -2.0, 10.0, 4.2] },
                { "image_id": 1, "category_id": 2, "bbox": [20.0, 20.0, 3.0, 3.0] },
            ],
            "categories": [{ "id": 2, "name": "car" }],
        }),
    );
    let ds = load_dataset(&ann, dir.path()).unwrap();
    let boxes = ds.boxes(ImageId(1));
    assert_eq!(boxes.len(), 1);
    // brute force: pixels with x in [5, 16) and y in [-2, 3) inside 8x8
    let expected = (0..8)
        .flat_map(|y| (0..8).map(move |x| (x, y)))
        .filter(|&(x, y)| x >= 5 && y < 3)
        .count();
    assert_eq!(boxes[0].area() as usize, expected);
    assert_eq!(ds.warnings.len(), 1);
}

#[test]
fn missing_annotation_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(&dir.path().join("nope.json"), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_input_error());
}

#[test]
fn malformed_record_reports_its_index() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(dir.path(), "c.pgm", &GrayImage::filled(4, 4, 0.5).unwrap());
    let ann = write_coco(
        dir.path(),
        json!({
            "images": [{ "id": 1, "file_name": "c.pgm" }],
            "annotations": [
                { "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1] },
                { "image_id": 1, "category_id": 1, "bbox": "wide" },
            ],
            "categories": [{ "id": 1, "name": "person" }],
        }),
    );
    match load_dataset(&ann, dir.path()).unwrap_err() {
        Error::Parse { index, .. } => assert_eq!(index, 1),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn unknown_category_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(dir.path(), "d.pgm", &GrayImage::filled(4, 4, 0.5).unwrap());
    let ann = write_coco(
        dir.path(),
        json!({
            "images": [{ "id": 1, "file_name": "d.pgm" }],
            "annotations": [{ "image_id": 1, "category_id": 9, "bbox": [0, 0, 1, 1] }],
            "categories": [{ "id": 1, "name": "person" }],
        }),
    );
    assert!(matches!(
        load_dataset(&ann, dir.path()),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn declared_size_must_match_file() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(dir.path(), "e.pgm", &GrayImage::filled(4, 4, 0.5).unwrap());
    let ann = write_coco(
        dir.path(),
        json!({
            "images": [{ "id": 1, "file_name": "e.pgm", "width": 5, "height": 4 }],
            "annotations": [],
            "categories": [],
        }),
    );
    assert!(matches!(
        load_dataset(&ann, dir.path()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn color_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.png");
    RgbImage::from_pixel(3, 3, Rgb([10, 20, 30]))
        .save_with_format(&path, ImageFormat::Png)
        .unwrap();
    match read_gray_image(&path).unwrap_err() {
        Error::Format { message, .. } => assert!(message.contains("color"), "{message}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn png_and_pgm_decode_identically() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
    let img = GrayImage::from_u8(4, 3, &samples).unwrap();
    write_pgm(dir.path(), "f.pgm", &img);
    image::GrayImage::from_raw(4, 3, samples.clone())
        .unwrap()
        .save_with_format(dir.path().join("f.png"), ImageFormat::Png)
        .unwrap();
    let a = read_gray_image(&dir.path().join("f.pgm")).unwrap();
    let b = read_gray_image(&dir.path().join("f.png")).unwrap();
    assert_eq!(a.pixels(), b.pixels());
    assert_eq!(a.to_u8(), samples);
}
