use std::path::Path;

use leishcount::raster::{load_image, save_manifest, ChannelSet, Plane};
use leishcount::Error;

fn scene() -> ChannelSet {
    let plane = |f: fn(usize, usize) -> u8| Plane::from_fn(24, 16, f).unwrap();
    ChannelSet::new(plane(|x, _| (x * 10) as u8), plane(|_, y| (y * 15) as u8), plane(|x, y| ((x + y) * 5) as u8)).unwrap()
}

fn save_rgb(channels: &ChannelSet, path: &Path) {
    channels.to_rgb().save_png(path).unwrap();
}

#[test]
fn png_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.png");
    save_rgb(&scene(), &path);
    let loaded = load_image(&path).unwrap();
    assert_eq!(loaded.channels, scene());
    assert!(!loaded.lossy);
}

#[test]
fn jpeg_is_flagged_lossy() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = scene().to_rgb();
    let path = dir.path().join("scene.jpg");
    let data: Vec<u8> = (0..24 * 16).flat_map(|i| rgb.pixel(i % 24, i / 24)).collect();
    image::save_buffer(&path, &data, 24, 16, image::ExtendedColorType::Rgb8).unwrap();
    let loaded = load_image(&path).unwrap();
    assert!(loaded.lossy);
    assert_eq!(loaded.channels.width(), 24);
}

#[test]
fn grayscale_needs_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gray.png");
    image::save_buffer(&path, &[7u8; 16], 4, 4, image::ExtendedColorType::L8).unwrap();
    assert!(matches!(load_image(&path), Err(Error::ChannelMapping { .. })));
}

#[test]
fn manifest_round_trip_with_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_manifest(&scene(), &dir.path().join("sub"), "s").unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("\"s_macrophage.png\""));
    assert_eq!(load_image(&manifest).unwrap().channels, scene());
}

#[test]
fn manifest_geometry_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_manifest(&scene(), dir.path(), "s").unwrap();
    image::save_buffer(dir.path().join("s_parasite.png"), &[0u8; 9], 3, 3, image::ExtendedColorType::L8).unwrap();
    assert!(matches!(load_image(&manifest), Err(Error::Geometry(_))));
}

#[test]
fn unreadable_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.png");
    std::fs::write(&path, b"junk").unwrap();
    assert!(matches!(load_image(&path), Err(Error::Format { .. })));
    let bad_manifest = dir.path().join("m.json");
    std::fs::write(&bad_manifest, r#"{"macrophage": "a.png"}"#).unwrap();
    assert!(load_image(&bad_manifest).is_err());
}
