//! Grayscale PNG previews, linearly stretched from each image's own min/max.

use std::path::Path;

use image::GrayImage;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct PreviewInfo {
    pub file: String,
    pub min: f64,
    pub max: f64,
    pub normalization: &'static str,
}

pub fn write_png(path: &Path, values: &[f64], nx: usize, ny: usize) -> anyhow::Result<PreviewInfo> {
    assert_eq!(values.len(), nx * ny);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pixels = values
        .iter()
        .map(|v| if span > 0.0 { ((v - min) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    let img = GrayImage::from_raw(nx as u32, ny as u32, pixels).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(PreviewInfo {
        file: path.file_name().unwrap().to_string_lossy().into_owned(),
        min,
        max,
        normalization: "linear (v - min) / (max - min) to 0..255",
    })
}
