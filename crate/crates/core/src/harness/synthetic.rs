//! Synthetic class-conditioned blob dataset.
//!
//! Each class owns a fixed Gaussian-blob center; a sample is its class
//! blob plus seeded pixel noise, clamped to the pixel box. Stands in for
//! real validation images at desk scale while keeping full determinism.

use crate::gradmatch::ImageShape;
use crate::smallnet::Sample;
use crate::tensorcore::SeededRng;

/// Fixed blob center for `class` out of `classes`, on a circle of radius
/// `min(h,w)/4` around the image center (radius collapses to the center
/// for a single class).
pub fn class_center(shape: ImageShape, class: usize, classes: usize) -> (f64, f64) {
    let cy = (shape.height() - 1) as f64 / 2.0;
    let cx = (shape.width() - 1) as f64 / 2.0;
    if classes <= 1 {
        return (cy, cx);
    }
    let radius = shape.height().min(shape.width()) as f64 / 4.0;
    let theta = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
    (cy + radius * theta.sin(), cx + radius * theta.cos())
}

/// Noise-free blob image: `exp(-|p - center|^2 / (2 sigma^2))` per pixel.
pub fn blob_image(shape: ImageShape, center: (f64, f64), sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.len());
    for r in 0..shape.height() {
        for c in 0..shape.width() {
            let dy = r as f64 - center.0;
            let dx = c as f64 - center.1;
            out.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

/// Generates `count` samples cycling through the classes; sample `i` gets
/// class `i % classes`.
pub fn gen_synthetic(
    shape: ImageShape,
    classes: usize,
    sigma: f64,
    noise: f64,
    count: usize,
    rng: &mut SeededRng,
) -> Vec<Sample> {
    let blobs: Vec<Vec<f64>> = (0..classes)
        .map(|k| blob_image(shape, class_center(shape, k, classes), sigma))
        .collect();
    (0..count)
        .map(|i| {
            let label = i % classes;
            let pixels: Vec<f64> = blobs[label]
                .iter()
                .map(|&b| (b + noise * rng.standard_normal()).clamp(0.0, 1.0))
                .collect();
            Sample::new(pixels, label).expect("clamped pixels are valid")
        })
        .collect()
}
