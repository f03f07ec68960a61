//! IDX dataset ingestion.
//!
//! The classic big-endian container: magic `0x00000803` for image tensors
//! and `0x00000801` for label vectors, 32-bit dimension sizes, then raw
//! unsigned bytes. Pixels are scaled to `[0,1]`; larger sources are
//! reduced to the working resolution by exact fractional area averaging,
//! which preserves the image mean bit-for-bit up to rounding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gradmatch::ImageShape;
use crate::smallnet::Sample;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Data(format!(
            "truncated file: {what} needs bytes {offset}..{end}, file has {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parsed image tensor: row-major `[0,1]` pixels per image.
#[derive(Debug)]
pub struct IdxImages {
    pub images: Vec<Vec<f64>>,
    pub height: usize,
    pub width: usize,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "bad image magic {magic:#010x} at offset 0 (expected {IMAGES_MAGIC:#010x})"
        )));
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let height = read_u32(bytes, 8, "image rows")? as usize;
    let width = read_u32(bytes, 12, "image cols")? as usize;
    let pixel_bytes = count * height * width;
    if bytes.len() != 16 + pixel_bytes {
        return Err(Error::Data(format!(
            "image payload: expected {} bytes at offset 16, file has {}",
            pixel_bytes,
            bytes.len().saturating_sub(16)
        )));
    }
    let images = (0..count)
        .map(|i| {
            let start = 16 + i * height * width;
            bytes[start..start + height * width]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    Ok(IdxImages {
        images,
        height,
        width,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "bad label magic {magic:#010x} at offset 0 (expected {LABELS_MAGIC:#010x})"
        )));
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Data(format!(
            "label payload: expected {count} bytes at offset 8, file has {}",
            bytes.len().saturating_sub(8)
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Center crop to a `size x size` square.
pub fn center_crop(src: &[f64], h: usize, w: usize, size: usize) -> Result<Vec<f64>> {
    if size > h || size > w {
        return Err(Error::Data(format!(
            "crop {size} exceeds source {h}x{w}"
        )));
    }
    let r0 = (h - size) / 2;
    let c0 = (w - size) / 2;
    let mut out = Vec::with_capacity(size * size);
    for r in r0..r0 + size {
        out.extend_from_slice(&src[r * w + c0..r * w + c0 + size]);
    }
    Ok(out)
}

/// Exact fractional-box area averaging from `(sh, sw)` to `(th, tw)`.
///
/// Every source pixel contributes its full unit area exactly once across
/// the target boxes, so the image mean is conserved.
pub fn downsample_area(src: &[f64], sh: usize, sw: usize, th: usize, tw: usize) -> Result<Vec<f64>> {
    if th > sh || tw > sw {
        return Err(Error::Data(format!(
            "cannot downsample {sh}x{sw} up to {th}x{tw}"
        )));
    }
    if th == sh && tw == sw {
        return Ok(src.to_vec());
    }
    let ry = sh as f64 / th as f64;
    let rx = sw as f64 / tw as f64;
    let mut out = vec![0.0; th * tw];
    for tr in 0..th {
        let y0 = tr as f64 * ry;
        let y1 = y0 + ry;
        for tc in 0..tw {
            let x0 = tc as f64 * rx;
            let x1 = x0 + rx;
            let mut acc = 0.0;
            let mut sr = y0.floor() as usize;
            while (sr as f64) < y1 && sr < sh {
                let oy = (y1.min(sr as f64 + 1.0) - y0.max(sr as f64)).max(0.0);
                let mut sc = x0.floor() as usize;
                while (sc as f64) < x1 && sc < sw {
                    let ox = (x1.min(sc as f64 + 1.0) - x0.max(sc as f64)).max(0.0);
                    acc += src[sr * sw + sc] * oy * ox;
                    sc += 1;
                }
                sr += 1;
            }
            out[tr * tw + tc] = acc / (ry * rx);
        }
    }
    Ok(out)
}

/// Loads up to `limit` samples, reduced to `target` resolution, with
/// labels checked against `classes`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: usize,
    target: ImageShape,
    crop: Option<usize>,
    classes: usize,
) -> Result<Vec<Sample>> {
    let image_bytes = std::fs::read(images_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", images_path.display())))?;
    let label_bytes = std::fs::read(labels_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", labels_path.display())))?;

    let parsed = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if parsed.images.len() != labels.len() {
        return Err(Error::Data(format!(
            "image/label count mismatch: {} images vs {} labels",
            parsed.images.len(),
            labels.len()
        )));
    }

    let take = limit.min(parsed.images.len());
    let mut samples = Vec::with_capacity(take);
    for (i, (img, &label)) in parsed.images.iter().zip(&labels).take(take).enumerate() {
        let (img, h, w) = match crop {
            Some(size) => (
                center_crop(img, parsed.height, parsed.width, size)?,
                size,
                size,
            ),
            None => (img.clone(), parsed.height, parsed.width),
        };
        let pixels = downsample_area(&img, h, w, target.height(), target.width())?;
        if label >= classes {
            return Err(Error::Data(format!(
                "sample {i}: label {label} out of range for {classes} classes"
            )));
        }
        samples.push(Sample::new(pixels, label)?);
    }
    Ok(samples)
}

/// Serializes samples back into a pair of IDX byte buffers (images,
/// labels); pixels are quantized to bytes. Used to build fixtures.
pub fn encode_idx(samples: &[(Vec<u8>, u8)], height: usize, width: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + samples.len() * height * width);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    images.extend_from_slice(&(height as u32).to_be_bytes());
    images.extend_from_slice(&(width as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + samples.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for (pixels, label) in samples {
        assert_eq!(pixels.len(), height * width);
        images.extend_from_slice(pixels);
        labels.push(*label);
    }
    (images, labels)
}
