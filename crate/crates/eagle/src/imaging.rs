//! Image decoding and encoding plus the saliency and partition renderings.

use std::io::Cursor;
use std::path::Path;

use eagle_core::{Image, RegionPartition, Rgb, SaliencyMap};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Blend factor of the heatmap overlay.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Color of region boundaries in the partition preview.
pub const BOUNDARY_COLOR: Rgb = [255, 0, 0];

fn from_dynamic(img: image::DynamicImage, context: &str) -> Result<Image> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    Image::new(w, h, pixels).map_err(|e| Error::Image {
        context: context.into(),
        message: e.to_string(),
    })
}

/// Reads a PNG or JPEG file.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, &path.display().to_string())
}

pub fn decode_image(bytes: &[u8], context: &str) -> Result<Image> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
        context: context.into(),
        message: e.to_string(),
    })?;
    from_dynamic(img, context)
}

fn encode(bytes: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(Cursor::new(&mut out))
        .write_image(bytes, width as u32, height as u32, color)
        .expect("in-memory PNG encoding of a validated buffer");
    out
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    encode(
        image.as_bytes(),
        image.width(),
        image.height(),
        ExtendedColorType::Rgb8,
    )
}

pub fn write_png(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// 8-bit grayscale rendering, `round(255 * score)`.
pub fn saliency_png(map: &SaliencyMap) -> Vec<u8> {
    let gray: Vec<u8> = map
        .scores()
        .iter()
        .map(|s| (s * 255.0).round() as u8)
        .collect();
    encode(&gray, map.width(), map.height(), ExtendedColorType::L8)
}

/// Jet color ramp (dark blue through green to dark red) for a score in [0, 1].
pub fn heat_color(score: f64) -> Rgb {
    let s = score.clamp(0.0, 1.0);
    let channel =
        |center: f64| ((1.5 - (4.0 * s - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// `(1 - alpha) * image + alpha * heat_color(score)` per pixel.
pub fn heatmap_overlay(image: &Image, map: &SaliencyMap, alpha: f64) -> Result<Image> {
    if image.dimensions() != (map.width(), map.height()) {
        return Err(eagle_core::Error::DimensionMismatch {
            expected: image.dimensions(),
            found: (map.width(), map.height()),
        }
        .into());
    }
    let pixels = image
        .pixels()
        .iter()
        .zip(map.scores())
        .map(|(px, &s)| {
            let heat = heat_color(s);
            let mut out = [0u8; 3];
            for c in 0..3 {
                out[c] = ((1.0 - alpha) * px[c] as f64 + alpha * heat[c] as f64).round() as u8;
            }
            out
        })
        .collect();
    Ok(Image::new(image.width(), image.height(), pixels)?)
}

/// Paints every pixel that has a 4-neighbor in another region.
pub fn boundary_overlay(image: &Image, partition: &RegionPartition, color: Rgb) -> Result<Image> {
    let (w, h) = image.dimensions();
    if partition.dimensions() != (w, h) {
        return Err(eagle_core::Error::DimensionMismatch {
            expected: (w, h),
            found: partition.dimensions(),
        }
        .into());
    }
    let mut out = image.clone();
    let pixels = out.pixels_mut();
    for y in 0..h {
        for x in 0..w {
            let label = partition.label_at(x, y);
            let differs = (x + 1 < w && partition.label_at(x + 1, y) != label)
                || (y + 1 < h && partition.label_at(x, y + 1) != label)
                || (x > 0 && partition.label_at(x - 1, y) != label)
                || (y > 0 && partition.label_at(x, y - 1) != label);
            if differs {
                pixels[y * w + x] = color;
            }
        }
    }
    Ok(out)
}
