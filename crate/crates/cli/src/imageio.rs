//! Image file I/O: 8-bit RGB PNG/JPEG in, clamped 8-bit out, plus the
//! grayscale correlation heatmaps and sweep grids.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};
use ufse_core::stats::CorrelationMatrix;
use ufse_core::tensor::Tensor;

/// Read an 8-bit RGB PNG/JPEG into a 3xHxW tensor, mapping byte b to b/255.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => {}
        other => bail!(
            "unsupported format in {}: only 8-bit images are supported (got {:?})",
            path.display(),
            other.color()
        ),
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + at] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

/// Write a 3xHxW tensor as PNG/JPEG (by extension), clamping to [0, 1] and
/// mapping v to round(v * 255).
pub fn write_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let dims = img.dims();
    anyhow::ensure!(
        dims.len() == 3 && dims[0] == 3,
        "expected 3xHxW tensor, got {dims:?}"
    );
    let (h, w) = (dims[1], dims[2]);
    let data = img.data();
    let mut out: RgbImage = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            let v = data[c * h * w + at].clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    out.save(path)
        .with_context(|| format!("writing image {}", path.display()))?;
    Ok(())
}

/// Correlation heatmap: |r| mapped to 0..255 grayscale, one pixel per entry.
pub fn write_heatmap(path: &Path, r: &CorrelationMatrix<f32>) -> Result<()> {
    let c = r.size();
    let mut img: GrayImage = ImageBuffer::new(c as u32, c as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let v = r.entry(y as usize, x as usize).abs().clamp(0.0, 1.0);
        px.0[0] = (v * 255.0).round() as u8;
    }
    img.save(path)
        .with_context(|| format!("writing heatmap {}", path.display()))?;
    Ok(())
}

/// Correlation matrix as CSV, row-major, six significant digits.
pub fn correlation_csv(r: &CorrelationMatrix<f32>) -> String {
    let c = r.size();
    let mut out = String::new();
    for i in 0..c {
        for j in 0..c {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.5e}", r.entry(i, j)));
        }
        out.push('\n');
    }
    out
}

/// Horizontal strip of equally sized images with a small gap, for the
/// elimination-sweep grids.
pub fn write_grid(path: &Path, images: &[Tensor<f32>]) -> Result<()> {
    anyhow::ensure!(!images.is_empty(), "grid needs at least one image");
    let dims = images[0].dims().to_vec();
    for img in images {
        anyhow::ensure!(img.dims() == dims, "grid images must share a size");
    }
    let (h, w) = (dims[1], dims[2]);
    let gap = 2usize;
    let total_w = images.len() * w + (images.len() - 1) * gap;
    let mut out: RgbImage = ImageBuffer::from_pixel(total_w as u32, h as u32, image::Rgb([255; 3]));
    for (k, img) in images.iter().enumerate() {
        let x0 = k * (w + gap);
        let data = img.data();
        for y in 0..h {
            for x in 0..w {
                let mut px = [0u8; 3];
                for c in 0..3 {
                    let v = data[c * h * w + y * w + x].clamp(0.0, 1.0);
                    px[c] = (v * 255.0).round() as u8;
                }
                out.put_pixel((x0 + x) as u32, y as u32, image::Rgb(px));
            }
        }
    }
    out.save(path)
        .with_context(|| format!("writing grid {}", path.display()))?;
    Ok(())
}
