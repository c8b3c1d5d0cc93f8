//! Image-tensor geometry: bilinear resize, crops, reflective padding.
//!
//! Images are CxHxW tensors with values in [0, 1]. These are the
//! preprocessing primitives of the training pipeline and the padding used
//! by stylization to accept arbitrary sizes.

use alloc::vec;
use alloc::vec::Vec;


// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Element;
use crate::error::{usage_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn image_dims<T: Element>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let d = img.dims();
    if d.len() != 3 {
        return Err(usage_err!("expected CxHxW image tensor, got {d:?}"));
    }
    Ok((d[0], d[1], d[2]))
}

/// Bilinear resample to an exact size, half-pixel-center convention.
pub fn bilinear_resize<T: Element>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(usage_err!("resize target must be positive"));
    }
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let src = img.data();
    let mut out = vec![T::zero(); c * out_h * out_w];
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ci in 0..c {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                let v00 = plane[y0 * w + x0].as_f64();
                let v01 = plane[y0 * w + x1].as_f64();
                let v10 = plane[y1 * w + x0].as_f64();
                let v11 = plane[y1 * w + x1].as_f64();
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[ci * out_h * out_w + oy * out_w + ox] = T::from_f64(top + (bot - top) * wy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Scale so the shorter side equals `target`, preserving aspect ratio
/// (the longer side rounds to the nearest pixel).
pub fn resize_shorter_side<T: Element>(img: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let (_, h, w) = image_dims(img)?;
    let (out_h, out_w) = if h <= w {
        let scaled = (w as f64 * target as f64 / h as f64).round().max(1.0) as usize;
        (target, scaled)
    } else {
        let scaled = (h as f64 * target as f64 / w as f64).round().max(1.0) as usize;
        (scaled, target)
    };
    bilinear_resize(img, out_h, out_w)
}

/// Crop a size x size window at the given top-left offset.
pub fn crop_at<T: Element>(
    img: &Tensor<T>,
    top: usize,
    left: usize,
    size: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(img)?;
    if top + size > h || left + size > w {
        return Err(usage_err!(
            "crop {size} at ({top}, {left}) exceeds image {h}x{w}"
        ));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for y in 0..size {
            let row = (top + y) * w + left;
            out.extend_from_slice(&plane[row..row + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Uniformly random crop offsets for a size x size window.
pub fn random_crop_offsets<T: Element>(
    img: &Tensor<T>,
    size: usize,
    rng: &mut Rng,
) -> Result<(usize, usize)> {
    let (_, h, w) = image_dims(img)?;
    if size > h || size > w {
        return Err(usage_err!("crop {size} exceeds image {h}x{w}"));
    }
    let top = if h == size { 0 } else { rng.below(h - size + 1) };
    let left = if w == size { 0 } else { rng.below(w - size + 1) };
    Ok((top, left))
}

/// Training preprocessing: shorter side to `resize_to`, then a uniformly
/// random `crop_to` square.
pub fn preprocess<T: Element>(
    img: &Tensor<T>,
    resize_to: usize,
    crop_to: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if crop_to > resize_to {
        return Err(usage_err!(
            "crop size {crop_to} exceeds resize target {resize_to}"
        ));
    }
    let resized = resize_shorter_side(img, resize_to)?;
    let (top, left) = random_crop_offsets(&resized, crop_to, rng)?;
    crop_at(&resized, top, left, crop_to)
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    // Fold into [0, 2n-2) then mirror the upper half.
    let period = 2 * n - 2;
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Pad on the bottom/right with reflected rows/columns so both sides become
/// multiples of `multiple`. Returns the padded image and the original size.
pub fn pad_reflect_to_multiple<T: Element>(
    img: &Tensor<T>,
    multiple: usize,
) -> Result<(Tensor<T>, usize, usize)> {
    let (c, h, w) = image_dims(img)?;
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if ph == h && pw == w {
        return Ok((img.clone(), h, w));
    }
    let src = img.data();
    let mut out = vec![T::zero(); c * ph * pw];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for y in 0..ph {
            let sy = reflect_index(y, h);
            for x in 0..pw {
                out[ci * ph * pw + y * pw + x] = plane[sy * w + reflect_index(x, w)];
            }
        }
    }
    Ok((Tensor::new(vec![c, ph, pw], out)?, h, w))
}

/// Crop back to a size recorded by [`pad_reflect_to_multiple`].
pub fn crop_to_size<T: Element>(img: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, ph, pw) = image_dims(img)?;
    if h > ph || w > pw {
        return Err(usage_err!("crop {h}x{w} exceeds image {ph}x{pw}"));
    }
    if h == ph && w == pw {
        return Ok(img.clone());
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        let plane = &src[ci * ph * pw..(ci + 1) * ph * pw];
        for y in 0..h {
            out.extend_from_slice(&plane[y * pw..y * pw + w]);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Clamp to [0, 1]; applied only at image export.
pub fn clamp_unit<T: Element>(img: &mut Tensor<T>) {
    for v in img.data_mut() {
        *v = v.min(T::one()).max(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(c: usize, h: usize, w: usize) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    t.data_mut()[ci * h * w + y * w + x] =
                        (ci as f32 * 0.1 + y as f32 * 0.01 + x as f32 * 0.001).fract();
                }
            }
        }
        t
    }

    #[test]
    fn preprocess_follows_the_resize_then_crop_rule() {
        // 512x384 (w x h laid out as h=384, w=512): shorter side 384 -> 256,
        // so the resize is 256 x 341, then a 240 crop.
        let img = gradient_image(3, 384, 512);
        let mut rng = Rng::seed_from_u64(0);
        let resized = resize_shorter_side(&img, 256).unwrap();
        assert_eq!(resized.dims(), &[3, 256, 341]);
        let out = preprocess(&img, 256, 240, &mut rng).unwrap();
        assert_eq!(out.dims(), &[3, 240, 240]);
    }

    #[test]
    fn exact_size_crop_is_deterministic_identity() {
        let img = gradient_image(3, 64, 64);
        let mut rng = Rng::seed_from_u64(1);
        let out = preprocess(&img, 64, 64, &mut rng).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn same_seed_gives_same_crops() {
        let img = gradient_image(3, 90, 120);
        let mut a = Rng::seed_from_u64(5);
        let mut b = Rng::seed_from_u64(5);
        let ca = preprocess(&img, 80, 64, &mut a).unwrap();
        let cb = preprocess(&img, 80, 64, &mut b).unwrap();
        assert_eq!(ca.data(), cb.data());
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Tensor::full(&[3, 10, 14], 0.625f32);
        let out = bilinear_resize(&img, 7, 9).unwrap();
        for &v in out.data() {
            assert!((v - 0.625).abs() < 1e-6);
        }
    }

    #[test]
    fn reflect_padding_rounds_up_and_restores() {
        let img = gradient_image(3, 30, 33);
        let (padded, h, w) = pad_reflect_to_multiple(&img, 4).unwrap();
        assert_eq!(padded.dims(), &[3, 32, 36]);
        let back = crop_to_size(&padded, h, w).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn clamp_bounds_values() {
        let mut t = Tensor::new(vec![1, 1, 3], vec![-0.5f32, 0.5, 1.5]).unwrap();
        clamp_unit(&mut t);
        assert_eq!(t.data(), &[0.0, 0.5, 1.0]);
    }
}
