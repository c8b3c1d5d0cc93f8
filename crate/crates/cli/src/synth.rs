//! Procedural image synthesis for desk-scale datasets.
//!
//! Content images are flat-shaded scenes (gradient sky, shapes, horizon
//! bands) with mild noise; style images are strongly colored multi-scale
//! textures (plaids, stripes, blobs). Everything derives from one seed.

use ufse_core::rng::Rng;
use ufse_core::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Content,
    Style,
}

/// One synthetic image, roughly `base` pixels per side (aspect varies).
pub fn synth_image(kind: SynthKind, base: usize, rng: &mut Rng) -> Tensor<f32> {
    let h = base + rng.below(base / 3 + 1);
    let w = base + rng.below(base / 3 + 1);
    match kind {
        SynthKind::Content => content_image(h, w, rng),
        SynthKind::Style => style_image(h, w, rng),
    }
}

pub fn synth_dataset(kind: SynthKind, count: usize, base: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count).map(|_| synth_image(kind, base, &mut rng)).collect()
}

fn palette(rng: &mut Rng) -> [[f32; 3]; 4] {
    let mut colors = [[0.0f32; 3]; 4];
    for color in &mut colors {
        for ch in color.iter_mut() {
            *ch = rng.uniform(0.05, 0.95);
        }
    }
    colors
}

fn put(img: &mut [f32], h: usize, w: usize, y: usize, x: usize, c: &[f32; 3]) {
    for (ch, &v) in c.iter().enumerate() {
        img[ch * h * w + y * w + x] = v;
    }
}

fn content_image(h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    let colors = palette(rng);
    let mut img = vec![0.0f32; 3 * h * w];

    // Vertical gradient background between two palette colors.
    for y in 0..h {
        let t = y as f32 / h as f32;
        for x in 0..w {
            let c = [
                colors[0][0] * (1.0 - t) + colors[1][0] * t,
                colors[0][1] * (1.0 - t) + colors[1][1] * t,
                colors[0][2] * (1.0 - t) + colors[1][2] * t,
            ];
            put(&mut img, h, w, y, x, &c);
        }
    }

    // A horizon band.
    let horizon = h / 2 + rng.below(h / 3 + 1);
    for y in horizon..h {
        for x in 0..w {
            put(&mut img, h, w, y, x, &colors[2]);
        }
    }

    // Flat-shaded circles and rectangles.
    let shapes = 3 + rng.below(5);
    for _ in 0..shapes {
        let color = [
            rng.uniform(0.0, 1.0),
            rng.uniform(0.0, 1.0),
            rng.uniform(0.0, 1.0),
        ];
        if rng.below(2) == 0 {
            let cy = rng.below(h) as isize;
            let cx = rng.below(w) as isize;
            let r = (4 + rng.below(h / 4 + 1)) as isize;
            for y in (cy - r).max(0)..(cy + r).min(h as isize) {
                for x in (cx - r).max(0)..(cx + r).min(w as isize) {
                    if (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r {
                        put(&mut img, h, w, y as usize, x as usize, &color);
                    }
                }
            }
        } else {
            let y0 = rng.below(h);
            let x0 = rng.below(w);
            let hh = 4 + rng.below(h / 3 + 1);
            let ww = 4 + rng.below(w / 3 + 1);
            for y in y0..(y0 + hh).min(h) {
                for x in x0..(x0 + ww).min(w) {
                    put(&mut img, h, w, y, x, &color);
                }
            }
        }
    }

    // Mild pixel noise so features are never exactly constant.
    for v in img.iter_mut() {
        *v = (*v + rng.uniform::<f32>(-0.02, 0.02)).clamp(0.0, 1.0);
    }
    Tensor::new(vec![3, h, w], img).expect("consistent")
}

fn style_image(h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    let colors = palette(rng);
    let mut img = vec![0.0f32; 3 * h * w];

    // Two oriented sinusoids at different scales plus a blob field decide
    // the palette mix per pixel.
    let th1: f32 = rng.uniform(0.0, core::f64::consts::PI);
    let th2: f32 = rng.uniform(0.0, core::f64::consts::PI);
    let f1: f32 = rng.uniform(0.05, 0.35);
    let f2: f32 = rng.uniform(0.3, 1.2);
    let (s1, c1) = th1.sin_cos();
    let (s2, c2) = th2.sin_cos();
    let blobs: Vec<(f32, f32, f32)> = (0..4 + rng.below(4))
        .map(|_| {
            (
                rng.uniform::<f32>(0.0, h as f64),
                rng.uniform::<f32>(0.0, w as f64),
                rng.uniform::<f32>(6.0, h as f64 / 2.5),
            )
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32, x as f32);
            let a = ((xf * c1 + yf * s1) * f1).sin();
            let b = ((xf * c2 + yf * s2) * f2).sin();
            let mut g = 0.0f32;
            for &(by, bx, br) in &blobs {
                let d2 = (yf - by).powi(2) + (xf - bx).powi(2);
                g += (-d2 / (br * br)).exp();
            }
            let wa = 0.5 + 0.5 * a;
            let wb = 0.5 + 0.5 * b;
            let wg = g.min(1.0);
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = colors[0][c] * wa * (1.0 - wg)
                    + colors[1][c] * (1.0 - wa) * (1.0 - wg)
                    + colors[2][c] * wb * wg
                    + colors[3][c] * (1.0 - wb) * wg;
            }
            let n: f32 = rng.uniform(-0.03, 0.03);
            for (ch, &v) in px.iter().enumerate() {
                img[ch * h * w + y * w + x] = (v + n).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], img).expect("consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_are_seed_deterministic() {
        let a = synth_dataset(SynthKind::Style, 3, 64, 9);
        let b = synth_dataset(SynthKind::Style, 3, 64, 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        let c = synth_dataset(SynthKind::Style, 3, 64, 10);
        assert_ne!(a[0].data(), c[0].data());
    }

    #[test]
    fn images_are_rgb_in_unit_range() {
        for kind in [SynthKind::Content, SynthKind::Style] {
            for img in synth_dataset(kind, 4, 48, 3) {
                assert_eq!(img.dims()[0], 3);
                assert!(img.dims()[1] >= 48 && img.dims()[2] >= 48);
                assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
