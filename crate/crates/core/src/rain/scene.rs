//! Procedural clean images: a colour gradient with a few flat and striped shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_shape;
use crate::tensor::Tensor;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
        }
    }
}

struct Layer {
    shape: Shape,
    colour: [f64; 3],
    /// (amplitude, frequency, direction) of an optional stripe texture.
    stripes: Option<(f64, f64, f64)>,
}

/// A `(1, 3, h, w)` image in `[0, 1]`, fully determined by `seed`.
pub fn generate_scene(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let colour = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9)];
    let top = colour(&mut rng);
    let bottom = colour(&mut rng);
    let tilt = rng.gen_range(-0.5..0.5);
    let count = rng.gen_range(3..=8);
    let layers: Vec<Layer> = (0..count)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let (x0, y0) = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
                Shape::Rect { x0, y0, x1: x0 + rng.gen_range(0.1..0.6) * wf, y1: y0 + rng.gen_range(0.1..0.6) * hf }
            } else {
                Shape::Ellipse {
                    cx: rng.gen_range(0.0..wf),
                    cy: rng.gen_range(0.0..hf),
                    rx: rng.gen_range(0.05..0.35) * wf,
                    ry: rng.gen_range(0.05..0.35) * hf,
                }
            };
            let stripes = rng.gen_bool(0.4).then(|| {
                (rng.gen_range(0.03..0.12), rng.gen_range(0.2..1.2), rng.gen_range(0.0..std::f64::consts::PI))
            });
            Layer { shape, colour: colour(&mut rng), stripes }
        })
        .collect();
    let mut t = Tensor::zeros(image_shape(h, w));
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            let a = ((y / hf) + tilt * (x / wf - 0.5)).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = top[c] * (1.0 - a) + bottom[c] * a;
            }
            for l in layers.iter().filter(|l| l.shape.contains(x, y)) {
                let wave = l.stripes.map_or(0.0, |(amp, f, dir)| amp * (f * (x * dir.cos() + y * dir.sin())).sin());
                for c in 0..3 {
                    px[c] = l.colour[c] + wave;
                }
            }
            for c in 0..3 {
                t.set(0, c, i, j, px[c].clamp(0.0, 1.0) as f32);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let a = generate_scene(32, 48, 4);
        assert_eq!(a, generate_scene(32, 48, 4));
        assert_ne!(a, generate_scene(32, 48, 5));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.shape().dims(), [1, 3, 32, 48]);
    }

    #[test]
    fn scenes_are_not_flat() {
        let a = generate_scene(32, 32, 1);
        let m = a.mean();
        let var: f64 = a.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / a.numel() as f64;
        assert!(var > 1e-4);
    }
}
