use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{image_shape, RainParams};
use crate::error::{usage_err, Result};
use crate::tensor::Tensor;

/// A line segment with round caps, in pixel coordinates (pixel `(i, j)` covers
/// `[j, j + 1) x [i, i + 1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Streak {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub width: f64,
    pub intensity: f64,
}

impl Streak {
    pub fn distance(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (((px - self.x0) * dx + (py - self.y0) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (cx, cy) = (self.x0 + t * dx, self.y0 + t * dy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    }

    /// Anti-aliased coverage of a point: 1 inside the core, a one-pixel linear ramp at the edge.
    pub fn coverage(&self, px: f64, py: f64) -> f64 {
        (self.width / 2.0 + 0.5 - self.distance(px, py)).clamp(0.0, 1.0)
    }
}

/// Draws the streak list for an `h` x `w` image. Pure function of `params`.
pub fn sample_streaks(h: usize, w: usize, params: &RainParams) -> Result<Vec<Streak>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let count = rng.gen_range(params.streak_count[0]..=params.streak_count[1]);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let angle = rng.gen_range(params.angle_deg[0]..=params.angle_deg[1]).to_radians();
        let length = rng.gen_range(params.length_px[0]..=params.length_px[1]) as f64;
        let width = rng.gen_range(params.width_px[0]..=params.width_px[1]) as f64;
        let intensity = rng.gen_range(params.intensity[0]..=params.intensity[1]);
        // Image rows grow downward, so a positive angle points up-right.
        let (ux, uy) = (angle.cos() * length / 2.0, -angle.sin() * length / 2.0);
        out.push(Streak { x0: cx - ux, y0: cy - uy, x1: cx + ux, y1: cy + uy, width, intensity });
    }
    Ok(out)
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with half-sample symmetric borders, which preserves the total.
fn gaussian_blur(buf: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let mut tmp = vec![0.0; buf.len()];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * buf[i * w + reflect(j as isize + t as isize - radius, w)])
                .sum();
        }
    }
    for i in 0..h {
        for j in 0..w {
            buf[i * w + j] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * tmp[reflect(i as isize + t as isize - radius, h) * w + j])
                .sum();
        }
    }
}

/// Renders the rain layer: streak coverage times intensity summed at pixel centres,
/// blurred, capped at 1 and replicated to three channels.
pub fn render_streaks(h: usize, w: usize, params: &RainParams) -> Result<Tensor> {
    if h < 8 || w < 8 {
        return Err(usage_err!("rain layer must be at least 8x8, got {h}x{w}"));
    }
    let streaks = sample_streaks(h, w, params)?;
    let mut buf = vec![0.0f64; h * w];
    for s in &streaks {
        let reach = s.width / 2.0 + 0.5;
        let lo_x = (s.x0.min(s.x1) - reach).floor().max(0.0) as usize;
        let hi_x = ((s.x0.max(s.x1) + reach).ceil().max(0.0) as usize).min(w);
        let lo_y = (s.y0.min(s.y1) - reach).floor().max(0.0) as usize;
        let hi_y = ((s.y0.max(s.y1) + reach).ceil().max(0.0) as usize).min(h);
        for i in lo_y..hi_y {
            for j in lo_x..hi_x {
                buf[i * w + j] += s.intensity * s.coverage(j as f64 + 0.5, i as f64 + 0.5);
            }
        }
    }
    gaussian_blur(&mut buf, h, w, params.blur_sigma);
    let plane: Vec<f32> = buf.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(image_shape(h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_streaks_give_zero_layer() {
        let p = RainParams { streak_count: [0, 0], ..Default::default() };
        let r = render_streaks(16, 16, &p).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_layer() {
        let p = RainParams::default().with_seed(11);
        let a = render_streaks(40, 40, &p).unwrap();
        let b = render_streaks(40, 40, &p).unwrap();
        assert_eq!(a.data(), b.data());
        let c = render_streaks(40, 40, &p.clone().with_seed(12)).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn channels_are_identical() {
        let r = render_streaks(24, 24, &RainParams::default().with_seed(3)).unwrap();
        let plane = 24 * 24;
        assert_eq!(r.data()[..plane], r.data()[plane..2 * plane]);
        assert_eq!(r.data()[..plane], r.data()[2 * plane..]);
    }

    #[test]
    fn tiny_canvas_is_rejected() {
        assert!(render_streaks(7, 16, &RainParams::default()).is_err());
    }

    #[test]
    fn blur_keeps_the_total() {
        let mut buf = vec![0.0; 10 * 12];
        buf[0] = 1.0;
        buf[5 * 12 + 11] = 2.0;
        buf[9 * 12 + 3] = 0.5;
        gaussian_blur(&mut buf, 10, 12, 1.2);
        assert!((buf.iter().sum::<f64>() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn vertical_streak_covers_its_column() {
        let s = Streak { x0: 4.5, y0: 1.0, x1: 4.5, y1: 9.0, width: 1.0, intensity: 1.0 };
        assert_eq!(s.coverage(4.5, 5.5), 1.0);
        assert!((s.coverage(5.5, 5.5) - 0.0).abs() < 1e-12);
        assert!((s.coverage(5.0, 5.5) - 0.5).abs() < 1e-12);
    }

    /// Expected streak mass per image, by continuous Monte-Carlo integration of the coverage
    /// profile over the canvas instead of sampling at pixel centres.
    fn integrated_mean(streaks: &[Streak], h: usize, w: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut mass = 0.0;
        for s in streaks {
            let half = s.width / 2.0 + 0.5;
            let x_lo = (s.x0.min(s.x1) - half).max(0.0);
            let x_hi = (s.x0.max(s.x1) + half).min(w as f64);
            let y_lo = (s.y0.min(s.y1) - half).max(0.0);
            let y_hi = (s.y0.max(s.y1) + half).min(h as f64);
            if x_hi <= x_lo || y_hi <= y_lo {
                continue;
            }
            let area = (x_hi - x_lo) * (y_hi - y_lo);
            let samples = 400;
            let mut hit = 0.0;
            for _ in 0..samples {
                let px = rng.gen_range(x_lo..x_hi);
                let py = rng.gen_range(y_lo..y_hi);
                // Distance to the segment, written out independently of `Streak::distance`.
                let (ax, ay, bx, by) = (s.x0, s.y0, s.x1, s.y1);
                let (abx, aby) = (bx - ax, by - ay);
                let l2 = abx * abx + aby * aby;
                let mut t = ((px - ax) * abx + (py - ay) * aby) / l2;
                t = t.max(0.0).min(1.0);
                let d = (px - ax - t * abx).hypot(py - ay - t * aby);
                let c = s.width / 2.0 + 0.5 - d;
                hit += if c >= 1.0 {
                    1.0
                } else if c <= 0.0 {
                    0.0
                } else {
                    c
                };
            }
            mass += s.intensity * area * hit / samples as f64;
        }
        mass / (h * w) as f64
    }

    #[test]
    fn mean_matches_continuous_integration() {
        let (h, w) = (48, 48);
        let base = RainParams { streak_count: [10, 20], intensity: [0.1, 0.3], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut rendered, mut oracle) = (0.0, 0.0);
        for seed in 0..1000 {
            let p = base.clone().with_seed(seed);
            rendered += render_streaks(h, w, &p).unwrap().mean();
            oracle += integrated_mean(&sample_streaks(h, w, &p).unwrap(), h, w, &mut rng);
        }
        let rel = (rendered - oracle).abs() / oracle;
        assert!(rel < 0.02, "rendered {rendered} oracle {oracle} rel {rel}");
    }
}
