use std::path::Path;

use image::{DynamicImage, RgbImage};

use super::image_shape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), message: message.into() }
}

/// Reads an 8-bit RGB PNG as a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e.to_string()))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => return Err(image_err(path, format!("expected 8-bit RGB, found {:?}", other.color()))),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(image_shape(h, w), |_, c, i, j| raw[(i * w + j) * 3 + c] as f32 / 255.0))
}

/// Writes the first image of `t` as an 8-bit RGB PNG: values are clamped to `[0, 1]` and
/// quantised as `round(v * 255)`.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.c != 3 {
        return Err(image_err(path, format!("cannot save a {s} tensor as RGB")));
    }
    let mut img = RgbImage::new(s.w as u32, s.h as u32);
    for (j, i, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = t.at(0, c, i as usize, j as usize);
            px.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| image_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_image_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let t = Tensor::uniform(Shape::new(1, 3, 9, 13), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(t.max_abs_diff(&back) <= 1.0 / 255.0 + 1e-6);
    }

    #[test]
    fn black_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        let t = Tensor::zeros(Shape::new(1, 3, 4, 4));
        save_image(&t, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), t);
    }

    #[test]
    fn known_pixel_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        RgbImage::from_pixel(2, 2, image::Rgb([128, 128, 128])).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.50196).abs() < 1e-5));
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let t = Tensor::from_vec(Shape::new(1, 3, 1, 2), vec![-0.5, 1.5, 0.0, 1.0, 0.2, 2.0]).unwrap();
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.data()[..4], [0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn grayscale_and_missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::GrayImage::new(3, 3).save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("gray.png"));
        let missing = dir.path().join("none.png");
        assert!(load_image(&missing).unwrap_err().to_string().contains("none.png"));
    }
}
