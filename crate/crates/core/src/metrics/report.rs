use serde::Serialize;

/// Text reports show an infinite PSNR as this value.
pub const PSNR_TEXT_CAP: f64 = 99.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    /// Mean wall-clock inference time per image, when measured.
    pub mean_seconds: Option<f64>,
}

#[derive(Serialize)]
struct JsonImage<'a> {
    name: &'a str,
    psnr_db: Option<f64>,
    ssim: f64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    images: Vec<JsonImage<'a>>,
    mean_psnr_db: Option<f64>,
    mean_ssim: f64,
    mean_seconds: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn shown(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        PSNR_TEXT_CAP
    }
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|m| m.psnr_db).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|m| m.ssim).sum::<f64>() / self.images.len() as f64
    }

    pub fn to_text(&self) -> String {
        let width = self.images.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>8}  {:>7}\n", "image", "PSNR", "SSIM");
        for m in &self.images {
            out.push_str(&format!("{:<width$}  {:>8.3}  {:>7.4}\n", m.name, shown(m.psnr_db), m.ssim));
        }
        out.push_str(&format!("{:<width$}  {:>8.3}  {:>7.4}\n", "mean", shown(self.mean_psnr()), self.mean_ssim()));
        if let Some(s) = self.mean_seconds {
            out.push_str(&format!("mean inference time: {s:.4} s/image\n"));
        }
        out
    }

    /// JSON with `null` in place of an infinite PSNR.
    pub fn to_json(&self) -> String {
        let r = JsonReport {
            images: self
                .images
                .iter()
                .map(|m| JsonImage { name: &m.name, psnr_db: finite(m.psnr_db), ssim: m.ssim })
                .collect(),
            mean_psnr_db: finite(self.mean_psnr()),
            mean_ssim: self.mean_ssim(),
            mean_seconds: self.mean_seconds,
        };
        serde_json::to_string_pretty(&r).expect("plain data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            images: vec![
                ImageMetrics { name: "a.png".into(), psnr_db: 30.0, ssim: 0.9 },
                ImageMetrics { name: "b.png".into(), psnr_db: 20.0, ssim: 0.7 },
            ],
            mean_seconds: Some(0.5),
        }
    }

    #[test]
    fn aggregates_are_arithmetic_means() {
        let r = report();
        assert_eq!(r.mean_psnr(), 25.0);
        assert!((r.mean_ssim() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn infinite_psnr_is_capped_in_text_and_null_in_json() {
        let mut r = report();
        r.images[0].psnr_db = f64::INFINITY;
        assert!(r.to_text().contains("99.000"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["images"][0]["psnr_db"].is_null());
        assert!(v["mean_psnr_db"].is_null());
        assert_eq!(v["images"][1]["psnr_db"], 20.0);
    }

    #[test]
    fn text_has_one_row_per_image_plus_mean() {
        let t = report().to_text();
        assert!(t.lines().next().unwrap().contains("PSNR"));
        assert!(t.contains("a.png") && t.contains("b.png") && t.contains("mean"));
    }
}
