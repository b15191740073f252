//! Procedurally generated labeled corpora.
//!
//! Each class combines a silhouette with a color scheme. Within a silhouette the band layout and
//! band luminances are identical across color schemes, so grayscale (and therefore edges and
//! keypoints) carry shape information only; the hue lives purely in the color channels.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::RasterImage;
use crate::index::LabeledImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Silhouette {
    /// Ellipse body, round head, wedge tail.
    Bird,
    Star,
    /// A square with one quadrant removed.
    Notch,
}

impl Silhouette {
    pub const ALL: [Silhouette; 3] = [Silhouette::Bird, Silhouette::Star, Silhouette::Notch];

    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Silhouette::Bird => {
                let body = ((u - 0.0) / 0.55).powi(2) + ((v - 0.1) / 0.32).powi(2) <= 1.0;
                let head = (u - 0.5).hypot(v + 0.25) <= 0.2;
                let tail = in_triangle((u, v), (-0.45, 0.05), (-0.95, -0.3), (-0.9, 0.3));
                body || head || tail
            }
            Silhouette::Star => {
                let r = u.hypot(v);
                let theta = v.atan2(u) + PI / 2.0;
                let sector = 2.0 * PI / 5.0;
                let t = (theta.rem_euclid(sector) / sector - 0.5).abs() * 2.0;
                // Outer radius 0.85 at the tips, 0.38 in the valleys.
                r <= 0.38 + (0.85 - 0.38) * (1.0 - t)
            }
            Silhouette::Notch => {
                let in_square = u.abs() <= 0.7 && v.abs() <= 0.7;
                let notch = u > 0.0 && v < 0.0;
                in_square && !notch
            }
        }
    }
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), x: (f64, f64), y: (f64, f64)| {
        (x.0 - o.0) * (y.1 - o.1) - (x.1 - o.1) * (y.0 - o.0)
    };
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Zero-luma chroma direction for a pure primary.
fn chroma(primary: usize) -> [f64; 3] {
    const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
    let mut v = [-LUMA[primary]; 3];
    v[primary] += 1.0;
    v
}

/// Horizontal band luminances, top to bottom.
const BAND_LUMA: [f64; 3] = [0.7, 0.45, 0.6];
const BACKGROUND_LUMA: f64 = 0.15;
const SATURATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub shapes: usize,
    pub colors: usize,
    pub per_class: usize,
    pub size: usize,
    /// Max absolute rotation, radians.
    pub max_rotation: f64,
    /// Scale drawn from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Max absolute translation, pixels.
    pub max_shift: f64,
    /// Uniform per-channel noise amplitude, 8-bit levels.
    pub noise: i32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shapes: 3,
            colors: 3,
            per_class: 8,
            size: 96,
            max_rotation: 5f64.to_radians(),
            scale_jitter: 0.08,
            max_shift: 3.0,
            noise: 6,
            seed: 7,
        }
    }
}

/// Renders one image. `shape` and `color` index [`Silhouette::ALL`] and the RGB primaries.
pub fn render(spec: &SynthSpec, shape: usize, color: usize, rng: &mut impl Rng) -> RasterImage {
    let silhouette = Silhouette::ALL[shape % Silhouette::ALL.len()];
    let hue = chroma(color % 3);
    let size = spec.size;
    let rot = rng.gen_range(-spec.max_rotation..=spec.max_rotation);
    let scale = 1.0 + rng.gen_range(-spec.scale_jitter..=spec.scale_jitter);
    let tx = rng.gen_range(-spec.max_shift..=spec.max_shift);
    let ty = rng.gen_range(-spec.max_shift..=spec.max_shift);
    let half = size as f64 / 2.0;
    let extent = 0.38 * size as f64 * scale;
    let (sin, cos) = (-rot).sin_cos();

    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - half - tx;
            let dy = y as f64 + 0.5 - half - ty;
            let u = (cos * dx - sin * dy) / extent;
            let v = (sin * dx + cos * dy) / extent;
            let rgb = if silhouette.contains(u, v) {
                let band = (((v + 1.0) / 2.0 * 3.0).floor().clamp(0.0, 2.0)) as usize;
                let luma = BAND_LUMA[band];
                [0, 1, 2].map(|c| luma + SATURATION * hue[c])
            } else {
                [BACKGROUND_LUMA; 3]
            };
            pixels.push(rgb.map(|c| {
                let noisy = (c * 255.0).round() as i32 + rng.gen_range(-spec.noise..=spec.noise);
                noisy.clamp(0, 255) as u8
            }));
        }
    }
    RasterImage::new(size, size, pixels).expect("dimensions match")
}

pub fn class_label(shape: usize, color: usize) -> String {
    format!("s{shape}c{color}")
}

/// `shapes × colors` classes of `per_class` images each, in class order.
pub fn synthetic_corpus(spec: &SynthSpec) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.shapes * spec.colors * spec.per_class);
    for shape in 0..spec.shapes {
        for color in 0..spec.colors {
            let label = class_label(shape, color);
            for i in 0..spec.per_class {
                out.push(LabeledImage {
                    image_id: format!("{label}/img{i:02}.png"),
                    label: label.clone(),
                    image: render(spec, shape, color, &mut rng),
                });
            }
        }
    }
    out
}

/// Writes a corpus as `<dir>/<class>/<file>.png`.
pub fn write_corpus(images: &[LabeledImage], dir: &Path) -> Result<()> {
    for img in images {
        let path = dir.join(&img.image_id);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
        }
        img.image.save_png(&path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{luminance, to_grayscale};

    #[test]
    fn chroma_has_zero_luma() {
        for p in 0..3 {
            let c = chroma(p);
            assert!((0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).abs() < 1e-15);
        }
    }

    #[test]
    fn colors_share_luminance() {
        let spec = SynthSpec {
            noise: 0,
            ..Default::default()
        };
        let a = render(&spec, 0, 0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = render(&spec, 0, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_ne!(a, b);
        let (ga, gb) = (to_grayscale(&a), to_grayscale(&b));
        let worst = ga
            .data
            .iter()
            .zip(&gb.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2.0 / 255.0, "luma gap {worst}");
        assert!(luminance(a.get(0, 0)) < 0.2);
    }

    #[test]
    fn corpus_shape() {
        let spec = SynthSpec {
            per_class: 2,
            size: 48,
            ..Default::default()
        };
        let c = synthetic_corpus(&spec);
        assert_eq!(c.len(), 18);
        assert_eq!(c[0].image_id, "s0c0/img00.png");
        assert_eq!(c[17].label, "s2c2");
        assert_eq!(synthetic_corpus(&spec)[5].image, c[5].image);
    }
}
