//! Difference-of-Gaussian interest points.

use std::collections::HashSet;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::imaging::{gaussian_blur, GrayImage};

/// Smallest side accepted for any octave.
pub const MIN_OCTAVE_SIDE: usize = 16;
const MAX_REFINE_STEPS: usize = 5;
const ORIENTATION_BINS: usize = 36;
/// Blur (σ, input pixels) the input is assumed to carry.
pub const ASSUMED_INPUT_BLUR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSpaceParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    pub contrast_thresh: f64,
    pub edge_thresh: f64,
}

impl Default for ScaleSpaceParams {
    fn default() -> Self {
        ScaleSpaceParams {
            octaves: 4,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_thresh: 0.03,
            edge_thresh: 10.0,
        }
    }
}

impl ScaleSpaceParams {
    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 {
            return Err(Error::InvalidParam("octaves must be >= 1".into()));
        }
        if self.scales_per_octave < 3 {
            return Err(Error::InvalidParam("scales_per_octave must be >= 3".into()));
        }
        if !(self.sigma0 > 0.0 && self.contrast_thresh > 0.0 && self.edge_thresh > 0.0) {
            return Err(Error::InvalidParam(
                "sigma0, contrast_thresh and edge_thresh must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Octave-local σ of Gaussian level `i` (fractional levels allowed).
    pub fn level_sigma(&self, i: f64) -> f64 {
        self.sigma0 * 2f64.powf(i / self.scales_per_octave as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// `scales_per_octave + 3` blurred images.
    pub gaussians: Vec<GrayImage>,
    /// `scales_per_octave + 2` layers, `dogs[i] = gaussians[i] - gaussians[i + 1]`.
    pub dogs: Vec<GrayImage>,
    /// Input-image coordinate of local pixel `j` is `step * j + offset`.
    pub step: f64,
    pub offset: f64,
}

impl Octave {
    pub fn to_image_coords(&self, x: f64, y: f64) -> (f64, f64) {
        (self.step * x + self.offset, self.step * y + self.offset)
    }
}

#[derive(Debug, Clone)]
pub struct DogPyramid {
    pub octaves: Vec<Octave>,
    pub requested_octaves: usize,
    pub params: ScaleSpaceParams,
}

impl DogPyramid {
    /// True when the image was too small for every requested octave.
    pub fn truncated(&self) -> bool {
        self.octaves.len() < self.requested_octaves
    }
}

/// Bilinear 2x upsampling onto `(2w - 1) x (2h - 1)` so local pixel `j` sits at input `j / 2`.
fn upsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (2 * img.width - 1, 2 * img.height - 1);
    GrayImage::from_fn(w, h, |x, y| {
        let (x0, y0) = (x / 2, y / 2);
        let (x1, y1) = ((x + 1) / 2, (y + 1) / 2);
        0.25 * (img.at(x0, y0) + img.at(x1, y0) + img.at(x0, y1) + img.at(x1, y1))
    })
}

/// Every other pixel, starting at 0.
fn decimate(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width.div_ceil(2), img.height.div_ceil(2), |x, y| img.at(2 * x, 2 * y))
}

/// 2x2 box downsampling. Odd trailing rows/columns are dropped.
fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width / 2, img.height / 2);
    GrayImage::from_fn(w, h, |x, y| {
        0.25 * (img.at(2 * x, 2 * y)
            + img.at(2 * x + 1, 2 * y)
            + img.at(2 * x, 2 * y + 1)
            + img.at(2 * x + 1, 2 * y + 1))
    })
}

pub fn build_dog_pyramid(gray: &GrayImage, params: &ScaleSpaceParams) -> Result<DogPyramid> {
    params.validate()?;
    if gray.width.min(gray.height) < MIN_OCTAVE_SIDE {
        return Err(Error::TooSmall {
            width: gray.width,
            height: gray.height,
            kernel: MIN_OCTAVE_SIDE,
        });
    }
    let s = params.scales_per_octave;
    let mut octaves: Vec<Octave> = Vec::with_capacity(params.octaves);
    // The first octave runs at twice the input resolution. The input is taken to carry
    // ASSUMED_INPUT_BLUR already, which doubles along with the image.
    let prior = 2.0 * ASSUMED_INPUT_BLUR;
    let base_blur = (params.sigma0 * params.sigma0 - prior * prior).max(0.0).sqrt();
    let mut base = gaussian_blur(&upsample(gray), base_blur);
    let (mut step, mut offset) = (0.5, 0.0);
    for o in 0..params.octaves {
        if base.width.min(base.height) < MIN_OCTAVE_SIDE {
            break;
        }
        let mut gaussians = Vec::with_capacity(s + 3);
        gaussians.push(base);
        for i in 1..s + 3 {
            let prev = params.level_sigma((i - 1) as f64);
            let cur = params.level_sigma(i as f64);
            let inc = (cur * cur - prev * prev).sqrt();
            let next = gaussian_blur(&gaussians[i - 1], inc);
            gaussians.push(next);
        }
        let dogs = gaussians
            .windows(2)
            .map(|pair| {
                let data = pair[0]
                    .data
                    .iter()
                    .zip(&pair[1].data)
                    .map(|(a, b)| a - b)
                    .collect();
                GrayImage::new(pair[0].width, pair[0].height, data)
            })
            .collect();
        // Decimating the upsampled octave lands back on the input grid exactly; later octaves
        // average 2x2 blocks, which keeps mirror symmetry for even sizes.
        let (next, next_step, next_offset) = if o == 0 {
            (decimate(&gaussians[s]), 2.0 * step, offset)
        } else {
            (downsample(&gaussians[s]), 2.0 * step, offset + 0.5 * step)
        };
        octaves.push(Octave {
            gaussians,
            dogs,
            step,
            offset,
        });
        base = next;
        step = next_step;
        offset = next_offset;
    }
    Ok(DogPyramid {
        octaves,
        requested_octaves: params.octaves,
        params: *params,
    })
}

/// A DoG interest point. `x`, `y` and `scale` are in input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    /// Dominant gradient direction in `[0, 2π)`.
    pub orientation: f64,
    /// |DoG| at the interpolated extremum.
    pub response: f64,
    pub octave: usize,
    pub layer: usize,
    pub ix: usize,
    pub iy: usize,
}

impl Keypoint {
    /// A keypoint carrying only a position, for callers that supply their own points.
    pub fn at(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            scale: 1.0,
            orientation: 0.0,
            response: 0.0,
            octave: 0,
            layer: 0,
            ix: x.round().max(0.0) as usize,
            iy: y.round().max(0.0) as usize,
        }
    }
}

/// Strict maximum or strict minimum over the 3x3x3 neighborhood.
pub fn is_strict_extremum(dogs: &[GrayImage], layer: usize, x: usize, y: usize) -> bool {
    let v = dogs[layer].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for l in layer - 1..=layer + 1 {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if l == layer && yy == y && xx == x {
                    continue;
                }
                let n = dogs[l].at(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    true
}

/// Spatial Hessian edge test: `tr² / det < (r + 1)² / r` with a positive determinant.
pub fn passes_edge_test(dog: &GrayImage, x: usize, y: usize, edge_thresh: f64) -> bool {
    let v = dog.at(x, y);
    let dxx = dog.at(x + 1, y) + dog.at(x - 1, y) - 2.0 * v;
    let dyy = dog.at(x, y + 1) + dog.at(x, y - 1) - 2.0 * v;
    let dxy = 0.25
        * (dog.at(x + 1, y + 1) - dog.at(x - 1, y + 1) - dog.at(x + 1, y - 1)
            + dog.at(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr / det < (edge_thresh + 1.0).powi(2) / edge_thresh
}

/// Quadratic fit around `(layer, x, y)`: returns `(offset [dx, dy, ds], interpolated value)`.
pub fn quadratic_fit(dogs: &[GrayImage], layer: usize, x: usize, y: usize) -> Option<([f64; 3], f64)> {
    let d = |l: usize, xx: usize, yy: usize| dogs[l].at(xx, yy);
    let v = d(layer, x, y);
    let g = [
        0.5 * (d(layer, x + 1, y) - d(layer, x - 1, y)),
        0.5 * (d(layer, x, y + 1) - d(layer, x, y - 1)),
        0.5 * (d(layer + 1, x, y) - d(layer - 1, x, y)),
    ];
    let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * v;
    let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * v;
    let dss = d(layer + 1, x, y) + d(layer - 1, x, y) - 2.0 * v;
    let dxy = 0.25
        * (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1)
            + d(layer, x - 1, y - 1));
    let dxs = 0.25
        * (d(layer + 1, x + 1, y) - d(layer + 1, x - 1, y) - d(layer - 1, x + 1, y)
            + d(layer - 1, x - 1, y));
    let dys = 0.25
        * (d(layer + 1, x, y + 1) - d(layer + 1, x, y - 1) - d(layer - 1, x, y + 1)
            + d(layer - 1, x, y - 1));
    let h = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
    let rhs = [-g[0], -g[1], -g[2]];
    let off = solve3(h, rhs)?;
    let value = v + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
    Some((off, value))
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cramer's rule; `None` for a (near-)singular system.
fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = det3(m);
    if det.abs() < 1e-18 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *slot = det3(mc) / det;
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Peak of a magnitude- and Gaussian-weighted 36-bin gradient orientation histogram.
fn dominant_orientation(img: &GrayImage, x: f64, y: f64, sigma: f64) -> f64 {
    let radius = (3.0 * sigma).round().max(1.0) as isize;
    let weight_sigma = 1.5 * sigma;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            let gx = img.at_clamped(px + 1, py) - img.at_clamped(px - 1, py);
            let gy = img.at_clamped(px, py + 1) - img.at_clamped(px, py - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let theta = wrap_angle(gy.atan2(gx));
            let bin = ((theta / TAU * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
            hist[bin] += w * mag;
        }
    }
    let mut peak = 0;
    for b in 1..ORIENTATION_BINS {
        if hist[b] > hist[peak] {
            peak = b;
        }
    }
    let left = hist[(peak + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
    let right = hist[(peak + 1) % ORIENTATION_BINS];
    let denom = left - 2.0 * hist[peak] + right;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    wrap_angle((peak as f64 + 0.5 + shift) * TAU / ORIENTATION_BINS as f64)
}

/// Refines a candidate. Returns the final integer location and the fit there.
fn refine(
    dogs: &[GrayImage],
    s: usize,
    mut layer: usize,
    mut x: usize,
    mut y: usize,
) -> Option<(usize, usize, usize, [f64; 3], f64)> {
    let (w, h) = (dogs[0].width, dogs[0].height);
    for _ in 0..MAX_REFINE_STEPS {
        let (off, value) = quadratic_fit(dogs, layer, x, y)?;
        if off.iter().all(|o| o.abs() <= 0.5) {
            return Some((layer, x, y, off, value));
        }
        if off.iter().any(|o| o.abs() > (w.max(h)) as f64) {
            return None;
        }
        let nx = x as f64 + off[0].round();
        let ny = y as f64 + off[1].round();
        let nl = layer as f64 + off[2].round();
        if nx < 1.0 || ny < 1.0 || nl < 1.0 || nx > (w - 2) as f64 || ny > (h - 2) as f64 || nl > s as f64 {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    None
}

pub fn detect_keypoints(gray: &GrayImage, params: &ScaleSpaceParams) -> Result<Vec<Keypoint>> {
    let pyramid = build_dog_pyramid(gray, params)?;
    Ok(detect_in_pyramid(&pyramid, gray.width, gray.height))
}

/// Keypoints in scan order (octave, layer, row, column) of their originating candidate.
pub fn detect_in_pyramid(pyramid: &DogPyramid, width: usize, height: usize) -> Vec<Keypoint> {
    let params = &pyramid.params;
    let s = params.scales_per_octave;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (o, octave) in pyramid.octaves.iter().enumerate() {
        let dogs = &octave.dogs;
        let (w, h) = (dogs[0].width, dogs[0].height);
        for layer in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = dogs[layer].at(x, y);
                    if v.abs() <= 0.5 * params.contrast_thresh
                        || !is_strict_extremum(dogs, layer, x, y)
                    {
                        continue;
                    }
                    let Some((fl, fx, fy, off, value)) = refine(dogs, s, layer, x, y) else {
                        continue;
                    };
                    if value.abs() < params.contrast_thresh
                        || !passes_edge_test(&dogs[fl], fx, fy, params.edge_thresh)
                        || !is_strict_extremum(dogs, fl, fx, fy)
                    {
                        continue;
                    }
                    if !seen.insert((o, fl, fx, fy)) {
                        continue;
                    }
                    let (kx, ky) = octave.to_image_coords(fx as f64 + off[0], fy as f64 + off[1]);
                    let kx = kx.clamp(0.0, (width - 1) as f64);
                    let ky = ky.clamp(0.0, (height - 1) as f64);
                    let local_sigma = params.level_sigma(fl as f64 + off[2]);
                    let orientation = dominant_orientation(
                        &octave.gaussians[fl],
                        fx as f64 + off[0],
                        fy as f64 + off[1],
                        local_sigma,
                    );
                    out.push(Keypoint {
                        x: kx,
                        y: ky,
                        scale: local_sigma * octave.step,
                        orientation,
                        response: value.abs(),
                        octave: o,
                        layer: fl,
                        ix: fx,
                        iy: fy,
                    });
                }
            }
        }
    }
    out
}
