//! Shape-context histograms, local color moments and their fused descriptor.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::config::PipelineParams;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point};
use crate::imaging::{detect_edges, sample_contour, to_grayscale, ContourSet, RasterImage};
use crate::keypoints::{detect_keypoints, Keypoint};

/// Mean and variance of each of the three channels.
pub const COLOR_MOMENT_DIM: usize = 6;
/// Side of the square color window.
pub const COLOR_WINDOW: usize = 5;
/// Contour points used to estimate the local tangent at a keypoint.
pub const TANGENT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeContextParams {
    pub radial_bins: usize,
    pub angular_bins: usize,
    /// Inner and outer radius, in units of the mean pairwise distance.
    pub r_min: f64,
    pub r_max: f64,
    /// Measure angles from the local tangent instead of the image x axis.
    pub rotation_invariant: bool,
}

impl Default for ShapeContextParams {
    fn default() -> Self {
        ShapeContextParams {
            radial_bins: 5,
            angular_bins: 12,
            r_min: 0.125,
            r_max: 2.0,
            rotation_invariant: false,
        }
    }
}

impl ShapeContextParams {
    pub fn bins(&self) -> usize {
        self.radial_bins * self.angular_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial_bins < 1 || self.angular_bins < 1 {
            return Err(Error::InvalidParam(
                "shape context needs at least one radial and one angular bin".into(),
            ));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "shape context radii must satisfy 0 < r_min < r_max, got {} and {}",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    /// `R + 1` log-spaced radial edges from `r_min` to `r_max` inclusive.
    pub fn radial_edges(&self) -> Vec<f64> {
        let ratio = self.r_max / self.r_min;
        let r = self.radial_bins;
        (0..=r)
            .map(|j| match j {
                0 => self.r_min,
                j if j == r => self.r_max,
                j => self.r_min * ratio.powf(j as f64 / r as f64),
            })
            .collect()
    }
}

/// Log-polar position of a point relative to a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarCoord {
    /// Natural log of the α-normalized distance.
    pub log_r: f64,
    /// Angle in `[0, 2π)`.
    pub theta: f64,
}

/// Normalized distance and wrapped angle of `q` seen from `reference`. `None` when they coincide.
fn polar(q: Point, reference: Point, ref_dir: f64, alpha: f64, rotation_invariant: bool) -> Option<(f64, f64)> {
    if q == reference {
        return None;
    }
    let dx = q.x - reference.x;
    let dy = q.y - reference.y;
    let r = dx.hypot(dy) / alpha;
    let mut theta = dy.atan2(dx);
    if rotation_invariant {
        theta -= ref_dir;
    }
    Some((r, wrap_angle(theta)))
}

pub fn log_polar(q: Point, reference: Point, ref_dir: f64, alpha: f64, rotation_invariant: bool) -> Option<LogPolarCoord> {
    polar(q, reference, ref_dir, alpha, rotation_invariant).map(|(r, theta)| LogPolarCoord {
        log_r: r.ln(),
        theta,
    })
}

/// Precomputed bin edges for repeated binning.
#[derive(Debug, Clone)]
struct BinGeometry {
    edges: Vec<f64>,
    angular_bins: usize,
    rotation_invariant: bool,
}

impl BinGeometry {
    fn new(params: &ShapeContextParams) -> Self {
        BinGeometry {
            edges: params.radial_edges(),
            angular_bins: params.angular_bins,
            rotation_invariant: params.rotation_invariant,
        }
    }

    fn bin(&self, q: Point, reference: Point, ref_dir: f64, alpha: f64) -> Option<usize> {
        let (r, theta) = polar(q, reference, ref_dir, alpha, self.rotation_invariant)?;
        let r_max = *self.edges.last().expect("at least two edges");
        if r >= r_max {
            return None;
        }
        // Below the first edge falls into radial bin 0.
        let interior = &self.edges[1..self.edges.len() - 1];
        let radial = interior.iter().take_while(|&&e| e <= r).count();
        let a = self.angular_bins;
        let angular = ((theta / TAU * a as f64) as usize).min(a - 1);
        Some(radial * a + angular)
    }
}

/// Histogram bin of `q` relative to `reference`, or `None` when `q` is outside the outer radius
/// or coincides with the reference.
pub fn log_polar_bin(
    q: Point,
    reference: Point,
    ref_dir: f64,
    alpha: f64,
    params: &ShapeContextParams,
) -> Result<Option<usize>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParam(format!(
            "normalizing distance must be positive, got {alpha}"
        )));
    }
    params.validate()?;
    Ok(BinGeometry::new(params).bin(q, reference, ref_dir, alpha))
}

/// Mean distance over all `n²` ordered pairs, self-pairs included.
pub fn mean_pairwise_distance(contour: &ContourSet) -> Result<f64> {
    mean_pairwise_distance_of(&contour.points)
}

pub fn mean_pairwise_distance_of(points: &[Point]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += points[i].dist(points[j]);
        }
    }
    Ok(2.0 * sum / (n * n) as f64)
}

/// Log-polar histogram of the contour around one reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeContext {
    pub counts: Vec<u32>,
    pub ref_point: Point,
    pub alpha: f64,
    /// Contour points at or beyond the outer radius.
    pub outside: usize,
    /// Contour points coinciding with the reference.
    pub at_ref: usize,
}

impl ShapeContext {
    pub fn binned(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Every contour point is either binned, outside, or at the reference.
    pub fn offered(&self) -> usize {
        self.binned() + self.outside + self.at_ref
    }

    /// True when every contour point coincided with the reference.
    pub fn is_degenerate(&self) -> bool {
        self.binned() == 0 && self.outside == 0
    }
}

pub fn shape_context(
    reference: Point,
    ref_dir: f64,
    contour: &ContourSet,
    params: &ShapeContextParams,
) -> Result<ShapeContext> {
    let alpha = mean_pairwise_distance(contour)?;
    shape_context_with_alpha(reference, ref_dir, &contour.points, alpha, params)
}

/// As [`shape_context`], reusing an already computed normalizing distance.
pub fn shape_context_with_alpha(
    reference: Point,
    ref_dir: f64,
    points: &[Point],
    alpha: f64,
    params: &ShapeContextParams,
) -> Result<ShapeContext> {
    params.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParam(format!(
            "normalizing distance must be positive, got {alpha}"
        )));
    }
    let geometry = BinGeometry::new(params);
    let mut sc = ShapeContext {
        counts: vec![0; params.bins()],
        ref_point: reference,
        alpha,
        outside: 0,
        at_ref: 0,
    };
    for &q in points {
        if q == reference {
            sc.at_ref += 1;
            continue;
        }
        match geometry.bin(q, reference, ref_dir, alpha) {
            Some(l) => sc.counts[l] += 1,
            None => sc.outside += 1,
        }
    }
    debug_assert_eq!(sc.offered(), points.len(), "every contour point is accounted for");
    Ok(sc)
}

/// Tangent direction estimate at a keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentEstimate {
    /// Line direction in `[0, π)`.
    pub angle: f64,
    /// Set when fewer than two distinct nearby points were available; `angle` is then 0.
    pub degenerate: bool,
}

/// Total-least-squares line through the [`TANGENT_NEIGHBORS`] contour points nearest the keypoint.
pub fn keypoint_direction(kp: &Keypoint, contour: &ContourSet) -> TangentEstimate {
    let degenerate = TangentEstimate {
        angle: 0.0,
        degenerate: true,
    };
    let center = Point::new(kp.x, kp.y);
    let mut order: Vec<usize> = (0..contour.points.len()).collect();
    order.sort_by(|&a, &b| {
        contour.points[a]
            .dist_sq(center)
            .total_cmp(&contour.points[b].dist_sq(center))
            .then(a.cmp(&b))
    });
    let near: Vec<Point> = order
        .iter()
        .take(TANGENT_NEIGHBORS)
        .map(|&i| contour.points[i])
        .collect();
    if near.len() < 2 || near.iter().all(|&p| p == near[0]) {
        return degenerate;
    }
    let m = near.len() as f64;
    let mx = near.iter().map(|p| p.x).sum::<f64>() / m;
    let my = near.iter().map(|p| p.y).sum::<f64>() / m;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &near {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return degenerate;
    }
    let angle = (0.5 * (2.0 * sxy).atan2(sxx - syy)).rem_euclid(PI);
    TangentEstimate {
        angle: if angle >= PI { 0.0 } else { angle },
        degenerate: false,
    }
}

/// Per-channel mean and population variance of `[0, 1]`-scaled values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMoments {
    pub mean: [f64; 3],
    pub var: [f64; 3],
}

impl ColorMoments {
    pub fn to_array(&self) -> [f64; COLOR_MOMENT_DIM] {
        [
            self.mean[0],
            self.mean[1],
            self.mean[2],
            self.var[0],
            self.var[1],
            self.var[2],
        ]
    }
}

/// Color moments over the 5x5 window centered on the rounded keypoint position. The window is
/// clipped at the image border.
pub fn color_moments(img: &RasterImage, kp: &Keypoint) -> ColorMoments {
    let half = (COLOR_WINDOW / 2) as i64;
    let cx = (kp.x.round() as i64).clamp(0, img.width() as i64 - 1);
    let cy = (kp.y.round() as i64).clamp(0, img.height() as i64 - 1);
    let x0 = (cx - half).max(0) as usize;
    let x1 = (cx + half).min(img.width() as i64 - 1) as usize;
    let y0 = (cy - half).max(0) as usize;
    let y1 = (cy + half).min(img.height() as i64 - 1) as usize;

    // Integer sums keep constant windows at exactly zero variance.
    let mut sum = [0u64; 3];
    let mut sum_sq = [0u64; 3];
    let mut count = 0u64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let px = img.get(x, y);
            for c in 0..3 {
                let v = px[c] as u64;
                sum[c] += v;
                sum_sq[c] += v * v;
            }
            count += 1;
        }
    }
    let mut out = ColorMoments {
        mean: [0.0; 3],
        var: [0.0; 3],
    };
    for c in 0..3 {
        out.mean[c] = sum[c] as f64 / (255 * count) as f64;
        let numer = count * sum_sq[c] - sum[c] * sum[c];
        out.var[c] = numer as f64 / (count * count * 255 * 255) as f64;
    }
    out
}

/// One keypoint's fused vector: L1-normalized histogram followed by weighted color moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDescriptor {
    pub vector: Vec<f64>,
    pub keypoint: Keypoint,
}

pub fn fuse(sc: &ShapeContext, cm: &ColorMoments, color_weight: f64, keypoint: Keypoint) -> FusedDescriptor {
    let total: u64 = sc.counts.iter().map(|&c| c as u64).sum();
    let mut vector = Vec::with_capacity(sc.counts.len() + COLOR_MOMENT_DIM);
    if total == 0 {
        vector.resize(sc.counts.len(), 0.0);
    } else {
        vector.extend(sc.counts.iter().map(|&c| c as f64 / total as f64));
    }
    vector.extend(cm.to_array().iter().map(|v| color_weight * v));
    FusedDescriptor { vector, keypoint }
}

/// Why an image produced no descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorStatus {
    Ok,
    /// No edge pixels, or fewer than two.
    NoContour,
    NoKeypoints,
    /// Smaller than the smoothing kernel or the smallest octave.
    TooSmall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub image_id: String,
    pub descriptors: Vec<FusedDescriptor>,
    pub status: DescriptorStatus,
}

impl DescriptorSet {
    fn flagged(image_id: &str, status: DescriptorStatus) -> Self {
        DescriptorSet {
            image_id: image_id.to_string(),
            descriptors: Vec::new(),
            status,
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.status != DescriptorStatus::Ok
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.descriptors.iter().map(|d| d.vector.as_slice())
    }
}

/// Full per-image pipeline: edges, contour sampling, keypoints, then one fused descriptor per
/// keypoint. Images without a usable contour or keypoints come back flagged and empty.
pub fn describe_image(img: &RasterImage, image_id: &str, params: &PipelineParams) -> Result<DescriptorSet> {
    params.validate()?;
    let gray = to_grayscale(img);
    let edges = match detect_edges(&gray, &params.canny) {
        Ok(e) => e,
        Err(Error::TooSmall { .. }) => {
            return Ok(DescriptorSet::flagged(image_id, DescriptorStatus::TooSmall))
        }
        Err(e) => return Err(e),
    };
    let mut contour = match sample_contour(&edges, params.n, params.seed) {
        Ok(c) => c,
        Err(Error::EmptyEdgeMap) | Err(Error::TooFewPoints(_)) => {
            return Ok(DescriptorSet::flagged(image_id, DescriptorStatus::NoContour))
        }
        Err(e) => return Err(e),
    };
    contour.source_id = image_id.to_string();
    let alpha = mean_pairwise_distance(&contour)?;

    let keypoints = match detect_keypoints(&gray, &params.scale_space) {
        Ok(k) => k,
        Err(Error::TooSmall { .. }) => {
            return Ok(DescriptorSet::flagged(image_id, DescriptorStatus::TooSmall))
        }
        Err(e) => return Err(e),
    };
    if keypoints.is_empty() {
        return Ok(DescriptorSet::flagged(image_id, DescriptorStatus::NoKeypoints));
    }

    let descriptors = keypoints
        .par_iter()
        .map(|kp| {
            let ref_dir = if params.shape.rotation_invariant {
                keypoint_direction(kp, &contour).angle
            } else {
                0.0
            };
            let sc = shape_context_with_alpha(
                Point::new(kp.x, kp.y),
                ref_dir,
                &contour.points,
                alpha,
                &params.shape,
            )?;
            let cm = color_moments(img, kp);
            Ok(fuse(&sc, &cm, params.color_weight, *kp))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DescriptorSet {
        image_id: image_id.to_string(),
        descriptors,
        status: DescriptorStatus::Ok,
    })
}
