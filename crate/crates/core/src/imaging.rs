//! Image decoding, luminance, Canny edges and boundary point sampling.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Writes the image as an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::save_buffer(
            path,
            &flat,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

/// Decodes a PNG or JPEG file into 8-bit RGB. Grayscale sources are replicated across channels.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RasterImage::new(w as usize, h as usize, pixels)
}

/// Row-major intensity grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "intensity grid size");
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Clamp-to-edge access.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }
}

/// BT.601 luma in `[0, 1]`.
pub fn luminance(rgb: [u8; 3]) -> f64 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0
}

pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    GrayImage::new(
        img.width,
        img.height,
        img.pixels.iter().map(|&p| luminance(p)).collect(),
    )
}

/// Sampled, normalized Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge padding.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * img.at_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let tmp = GrayImage::new(w, h, tmp);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * tmp.at_clamped(x as isize, y as isize + i as isize - r);
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::new(w, h, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds, as fractions of the image's peak gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParam(format!(
                "canny sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(0.0 <= self.low && self.low <= self.high && self.high <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "canny thresholds must satisfy 0 <= low <= high <= 1, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn kernel_size(&self) -> usize {
        gaussian_kernel(self.sigma).len()
    }
}

/// Set of boundary pixels. `on` is kept in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub on: Vec<(u32, u32)>,
}

impl EdgeMap {
    /// Builds an edge map from arbitrary in-bounds coordinates (duplicates removed).
    pub fn from_pixels(width: usize, height: usize, pixels: &[(u32, u32)]) -> Result<Self> {
        let mut on = Vec::with_capacity(pixels.len());
        for &(x, y) in pixels {
            if x as usize >= width || y as usize >= height {
                return Err(Error::InvalidParam(format!(
                    "edge pixel ({x}, {y}) outside {width}x{height}"
                )));
            }
            on.push((x, y));
        }
        on.sort_by_key(|&(x, y)| (y, x));
        on.dedup();
        Ok(EdgeMap { width, height, on })
    }

    pub fn is_empty(&self) -> bool {
        self.on.is_empty()
    }

    pub fn len(&self) -> usize {
        self.on.len()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.on.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).is_ok()
    }
}

/// Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum suppression and
/// 8-connected double-threshold hysteresis.
///
/// Thresholds are relative to the largest gradient magnitude in the image, so an image with no
/// gradient at all yields an empty map.
pub fn detect_edges(gray: &GrayImage, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let kernel = params.kernel_size();
    let (w, h) = (gray.width, gray.height);
    if w < kernel || h < kernel {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            kernel,
        });
    }

    let smooth = gaussian_blur(gray, params.sigma);
    let mut mag = vec![0.0; w * h];
    let mut sector = vec![0u8; w * h];
    let mut peak: f64 = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| smooth.at_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let m = gx.hypot(gy);
            let i = y as usize * w + x as usize;
            mag[i] = m;
            peak = peak.max(m);
            // Quantize the gradient direction (mod π) into 0°, 45°, 90°, 135°.
            let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            sector[i] = if !(22.5..157.5).contains(&deg) {
                0
            } else if deg < 67.5 {
                1
            } else if deg < 112.5 {
                2
            } else {
                3
            };
        }
    }

    // Below this the image is numerically flat.
    if peak <= 1e-9 {
        return Ok(EdgeMap {
            width: w,
            height: h,
            on: Vec::new(),
        });
    }

    let mag_at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = match sector[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let behind = mag_at(x - dx, y - dy);
            let ahead = mag_at(x + dx, y + dy);
            // Asymmetric comparison keeps exactly one pixel of a two-pixel plateau.
            if m > behind && m >= ahead {
                thin[i] = m / peak;
            }
        }
    }

    let mut state = vec![0u8; w * h]; // 0 none, 1 weak, 2 accepted
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] >= params.high && thin[i] > 0.0 {
            state[i] = 2;
            queue.push_back(i);
        } else if thin[i] >= params.low && thin[i] > 0.0 {
            state[i] = 1;
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    queue.push_back(j);
                }
            }
        }
    }

    let on = (0..w * h)
        .filter(|&i| state[i] == 2)
        .map(|i| ((i % w) as u32, (i / w) as u32))
        .collect();
    Ok(EdgeMap {
        width: w,
        height: h,
        on,
    })
}

/// The sampled boundary points of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub points: Vec<Point>,
    pub source_id: String,
}

impl ContourSet {
    pub fn new(points: Vec<Point>, source_id: impl Into<String>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        Ok(ContourSet {
            points,
            source_id: source_id.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }
}

/// Edge pixels farther apart than this start a new chain.
const CHAIN_LINK_RADIUS: f64 = 3.0;

/// Links edge pixels into chains by walking to the nearest unvisited pixel within
/// [`CHAIN_LINK_RADIUS`]. Chains start at the first unvisited pixel in row-major order.
fn link_chains(edges: &EdgeMap) -> Vec<Vec<usize>> {
    let (w, h) = (edges.width, edges.height);
    let mut slot = vec![usize::MAX; w * h];
    for (i, &(x, y)) in edges.on.iter().enumerate() {
        slot[y as usize * w + x as usize] = i;
    }
    let reach = CHAIN_LINK_RADIUS.floor() as isize;
    let mut visited = vec![false; edges.on.len()];
    let mut chains = Vec::new();

    for start in 0..edges.on.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut chain = vec![start];
        let mut cur = start;
        loop {
            let (cx, cy) = (edges.on[cur].0 as isize, edges.on[cur].1 as isize);
            let mut best: Option<(i64, usize)> = None;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let d2 = (dx * dx + dy * dy) as i64;
                    if d2 == 0 || (d2 as f64) > CHAIN_LINK_RADIUS * CHAIN_LINK_RADIUS {
                        continue;
                    }
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = slot[ny as usize * w + nx as usize];
                    if j == usize::MAX || visited[j] {
                        continue;
                    }
                    // Ties on distance go to the lower row-major index.
                    if best.is_none_or(|(bd, bj)| (d2, j) < (bd, bj)) {
                        best = Some((d2, j));
                    }
                }
            }
            match best {
                Some((_, j)) => {
                    visited[j] = true;
                    chain.push(j);
                    cur = j;
                }
                None => break,
            }
        }
        chains.push(chain);
    }
    chains
}

/// Picks `n` boundary points with near-uniform spacing along the edge chains.
///
/// Edge pixels are linked into chains and laid end to end; each pixel owns an arc-length
/// interval equal to the step to its successor (the closing step for a closed loop, 1 for an
/// open end). Points are taken at `n` equally spaced arc positions with a seeded phase.
/// Collisions are filled by greedy farthest-point selection over the unused pixels. When the map
/// has no more than `n` pixels, all of them are returned and `n` shrinks accordingly.
pub fn sample_contour(edges: &EdgeMap, n: usize, seed: u64) -> Result<ContourSet> {
    if edges.on.is_empty() {
        return Err(Error::EmptyEdgeMap);
    }
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "contour sample count must be >= 2, got {n}"
        )));
    }
    let as_point = |i: usize| Point::new(edges.on[i].0 as f64, edges.on[i].1 as f64);

    if edges.on.len() <= n {
        let points = (0..edges.on.len()).map(as_point).collect();
        return ContourSet::new(points, "");
    }

    let chains = link_chains(edges);
    let mut order = Vec::with_capacity(edges.on.len());
    let mut starts = Vec::with_capacity(edges.on.len());
    let mut total = 0.0;
    for chain in &chains {
        for (k, &i) in chain.iter().enumerate() {
            let width = match chain.get(k + 1) {
                Some(&next) => as_point(i).dist(as_point(next)),
                None => {
                    let closing = as_point(i).dist(as_point(chain[0]));
                    if chain.len() > 2 && closing <= CHAIN_LINK_RADIUS {
                        closing
                    } else {
                        1.0
                    }
                }
            };
            order.push(i);
            starts.push(total);
            total += width;
        }
    }

    let phase: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    let spacing = total / n as f64;
    let mut taken = vec![false; edges.on.len()];
    let mut selected = Vec::with_capacity(n);
    for s in 0..n {
        let t = (phase + s as f64) * spacing;
        let slot = starts.partition_point(|&st| st <= t).saturating_sub(1);
        let i = order[slot];
        if !taken[i] {
            taken[i] = true;
            selected.push(i);
        }
    }

    if selected.len() < n {
        let mut nearest: Vec<f64> = (0..edges.on.len())
            .map(|i| {
                selected
                    .iter()
                    .map(|&j| as_point(i).dist_sq(as_point(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        while selected.len() < n {
            let mut best = usize::MAX;
            for i in 0..edges.on.len() {
                if !taken[i] && (best == usize::MAX || nearest[i] > nearest[best]) {
                    best = i;
                }
            }
            taken[best] = true;
            selected.push(best);
            let pb = as_point(best);
            for (i, d) in nearest.iter_mut().enumerate() {
                *d = d.min(as_point(i).dist_sq(pb));
            }
        }
    }

    ContourSet::new(selected.into_iter().map(as_point).collect(), "")
}
