//! k-means visual vocabulary and nearest-word assignment.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VOCAB_HEADER: &str = "AVIVOCAB 1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once total centroid movement falls below this fraction of total centroid norm.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 200,
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Mean squared distance to the nearest centroid, before the first update and after each.
    pub distortion_history: Vec<f64>,
    pub descriptor_count: usize,
}

impl TrainMeta {
    pub fn final_distortion(&self) -> f64 {
        *self.distortion_history.last().unwrap_or(&0.0)
    }
}

/// `k` centroids of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    k: usize,
    d: usize,
    centroids: Vec<f64>,
    /// Full training record, absent for vocabularies read from disk.
    pub train_meta: Option<TrainMeta>,
    pub seed: u64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Vocabulary {
    pub fn from_centroids(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(Error::Empty("vocabulary needs at least one centroid"));
        }
        let d = centroids[0].len();
        let mut flat = Vec::with_capacity(k * d);
        for c in &centroids {
            if c.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam("centroid values must be finite".into()));
            }
            flat.extend_from_slice(c);
        }
        Ok(Vocabulary {
            k,
            d,
            centroids: flat,
            train_meta: None,
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.d..(i + 1) * self.d]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.chunks_exact(self.d)
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
    pub fn assign_nearest(&self, desc: &[f64]) -> Result<usize> {
        if desc.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: desc.len(),
            });
        }
        Ok(self.nearest(desc).0)
    }

    fn nearest(&self, desc: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids().enumerate() {
            let d = sq_dist(desc, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Text serialization: header, `k d seed`, then one line of 9-significant-digit values per
    /// centroid.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.k * self.d * 16 + 32);
        let _ = writeln!(s, "{VOCAB_HEADER}");
        let _ = writeln!(s, "{} {} {}", self.k, self.d, self.seed);
        for c in self.centroids() {
            let line: Vec<String> = c.iter().map(|v| format_sig9(*v)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Hex SHA-256 of [`Vocabulary::to_text`].
    pub fn fingerprint(&self) -> String {
        fingerprint_bytes(self.to_text().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        if header != VOCAB_HEADER {
            return Err(Error::Version {
                source_name: source_name.to_string(),
                found: header.to_string(),
                expected: VOCAB_HEADER,
            });
        }
        let (_, dims) = lines
            .next()
            .ok_or_else(|| Error::malformed(source_name, 2, "missing `k d seed` line"))?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        let parsed = (fields.len() == 3)
            .then(|| {
                Some((
                    fields[0].parse::<usize>().ok()?,
                    fields[1].parse::<usize>().ok()?,
                    fields[2].parse::<u64>().ok()?,
                ))
            })
            .flatten();
        let (k, d, seed) =
            parsed.ok_or_else(|| Error::malformed(source_name, 2, "expected `k d seed`"))?;
        if k == 0 || d == 0 {
            return Err(Error::malformed(source_name, 2, "k and d must be positive"));
        }
        let mut centroids = Vec::with_capacity(k);
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if centroids.len() == k {
                return Err(Error::malformed(source_name, lineno, "more than k centroid lines"));
            }
            let values = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::malformed(source_name, lineno, "non-numeric centroid value"))?;
            if values.len() != d {
                return Err(Error::malformed(
                    source_name,
                    lineno,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            centroids.push(values);
        }
        if centroids.len() != k {
            return Err(Error::malformed(
                source_name,
                text.lines().count(),
                format!("expected {k} centroid lines, found {}", centroids.len()),
            ));
        }
        Self::from_centroids(centroids, seed)
    }
}

pub(crate) fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Scientific notation with 9 significant digits.
pub(crate) fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        // Avoid `-0e0` for negative zero.
        "0.00000000e0".to_string()
    } else {
        format!("{v:.8e}")
    }
}

fn count_distinct(rows: &[&[f64]]) -> usize {
    let mut keys: Vec<Vec<u64>> = rows
        .iter()
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Assignment pass: per-point nearest centroid, plus mean squared distance summed in point order.
fn assign_all(rows: &[&[f64]], vocab: &Vocabulary) -> (Vec<usize>, Vec<f64>, f64) {
    let pairs: Vec<(usize, f64)> = rows.par_iter().map(|r| vocab.nearest(r)).collect();
    let labels = pairs.iter().map(|p| p.0).collect();
    let dists: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let distortion = dists.iter().sum::<f64>() / rows.len() as f64;
    (labels, dists, distortion)
}

fn kmeans_pp(rows: &[&[f64]], k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(rows[first]);
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        // Positive whenever an unchosen distinct point remains.
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in nearest.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("k does not exceed the distinct point count");
        let chosen = rows[pick];
        centroids.extend_from_slice(chosen);
        nearest
            .par_iter_mut()
            .zip(rows.par_iter())
            .for_each(|(w, r)| *w = w.min(sq_dist(r, chosen)));
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Iterates until the relative centroid movement drops below `tol`, the assignment stops
/// changing, or `max_iter` updates have run. A cluster left empty by an update is re-seeded at
/// the point farthest from its current centroid.
pub fn train_kmeans<R: AsRef<[f64]> + Sync>(descriptors: &[R], cfg: &KMeansConfig) -> Result<Vocabulary> {
    if descriptors.is_empty() {
        return Err(Error::Empty("no descriptors to train on"));
    }
    let rows: Vec<&[f64]> = descriptors.iter().map(|r| r.as_ref()).collect();
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidParam("descriptor dimension must be positive".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidParam("descriptor values must be finite".into()));
    }
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    let distinct = count_distinct(&rows);
    if k > distinct {
        return Err(Error::TooFewDistinct { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vocab = Vocabulary {
        k,
        d,
        centroids: kmeans_pp(&rows, k, d, &mut rng),
        train_meta: None,
        seed: cfg.seed,
    };
    let (mut labels, mut dists, distortion) = assign_all(&rows, &vocab);
    let mut history = vec![distortion];
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        // Running means; exact when every member is identical.
        let mut next = vocab.centroids.clone();
        let mut sizes = vec![0usize; k];
        for (row, &c) in rows.iter().zip(&labels) {
            sizes[c] += 1;
            let inv = 1.0 / sizes[c] as f64;
            let slot = &mut next[c * d..(c + 1) * d];
            if sizes[c] == 1 {
                slot.copy_from_slice(row);
            } else {
                for (m, &v) in slot.iter_mut().zip(row.iter()) {
                    *m += (v - *m) * inv;
                }
            }
        }
        for c in 0..k {
            if sizes[c] != 0 {
                continue;
            }
            let mut far = None;
            for (i, &dist) in dists.iter().enumerate() {
                if dist > 0.0 && far.is_none_or(|f: usize| dist > dists[f]) {
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                next[c * d..(c + 1) * d].copy_from_slice(rows[i]);
                dists[i] = 0.0;
            }
        }

        let moved: f64 = next
            .iter()
            .zip(&vocab.centroids)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = vocab.centroids.iter().map(|v| v * v).sum::<f64>().sqrt();
        vocab.centroids = next;
        let (new_labels, new_dists, distortion) = assign_all(&rows, &vocab);
        history.push(distortion);
        let unchanged = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if unchanged || moved <= cfg.tol * norm.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    vocab.train_meta = Some(TrainMeta {
        seed: cfg.seed,
        iterations,
        distortion_history: history,
        descriptor_count: rows.len(),
    });
    Ok(vocab)
}
