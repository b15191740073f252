//! Bag-of-words histograms, the persisted index, and ranked queries.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::PipelineParams;
use crate::descriptors::{describe_image, DescriptorSet};
use crate::error::{Error, Result};
use crate::imaging::RasterImage;
use crate::vocabulary::{format_sig9, Vocabulary};

pub const INDEX_HEADER: &str = "AVIIDX 1";

/// L1-normalized visual-word frequencies of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram {
    pub weights: Vec<f64>,
    /// Descriptors quantized into this histogram; 0 means the image was flagged.
    pub raw_count: usize,
}

impl BowHistogram {
    pub fn zeros(k: usize) -> Self {
        BowHistogram {
            weights: vec![0.0; k],
            raw_count: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

/// Counts nearest-word hits and normalizes them to sum to one.
pub fn quantize(ds: &DescriptorSet, vocab: &Vocabulary) -> Result<BowHistogram> {
    quantize_vectors(ds.vectors(), vocab)
}

pub fn quantize_vectors<'a>(vectors: impl Iterator<Item = &'a [f64]>, vocab: &Vocabulary) -> Result<BowHistogram> {
    let mut counts = vec![0usize; vocab.k()];
    let mut total = 0usize;
    for v in vectors {
        counts[vocab.assign_nearest(v)?] += 1;
        total += 1;
    }
    if total == 0 {
        return Ok(BowHistogram::zeros(vocab.k()));
    }
    Ok(BowHistogram {
        weights: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        raw_count: total,
    })
}

/// Recovers the exact `count / raw_count` a printed weight was rounded from, so a loaded index
/// breaks distance ties the same way the in-memory one did. Weights that are not such a ratio
/// (hand-written files) are kept as printed.
fn snap_to_count(w: f64, raw_count: usize) -> f64 {
    if raw_count == 0 {
        return w;
    }
    let count = (w * raw_count as f64).round();
    let exact = count / raw_count as f64;
    if (exact - w).abs() <= 1e-8 * exact.max(1e-300) {
        exact
    } else {
        w
    }
}

/// L1 distance, in `[0, 2]` for normalized histograms.
pub fn bow_distance(a: &BowHistogram, b: &BowHistogram) -> Result<f64> {
    if a.k() != b.k() {
        return Err(Error::DimensionMismatch {
            expected: a.k(),
            actual: b.k(),
        });
    }
    Ok(l1(&a.weights, &b.weights))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub image_id: String,
    pub label: String,
    pub bow: BowHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowIndex {
    k: usize,
    pub vocab_fingerprint: String,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub image_id: String,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    /// Ascending by distance, ties by image id.
    pub ranked: Vec<Hit>,
}

fn validate_id(id: &str, what: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidParam(format!(
            "{what} `{}` must be non-empty and free of tabs and newlines",
            id.escape_debug()
        )));
    }
    Ok(())
}

impl BowIndex {
    pub fn new(k: usize, vocab_fingerprint: impl Into<String>, entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            validate_id(&e.image_id, "image id")?;
            validate_id(&e.label, "label")?;
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId(e.image_id.clone()));
            }
            if e.bow.k() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: e.bow.k(),
                });
            }
        }
        Ok(BowIndex {
            k,
            vocab_fingerprint: vocab_fingerprint.into(),
            entries,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn check_fingerprint(&self, vocab: &Vocabulary) -> Result<()> {
        let fp = vocab.fingerprint();
        if fp != self.vocab_fingerprint {
            return Err(Error::FingerprintMismatch {
                index: self.vocab_fingerprint.clone(),
                vocab: fp,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{INDEX_HEADER}");
        let _ = writeln!(s, "{} {} {}", self.k, self.entries.len(), self.vocab_fingerprint);
        for e in &self.entries {
            let _ = write!(s, "{}\t{}\t{}\t", e.image_id, e.label, e.bow.raw_count);
            let weights: Vec<String> = e.bow.weights.iter().map(|&w| format_sig9(w)).collect();
            let _ = writeln!(s, "{}", weights.join(" "));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let header = lines.first().copied().unwrap_or("");
        if header != INDEX_HEADER {
            return Err(Error::Version {
                source_name: source_name.to_string(),
                found: header.to_string(),
                expected: INDEX_HEADER,
            });
        }
        let meta: Vec<&str> = lines.get(1).map(|l| l.split(' ').collect()).unwrap_or_default();
        let (k, n) = match meta.as_slice() {
            [k, n, fp] if !fp.is_empty() && fp.bytes().all(|b| b.is_ascii_hexdigit()) => {
                match (k.parse::<usize>(), n.parse::<usize>()) {
                    (Ok(k), Ok(n)) if k > 0 => (k, n),
                    _ => {
                        return Err(Error::malformed(
                            source_name,
                            2,
                            "expected `k n_entries vocab_fingerprint_hex`",
                        ))
                    }
                }
            }
            _ => {
                return Err(Error::malformed(
                    source_name,
                    2,
                    "expected `k n_entries vocab_fingerprint_hex`",
                ))
            }
        };
        let fingerprint = meta[2].to_string();

        let body: Vec<(usize, &str)> = lines
            .iter()
            .enumerate()
            .skip(2)
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| (i + 1, *l))
            .collect();
        if body.len() != n {
            return Err(Error::malformed(
                source_name,
                lines.len(),
                format!("header announces {n} entries, found {}", body.len()),
            ));
        }
        let mut entries = Vec::with_capacity(n);
        for (lineno, line) in body {
            let fields: Vec<&str> = line.split('\t').collect();
            let [image_id, label, raw, weights] = fields.as_slice() else {
                return Err(Error::malformed(source_name, lineno, "expected 4 tab-separated fields"));
            };
            let raw_count = raw
                .parse::<usize>()
                .map_err(|_| Error::malformed(source_name, lineno, "raw_count is not an integer"))?;
            let weights = weights
                .split(' ')
                .map(|t| t.parse::<f64>().ok().filter(|w| w.is_finite() && *w >= 0.0))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::malformed(source_name, lineno, "weights must be non-negative numbers"))?;
            if weights.len() != k {
                return Err(Error::malformed(
                    source_name,
                    lineno,
                    format!("expected {k} weights, found {}", weights.len()),
                ));
            }
            let weights = weights.into_iter().map(|w| snap_to_count(w, raw_count)).collect();
            entries.push(IndexEntry {
                image_id: image_id.to_string(),
                label: label.to_string(),
                bow: BowHistogram { weights, raw_count },
            });
        }
        BowIndex::new(k, fingerprint, entries)
    }
}

/// One image to index.
pub struct LabeledImage {
    pub image_id: String,
    pub label: String,
    pub image: RasterImage,
}

/// Describes and quantizes every image. Flagged images are kept with zero histograms; their ids
/// are returned alongside the index.
pub fn build_index(images: &[LabeledImage], vocab: &Vocabulary, params: &PipelineParams) -> Result<(BowIndex, Vec<String>)> {
    if images.is_empty() {
        return Err(Error::Empty("no images to index"));
    }
    if params.descriptor_dim() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.dim(),
            actual: params.descriptor_dim(),
        });
    }
    let mut seen = HashSet::new();
    for img in images {
        if !seen.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateId(img.image_id.clone()));
        }
    }
    let sets = images
        .par_iter()
        .map(|img| describe_image(&img.image, &img.image_id, params))
        .collect::<Result<Vec<_>>>()?;
    index_descriptor_sets(images.iter().map(|i| i.label.as_str()), &sets, vocab)
}

/// Quantizes already-described images, in order.
pub fn index_descriptor_sets<'a>(
    labels: impl Iterator<Item = &'a str>,
    sets: &[DescriptorSet],
    vocab: &Vocabulary,
) -> Result<(BowIndex, Vec<String>)> {
    let bows = sets
        .par_iter()
        .map(|ds| quantize(ds, vocab))
        .collect::<Result<Vec<_>>>()?;
    let mut flagged = Vec::new();
    let entries = sets
        .iter()
        .zip(labels)
        .zip(bows)
        .map(|((ds, label), bow)| {
            if ds.is_flagged() {
                flagged.push(ds.image_id.clone());
            }
            IndexEntry {
                image_id: ds.image_id.clone(),
                label: label.to_string(),
                bow,
            }
        })
        .collect();
    Ok((BowIndex::new(vocab.k(), vocab.fingerprint(), entries)?, flagged))
}

/// Full scan; ascending L1 distance with ties broken by image id; truncated to `top_m`.
pub fn query(q: &BowHistogram, index: &BowIndex, top_m: usize) -> Result<RetrievalResult> {
    query_excluding(q, index, top_m, None, "")
}

/// As [`query`], optionally leaving one image id out of the candidates.
pub fn query_excluding(
    q: &BowHistogram,
    index: &BowIndex,
    top_m: usize,
    exclude: Option<&str>,
    query_id: &str,
) -> Result<RetrievalResult> {
    if index.is_empty() {
        return Err(Error::Empty("index has no entries"));
    }
    if top_m == 0 {
        return Err(Error::InvalidParam("top_m must be >= 1".into()));
    }
    if q.k() != index.k() {
        return Err(Error::DimensionMismatch {
            expected: index.k(),
            actual: q.k(),
        });
    }
    let mut ranked: Vec<Hit> = index
        .entries
        .iter()
        .filter(|e| Some(e.image_id.as_str()) != exclude)
        .map(|e| Hit {
            image_id: e.image_id.clone(),
            label: e.label.clone(),
            distance: l1(&q.weights, &e.bow.weights),
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    ranked.truncate(top_m);
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked,
    })
}
