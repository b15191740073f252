//! Precision, recall, PR curves and (k, n, variant) evaluation grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::PipelineParams;
use crate::descriptors::{describe_image, DescriptorSet};
use crate::error::{Error, Result};
use crate::index::{index_descriptor_sets, query_excluding, BowIndex, LabeledImage};
use crate::vocabulary::{train_kmeans, KMeansConfig};

/// Recall levels at which query curves are interpolated and averaged.
pub const RECALL_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn relevant_hits<S: AsRef<str>>(retrieved: &[S], relevant: &str, m: usize) -> usize {
    retrieved
        .iter()
        .take(m)
        .filter(|l| l.as_ref() == relevant)
        .count()
}

/// Fraction of the first `m` results carrying `relevant`. `m` is clamped to the list length.
pub fn precision_at<S: AsRef<str>>(retrieved: &[S], relevant: &str, m: usize) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::Empty("retrieval list is empty"));
    }
    if m == 0 {
        return Err(Error::InvalidParam("cutoff must be >= 1".into()));
    }
    let m = m.min(retrieved.len());
    Ok(relevant_hits(retrieved, relevant, m) as f64 / m as f64)
}

/// Relevant results among the first `m`, over all `total_relevant` relevant items.
pub fn recall_at<S: AsRef<str>>(retrieved: &[S], relevant: &str, total_relevant: usize, m: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::InvalidParam("total_relevant must be >= 1".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParam("cutoff must be >= 1".into()));
    }
    Ok(relevant_hits(retrieved, relevant, m) as f64 / total_relevant as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub cutoff: usize,
}

/// One point per cutoff `1..=len`.
pub fn pr_curve<S: AsRef<str>>(retrieved: &[S], relevant: &str, total_relevant: usize) -> Result<Vec<PrPoint>> {
    if retrieved.is_empty() {
        return Err(Error::Empty("retrieval list is empty"));
    }
    if total_relevant == 0 {
        return Err(Error::InvalidParam("total_relevant must be >= 1".into()));
    }
    let mut hits = 0usize;
    Ok(retrieved
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if l.as_ref() == relevant {
                hits += 1;
            }
            PrPoint {
                recall: hits as f64 / total_relevant as f64,
                precision: hits as f64 / (i + 1) as f64,
                cutoff: i + 1,
            }
        })
        .collect())
}

/// Interpolated precision at each of [`RECALL_LEVELS`]: the best precision reached at any
/// recall at or above the level, 0 when the level is never reached.
pub fn interpolate(curve: &[PrPoint]) -> [f64; RECALL_LEVELS.len()] {
    let mut out = [0.0; RECALL_LEVELS.len()];
    for (slot, &level) in out.iter_mut().zip(&RECALL_LEVELS) {
        *slot = curve
            .iter()
            .filter(|p| p.recall >= level)
            .map(|p| p.precision)
            .fold(0.0, f64::max);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Fused,
    ShapeOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::ShapeOnly => "shape",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Variant::Fused),
            "shape" | "shape_only" | "shape-only" => Ok(Variant::ShapeOnly),
            other => Err(Error::InvalidParam(format!(
                "unknown variant `{other}` (expected fused or shape)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub k_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Pipeline settings shared by every cell; `n` and `color_weight` are overridden per cell
    /// (`color_weight` is kept for the fused variant and zeroed for shape-only).
    pub base: PipelineParams,
    /// Contour sampling uses `seed`, k-means uses `seed + 1`.
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Precision cutoff.
    pub m: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            k_values: vec![200, 300, 400],
            n_values: vec![200, 300, 400, 500, 600, 700],
            variants: vec![Variant::Fused, Variant::ShapeOnly],
            base: PipelineParams::default(),
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
            m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub k: usize,
    pub n: usize,
    pub variant: Variant,
    /// `None` when the cell's pipeline failed.
    pub mean_precision: Option<f64>,
    pub queries: usize,
    /// Images excluded from querying (flagged), or all images when the cell failed.
    pub failures: usize,
    pub error: Option<String>,
    /// `(image_id, P@m)` per query.
    pub per_query: Vec<(String, f64)>,
    /// Mean interpolated precision at [`RECALL_LEVELS`] over all queries.
    pub curve: Vec<f64>,
    pub per_class_curves: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: GridConfig,
    /// Ordered by (k, n, variant).
    pub cells: Vec<GridCell>,
}

impl EvalReport {
    pub fn cell(&self, k: usize, n: usize, variant: Variant) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.n == n && c.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "k,n,variant,mean_precision_at_{},queries,failures",
            self.config.m
        );
        for c in &self.cells {
            let mp = c
                .mean_precision
                .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{},{},{},{},{},{}", c.k, c.n, c.variant, mp, c.queries, c.failures);
        }
        s
    }

    /// Mean interpolated PR curves at the largest evaluated `n`, one series per (variant, k).
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("variant,k,recall,precision\n");
        let Some(&n) = self.config.n_values.iter().max() else {
            return s;
        };
        let mut cells: Vec<&GridCell> = self
            .cells
            .iter()
            .filter(|c| c.n == n && c.mean_precision.is_some())
            .collect();
        cells.sort_by_key(|c| (c.variant, c.k));
        for c in cells {
            for (level, p) in RECALL_LEVELS.iter().zip(&c.curve) {
                let _ = writeln!(s, "{},{},{:.1},{:.6}", c.variant, c.k, level, p);
            }
        }
        s
    }
}

fn check_corpus(corpus: &[LabeledImage]) -> Result<()> {
    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for img in corpus {
        *per_class.entry(img.label.as_str()).or_default() += 1;
    }
    if per_class.len() < 2 {
        return Err(Error::Corpus("evaluation needs at least 2 classes".into()));
    }
    if let Some((label, _)) = per_class.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Corpus(format!(
            "class `{label}` has fewer than 2 images"
        )));
    }
    Ok(())
}

/// Leave-one-out evaluation of every non-flagged image against an index.
fn evaluate_index(index: &BowIndex, flagged: &[String], m: usize) -> Result<(Vec<(String, f64)>, Vec<f64>, BTreeMap<String, Vec<f64>>)> {
    let mut class_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for e in index.entries() {
        *class_sizes.entry(e.label.as_str()).or_default() += 1;
    }
    let queries: Vec<_> = index
        .entries()
        .iter()
        .filter(|e| !flagged.contains(&e.image_id))
        .collect();
    let results = queries
        .par_iter()
        .map(|e| {
            let r = query_excluding(&e.bow, index, index.len(), Some(&e.image_id), &e.image_id)?;
            let labels: Vec<&str> = r.ranked.iter().map(|h| h.label.as_str()).collect();
            let p = precision_at(&labels, &e.label, m)?;
            let total_relevant = class_sizes[e.label.as_str()] - 1;
            let curve = if total_relevant > 0 {
                Some(interpolate(&pr_curve(&labels, &e.label, total_relevant)?))
            } else {
                None
            };
            Ok((e.image_id.clone(), e.label.clone(), p, curve))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_query = Vec::with_capacity(results.len());
    let mut sum = vec![0.0; RECALL_LEVELS.len()];
    let mut counted = 0usize;
    let mut class_sum: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, label, p, curve) in results {
        per_query.push((id, p));
        if let Some(curve) = curve {
            counted += 1;
            let slot = class_sum
                .entry(label)
                .or_insert_with(|| (vec![0.0; RECALL_LEVELS.len()], 0));
            slot.1 += 1;
            for (i, v) in curve.iter().enumerate() {
                sum[i] += v;
                slot.0[i] += v;
            }
        }
    }
    let mean_curve = sum
        .iter()
        .map(|v| if counted > 0 { v / counted as f64 } else { 0.0 })
        .collect();
    let per_class = class_sum
        .into_iter()
        .map(|(label, (s, c))| (label, s.iter().map(|v| v / c as f64).collect()))
        .collect();
    Ok((per_query, mean_curve, per_class))
}

fn run_cell(
    corpus: &[LabeledImage],
    sets: &[DescriptorSet],
    k: usize,
    n: usize,
    variant: Variant,
    cfg: &GridConfig,
) -> GridCell {
    let flagged_count = sets.iter().filter(|s| s.is_flagged()).count();
    let attempt = || -> Result<(Vec<(String, f64)>, Vec<f64>, BTreeMap<String, Vec<f64>>)> {
        let training: Vec<&[f64]> = sets.iter().flat_map(|s| s.vectors()).collect();
        let vocab = train_kmeans(
            &training,
            &KMeansConfig {
                k,
                seed: cfg.seed.wrapping_add(1),
                max_iter: cfg.max_iter,
                tol: cfg.tol,
            },
        )?;
        let (index, flagged) =
            index_descriptor_sets(corpus.iter().map(|i| i.label.as_str()), sets, &vocab)?;
        evaluate_index(&index, &flagged, cfg.m)
    };
    match attempt() {
        Ok((per_query, curve, per_class_curves)) => {
            let mean = if per_query.is_empty() {
                None
            } else {
                Some(per_query.iter().map(|q| q.1).sum::<f64>() / per_query.len() as f64)
            };
            GridCell {
                k,
                n,
                variant,
                mean_precision: mean,
                queries: per_query.len(),
                failures: flagged_count,
                error: mean.is_none().then(|| "no image produced descriptors".to_string()),
                per_query,
                curve,
                per_class_curves,
            }
        }
        Err(e) => GridCell {
            k,
            n,
            variant,
            mean_precision: None,
            queries: 0,
            failures: corpus.len(),
            error: Some(e.to_string()),
            per_query: Vec::new(),
            curve: Vec::new(),
            per_class_curves: BTreeMap::new(),
        },
    }
}

/// Runs every (k, n, variant) cell: describe, train a vocabulary over all descriptors, index,
/// then query each image leave-one-out and average P@m. A failing cell is recorded and the grid
/// continues.
pub fn run_grid(corpus: &[LabeledImage], cfg: &GridConfig) -> Result<EvalReport> {
    check_corpus(corpus)?;
    if cfg.k_values.is_empty() || cfg.n_values.is_empty() || cfg.variants.is_empty() {
        return Err(Error::InvalidParam(
            "grid needs at least one k, one n and one variant".into(),
        ));
    }
    if cfg.m == 0 {
        return Err(Error::InvalidParam("cutoff must be >= 1".into()));
    }
    let mut cells = Vec::new();
    for &n in &cfg.n_values {
        for &variant in &cfg.variants {
            let params = PipelineParams {
                n,
                color_weight: match variant {
                    Variant::Fused => cfg.base.color_weight,
                    Variant::ShapeOnly => 0.0,
                },
                seed: cfg.seed,
                ..cfg.base
            };
            params.validate()?;
            let sets = corpus
                .par_iter()
                .map(|img| describe_image(&img.image, &img.image_id, &params))
                .collect::<Result<Vec<_>>>()?;
            for &k in &cfg.k_values {
                log::info!("grid cell k={k} n={n} variant={variant}");
                cells.push(run_cell(corpus, &sets, k, n, variant, cfg));
            }
        }
    }
    cells.sort_by_key(|c| (c.k, c.n, c.variant));
    Ok(EvalReport {
        config: cfg.clone(),
        cells,
    })
}
