//! Labeled image corpora on disk.
//!
//! Two layouts are recognized, and may be mixed:
//!
//! * one subdirectory per class (`<root>/<class>/<file>`, or CUB-200's `<root>/images/<class>/<file>`);
//! * flat files named `<class>__<file>` directly under the root.
//!
//! Image ids are `<class>/<file>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::load_image;
use crate::index::LabeledImage;

const FLAT_SEPARATOR: &str = "__";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub image_id: String,
    pub label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        c.dedup();
        c
    }

    /// Decodes every image, in manifest order.
    pub fn load_images(&self) -> Result<Vec<LabeledImage>> {
        self.entries
            .par_iter()
            .map(|e| {
                Ok(LabeledImage {
                    image_id: e.image_id.clone(),
                    label: e.label.clone(),
                    image: load_image(&e.path)?,
                })
            })
            .collect()
    }
}

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|r| r.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> Option<String> {
    p.file_name().and_then(|n| n.to_str()).map(str::to_string)
}

/// Deterministic scan of a class-per-directory or flat corpus. With `per_class_limit`, each
/// class keeps the first `limit` files of a seeded shuffle (classes shuffled in sorted order).
pub fn scan_corpus(root: &Path, per_class_limit: Option<usize>, seed: u64) -> Result<CorpusManifest> {
    if !root.is_dir() {
        return Err(Error::Corpus(format!(
            "corpus root {} does not exist or is not a directory",
            root.display()
        )));
    }
    let cub_images = root.join("images");
    let base = if cub_images.is_dir() { cub_images } else { root.to_path_buf() };

    let mut classes: BTreeMap<String, Vec<(String, PathBuf)>> = BTreeMap::new();
    for path in sorted_dir(&base)? {
        let Some(name) = file_name(&path) else {
            continue;
        };
        if path.is_dir() {
            let files: Vec<(String, PathBuf)> = sorted_dir(&path)?
                .into_iter()
                .filter(|p| p.is_file() && is_image_file(p))
                .filter_map(|p| file_name(&p).map(|n| (n, p)))
                .collect();
            if files.is_empty() {
                log::warn!("skipping empty class directory {}", path.display());
                continue;
            }
            classes.entry(name).or_default().extend(files);
        } else if is_image_file(&path) {
            if let Some((class, rest)) = name.split_once(FLAT_SEPARATOR) {
                if !class.is_empty() && !rest.is_empty() {
                    classes
                        .entry(class.to_string())
                        .or_default()
                        .push((rest.to_string(), path));
                }
            }
        }
    }
    if classes.is_empty() {
        return Err(Error::Corpus(format!(
            "no classes found under {}",
            base.display()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (label, mut files) in classes {
        files.sort();
        if let Some(limit) = per_class_limit {
            if files.len() > limit {
                files.shuffle(&mut rng);
                files.truncate(limit);
                files.sort();
            }
        }
        for (name, path) in files {
            entries.push(CorpusEntry {
                image_id: format!("{label}/{name}"),
                label: label.clone(),
                path,
            });
        }
    }
    Ok(CorpusManifest {
        root: root.to_path_buf(),
        entries,
    })
}
