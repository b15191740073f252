//! `avifind`: train a visual vocabulary, index a labeled image corpus, query it and evaluate
//! retrieval precision over (k, n) grids.

mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avifind_core::corpus::scan_corpus;
use avifind_core::descriptors::describe_image;
use avifind_core::eval::{run_grid, GridConfig, Variant};
use avifind_core::imaging::load_image;
use avifind_core::index::{build_index, quantize, query, BowIndex, LabeledImage};
use avifind_core::vocabulary::{train_kmeans, KMeansConfig, Vocabulary};
use avifind_core::{DescriptorSet, Error};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use settings::{pick, ConfigFile, PipelineArgs};

#[derive(Parser, Debug)]
#[command(name = "avifind", version, about = "Shape-context + color-moment bag-of-words image retrieval")]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "AVIFIND_JOBS")]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a visual vocabulary by k-means over corpus descriptors
    Vocab(VocabArgs),
    /// Quantize every corpus image against a vocabulary and write the index
    Index(IndexArgs),
    /// Rank indexed images by similarity to one image
    Query(QueryArgs),
    /// Leave-one-out precision over a grid of vocabulary sizes and sample counts
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus root: one directory per class, CUB-200's images/<class>/, or flat <class>__<file>
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Keep at most N images per class (seeded shuffle)
    #[arg(long, value_name = "N")]
    per_class: Option<usize>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Contour points sampled per image
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Number of visual words
    #[arg(long)]
    k: Option<usize>,
    /// Maximum Lloyd iterations
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative centroid movement at which k-means stops
    #[arg(long)]
    tol: Option<f64>,
    /// Vocabulary file to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Contour points sampled per image
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Vocabulary file from `avifind vocab`
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Index file to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Contour points sampled per image
    #[arg(long)]
    n: Option<usize>,
    /// Index file from `avifind index`
    #[arg(long, value_name = "FILE")]
    index: PathBuf,
    /// Vocabulary the index was built with
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Query image (PNG or JPEG)
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Number of results to print
    #[arg(long, value_name = "M")]
    top: Option<usize>,
    /// Query even if the index was built with a different vocabulary
    #[arg(long)]
    allow_mismatch: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Comma-separated vocabulary sizes
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Comma-separated contour sample counts
    #[arg(long = "n", value_delimiter = ',', required = true, value_name = "N")]
    n_values: Vec<usize>,
    /// Comma-separated descriptor variants: fused, shape
    #[arg(long, value_delimiter = ',', default_value = "fused,shape")]
    variants: Vec<Variant>,
    /// Precision cutoff
    #[arg(long, value_name = "M")]
    top: Option<usize>,
    /// Maximum Lloyd iterations
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative centroid movement at which k-means stops
    #[arg(long)]
    tol: Option<f64>,
    /// Report CSV to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write mean interpolated precision-recall curves
    #[arg(long, value_name = "FILE")]
    curves: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

const DEFAULT_K: usize = 200;
const DEFAULT_TOP: usize = 10;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "avifind: error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot start worker pool")?;
    }
    match cli.command {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn load_corpus(args: &CorpusArgs, cfg: &ConfigFile, seed: u64) -> Result<Vec<LabeledImage>> {
    let limit = match args.per_class {
        Some(n) => Some(n),
        None => cfg.get("per_class")?,
    };
    let manifest = scan_corpus(&args.corpus, limit, seed.wrapping_add(2))?;
    log::info!(
        "corpus {}: {} images in {} classes",
        args.corpus.display(),
        manifest.len(),
        manifest.classes().len()
    );
    Ok(manifest.load_images()?)
}

fn warn_flagged<'a>(ids: impl IntoIterator<Item = &'a str>) {
    let ids: Vec<&str> = ids.into_iter().collect();
    if !ids.is_empty() {
        log::warn!(
            "{} image(s) yielded no descriptors and get empty histograms: {}",
            ids.len(),
            ids.join(", ")
        );
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_vocab(a: VocabArgs) -> Result<()> {
    let cfg = a.pipeline.config_file()?;
    let seed = a.pipeline.seed(&cfg, 0)?;
    let params = a.pipeline.resolve(&cfg, seed, a.n)?;
    let kmeans = KMeansConfig {
        k: pick(a.k, &cfg, "k", DEFAULT_K)?,
        seed: seed.wrapping_add(1),
        max_iter: pick(a.max_iter, &cfg, "max_iter", KMeansConfig::default().max_iter)?,
        tol: pick(a.tol, &cfg, "tol", KMeansConfig::default().tol)?,
    };
    let corpus = load_corpus(&a.corpus, &cfg, seed)?;
    let sets: Vec<DescriptorSet> = corpus
        .par_iter()
        .map(|img| describe_image(&img.image, &img.image_id, &params))
        .collect::<avifind_core::Result<_>>()?;
    warn_flagged(sets.iter().filter(|s| s.is_flagged()).map(|s| s.image_id.as_str()));
    let vectors: Vec<&[f64]> = sets.iter().flat_map(|s| s.vectors()).collect();
    log::info!("training k={} on {} descriptors", kmeans.k, vectors.len());
    let mut vocab = train_kmeans(&vectors, &kmeans)?;
    if let Some(meta) = &vocab.train_meta {
        log::info!(
            "k-means: {} iterations, final distortion {:.6e}",
            meta.iterations,
            meta.final_distortion()
        );
    }
    // The file records the master seed so `index` and `query` can default to the same sampling.
    vocab.seed = seed;
    vocab.save(&a.out)?;
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let cfg = a.pipeline.config_file()?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let seed = a.pipeline.seed(&cfg, vocab.seed)?;
    let params = a.pipeline.resolve(&cfg, seed, a.n)?;
    let corpus = load_corpus(&a.corpus, &cfg, seed)?;
    let (index, flagged) = build_index(&corpus, &vocab, &params)?;
    warn_flagged(flagged.iter().map(String::as_str));
    index.save(&a.out)?;
    log::info!("indexed {} images against k={}", index.len(), index.k());
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let cfg = a.pipeline.config_file()?;
    let index = BowIndex::load(&a.index)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    match index.check_fingerprint(&vocab) {
        Ok(()) => {}
        Err(e @ Error::FingerprintMismatch { .. }) if a.allow_mismatch => log::warn!("{e}"),
        Err(e) => return Err(e).context("pass --allow-mismatch to query anyway"),
    }
    if index.k() != vocab.k() {
        bail!("index has k={} but the vocabulary has k={}", index.k(), vocab.k());
    }
    let top = pick(a.top, &cfg, "top", DEFAULT_TOP)?;
    if top == 0 {
        bail!("--top must be at least 1");
    }
    let seed = a.pipeline.seed(&cfg, vocab.seed)?;
    let params = a.pipeline.resolve(&cfg, seed, a.n)?;
    let image = load_image(&a.image)?;
    let id = a.image.display().to_string();
    let ds = describe_image(&image, &id, &params)?;
    if ds.is_flagged() {
        log::warn!("query image {id} yielded no descriptors; its histogram is empty");
    }
    let bow = quantize(&ds, &vocab)?;
    let result = query(&bow, &index, top)?;
    let mut out = std::io::stdout().lock();
    for (rank, hit) in result.ranked.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}\t{:.6}", rank + 1, hit.image_id, hit.label, hit.distance)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.pipeline.config_file()?;
    if a.pipeline.shape_only(&cfg)? {
        bail!("eval runs both descriptor variants; choose them with --variants instead of --shape-only");
    }
    if a.k.contains(&0) || a.n_values.iter().any(|&n| n < 2) {
        bail!("--k values must be >= 1 and --n values >= 2");
    }
    let seed = a.pipeline.seed(&cfg, 0)?;
    // Each cell overrides n; this one only has to be valid.
    let base = a.pipeline.resolve(&cfg, seed, Some(a.n_values.first().copied().unwrap_or(2)))?;
    let grid = GridConfig {
        k_values: a.k.clone(),
        n_values: a.n_values.clone(),
        variants: a.variants.clone(),
        base,
        seed,
        max_iter: pick(a.max_iter, &cfg, "max_iter", KMeansConfig::default().max_iter)?,
        tol: pick(a.tol, &cfg, "tol", KMeansConfig::default().tol)?,
        m: pick(a.top, &cfg, "top", DEFAULT_TOP)?,
    };
    let corpus = load_corpus(&a.corpus, &cfg, seed)?;
    let report = run_grid(&corpus, &grid)?;
    for c in &report.cells {
        match (&c.mean_precision, &c.error) {
            (Some(mp), _) => log::info!("k={} n={} {}: P@{} {:.4}", c.k, c.n, c.variant, grid.m, mp),
            (None, err) => log::warn!(
                "k={} n={} {} failed: {}",
                c.k,
                c.n,
                c.variant,
                err.as_deref().unwrap_or("unknown error")
            ),
        }
    }
    write_file(&a.out, &report.to_csv())?;
    if let Some(path) = &a.curves {
        write_file(path, &report.curves_csv())?;
    }
    Ok(())
}
