//! Parameter resolution: command-line flags, then the `--config` file, then built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use avifind_core::PipelineParams;
use clap::Args;

/// Keys accepted in a config file. Dashes and underscores are interchangeable.
const KNOWN_KEYS: &[&str] = &[
    "n",
    "seed",
    "color_weight",
    "shape_only",
    "radial_bins",
    "angular_bins",
    "r_min",
    "r_max",
    "rotation_invariant",
    "canny_sigma",
    "canny_low",
    "canny_high",
    "octaves",
    "scales_per_octave",
    "sigma0",
    "contrast_thresh",
    "edge_thresh",
    "k",
    "max_iter",
    "tol",
    "per_class",
    "top",
];

/// `key = value` lines; `#` starts a comment.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config file {}", path.display()))?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", i + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { path: None, values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        raw.parse::<T>().map(Some).map_err(|e| {
            let origin = self
                .path
                .as_ref()
                .map_or_else(|| "config".to_string(), |p| p.display().to_string());
            anyhow!("{origin}: bad value `{raw}` for `{key}`: {e}")
        })
    }
}

/// `flag`, else the config entry, else `default`.
pub fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

/// Descriptor pipeline settings shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    /// Master seed; contour sampling uses it, k-means seed+1, corpus subsetting seed+2
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight on the six color-moment entries of each descriptor
    #[arg(long, value_name = "W")]
    pub color_weight: Option<f64>,
    /// Shape context only (same as --color-weight 0)
    #[arg(long)]
    pub shape_only: bool,
    /// Log-radius bins of the shape context
    #[arg(long)]
    pub radial_bins: Option<usize>,
    /// Angle bins of the shape context
    #[arg(long)]
    pub angular_bins: Option<usize>,
    /// Inner shape-context radius, in units of the mean pairwise distance
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Outer shape-context radius, in units of the mean pairwise distance
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Measure shape-context angles from the local contour tangent
    #[arg(long)]
    pub rotation_invariant: bool,
    /// Gaussian sigma of the edge detector
    #[arg(long)]
    pub canny_sigma: Option<f64>,
    /// Low hysteresis threshold, relative to the strongest gradient
    #[arg(long)]
    pub canny_low: Option<f64>,
    /// High hysteresis threshold, relative to the strongest gradient
    #[arg(long)]
    pub canny_high: Option<f64>,
    /// DoG octaves (the first is the 2x upsampled image)
    #[arg(long)]
    pub octaves: Option<usize>,
    /// DoG scales per octave
    #[arg(long)]
    pub scales_per_octave: Option<usize>,
    /// Base blur of the scale space
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Minimum |DoG| response of a keypoint
    #[arg(long)]
    pub contrast_thresh: Option<f64>,
    /// Principal-curvature ratio limit for keypoints
    #[arg(long)]
    pub edge_thresh: Option<f64>,
    /// Read defaults from a `key = value` file (flags still win)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

impl PipelineArgs {
    pub fn config_file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(p) => ConfigFile::load(p),
            None => Ok(ConfigFile::default()),
        }
    }

    /// Master seed: flag, config, then `fallback`.
    pub fn seed(&self, cfg: &ConfigFile, fallback: u64) -> Result<u64> {
        pick(self.seed, cfg, "seed", fallback)
    }

    pub fn shape_only(&self, cfg: &ConfigFile) -> Result<bool> {
        pick(self.shape_only.then_some(true), cfg, "shape_only", false)
    }

    /// Full pipeline settings. `n` is the command's own `--n` flag; `--shape-only` zeroes the
    /// color weight.
    pub fn resolve(&self, cfg: &ConfigFile, seed: u64, n: Option<usize>) -> Result<PipelineParams> {
        let d = PipelineParams::default();
        let flag = |b: bool| b.then_some(true);
        let mut p = d;
        p.n = pick(n, cfg, "n", d.n)?;
        p.seed = seed;
        p.color_weight = if self.shape_only(cfg)? {
            0.0
        } else {
            pick(self.color_weight, cfg, "color_weight", d.color_weight)?
        };
        p.shape.radial_bins = pick(self.radial_bins, cfg, "radial_bins", d.shape.radial_bins)?;
        p.shape.angular_bins = pick(self.angular_bins, cfg, "angular_bins", d.shape.angular_bins)?;
        p.shape.r_min = pick(self.r_min, cfg, "r_min", d.shape.r_min)?;
        p.shape.r_max = pick(self.r_max, cfg, "r_max", d.shape.r_max)?;
        p.shape.rotation_invariant = pick(
            flag(self.rotation_invariant),
            cfg,
            "rotation_invariant",
            d.shape.rotation_invariant,
        )?;
        p.canny.sigma = pick(self.canny_sigma, cfg, "canny_sigma", d.canny.sigma)?;
        p.canny.low = pick(self.canny_low, cfg, "canny_low", d.canny.low)?;
        p.canny.high = pick(self.canny_high, cfg, "canny_high", d.canny.high)?;
        let ss = &mut p.scale_space;
        ss.octaves = pick(self.octaves, cfg, "octaves", ss.octaves)?;
        ss.scales_per_octave = pick(self.scales_per_octave, cfg, "scales_per_octave", ss.scales_per_octave)?;
        ss.sigma0 = pick(self.sigma0, cfg, "sigma0", ss.sigma0)?;
        ss.contrast_thresh = pick(self.contrast_thresh, cfg, "contrast_thresh", ss.contrast_thresh)?;
        ss.edge_thresh = pick(self.edge_thresh, cfg, "edge_thresh", ss.edge_thresh)?;
        p.validate()?;
        Ok(p)
    }
}
