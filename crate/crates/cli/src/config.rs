//! Run configuration: defaults, then a TOML/JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use leishcount::associate::AssocMode;
use leishcount::classify::{Calibration, SvmModel, ZoomLabel};
use leishcount::pipeline::AnalysisConfig;
use leishcount::preprocess::gaussian_kernel;
use leishcount::segment::Connectivity;
use serde::{Deserialize, Serialize};

/// The model trained on synthetic clusters that ships with the tool.
pub const DEFAULT_MODEL_JSON: &str = include_str!("../../../models/default-model.json");

/// Everything `analyze` and `features` need besides the input list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub analysis: AnalysisConfig,
    /// `None` uses the built-in model.
    pub model: Option<PathBuf>,
    /// Rule-based counting only.
    pub no_model: bool,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub overlay: bool,
    pub json: bool,
    pub label_maps: bool,
    pub timestamp: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisConfig::default(),
            model: None,
            no_model: false,
            out: None,
            jobs: 1,
            overlay: false,
            json: false,
            label_maps: false,
            timestamp: true,
        }
    }
}

/// Parse a file as TOML or JSON, chosen by extension.
pub fn read_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_toml = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).with_context(|| format!("invalid TOML in {}", path.display()))
    } else {
        serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
    }
}

fn parse_blur(s: &str) -> std::result::Result<(f64, usize), String> {
    let (sigma, size) = s.split_once(',').ok_or("expected <sigma>,<ksize>")?;
    let sigma: f64 = sigma.trim().parse().map_err(|e| format!("sigma: {e}"))?;
    let size: usize = size.trim().parse().map_err(|e| format!("ksize: {e}"))?;
    Ok((sigma, size))
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    let n: u8 = s.parse().map_err(|_| format!("expected 4 or 8, got '{s}'"))?;
    Connectivity::from_number(n).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZoomChoice {
    Auto,
    Fixed(ZoomLabel),
}

fn parse_zoom(s: &str) -> std::result::Result<ZoomChoice, String> {
    if s == "auto" {
        return Ok(ZoomChoice::Auto);
    }
    s.parse().map(ZoomChoice::Fixed).map_err(|e: leishcount::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusChoice {
    Auto,
    Pixels(f64),
}

fn parse_radius(s: &str) -> std::result::Result<RadiusChoice, String> {
    if s == "auto" {
        return Ok(RadiusChoice::Auto);
    }
    match s.parse::<f64>() {
        Ok(r) if r > 0.0 && r.is_finite() => Ok(RadiusChoice::Pixels(r)),
        _ => Err(format!("expected a positive pixel radius or 'auto', got '{s}'")),
    }
}

fn parse_assoc_mode(s: &str) -> std::result::Result<AssocMode, String> {
    s.parse().map_err(|e: leishcount::Error| e.to_string())
}

/// Flags shared by `analyze` and `features`. Every flag overrides the
/// corresponding config file entry.
#[derive(Args, Clone, Debug, Default)]
pub struct AnalysisArgs {
    /// Pipeline configuration file (TOML or JSON).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Calibration file with zoom5 and zoom10 parameter sets (TOML or JSON).
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Zoom level: auto, 5 or 10.
    #[arg(long, value_parser = parse_zoom, value_name = "auto|5|10")]
    pub zoom: Option<ZoomChoice>,
    /// Learned nuclei counter (JSON model from `train`).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Count nuclei with the area rule alone.
    #[arg(long, conflicts_with = "model")]
    pub no_model: bool,

    /// Lower percentile of the contrast stretch.
    #[arg(long, value_name = "FRACTION")]
    pub stretch_low: Option<f64>,
    /// Upper percentile of the contrast stretch.
    #[arg(long, value_name = "FRACTION")]
    pub stretch_high: Option<f64>,
    /// Histogram-equalize each channel after stretching.
    #[arg(long)]
    pub equalize: bool,
    /// Gaussian blur before stretching.
    #[arg(long, value_parser = parse_blur, value_name = "SIGMA,KSIZE")]
    pub blur: Option<(f64, usize)>,

    /// Moving-average window of the peak counter (odd).
    #[arg(long, value_name = "BINS")]
    pub peak_window: Option<usize>,
    /// Half-width of the search window around each valley (three-class split).
    #[arg(long, value_name = "BINS")]
    pub valley_halfwidth: Option<u8>,
    /// Pixel connectivity of region labelling.
    #[arg(long, value_parser = parse_connectivity, value_name = "4|8")]
    pub connectivity: Option<Connectivity>,

    /// How parasites are matched to macrophages.
    #[arg(long, value_parser = parse_assoc_mode, value_name = "cytoplasm|radius|both")]
    pub assoc_mode: Option<AssocMode>,
    /// Association radius in pixels, or auto from the macrophage area.
    #[arg(long, value_parser = parse_radius, value_name = "PX|auto")]
    pub assoc_radius: Option<RadiusChoice>,

    /// EM iteration cap per cluster.
    #[arg(long, value_name = "N")]
    pub em_max_iter: Option<usize>,
    /// Floor on component standard deviations.
    #[arg(long, value_name = "STD")]
    pub em_min_std: Option<f64>,
    /// Base seed of the k-means initialization.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads (images are processed in parallel).
    #[arg(long, short = 'j', value_name = "N")]
    pub jobs: Option<usize>,
}

impl AnalysisArgs {
    /// Merge defaults, config file, calibration file and flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match &self.config {
            Some(path) => read_structured(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(path) = &self.params {
            cfg.analysis.calibration = read_structured::<Calibration>(path)?;
        }
        let a = &mut cfg.analysis;
        match self.zoom {
            Some(ZoomChoice::Auto) => a.zoom = None,
            Some(ZoomChoice::Fixed(z)) => a.zoom = Some(z),
            None => {}
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
            cfg.no_model = false;
        }
        if self.no_model {
            cfg.no_model = true;
        }
        let p = &mut a.preprocess;
        if let Some(v) = self.stretch_low {
            p.stretch_low = v;
        }
        if let Some(v) = self.stretch_high {
            p.stretch_high = v;
        }
        if self.equalize {
            p.equalize = true;
        }
        if self.blur.is_some() {
            p.blur = self.blur;
        }
        let s = &mut a.segment;
        if let Some(v) = self.peak_window {
            s.peak_window = v;
        }
        if let Some(v) = self.valley_halfwidth {
            s.valley_halfwidth = v;
        }
        if let Some(v) = self.connectivity {
            s.connectivity = v;
        }
        if let Some(v) = self.assoc_mode {
            a.assoc_mode = v;
        }
        match self.assoc_radius {
            Some(RadiusChoice::Auto) => a.assoc_radius = None,
            Some(RadiusChoice::Pixels(r)) => a.assoc_radius = Some(r),
            None => {}
        }
        if let Some(v) = self.em_max_iter {
            a.em.max_iter = v;
        }
        if let Some(v) = self.em_min_std {
            a.em.min_std = v;
        }
        if let Some(v) = self.seed {
            a.em.seed = v;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        validate(&cfg)?;
        Ok(cfg)
    }
}

/// Reject settings the pipeline would fail on for every image.
pub fn validate(cfg: &PipelineConfig) -> Result<()> {
    let a = &cfg.analysis;
    let p = &a.preprocess;
    if !(0.0 <= p.stretch_low && p.stretch_low < p.stretch_high && p.stretch_high <= 1.0) {
        bail!(
            "stretch percentiles must satisfy 0 <= low < high <= 1, got {} and {}",
            p.stretch_low,
            p.stretch_high
        );
    }
    if let Some((sigma, size)) = p.blur {
        gaussian_kernel(sigma, size).context("invalid --blur")?;
    }
    if a.segment.peak_window == 0 || a.segment.peak_window.is_multiple_of(2) || a.segment.peak_window > 255 {
        bail!("peak window must be odd and between 1 and 255, got {}", a.segment.peak_window);
    }
    if let Some(r) = a.assoc_radius {
        if !(r > 0.0 && r.is_finite()) {
            bail!("association radius must be positive, got {r}");
        }
    }
    if a.em.max_iter == 0 {
        bail!("EM needs at least one iteration");
    }
    if !(a.em.min_std > 0.0 && a.em.min_std.is_finite()) {
        bail!("EM minimum standard deviation must be positive, got {}", a.em.min_std);
    }
    for set in [
        &a.calibration.macrophage.zoom5,
        &a.calibration.macrophage.zoom10,
        &a.calibration.parasite.zoom5,
        &a.calibration.parasite.zoom10,
    ] {
        set.validate()?;
    }
    if cfg.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    if let Some(m) = &cfg.model {
        if !cfg.no_model && !m.is_file() {
            bail!("model file {} does not exist", m.display());
        }
    }
    Ok(())
}

/// The classifier selected by the configuration.
pub fn load_model(cfg: &PipelineConfig) -> Result<Option<SvmModel>> {
    if cfg.no_model {
        return Ok(None);
    }
    let text = match &cfg.model {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?,
        None => DEFAULT_MODEL_JSON.to_string(),
    };
    Ok(Some(SvmModel::from_json(&text)?))
}
