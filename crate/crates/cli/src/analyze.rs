//! Batch analysis of images into reports, sidecars and overlays.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use leishcount::classify::{NucleiClassifier, SvmModel};
use leishcount::pipeline::{analyze_channels, Analysis, FEATURES_HEADER};
use leishcount::preprocess::preprocess;
use leishcount::raster::{load_image, render_overlay, Channel};
use leishcount::report::render_report;
use leishcount::segment::{render_label_map, segment_plane, ChannelRole};
use rayon::prelude::*;

use crate::config::PipelineConfig;

/// Timestamp in the report's `DD - MM - YYYY @ HH:MM` layout.
pub fn now_stamp() -> String {
    chrono::Local::now().format("%d - %m - %Y @ %H:%M").to_string()
}

/// File stem of an input, used to name every output of that image.
pub fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn output_dir(input: &Path, cfg: &PipelineConfig) -> PathBuf {
    match &cfg.out {
        Some(dir) => dir.clone(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

/// Load one image and run the pipeline on it.
pub fn analyze_path(path: &Path, cfg: &PipelineConfig, model: Option<&SvmModel>) -> Result<Analysis> {
    let loaded = load_image(path)?;
    let stamp = cfg.timestamp.then(now_stamp);
    let model = model.map(|m| m as &dyn NucleiClassifier);
    let mut analysis = analyze_channels(
        &loaded.channels,
        &cfg.analysis,
        model,
        &path.display().to_string(),
        stamp,
    )?;
    if loaded.lossy {
        analysis.lossy_input = true;
        analysis
            .warnings
            .push("input is lossy-compressed; intensities may be distorted".into());
    }
    Ok(analysis)
}

/// Paths written for one image.
#[derive(Clone, Debug, Default)]
pub struct Written {
    pub report: PathBuf,
    pub sidecar: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
    pub label_maps: Vec<PathBuf>,
}

fn write_label_maps(path: &Path, dir: &Path, stem: &str, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let loaded = load_image(path)?;
    let mut out = Vec::new();
    for (channel, role) in [
        (Channel::Macrophage, ChannelRole::Nuclear),
        (Channel::Parasite, ChannelRole::Nuclear),
        (Channel::Cytoplasm, ChannelRole::Cytoplasm),
    ] {
        let pre = preprocess(loaded.channels.plane(channel), &cfg.analysis.preprocess)?;
        let seg = segment_plane(&pre.plane, &cfg.analysis.segment, role)?;
        let map = render_label_map(&seg.regions, pre.plane.width(), pre.plane.height());
        let file = dir.join(format!("{stem}_{}_labels.png", channel.name()));
        map.save_png(&file)?;
        out.push(file);
    }
    Ok(out)
}

/// Analyze one image and write its outputs.
pub fn process_one(path: &Path, cfg: &PipelineConfig, model: Option<&SvmModel>, verbose: bool) -> Result<Written> {
    let analysis = analyze_path(path, cfg, model)?;
    for w in &analysis.warnings {
        log::warn!("{}: {w}", path.display());
    }
    let dir = output_dir(path, cfg);
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let stem = stem_of(path);
    let mut text = render_report(&analysis.report);
    if verbose {
        text.push('\n');
        text.push_str(&analysis.features_csv());
    }
    let report = dir.join(format!("{stem}_report.txt"));
    std::fs::write(&report, text).with_context(|| format!("cannot write {}", report.display()))?;
    let mut written = Written {
        report,
        ..Written::default()
    };
    if cfg.json {
        let file = dir.join(format!("{stem}_report.json"));
        std::fs::write(&file, analysis.sidecar_json()).with_context(|| format!("cannot write {}", file.display()))?;
        written.sidecar = Some(file);
    }
    if cfg.overlay {
        let loaded = load_image(path)?;
        let raster = render_overlay(&loaded.channels, &analysis.overlay)?;
        let file = dir.join(format!("{stem}_overlay.png"));
        raster.save_png(&file)?;
        written.overlay = Some(file);
    }
    if cfg.label_maps {
        written.label_maps = write_label_maps(path, &dir, &stem, cfg)?;
    }
    Ok(written)
}

/// Run `f` over the inputs on a pool of `jobs` threads, keeping input order.
pub fn run_pool<T: Send>(jobs: usize, inputs: &[PathBuf], f: impl Fn(&Path) -> T + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker pool")?;
    Ok(pool.install(|| inputs.par_iter().map(|p| f(p)).collect()))
}

/// Outcome of a batch: how many images failed.
pub struct BatchOutcome {
    pub processed: usize,
    pub failed: usize,
}

pub fn analyze_batch(inputs: &[PathBuf], cfg: &PipelineConfig, verbose: bool) -> Result<BatchOutcome> {
    let model = crate::config::load_model(cfg)?;
    let results = run_pool(cfg.jobs, inputs, |p| process_one(p, cfg, model.as_ref(), verbose))?;
    let mut failed = 0;
    for (path, r) in inputs.iter().zip(results) {
        match r {
            Ok(w) => log::info!("{} -> {}", path.display(), w.report.display()),
            Err(e) => {
                failed += 1;
                log::error!("{}: {e:#}", path.display());
            }
        }
    }
    Ok(BatchOutcome {
        processed: inputs.len() - failed,
        failed,
    })
}

/// Per-region CSV for every input, prefixed with an `image` column.
pub fn features_batch(inputs: &[PathBuf], cfg: &PipelineConfig) -> Result<(String, BatchOutcome)> {
    let model = crate::config::load_model(cfg)?;
    let results = run_pool(cfg.jobs, inputs, |p| analyze_path(p, cfg, model.as_ref()))?;
    let mut out = format!("image,{FEATURES_HEADER}\n");
    let mut failed = 0;
    for (path, r) in inputs.iter().zip(results) {
        match r {
            Ok(a) => {
                let image = path.display().to_string().replace(',', "_");
                for line in a.features_csv().lines().skip(1) {
                    out.push_str(&image);
                    out.push(',');
                    out.push_str(line);
                    out.push('\n');
                }
            }
            Err(e) => {
                failed += 1;
                log::error!("{}: {e:#}", path.display());
            }
        }
    }
    Ok((
        out,
        BatchOutcome {
            processed: inputs.len() - failed,
            failed,
        },
    ))
}
