//! Browser bindings: generate a synthetic scene, segment one channel, and
//! run the full analysis with the shipped nucleus-count model.

use leishcount::classify::{NucleiClassifier, SvmModel};
use leishcount::pipeline::{analyze_channels, AnalysisConfig};
use leishcount::preprocess::preprocess;
use leishcount::raster::{render_overlay, Channel, ChannelSet, RgbRaster};
use leishcount::report::render_report;
use leishcount::segment::{render_label_map, segment_plane, ChannelRole};
use leishcount::synth::{generate, InfectionPlan, SceneSpec};
use wasm_bindgen::prelude::*;

const MODEL: &str = include_str!("../../../models/default-model.json");

fn js_err(e: leishcount::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn channel_of(index: u8) -> Option<Channel> {
    match index {
        0 => Some(Channel::Macrophage),
        1 => Some(Channel::Parasite),
        2 => Some(Channel::Cytoplasm),
        _ => None,
    }
}

/// Scene layout for `seed`: `singles` isolated cells, `clusters` touching
/// groups of two to four nuclei, and up to one parasite per nucleus.
pub fn scene_spec(seed: u64, singles: u32, clusters: u32, parasites: u32) -> SceneSpec {
    let mut cluster_sizes = vec![1; singles as usize];
    cluster_sizes.extend((0..clusters).map(|i| 2 + (seed as u32 + i) % 3));
    let nuclei: u32 = cluster_sizes.iter().sum();
    // Same packing as the benchmark scene. Parasite planes need a parasite
    // for most nuclei before their histogram shows a clear second mode.
    let side = ((nuclei.max(1) as f64).sqrt() * 38.0).ceil() as usize + 16;
    SceneSpec {
        width: side,
        height: side,
        cluster_sizes,
        infection: InfectionPlan::Random {
            parasites: parasites.min(nuclei) as usize,
            max_per_cell: 1,
        },
        extracellular_parasites: (parasites.saturating_sub(nuclei) as usize).min(8),
        seed,
        ..SceneSpec::default()
    }
}

/// Label map of one channel and its region count.
pub fn segment_channel(channels: &ChannelSet, channel: Channel, config: &AnalysisConfig) -> leishcount::Result<(RgbRaster, usize)> {
    let role = match channel {
        Channel::Cytoplasm => ChannelRole::Cytoplasm,
        _ => ChannelRole::Nuclear,
    };
    let pre = preprocess(channels.plane(channel), &config.preprocess)?;
    let seg = segment_plane(&pre.plane, &config.segment, role)?;
    let map = render_label_map(&seg.regions, channels.width(), channels.height());
    Ok((map, seg.regions.len()))
}

#[wasm_bindgen]
pub struct Demo {
    channels: ChannelSet,
    config: AnalysisConfig,
    model: SvmModel,
    regions: usize,
}

#[wasm_bindgen]
impl Demo {
    /// Generate a new synthetic scene.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, singles: u32, clusters: u32, parasites: u32) -> Result<Demo, JsError> {
        let (channels, _) = generate(&scene_spec(seed as u64, singles, clusters, parasites)).map_err(js_err)?;
        let model = SvmModel::from_json(MODEL).map_err(js_err)?;
        Ok(Demo {
            channels,
            config: AnalysisConfig::default(),
            model,
            regions: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.channels.width()
    }

    pub fn height(&self) -> usize {
        self.channels.height()
    }

    /// Merged RGBA pixels of the scene.
    pub fn image(&self) -> Vec<u8> {
        self.channels.to_rgb().to_rgba()
    }

    /// RGBA label map of channel 0 (blue), 1 (green) or 2 (red).
    pub fn segment(&mut self, channel: u8) -> Result<Vec<u8>, JsError> {
        let channel = channel_of(channel).ok_or_else(|| JsError::new("channel must be 0, 1 or 2"))?;
        let (map, n) = segment_channel(&self.channels, channel, &self.config).map_err(js_err)?;
        self.regions = n;
        Ok(map.to_rgba())
    }

    /// Region count of the last segmentation.
    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Full analysis; returns the text report and leaves the overlay for
    /// `overlay()`.
    pub fn analyze(&self, use_model: bool) -> Result<String, JsError> {
        let a = self.run(use_model)?;
        let mut text = render_report(&a.report);
        for w in &a.warnings {
            text.push_str(&format!("warning: {w}\n"));
        }
        Ok(text)
    }

    /// RGBA overlay with centroids, sub-centroids and association links.
    pub fn overlay(&self, use_model: bool) -> Result<Vec<u8>, JsError> {
        let a = self.run(use_model)?;
        Ok(render_overlay(&self.channels, &a.overlay).map_err(js_err)?.to_rgba())
    }
}

impl Demo {
    fn run(&self, use_model: bool) -> Result<leishcount::pipeline::Analysis, JsError> {
        let model = use_model.then_some(&self.model as &dyn NucleiClassifier);
        analyze_channels(&self.channels, &self.config, model, "demo", None).map_err(js_err)
    }
}
