//! Single-image analysis: preprocess, segment, classify, decluster,
//! associate and report.

use serde::{Deserialize, Serialize};

use crate::associate::{associate, AssocMode, CytoplasmMap, Nucleus};
use crate::classify::{estimate_zoom, ll_feature_vector, rule_classify, vote, Calibration, NucleiClassifier, NucleiEstimate, ParameterSet, ZoomLabel};
use crate::features::{extract_features, BBox, Shape};
use crate::mixture::{decluster, sub_centroids, EmConfig};
use crate::preprocess::{preprocess, PreprocessConfig};
use crate::raster::{Channel, ChannelSet, Overlay};
use crate::report::{compute_stats, InfectionReport, RegionOutcome};
use crate::segment::{segment_plane, ChannelRole, Region, RegionKind, SegmentConfig, Segmentation};
use crate::synth::{cluster_scene, GroundTruth};
use crate::Result;

/// Everything that shapes an analysis besides the input and the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub preprocess: PreprocessConfig,
    pub segment: SegmentConfig,
    pub calibration: Calibration,
    /// `None` estimates the zoom level from the macrophage regions.
    pub zoom: Option<ZoomLabel>,
    pub assoc_mode: AssocMode,
    /// `None` uses the radius of a disc with the macrophage `u`.
    pub assoc_radius: Option<f64>,
    pub em: EmConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            segment: SegmentConfig::default(),
            calibration: Calibration::default(),
            zoom: None,
            assoc_mode: AssocMode::Both,
            assoc_radius: None,
            em: EmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub id: u32,
    pub centroid: (f64, f64),
    /// Set when the nucleus came from splitting a multi-nucleic region.
    pub declustered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: u32,
    pub kind: RegionKind,
    pub area: usize,
    pub centroid: (f64, f64),
    pub bbox: BBox,
    pub shape: Shape,
    pub touches_border: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<NucleiEstimate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub nuclei: Vec<NucleusRecord>,
    pub parasite_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub channel: String,
    pub thresholds: Vec<u8>,
    pub modality: usize,
    pub regions: Vec<RegionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub report: InfectionReport,
    pub zoom: ZoomLabel,
    pub zoom_estimated: bool,
    pub association_radius: f64,
    pub assoc_mode: AssocMode,
    pub lossy_input: bool,
    pub channels: Vec<ChannelResult>,
    /// `(parasite nucleus id, macrophage nucleus id)`
    pub pairs: Vec<(u32, u32)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub overlay: Overlay,
}

/// Per-region EM seed, independent of processing order.
pub fn region_seed(base: u64, channel: Channel, region_id: u32) -> u64 {
    let tag = match channel {
        Channel::Macrophage => 1u64,
        Channel::Parasite => 2,
        Channel::Cytoplasm => 3,
    };
    let mut z = base ^ (tag << 56) ^ (region_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rule vote, then the learned vote for multi-nucleic regions, reconciled.
///
/// Returns `None` for regions too large to classify. A learned-classifier
/// failure falls back to the rule vote and is reported as a warning.
pub fn classify_region(
    region: &Region,
    set: &ParameterSet,
    model: Option<&dyn NucleiClassifier>,
    em: &EmConfig,
) -> (Option<NucleiEstimate>, Option<String>) {
    let Some(rule) = rule_classify(region.area(), set) else {
        return (None, Some(format!("region {} exceeds the largest class; not counted", region.id)));
    };
    let Some(model) = model.filter(|_| rule >= 2) else {
        return (Some(vote(rule, None)), None);
    };
    let learned = ll_feature_vector(&region.pixels, em).and_then(|f| model.predict(&f));
    match learned {
        Ok(s) => (Some(vote(rule, Some(s))), None),
        Err(e) => (Some(vote(rule, None)), Some(format!("region {}: {e}; using the rule vote", region.id))),
    }
}

struct Counted {
    records: Vec<RegionRecord>,
    outcomes: Vec<RegionOutcome>,
    /// Nuclei eligible for association, with their owning record index.
    nuclei: Vec<(Nucleus, usize)>,
}

fn count_channel(
    seg: &mut Segmentation,
    channel: Channel,
    kind: RegionKind,
    set: &ParameterSet,
    model: Option<&dyn NucleiClassifier>,
    config: &AnalysisConfig,
    warnings: &mut Vec<String>,
) -> Counted {
    let mut next_id = seg.regions.len() as u32 + 1;
    let mut out = Counted {
        records: Vec::with_capacity(seg.regions.len()),
        outcomes: Vec::new(),
        nuclei: Vec::new(),
    };
    for region in &mut seg.regions {
        let features = extract_features(region);
        let em = EmConfig {
            seed: region_seed(config.em.seed, channel, region.id),
            ..config.em
        };
        let mut estimate = None;
        let mut nuclei = Vec::new();
        if !region.touches_border {
            let (e, warning) = classify_region(region, set, model, &em);
            warnings.extend(warning.map(|w| format!("{}: {w}", channel.name())));
            estimate = e;
            out.outcomes.push(RegionOutcome {
                touches_border: false,
                estimate,
            });
            let k = estimate.map_or(0, |e| e.final_vote as usize);
            if k == 1 {
                nuclei.push(NucleusRecord {
                    id: region.id,
                    centroid: features.centroid,
                    declustered: false,
                });
            } else if k >= 2 {
                match decluster(region, k, next_id, &em) {
                    Ok(parts) => {
                        if parts.len() < k {
                            warnings.push(format!(
                                "{}: region {} split into {} of {k} nuclei",
                                channel.name(),
                                region.id,
                                parts.len()
                            ));
                        }
                        next_id += parts.len() as u32;
                        for (part, c) in parts.iter().zip(sub_centroids(&parts)) {
                            nuclei.push(NucleusRecord {
                                id: part.id,
                                centroid: c,
                                declustered: true,
                            });
                        }
                    }
                    Err(e) => {
                        warnings.push(format!("{}: region {} kept whole: {e}", channel.name(), region.id));
                        nuclei.push(NucleusRecord {
                            id: region.id,
                            centroid: features.centroid,
                            declustered: false,
                        });
                    }
                }
            }
        }
        region.kind = match estimate {
            Some(e) if e.final_vote == 0 => RegionKind::Noise,
            _ => kind,
        };
        let index = out.records.len();
        for n in &nuclei {
            out.nuclei.push((
                Nucleus {
                    id: n.id,
                    centroid: n.centroid,
                },
                index,
            ));
        }
        out.records.push(RegionRecord {
            id: region.id,
            kind: region.kind,
            area: features.area,
            centroid: features.centroid,
            bbox: features.bbox,
            shape: features.shape,
            touches_border: region.touches_border,
            estimate,
            nuclei,
            parasite_count: 0,
        });
    }
    out
}

fn channel_result(channel: Channel, seg: &Segmentation, regions: Vec<RegionRecord>) -> ChannelResult {
    ChannelResult {
        channel: channel.name().to_string(),
        thresholds: seg.thresholds.as_ref().map(|t| t.levels.clone()).unwrap_or_default(),
        modality: seg.thresholds.as_ref().map_or(0, |t| t.modality),
        regions,
    }
}

fn pixel(c: (f64, f64)) -> (i64, i64) {
    ((c.0 + 0.5).floor() as i64, (c.1 + 0.5).floor() as i64)
}

/// Run the whole per-image workflow on already loaded channels.
pub fn analyze_channels(
    channels: &ChannelSet,
    config: &AnalysisConfig,
    model: Option<&dyn NucleiClassifier>,
    image_path: &str,
    generated_at: Option<String>,
) -> Result<Analysis> {
    let mut warnings = Vec::new();
    let segment = |channel: Channel, role: ChannelRole, warnings: &mut Vec<String>| -> Result<Segmentation> {
        let pre = preprocess(channels.plane(channel), &config.preprocess)?;
        if pre.degenerate_stretch {
            warnings.push(format!("{}: flat histogram, contrast stretch skipped", channel.name()));
        }
        let seg = segment_plane(&pre.plane, &config.segment, role)?;
        warnings.extend(seg.warnings.iter().map(|w| format!("{}: {w}", channel.name())));
        Ok(seg)
    };
    let mut mac = segment(Channel::Macrophage, ChannelRole::Nuclear, &mut warnings)?;
    let mut par = segment(Channel::Parasite, ChannelRole::Nuclear, &mut warnings)?;
    let cyt = segment(Channel::Cytoplasm, ChannelRole::Cytoplasm, &mut warnings)?;

    let cal = &config.calibration;
    let (zoom, zoom_estimated) = match config.zoom {
        Some(z) => (z, false),
        None => match estimate_zoom(&mac.regions, &cal.macrophage.zoom5, &cal.macrophage.zoom10) {
            Ok(z) => (z, true),
            Err(e) => {
                warnings.push(format!("{e}; assuming zoom5"));
                (ZoomLabel::Zoom5, true)
            }
        },
    };
    let mac_set = cal.macrophage.get(zoom);
    let par_set = cal.parasite.get(zoom);
    let radius = config.assoc_radius.unwrap_or_else(|| mac_set.nucleus_radius());

    let mut macs = count_channel(&mut mac, Channel::Macrophage, RegionKind::MacrophageNuclear, mac_set, model, config, &mut warnings);
    let pars = count_channel(&mut par, Channel::Parasite, RegionKind::ParasiteNuclear, par_set, model, config, &mut warnings);

    let map = CytoplasmMap::new(channels.width(), channels.height(), &cyt.regions);
    let mac_nuclei: Vec<Nucleus> = macs.nuclei.iter().map(|n| n.0).collect();
    let par_nuclei: Vec<Nucleus> = pars.nuclei.iter().map(|n| n.0).collect();
    let association = associate(&mac_nuclei, &par_nuclei, &map, config.assoc_mode, radius)?;

    let owner: std::collections::BTreeMap<u32, usize> = macs.nuclei.iter().map(|(n, i)| (n.id, *i)).collect();
    for &(_, m) in &association.pairs {
        macs.records[owner[&m]].parasite_count += 1;
    }

    let report = compute_stats(image_path, generated_at, &macs.outcomes, &pars.outcomes, &association);
    warnings.extend(report.warnings.iter().cloned());

    let centroid_of = |list: &[(Nucleus, usize)], id: u32| list.iter().find(|n| n.0.id == id).map(|n| n.0.centroid);
    let overlay = Overlay {
        macrophages: macs.nuclei.iter().filter(|n| !macs.records[n.1].nuclei.iter().any(|r| r.declustered)).map(|n| pixel(n.0.centroid)).collect(),
        parasites: pars.nuclei.iter().map(|n| pixel(n.0.centroid)).collect(),
        sub_centroids: macs.nuclei.iter().filter(|n| macs.records[n.1].nuclei.iter().any(|r| r.declustered)).map(|n| pixel(n.0.centroid)).collect(),
        links: association
            .pairs
            .iter()
            .filter_map(|&(p, m)| Some((pixel(centroid_of(&pars.nuclei, p)?), pixel(centroid_of(&macs.nuclei, m)?))))
            .collect(),
    };

    let cyt_records = cyt
        .regions
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let f = extract_features(&mut r);
            RegionRecord {
                id: r.id,
                kind: RegionKind::Cytoplasm,
                area: f.area,
                centroid: f.centroid,
                bbox: f.bbox,
                shape: f.shape,
                touches_border: r.touches_border,
                estimate: None,
                nuclei: Vec::new(),
                parasite_count: 0,
            }
        })
        .collect();

    Ok(Analysis {
        report,
        zoom,
        zoom_estimated,
        association_radius: radius,
        assoc_mode: config.assoc_mode,
        lossy_input: false,
        channels: vec![
            channel_result(Channel::Macrophage, &mac, macs.records),
            channel_result(Channel::Parasite, &par, pars.records),
            channel_result(Channel::Cytoplasm, &cyt, cyt_records),
        ],
        pairs: association.pairs,
        warnings,
        overlay,
    })
}

impl Analysis {
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }

    /// One CSV row per region of every channel.
    pub fn features_csv(&self) -> String {
        let mut out = String::from(FEATURES_HEADER);
        out.push('\n');
        for ch in &self.channels {
            for r in &ch.regions {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    ch.channel,
                    r.id,
                    r.kind.as_str(),
                    r.area,
                    r.centroid.0,
                    r.centroid.1,
                    r.bbox.min_x,
                    r.bbox.min_y,
                    r.bbox.max_x,
                    r.bbox.max_y,
                    r.shape.scalar(),
                    r.touches_border
                ));
            }
        }
        out
    }
}

pub const FEATURES_HEADER: &str = "channel,id,kind,area,cx,cy,min_x,min_y,max_x,max_y,shape,touches_border";

/// The macrophage-channel segmentation of a single-cluster scene, with the
/// region that holds every generating nucleus centre (if one does).
pub struct ClusterSample {
    pub truth: GroundTruth,
    pub regions: Vec<Region>,
    pub cluster: Option<usize>,
}

/// Render a `k`-nucleus cluster and segment its macrophage plane with the
/// default pipeline settings.
pub fn segment_cluster(k: u32, seed: u64, noise_sigma: f64, overlap_budget: f64, config: &AnalysisConfig) -> Result<ClusterSample> {
    let (channels, truth) = cluster_scene(k, seed, noise_sigma, overlap_budget)?;
    let pre = preprocess(channels.macrophage(), &config.preprocess)?;
    let seg = segment_plane(&pre.plane, &config.segment, ChannelRole::Nuclear)?;
    let cluster = seg.regions.iter().position(|r| {
        truth.macrophages.iter().all(|n| {
            let (x, y) = pixel(n.center);
            r.pixels.binary_search_by_key(&(y as u32, x as u32), |p| (p.y, p.x)).is_ok()
        })
    });
    Ok(ClusterSample {
        truth,
        regions: seg.regions,
        cluster,
    })
}

/// Labeled LL-feature vectors for classes `classes`, `per_class` clusters
/// each. Clusters the segmentation breaks apart are skipped.
pub fn training_corpus(
    classes: std::ops::RangeInclusive<u32>,
    per_class: usize,
    seed: u64,
    config: &AnalysisConfig,
) -> Result<Vec<(Vec<f64>, u32)>> {
    let mut out = Vec::new();
    for k in classes {
        let mut taken = 0;
        let mut i = 0u64;
        while taken < per_class {
            if i > 4 * per_class as u64 + 16 {
                return Err(crate::Error::Training(format!(
                    "could not build {per_class} intact clusters of {k} nuclei"
                )));
            }
            let s = seed.wrapping_add((k as u64) << 32).wrapping_add(i);
            i += 1;
            let sample = segment_cluster(k, s, 5.0, 0.15, config)?;
            let Some(idx) = sample.cluster else { continue };
            let region = &sample.regions[idx];
            if region.touches_border {
                continue;
            }
            let em = EmConfig {
                seed: region_seed(config.em.seed, Channel::Macrophage, region.id),
                ..config.em
            };
            let f = ll_feature_vector(&region.pixels, &em)?;
            out.push((f.to_vec(), k));
            taken += 1;
        }
    }
    Ok(out)
}
