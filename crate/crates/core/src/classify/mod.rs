//! Nuclei counting per region: zoom-level estimation, the area-rule
//! classifier, the log-likelihood feature SVM and the voting rule that
//! reconciles them.

mod llfeatures;
mod svm;

use serde::{Deserialize, Serialize};

pub use llfeatures::{ll_feature_vector, LLFeatures, LL_FEATURE_LEN, MAX_MIXTURES};
pub use svm::{train_model, Kernel, SvmModel, TrainingSummary, MODEL_FORMAT_VERSION};

use crate::segment::Region;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoomLabel {
    Zoom5,
    Zoom10,
}

impl ZoomLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ZoomLabel::Zoom5 => "zoom5",
            ZoomLabel::Zoom10 => "zoom10",
        }
    }
}

impl std::str::FromStr for ZoomLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "5" | "zoom5" => Ok(ZoomLabel::Zoom5),
            "10" | "zoom10" => Ok(ZoomLabel::Zoom10),
            _ => Err(Error::Parameter(format!("unknown zoom level '{s}'"))),
        }
    }
}

/// Area statistics of a single nucleus at one zoom level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParameterSet")]
pub struct ParameterSet {
    pub zoom_label: ZoomLabel,
    pub u: f64,
    pub sigma: f64,
    pub max_class: u32,
    pub noise_floor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParameterSet {
    zoom_label: ZoomLabel,
    u: f64,
    sigma: f64,
    max_class: Option<u32>,
    noise_floor: Option<f64>,
}

impl TryFrom<RawParameterSet> for ParameterSet {
    type Error = Error;

    fn try_from(raw: RawParameterSet) -> Result<Self> {
        let mut set = ParameterSet::new(raw.zoom_label, raw.u, raw.sigma)?;
        if let Some(m) = raw.max_class {
            set.max_class = m;
        }
        if let Some(f) = raw.noise_floor {
            set.noise_floor = f;
        }
        set.validate()?;
        Ok(set)
    }
}

impl ParameterSet {
    /// A set with `max_class = 9` and `noise_floor = u - 3 sigma`.
    pub fn new(zoom_label: ZoomLabel, u: f64, sigma: f64) -> Result<Self> {
        let set = Self {
            zoom_label,
            u,
            sigma,
            max_class: 9,
            noise_floor: u - 3.0 * sigma,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.sigma > 0.0 && self.sigma < self.u) {
            return Err(Error::Parameter(format!(
                "parameter set needs 0 < sigma < u, got u = {}, sigma = {}",
                self.u, self.sigma
            )));
        }
        if self.max_class == 0 {
            return Err(Error::Parameter("max_class must be at least 1".into()));
        }
        if !(self.noise_floor < self.u - 2.0 * self.sigma) {
            return Err(Error::Parameter(format!(
                "noise_floor {} must lie below u - 2 sigma = {}",
                self.noise_floor,
                self.u - 2.0 * self.sigma
            )));
        }
        Ok(())
    }

    /// Upper area bound of a single nucleus, `u + 2 sigma`.
    pub fn maximum(&self) -> f64 {
        self.u + 2.0 * self.sigma
    }

    /// Radius of a disc of area `u`.
    pub fn nucleus_radius(&self) -> f64 {
        (self.u / std::f64::consts::PI).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: self.u * factor,
            sigma: self.sigma * factor,
            noise_floor: self.noise_floor * factor,
            ..self.clone()
        }
    }
}

/// Zoom 5 and zoom 10 parameter sets for one object type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoomPair {
    pub zoom5: ParameterSet,
    pub zoom10: ParameterSet,
}

impl ZoomPair {
    pub fn get(&self, zoom: ZoomLabel) -> &ParameterSet {
        match zoom {
            ZoomLabel::Zoom5 => &self.zoom5,
            ZoomLabel::Zoom10 => &self.zoom10,
        }
    }
}

/// All parameter sets used by an analysis, loadable from TOML or JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub macrophage: ZoomPair,
    pub parasite: ZoomPair,
}

impl Default for Calibration {
    fn default() -> Self {
        let set = |z, u, s| ParameterSet::new(z, u, s).expect("valid defaults");
        Self {
            macrophage: ZoomPair {
                zoom5: set(ZoomLabel::Zoom5, 300.0, 48.0),
                zoom10: set(ZoomLabel::Zoom10, 1200.0, 192.0),
            },
            parasite: ZoomPair {
                zoom5: set(ZoomLabel::Zoom5, 150.0, 24.0),
                zoom10: set(ZoomLabel::Zoom10, 600.0, 96.0),
            },
        }
    }
}

/// Vote between the two zoom levels from macrophage region areas.
///
/// Regions on the image border do not vote. A vote gap of more than 10% of
/// all regions decides; otherwise more than four areas above the zoom 10
/// maximum select zoom 10.
pub fn estimate_zoom(regions: &[Region], zoom5: &ParameterSet, zoom10: &ParameterSet) -> Result<ZoomLabel> {
    if regions.is_empty() {
        return Err(Error::Estimation("no macrophage regions to estimate zoom from".into()));
    }
    let (max5, max10) = (zoom5.maximum(), zoom10.maximum());
    let mut votes5 = 0usize;
    let mut votes10 = 0usize;
    let mut above10 = 0usize;
    for r in regions.iter().filter(|r| !r.touches_border) {
        let a = r.area() as f64;
        if a < max5 {
            votes5 += 1;
        } else if a < max10 {
            votes10 += 1;
        } else {
            above10 += 1;
        }
    }
    let gap = regions.len() as f64 * 0.1;
    if votes10 as f64 - votes5 as f64 > gap {
        Ok(ZoomLabel::Zoom10)
    } else if votes5 as f64 - votes10 as f64 > gap {
        Ok(ZoomLabel::Zoom5)
    } else if above10 > 4 {
        Ok(ZoomLabel::Zoom10)
    } else {
        Ok(ZoomLabel::Zoom5)
    }
}

/// Nuclei count from area alone. `Some(0)` marks noise; `None` marks a
/// region too large to classify.
pub fn rule_classify(area: usize, set: &ParameterSet) -> Option<u32> {
    let a = area as f64;
    if a <= set.noise_floor {
        return Some(0);
    }
    if a > (set.max_class as f64 + 0.5) * set.u {
        return None;
    }
    let k = (a / set.u + 0.5).floor() as u32;
    Some(k.clamp(1, set.max_class))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NucleiEstimate {
    pub rule_vote: u32,
    pub svm_vote: Option<u32>,
    #[serde(rename = "final")]
    pub final_vote: u32,
    pub agreed: bool,
}

/// Maximum distance from the rule vote at which the learned vote is trusted.
pub const VOTE_TRUST_BAND: u32 = 2;

pub fn vote(rule_vote: u32, svm_vote: Option<u32>) -> NucleiEstimate {
    let (final_vote, agreed) = match svm_vote {
        None => (rule_vote, true),
        Some(s) if s == rule_vote => (rule_vote, true),
        Some(s) if s.abs_diff(rule_vote) <= VOTE_TRUST_BAND => (s, false),
        Some(_) => (rule_vote, false),
    };
    NucleiEstimate {
        rule_vote,
        svm_vote,
        final_vote,
        agreed,
    }
}

/// A learned nuclei counter for multi-nucleic regions.
pub trait NucleiClassifier: Send + Sync {
    /// Predict a count from a full [`LLFeatures`] vector.
    fn predict(&self, features: &LLFeatures) -> Result<u32>;
}
