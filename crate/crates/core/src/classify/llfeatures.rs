use serde::{Deserialize, Serialize};

use crate::mixture::{em_fit, em_fit_from, points_of, Cov2, EmConfig, GaussianComponent, MixtureModel, Point};
use crate::segment::Pixel;
use crate::{Error, Result};

/// Mixture sizes fitted per region.
pub const MAX_MIXTURES: usize = 10;
/// 10 log-likelihoods, 9 first and 8 second differences, and the area.
pub const LL_FEATURE_LEN: usize = MAX_MIXTURES + (MAX_MIXTURES - 1) + (MAX_MIXTURES - 2) + 1;

/// The log-likelihood curve of a region over k = 1..=10 mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LLFeatures {
    pub ll: Vec<f64>,
    pub fod: Vec<f64>,
    pub sod: Vec<f64>,
    pub area: f64,
}

impl LLFeatures {
    pub fn from_ll(ll: Vec<f64>, area: f64) -> Self {
        let fod: Vec<f64> = ll.windows(2).map(|w| w[1] - w[0]).collect();
        let sod: Vec<f64> = fod.windows(2).map(|w| w[1] - w[0]).collect();
        Self { ll, fod, sod, area }
    }

    /// Flat vector `[ll | fod | sod | area]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(LL_FEATURE_LEN);
        v.extend_from_slice(&self.ll);
        v.extend_from_slice(&self.fod);
        v.extend_from_slice(&self.sod);
        v.push(self.area);
        v
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != LL_FEATURE_LEN {
            return Err(Error::Model(format!(
                "feature vector has {} coefficients, expected {LL_FEATURE_LEN}",
                v.len()
            )));
        }
        Ok(Self::from_ll(v[..MAX_MIXTURES].to_vec(), v[LL_FEATURE_LEN - 1]))
    }
}

/// Warm start for `k + 1` components: the `k` fit plus a light component on
/// the point the fit explains worst.
fn grow(model: &MixtureModel, points: &[Point]) -> Vec<GaussianComponent> {
    let worst = points
        .iter()
        .map(|p| {
            let terms: Vec<f64> = model.components.iter().map(|c| c.log_weighted_density(p)).collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        })
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| points[i])
        .expect("non-empty cloud");
    let eps = 1.0 / points.len() as f64;
    let mut comps: Vec<GaussianComponent> = model
        .components
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight * (1.0 - eps),
            ..c.clone()
        })
        .collect();
    comps.push(GaussianComponent {
        weight: eps,
        mean: worst,
        cov: Cov2::isotropic(1.0),
    });
    comps
}

/// Fit EM for k = 1..=10 on the region's pixel coordinates and collect the
/// final log-likelihoods with their differences.
///
/// A larger mixture can always reproduce a smaller one, so a fit that lands
/// below its predecessor is retried from the predecessor's solution, and
/// the curve is kept non-decreasing.
pub fn ll_feature_vector(pixels: &[Pixel], config: &EmConfig) -> Result<LLFeatures> {
    if pixels.len() < MAX_MIXTURES {
        return Err(Error::Feature(format!(
            "LL features need at least {MAX_MIXTURES} pixels, region has {}",
            pixels.len()
        )));
    }
    let points = points_of(pixels);
    let fail = |k: usize, e: Error| Error::Feature(format!("EM failed at k = {k}: {e}"));
    let mut ll = Vec::with_capacity(MAX_MIXTURES);
    let mut prev: Option<MixtureModel> = None;
    for k in 1..=MAX_MIXTURES {
        let mut model = em_fit(&points, k, config, None).map_err(|e| fail(k, e))?;
        if let Some(p) = &prev {
            if model.log_likelihood < p.log_likelihood {
                let warm = em_fit_from(&points, grow(p, &points), config).map_err(|e| fail(k, e))?;
                if warm.log_likelihood > model.log_likelihood {
                    model = warm;
                }
            }
        }
        let value = match &prev {
            Some(p) => model.log_likelihood.max(p.log_likelihood),
            None => model.log_likelihood,
        };
        ll.push(value);
        if prev.as_ref().is_none_or(|p| model.log_likelihood >= p.log_likelihood) {
            prev = Some(model);
        }
    }
    Ok(LLFeatures::from_ll(ll, pixels.len() as f64))
}
