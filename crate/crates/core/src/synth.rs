//! Synthetic fluorescence scenes with exact ground truth.
//!
//! Nuclei and parasites are discs with a soft logistic edge, so a cut at the
//! midpoint between background and peak recovers the planned radius. The
//! red plane carries every macrophage nucleus plus a cytoplasm disc around
//! it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::ZoomLabel;
use crate::raster::{ChannelSet, Plane};
use crate::{Error, Result};

/// Truncated normal model of object areas in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaModel {
    pub mean: f64,
    pub std: f64,
    /// Samples are kept within `mean ± truncate · std`.
    #[serde(default = "default_truncate")]
    pub truncate: f64,
}

fn default_truncate() -> f64 {
    1.9
}

impl AreaModel {
    pub fn new(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            truncate: default_truncate(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.std <= 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.std).expect("finite std");
        loop {
            let a: f64 = normal.sample(rng);
            if (a - self.mean).abs() <= self.truncate * self.std && a > 1.0 {
                return a;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityModel {
    pub background: f64,
    pub nucleus_peak: f64,
    pub parasite_peak: f64,
    pub cytoplasm_peak: f64,
    /// Cytoplasm disc radius as a multiple of the nucleus radius.
    pub cytoplasm_scale: f64,
    /// Logistic edge width in pixels; 0 gives hard discs.
    pub edge: f64,
    pub noise_sigma: f64,
    /// Cytoplasm also glows faintly in the macrophage plane, making that
    /// histogram trimodal.
    pub trimodal: bool,
    pub glow_level: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            background: 20.0,
            nucleus_peak: 220.0,
            parasite_peak: 220.0,
            cytoplasm_peak: 200.0,
            cytoplasm_scale: 1.7,
            edge: 0.6,
            noise_sigma: 5.0,
            trimodal: false,
            glow_level: 110.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InfectionPlan {
    /// Spread `parasites` over randomly chosen nuclei, at most
    /// `max_per_cell` each (1 or 2).
    Random { parasites: usize, max_per_cell: u32 },
    /// Parasite count per macrophage nucleus, in nucleus order.
    Explicit { per_nucleus: Vec<u32> },
}

impl Default for InfectionPlan {
    fn default() -> Self {
        InfectionPlan::Random {
            parasites: 0,
            max_per_cell: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub zoom_label: ZoomLabel,
    pub macrophage_area: AreaModel,
    pub parasite_area: AreaModel,
    /// Nuclei per macrophage region; `[1, 1, 3]` is two isolated nuclei and
    /// one cluster of three.
    pub cluster_sizes: Vec<u32>,
    /// Largest fraction of a nucleus' area shared with its cluster mates.
    pub overlap_budget: f64,
    pub infection: InfectionPlan,
    /// Parasites placed away from every cell.
    pub extracellular_parasites: usize,
    pub intensity: IntensityModel,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            zoom_label: ZoomLabel::Zoom5,
            macrophage_area: AreaModel::new(300.0, 48.0),
            parasite_area: AreaModel::new(150.0, 24.0),
            cluster_sizes: Vec::new(),
            overlap_budget: 0.15,
            infection: InfectionPlan::default(),
            extracellular_parasites: 0,
            intensity: IntensityModel::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("canvas must be non-empty, got {}x{}", self.width, self.height));
        }
        for (name, a) in [("macrophage", &self.macrophage_area), ("parasite", &self.parasite_area)] {
            if !(a.mean > 1.0 && a.std >= 0.0 && a.truncate >= 0.0) {
                return bad(format!("{name} area model needs mean > 1 and std >= 0"));
            }
        }
        if self.cluster_sizes.contains(&0) {
            return bad("cluster sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.overlap_budget) {
            return bad(format!("overlap budget must lie in [0, 1), got {}", self.overlap_budget));
        }
        let i = &self.intensity;
        if i.edge < 0.0 || i.noise_sigma < 0.0 || i.cytoplasm_scale < 1.0 {
            return bad("edge and noise must be >= 0 and cytoplasm_scale >= 1".into());
        }
        match &self.infection {
            InfectionPlan::Random { max_per_cell, .. } if !(1..=2).contains(max_per_cell) => {
                bad(format!("max_per_cell must be 1 or 2, got {max_per_cell}"))
            }
            InfectionPlan::Explicit { per_nucleus } if per_nucleus.len() != self.nuclei_count() => bad(format!(
                "explicit plan lists {} nuclei, scene has {}",
                per_nucleus.len(),
                self.nuclei_count()
            )),
            InfectionPlan::Explicit { per_nucleus } if per_nucleus.iter().any(|&c| c > 2) => {
                bad("at most two parasites fit inside the association radius".into())
            }
            _ => Ok(()),
        }
    }

    pub fn nuclei_count(&self) -> usize {
        self.cluster_sizes.iter().map(|&c| c as usize).sum()
    }

    /// Association radius matching the analysis default: the radius of a
    /// disc with the mean nucleus area.
    pub fn association_radius(&self) -> f64 {
        (self.macrophage_area.mean / std::f64::consts::PI).sqrt()
    }

    /// The end-to-end benchmark scene: 50 isolated macrophages, 30 of
    /// them infected by one parasite each, plus 4 extracellular parasites.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            width: 272,
            height: 272,
            cluster_sizes: vec![1; 50],
            infection: InfectionPlan::Explicit {
                per_nucleus: (0..50).map(|i| u32::from(i < 30)).collect(),
            },
            extracellular_parasites: 4,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthNucleus {
    pub center: (f64, f64),
    pub radius: f64,
    pub cluster: usize,
}

impl TruthNucleus {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthParasite {
    pub center: (f64, f64),
    pub radius: f64,
    /// Index of the host macrophage nucleus.
    pub host: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCluster {
    pub nuclei: Vec<usize>,
    /// Disc areas minus pairwise overlaps.
    pub expected_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub zoom_label: ZoomLabel,
    pub macrophages: Vec<TruthNucleus>,
    pub clusters: Vec<TruthCluster>,
    pub parasites: Vec<TruthParasite>,
}

impl GroundTruth {
    pub fn total_macrophages(&self) -> usize {
        self.macrophages.len()
    }

    pub fn total_parasites(&self) -> usize {
        self.parasites.len()
    }

    pub fn infected(&self) -> usize {
        let hosts: std::collections::BTreeSet<usize> = self.parasites.iter().filter_map(|p| p.host).collect();
        hosts.len()
    }

    pub fn infection_ratio(&self) -> f64 {
        if self.macrophages.is_empty() {
            0.0
        } else {
            self.infected() as f64 / self.macrophages.len() as f64
        }
    }

    /// `(parasite index, nucleus index)` pairs.
    pub fn associations(&self) -> Vec<(usize, usize)> {
        self.parasites
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.host.map(|h| (i, h)))
            .collect()
    }

    /// The macrophage nucleus whose disc covers `(x, y)` most strongly, if
    /// any covers it at all.
    pub fn owner(&self, x: f64, y: f64) -> Option<usize> {
        self.macrophages
            .iter()
            .enumerate()
            .map(|(i, n)| (i, (x - n.center.0).hypot(y - n.center.1) - n.radius))
            .filter(|&(_, d)| d <= 1.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Area shared by two discs with centres `d` apart.
pub fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    let small = r1.min(r2);
    if d <= (r1 - r2).abs() {
        return std::f64::consts::PI * small * small;
    }
    let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
    let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
    let k = ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)).max(0.0).sqrt();
    r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k
}

/// Centre distance at which two discs share `fraction` of the smaller
/// disc's area.
fn distance_for_overlap(r1: f64, r2: f64, fraction: f64) -> f64 {
    let target = fraction * std::f64::consts::PI * r1.min(r2).powi(2);
    let (mut lo, mut hi) = ((r1 - r2).abs(), r1 + r2);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if lens_area(r1, r2, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const MAX_TRIES: usize = 20_000;

fn radius_of(area: f64) -> f64 {
    (area / std::f64::consts::PI).sqrt()
}

/// Lay out one cluster around the origin: each new nucleus overlaps a
/// random earlier one, and no nucleus shares more than `budget` of its area.
fn build_cluster(radii: &[f64], budget: f64, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>> {
    let mut centers = vec![(0.0, 0.0)];
    let shared = |centers: &[(f64, f64)], i: usize, c: (f64, f64), r: f64| -> (f64, Vec<f64>) {
        // Overlap of the candidate, and the extra overlap it gives each earlier disc.
        let mut own = 0.0;
        let mut each = Vec::with_capacity(i);
        for (j, &(x, y)) in centers.iter().enumerate() {
            let l = lens_area(r, radii[j], (c.0 - x).hypot(c.1 - y));
            own += l;
            each.push(l);
        }
        (own, each)
    };
    let mut used = vec![0.0f64; radii.len()];
    'next: for i in 1..radii.len() {
        let r = radii[i];
        for _ in 0..MAX_TRIES {
            let j = rng.random_range(0..i);
            let lo = 0.03f64.min(budget);
            let f = if budget > lo { rng.random_range(lo..=budget) } else { budget };
            let d = distance_for_overlap(r, radii[j], f.max(1e-3));
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let c = (centers[j].0 + d * angle.cos(), centers[j].1 + d * angle.sin());
            let (own, each) = shared(&centers, i, c, r);
            let area = |k: usize| std::f64::consts::PI * radii[k] * radii[k];
            if own > budget * area(i) + 1e-9 {
                continue;
            }
            if each.iter().enumerate().any(|(k, &l)| used[k] + l > budget * area(k) + 1e-9) {
                continue;
            }
            for (k, l) in each.into_iter().enumerate() {
                used[k] += l;
            }
            used[i] = own;
            centers.push(c);
            continue 'next;
        }
        return Err(Error::Placement(format!(
            "cannot attach nucleus {} of a {}-nucleus cluster within the overlap budget",
            i + 1,
            radii.len()
        )));
    }
    Ok(centers)
}

fn logistic(d: f64, edge: f64) -> f64 {
    if edge == 0.0 {
        return if d <= 0.0 { 1.0 } else { 0.0 };
    }
    1.0 / (1.0 + (d / edge).exp())
}

/// Per-pixel coverage in `[0, 1]`, the maximum over all discs.
fn coverage(width: usize, height: usize, discs: &[((f64, f64), f64)], edge: f64) -> Vec<f64> {
    let mut out = vec![0.0f64; width * height];
    let reach = 8.0 * edge + 1.0;
    for &((cx, cy), r) in discs {
        let x0 = (cx - r - reach).floor().max(0.0) as usize;
        let y0 = (cy - r - reach).floor().max(0.0) as usize;
        let x1 = ((cx + r + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        let y1 = ((cy + r + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        if x0 >= width || y0 >= height {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - cx).hypot(y as f64 - cy) - r;
                let v = logistic(d, edge);
                let slot = &mut out[y * width + x];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    out
}

/// Render the layers of each plane, add noise and quantize.
fn render(spec: &SceneSpec, truth: &GroundTruth) -> Result<ChannelSet> {
    let (w, h) = (spec.width, spec.height);
    let im = &spec.intensity;
    let nuclei: Vec<_> = truth.macrophages.iter().map(|n| (n.center, n.radius)).collect();
    let cyto: Vec<_> = truth
        .macrophages
        .iter()
        .map(|n| (n.center, n.radius * im.cytoplasm_scale))
        .collect();
    let parasites: Vec<_> = truth.parasites.iter().map(|p| (p.center, p.radius)).collect();
    let nuc = coverage(w, h, &nuclei, im.edge);
    let cyt = coverage(w, h, &cyto, im.edge);
    let par = coverage(w, h, &parasites, im.edge);
    let bg = im.background;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, im.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut quantize = |v: f64| -> u8 {
        let v = if im.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { v };
        (v + 0.5).floor().clamp(0.0, 255.0) as u8
    };
    let blue: Vec<u8> = (0..w * h)
        .map(|i| {
            let mut v = (im.nucleus_peak - bg) * nuc[i];
            if im.trimodal {
                v = v.max((im.glow_level - bg) * cyt[i]);
            }
            quantize(bg + v)
        })
        .collect();
    let green: Vec<u8> = (0..w * h).map(|i| quantize(bg + (im.parasite_peak - bg) * par[i])).collect();
    let red: Vec<u8> = (0..w * h)
        .map(|i| quantize(bg + ((im.cytoplasm_peak - bg) * cyt[i]).max((im.nucleus_peak - bg) * nuc[i])))
        .collect();
    ChannelSet::new(Plane::new(w, h, blue)?, Plane::new(w, h, green)?, Plane::new(w, h, red)?)
}

/// Gap kept between separate objects, beyond their radii.
fn object_gap(edge: f64) -> f64 {
    2.0 + 2.0 * edge
}

/// Build and render a scene. Deterministic in `spec.seed`.
pub fn generate(spec: &SceneSpec) -> Result<(ChannelSet, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let gap = object_gap(spec.intensity.edge);
    let margin = 2.0 + 3.0 * spec.intensity.edge;

    let mut truth = GroundTruth {
        width: spec.width,
        height: spec.height,
        zoom_label: spec.zoom_label,
        macrophages: Vec::new(),
        clusters: Vec::new(),
        parasites: Vec::new(),
    };

    for (ci, &size) in spec.cluster_sizes.iter().enumerate() {
        let radii: Vec<f64> = (0..size).map(|_| radius_of(spec.macrophage_area.sample(&mut rng))).collect();
        let layout = build_cluster(&radii, spec.overlap_budget, &mut rng)?;
        let lo_x = layout.iter().zip(&radii).map(|(c, r)| c.0 - r).fold(f64::INFINITY, f64::min);
        let hi_x = layout.iter().zip(&radii).map(|(c, r)| c.0 + r).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = layout.iter().zip(&radii).map(|(c, r)| c.1 - r).fold(f64::INFINITY, f64::min);
        let hi_y = layout.iter().zip(&radii).map(|(c, r)| c.1 + r).fold(f64::NEG_INFINITY, f64::max);
        let (min_ox, max_ox) = (margin - lo_x, w - 1.0 - margin - hi_x);
        let (min_oy, max_oy) = (margin - lo_y, h - 1.0 - margin - hi_y);
        if min_ox > max_ox || min_oy > max_oy {
            return Err(Error::Placement(format!("cluster {} does not fit on the canvas", ci + 1)));
        }
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let ox = rng.random_range(min_ox..=max_ox);
            let oy = rng.random_range(min_oy..=max_oy);
            let clear = layout.iter().zip(&radii).all(|(c, &r)| {
                truth.macrophages.iter().all(|n| {
                    (c.0 + ox - n.center.0).hypot(c.1 + oy - n.center.1) >= r + n.radius + gap
                })
            });
            if !clear {
                continue;
            }
            let first = truth.macrophages.len();
            for (c, &r) in layout.iter().zip(&radii) {
                truth.macrophages.push(TruthNucleus {
                    center: (c.0 + ox, c.1 + oy),
                    radius: r,
                    cluster: ci,
                });
            }
            let nuclei: Vec<usize> = (first..truth.macrophages.len()).collect();
            let mut area: f64 = nuclei.iter().map(|&i| truth.macrophages[i].area()).sum();
            for (a, &i) in nuclei.iter().enumerate() {
                for &j in &nuclei[a + 1..] {
                    let (p, q) = (&truth.macrophages[i], &truth.macrophages[j]);
                    area -= lens_area(p.radius, q.radius, (p.center.0 - q.center.0).hypot(p.center.1 - q.center.1));
                }
            }
            truth.clusters.push(TruthCluster {
                nuclei,
                expected_area: area,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Placement(format!(
                "no room for macrophage region {} of {}; the scene is too dense",
                ci + 1,
                spec.cluster_sizes.len()
            )));
        }
    }

    let plan: Vec<u32> = match &spec.infection {
        InfectionPlan::Explicit { per_nucleus } => per_nucleus.clone(),
        InfectionPlan::Random { parasites, max_per_cell } => {
            let n = truth.macrophages.len();
            if *parasites > n * *max_per_cell as usize {
                return Err(Error::Placement(format!(
                    "{parasites} parasites cannot fit in {n} cells at {max_per_cell} per cell"
                )));
            }
            let mut counts = vec![0u32; n];
            let mut left = *parasites;
            while left > 0 {
                let i = rng.random_range(0..n);
                if counts[i] < *max_per_cell {
                    counts[i] += 1;
                    left -= 1;
                }
            }
            counts
        }
    };

    let reach = 0.9 * spec.association_radius();
    for (host, &count) in plan.iter().enumerate() {
        for _ in 0..count {
            let r = radius_of(spec.parasite_area.sample(&mut rng));
            let hc = truth.macrophages[host].center;
            let mut placed = false;
            for _ in 0..MAX_TRIES {
                let d = reach * rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let c = (hc.0 + d * angle.cos(), hc.1 + d * angle.sin());
                if c.0 - r < margin || c.1 - r < margin || c.0 + r > w - 1.0 - margin || c.1 + r > h - 1.0 - margin {
                    continue;
                }
                let apart = truth
                    .parasites
                    .iter()
                    .all(|p| (c.0 - p.center.0).hypot(c.1 - p.center.1) >= r + p.radius + gap);
                // The host must stay clearly the nearest nucleus.
                let nearest = truth.macrophages.iter().enumerate().all(|(i, n)| {
                    i == host || (c.0 - n.center.0).hypot(c.1 - n.center.1) > d + 2.0
                });
                if apart && nearest {
                    truth.parasites.push(TruthParasite {
                        center: c,
                        radius: r,
                        host: Some(host),
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Placement(format!("no room for a parasite in cell {}", host + 1)));
            }
        }
    }

    for k in 0..spec.extracellular_parasites {
        let r = radius_of(spec.parasite_area.sample(&mut rng));
        let (lo_x, hi_x) = (margin + r, w - 1.0 - margin - r);
        let (lo_y, hi_y) = (margin + r, h - 1.0 - margin - r);
        if lo_x > hi_x || lo_y > hi_y {
            return Err(Error::Placement("canvas too small for a parasite".into()));
        }
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let c = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
            let outside = truth.macrophages.iter().all(|n| {
                let d = (c.0 - n.center.0).hypot(c.1 - n.center.1);
                d >= n.radius * spec.intensity.cytoplasm_scale + r + gap && d > spec.association_radius() + 2.0
            });
            let apart = truth
                .parasites
                .iter()
                .all(|p| (c.0 - p.center.0).hypot(c.1 - p.center.1) >= r + p.radius + gap);
            if outside && apart {
                truth.parasites.push(TruthParasite {
                    center: c,
                    radius: r,
                    host: None,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement(format!("no room for extracellular parasite {}", k + 1)));
        }
    }

    let channels = render(spec, &truth)?;
    Ok((channels, truth))
}

/// A canvas holding a single macrophage cluster of `k` nuclei, sized so the
/// cluster covers a healthy share of the plane. Used for classifier
/// training corpora and declustering checks.
pub fn cluster_scene(k: u32, seed: u64, noise_sigma: f64, overlap_budget: f64) -> Result<(ChannelSet, GroundTruth)> {
    let area = AreaModel::new(300.0, 48.0);
    // Conservative canvas: a chain of k discs fits in 2 R_max k.
    let r_max = radius_of(area.mean + area.truncate * area.std);
    let side = ((2.0 * r_max * (k as f64).sqrt() * 1.6) + 2.0 * r_max + 24.0).ceil() as usize;
    let spec = SceneSpec {
        width: side,
        height: side,
        macrophage_area: area,
        cluster_sizes: vec![k],
        overlap_budget,
        intensity: IntensityModel {
            noise_sigma,
            ..IntensityModel::default()
        },
        seed,
        ..SceneSpec::default()
    };
    // Long chains occasionally exceed the canvas; reseed deterministically.
    let mut last = None;
    for attempt in 0..16u64 {
        let s = SceneSpec {
            seed: seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..spec.clone()
        };
        match generate(&s) {
            Ok(out) => return Ok(out),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
