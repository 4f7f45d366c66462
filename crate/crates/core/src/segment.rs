//! Histogram monotony analysis, Otsu and valley-constrained multi-Otsu
//! thresholding, binarization and two-pass connected component labeling.

use serde::{Deserialize, Serialize};

use crate::features::ChainCode;
use crate::preprocess::Histogram;
use crate::raster::{Plane, RgbRaster};
use crate::{Error, Result};

/// Scores within this relative distance of the best are ties; the smallest
/// threshold (lexicographically, for several) wins.
const TIE_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    MacrophageNuclear,
    ParasiteNuclear,
    Cytoplasm,
    Noise,
    #[default]
    Unset,
}

impl RegionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::MacrophageNuclear => "macrophage-nuclear",
            RegionKind::ParasiteNuclear => "parasite-nuclear",
            RegionKind::Cytoplasm => "cytoplasm",
            RegionKind::Noise => "noise",
            RegionKind::Unset => "unset",
        }
    }
}

/// A connected set of foreground pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    /// Raster order.
    pub pixels: Vec<Pixel>,
    pub touches_border: bool,
    pub kind: RegionKind,
    pub parasite_count: u32,
    pub color_code: [u8; 3],
    /// Boundary chain code; filled by feature extraction.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub contour: Option<ChainCode>,
}

impl Region {
    /// A region from raw pixels; `touches_border` is evaluated against `width` x `height`.
    pub fn from_pixels(id: u32, mut pixels: Vec<Pixel>, width: u32, height: u32) -> Self {
        pixels.sort_by_key(|p| (p.y, p.x));
        let touches_border = pixels
            .iter()
            .any(|p| p.x == 0 || p.y == 0 || p.x + 1 == width || p.y + 1 == height);
        Self {
            id,
            pixels,
            touches_border,
            kind: RegionKind::Unset,
            parasite_count: 0,
            color_code: color_for(id),
            contour: None,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Deterministic pseudo-random display color for a region id.
pub fn color_for(id: u32) -> [u8; 3] {
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    // Keep colors away from black so regions stand out from background.
    [
        64 + (z & 0xBF) as u8,
        64 + ((z >> 8) & 0xBF) as u8,
        64 + ((z >> 16) & 0xBF) as u8,
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Geometry(format!(
                "{} mask bits for {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Ascending cut intensities; pixel `v` falls in class `#{t : v >= t}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub levels: Vec<u8>,
    pub modality: usize,
    /// Some threshold sits on an inner edge of its search interval.
    pub constrained_suboptimal: bool,
}

impl ThresholdSet {
    pub fn bimodal(t: u8) -> Self {
        Self {
            levels: vec![t],
            modality: 2,
            constrained_suboptimal: false,
        }
    }

    pub fn class_of(&self, v: u8) -> usize {
        self.levels.iter().filter(|&&t| v >= t).count()
    }

    pub fn top_class(&self) -> usize {
        self.levels.len()
    }
}

/// Inclusive intensity interval a threshold is searched in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: u8,
    pub hi: u8,
}

impl Interval {
    pub const FULL: Interval = Interval { lo: 1, hi: 255 };

    pub fn new(lo: u8, hi: u8) -> Self {
        Self { lo, hi }
    }
}

/// Output of the histogram monotony analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakAnalysis {
    pub smoothed: Vec<f64>,
    pub peaks: Vec<usize>,
    /// One valley between each pair of consecutive peaks.
    pub valleys: Vec<usize>,
}

impl PeakAnalysis {
    pub fn count(&self) -> usize {
        self.peaks.len()
    }
}

/// Default relative prominence for [`count_peaks`].
pub const DEFAULT_PEAK_PROMINENCE: f64 = 0.01;

/// Count histogram modes with the default prominence.
pub fn count_peaks(hist: &Histogram, window: usize) -> Result<PeakAnalysis> {
    count_peaks_with(hist, window, DEFAULT_PEAK_PROMINENCE)
}

/// Smooth with a centered moving average of width `window` (bins beyond the
/// range repeat the end bins) and walk the first difference.
///
/// A maximum becomes a peak once the curve falls more than
/// `prominence * max(smoothed)` below it, and a minimum becomes a valley once
/// the curve rises that much above it; with `prominence = 0` this is plain
/// sign-change counting. The range ends behave as if the curve continued
/// downward, so a mode sitting at 0 or 255 still counts. Plateaus report
/// their midpoint. A constant curve has no peaks.
pub fn count_peaks_with(hist: &Histogram, window: usize, prominence: f64) -> Result<PeakAnalysis> {
    if window.is_multiple_of(2) || !(3..=255).contains(&window) {
        return Err(Error::Parameter(format!(
            "peak window must be odd and in 3..=255, got {window}"
        )));
    }
    if !(0.0..1.0).contains(&prominence) {
        return Err(Error::Parameter(format!(
            "peak prominence must be in [0, 1), got {prominence}"
        )));
    }
    let smoothed = moving_average(hist.bins(), window);
    let (peaks, valleys) = find_modes(&smoothed, prominence);
    Ok(PeakAnalysis {
        smoothed,
        peaks,
        valleys,
    })
}

fn moving_average(bins: &[u64; 256], window: usize) -> Vec<f64> {
    let half = window as i64 / 2;
    let at = |i: i64| bins[i.clamp(0, 255) as usize];
    let mut sum: u64 = (-half..=half).map(at).sum();
    let mut out = Vec::with_capacity(256);
    for i in 0..256i64 {
        out.push(sum as f64 / window as f64);
        sum = sum + at(i + half + 1) - at(i - half);
    }
    out
}

fn find_modes(s: &[f64], prominence: f64) -> (Vec<usize>, Vec<usize>) {
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return (vec![], vec![]);
    }
    let delta = prominence * hi;
    let mut peaks = Vec::new();
    let mut valleys = Vec::new();
    // Extreme candidate: value and the contiguous plateau it spans.
    let mut val = s[0];
    let (mut start, mut end) = (0usize, 0usize);
    let mut seeking_peak = true;
    for (i, &v) in s.iter().enumerate().skip(1) {
        if seeking_peak {
            if v > val {
                (val, start, end) = (v, i, i);
            } else if v == val && end + 1 == i {
                end = i;
            } else if val - v > delta && v < val {
                peaks.push((start + end) / 2);
                seeking_peak = false;
                (val, start, end) = (v, i, i);
            }
        } else if v < val {
            (val, start, end) = (v, i, i);
        } else if v == val && end + 1 == i {
            end = i;
        } else if v - val > delta && v > val {
            valleys.push((start + end) / 2);
            seeking_peak = true;
            (val, start, end) = (v, i, i);
        }
    }
    if seeking_peak && (!peaks.is_empty() || val - lo > delta) {
        peaks.push((start + end) / 2);
    }
    (peaks, valleys)
}

/// Search intervals of half-width `halfwidth` around each valley, clipped to
/// `[1, 255]` and split at the midpoint where neighbours would overlap.
pub fn valley_constraints(valleys: &[usize], halfwidth: u8) -> Vec<Interval> {
    let hw = halfwidth as i64;
    let mut out: Vec<Interval> = Vec::with_capacity(valleys.len());
    for (i, &v) in valleys.iter().enumerate() {
        let v = v as i64;
        let mut lo = (v - hw).max(1);
        let mut hi = (v + hw).min(255);
        if i > 0 {
            let prev = valleys[i - 1] as i64;
            lo = lo.max((prev + v) / 2 + 1);
        }
        if let Some(&next) = valleys.get(i + 1) {
            hi = hi.min((v + next as i64) / 2);
        }
        out.push(Interval::new(lo as u8, hi.max(0) as u8));
    }
    out
}

/// Prefix sums over counts and intensity-weighted counts.
struct Moments {
    count: [u64; 257],
    mass: [u64; 257],
}

impl Moments {
    fn new(hist: &Histogram) -> Self {
        let mut count = [0u64; 257];
        let mut mass = [0u64; 257];
        for (i, &n) in hist.bins().iter().enumerate() {
            count[i + 1] = count[i] + n;
            mass[i + 1] = mass[i] + n * i as u64;
        }
        Self { count, mass }
    }

    /// Between-class variance up to a positive constant factor:
    /// `sum_k (n*S_k - N_k*S)^2 / N_k` over classes split at `cuts`.
    fn score(&self, cuts: &[usize]) -> f64 {
        let n = self.count[256] as i128;
        let s = self.mass[256] as i128;
        let mut lo = 0usize;
        let mut total = 0.0;
        for &hi in cuts.iter().chain(std::iter::once(&256)) {
            let nk = (self.count[hi] - self.count[lo]) as i128;
            if nk > 0 {
                let sk = (self.mass[hi] - self.mass[lo]) as i128;
                let d = (n * sk - nk * s) as f64;
                total += d * d / nk as f64;
            }
            lo = hi;
        }
        total
    }
}

/// Single Otsu threshold: the smallest `t` in `1..=255` maximizing the
/// between-class variance, with background `< t` and foreground `>= t`.
pub fn otsu_threshold(hist: &Histogram) -> Result<u8> {
    if hist.occupied() < 2 {
        return Err(Error::DegenerateHistogram(
            "fewer than two occupied intensities".into(),
        ));
    }
    let m = Moments::new(hist);
    let scores: Vec<f64> = (1..=255usize).map(|t| m.score(&[t])).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t = scores
        .iter()
        .position(|&v| v >= best * (1.0 - TIE_RTOL))
        .expect("maximum exists");
    Ok(t as u8 + 1)
}

/// Multi-level Otsu with each threshold restricted to its own interval.
///
/// `constraints` holds `classes - 1` disjoint ascending intervals. Only 2 and
/// 3 classes are supported.
pub fn multi_otsu(hist: &Histogram, classes: usize, constraints: &[Interval]) -> Result<ThresholdSet> {
    if classes > 3 {
        return Err(Error::UnsupportedModality(classes));
    }
    if classes < 2 {
        return Err(Error::Parameter(format!(
            "multi-Otsu needs at least 2 classes, got {classes}"
        )));
    }
    if constraints.len() != classes - 1 {
        return Err(Error::Constraint(format!(
            "{classes} classes need {} intervals, got {}",
            classes - 1,
            constraints.len()
        )));
    }
    for (i, c) in constraints.iter().enumerate() {
        if c.lo == 0 || c.lo > c.hi {
            return Err(Error::Constraint(format!(
                "interval {i} [{}, {}] is empty or outside 1..=255",
                c.lo, c.hi
            )));
        }
        if i > 0 && constraints[i - 1].hi >= c.lo {
            return Err(Error::Constraint(format!(
                "intervals {} and {i} overlap or are out of order",
                i - 1
            )));
        }
    }
    if hist.occupied() < 2 {
        return Err(Error::DegenerateHistogram(
            "fewer than two occupied intensities".into(),
        ));
    }

    let m = Moments::new(hist);
    let mut candidates: Vec<(Vec<usize>, f64)> = Vec::new();
    let range = |c: &Interval| c.lo as usize..=c.hi as usize;
    match constraints {
        [a] => {
            for t in range(a) {
                candidates.push((vec![t], m.score(&[t])));
            }
        }
        [a, b] => {
            for t1 in range(a) {
                for t2 in range(b) {
                    candidates.push((vec![t1, t2], m.score(&[t1, t2])));
                }
            }
        }
        _ => unreachable!("validated above"),
    }
    let best = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let (cuts, _) = candidates
        .into_iter()
        .find(|c| c.1 >= best * (1.0 - TIE_RTOL))
        .expect("non-empty search space");

    let constrained_suboptimal = cuts.iter().zip(constraints).any(|(&t, c)| {
        (t == c.lo as usize && c.lo > 1) || (t == c.hi as usize && c.hi < 255)
    });
    Ok(ThresholdSet {
        levels: cuts.into_iter().map(|t| t as u8).collect(),
        modality: classes,
        constrained_suboptimal,
    })
}

/// Foreground is every pixel whose class equals `foreground_class`.
pub fn binarize(plane: &Plane, thresholds: &ThresholdSet, foreground_class: usize) -> BinaryMask {
    let mut lut = [false; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = thresholds.class_of(v as u8) == foreground_class;
    }
    BinaryMask {
        width: plane.width(),
        height: plane.height(),
        bits: plane.data().iter().map(|&v| lut[v as usize]).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Parameter(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Label 0 is background and never joins anything.
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    /// The smaller root wins so roots keep their raster-order rank.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Region ids start at 1 in raster order of
/// each region's first pixel.
pub fn label_regions(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Region> {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                push(labels[y * w + x - 1]);
            }
            if y > 0 {
                push(labels[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(labels[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(labels[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = match neighbours[..k].iter().min() {
                None => sets.make(),
                Some(&m) => {
                    for &other in &neighbours[..k] {
                        sets.union(m, other);
                    }
                    m
                }
            };
            labels[y * w + x] = label;
        }
    }

    // Second pass: resolve to roots, renumber densely in raster order.
    let mut dense = vec![0u32; sets.parent.len()];
    let mut pixels: Vec<Vec<Pixel>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = sets.find(l) as usize;
            if dense[root] == 0 {
                pixels.push(Vec::new());
                dense[root] = pixels.len() as u32;
            }
            pixels[dense[root] as usize - 1].push(Pixel::new(x as u32, y as u32));
        }
    }
    pixels
        .into_iter()
        .enumerate()
        .map(|(i, px)| Region::from_pixels(i as u32 + 1, px, w as u32, h as u32))
        .collect()
}

/// Label map image: each region painted with its color code on black.
pub fn render_label_map(regions: &[Region], width: usize, height: usize) -> RgbRaster {
    let mut out = RgbRaster {
        width,
        height,
        data: vec![0; width * height * 3],
    };
    for r in regions {
        for p in &r.pixels {
            out.put(p.x as usize, p.y as usize, r.color_code);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub peak_window: usize,
    pub peak_prominence: f64,
    pub valley_halfwidth: u8,
    pub connectivity: Connectivity,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            peak_window: 31,
            peak_prominence: DEFAULT_PEAK_PROMINENCE,
            valley_halfwidth: 20,
            connectivity: Connectivity::Four,
        }
    }
}

/// How a channel is thresholded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelRole {
    /// Mode count decides between Otsu and constrained 3-class Otsu; the
    /// brightest class is foreground.
    Nuclear,
    /// Always plain Otsu, upper class.
    Cytoplasm,
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub peaks: Option<PeakAnalysis>,
    pub thresholds: Option<ThresholdSet>,
    pub mask: BinaryMask,
    pub regions: Vec<Region>,
    pub warnings: Vec<String>,
}

/// Threshold a preprocessed plane and label its foreground.
pub fn segment_plane(plane: &Plane, config: &SegmentConfig, role: ChannelRole) -> Result<Segmentation> {
    let hist = Histogram::of(plane);
    let mut warnings = Vec::new();
    let mut peaks = None;

    let bimodal = |warnings: &mut Vec<String>| match otsu_threshold(&hist) {
        Ok(t) => Some(ThresholdSet::bimodal(t)),
        Err(e) => {
            warnings.push(format!("no threshold: {e}"));
            None
        }
    };

    let thresholds = match role {
        ChannelRole::Cytoplasm => bimodal(&mut warnings),
        ChannelRole::Nuclear => {
            let analysis = count_peaks_with(&hist, config.peak_window, config.peak_prominence)?;
            let modes = analysis.count();
            let chosen = if modes <= 2 {
                bimodal(&mut warnings)
            } else {
                let intervals = valley_constraints(&analysis.valleys, config.valley_halfwidth);
                match multi_otsu(&hist, modes, &intervals) {
                    Ok(set) => {
                        if set.constrained_suboptimal {
                            warnings.push("multi-Otsu optimum on a constraint boundary".into());
                        }
                        Some(set)
                    }
                    Err(e) => {
                        warnings.push(format!("{e}; falling back to two-class Otsu"));
                        bimodal(&mut warnings)
                    }
                }
            };
            peaks = Some(analysis);
            chosen
        }
    };

    let mask = match &thresholds {
        Some(t) => binarize(plane, t, t.top_class()),
        None => BinaryMask::new(plane.width(), plane.height(), vec![false; plane.data().len()])?,
    };
    let regions = label_regions(&mask, config.connectivity);
    Ok(Segmentation {
        peaks,
        thresholds,
        mask,
        regions,
        warnings,
    })
}
