//! Two-dimensional Gaussian mixtures over pixel coordinates: k-means seeding,
//! EM fitting and responsibility-based declustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::centroid;
use crate::segment::{color_for, Pixel, Region};
use crate::{Error, Result};

pub type Point = [f64; 2];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive definite 2x2 matrix kept in eigen form, so that a
/// floored minor axis stays exact instead of being recovered from a
/// cancelling determinant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    /// Larger eigenvalue.
    pub major: f64,
    /// Smaller eigenvalue.
    pub minor: f64,
    /// Orientation of the major axis in radians.
    pub angle: f64,
}

impl Cov2 {
    pub fn isotropic(var: f64) -> Self {
        Self { major: var, minor: var, angle: 0.0 }
    }

    /// From second moments `[[xx, xy], [xy, yy]]`.
    pub fn from_moments(xx: f64, xy: f64, yy: f64) -> Self {
        let mean = 0.5 * (xx + yy);
        let r = (0.5 * (xx - yy)).hypot(xy);
        let angle = if r > 0.0 { 0.5 * (2.0 * xy).atan2(xx - yy) } else { 0.0 };
        Self {
            major: mean + r,
            minor: (mean - r).max(0.0),
            angle,
        }
    }

    fn axis(&self) -> (f64, f64) {
        (self.angle.cos(), self.angle.sin())
    }

    pub fn xx(&self) -> f64 {
        let (c, s) = self.axis();
        self.major * c * c + self.minor * s * s
    }

    pub fn xy(&self) -> f64 {
        let (c, s) = self.axis();
        (self.major - self.minor) * c * s
    }

    pub fn yy(&self) -> f64 {
        let (c, s) = self.axis();
        self.major * s * s + self.minor * c * c
    }

    pub fn det(&self) -> f64 {
        self.major * self.minor
    }

    /// Raise every eigenvalue below `floor` to `floor`, keeping the axes.
    pub fn floored(&self, floor: f64) -> Self {
        Self {
            major: self.major.max(floor),
            minor: self.minor.max(floor),
            angle: self.angle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Point,
    pub cov: Cov2,
}

impl GaussianComponent {
    /// Log of the weighted density at `p`.
    pub fn log_weighted_density(&self, p: &Point) -> f64 {
        Evaluator::new(self).eval(p)
    }
}

/// Principal axes and normalizer of one weighted component.
#[derive(Clone, Copy)]
struct Evaluator {
    mean: Point,
    c: f64,
    s: f64,
    inv_major: f64,
    inv_minor: f64,
    log_norm: f64,
}

impl Evaluator {
    fn new(g: &GaussianComponent) -> Self {
        let (c, s) = g.cov.axis();
        Self {
            mean: g.mean,
            c,
            s,
            inv_major: 1.0 / g.cov.major,
            inv_minor: 1.0 / g.cov.minor,
            log_norm: g.weight.ln() - LN_2PI - 0.5 * (g.cov.major.ln() + g.cov.minor.ln()),
        }
    }

    #[inline]
    fn eval(&self, p: &Point) -> f64 {
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let a = self.c * dx + self.s * dy;
        let b = self.c * dy - self.s * dx;
        self.log_norm - 0.5 * (a * a * self.inv_major + b * b * self.inv_minor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<GaussianComponent>,
    pub log_likelihood: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Log-likelihood before the first M-step and after each one.
    pub ll_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub min_std: f64,
    pub max_iter: usize,
    /// Absolute log-likelihood gain under which iteration stops.
    pub tolerance: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            min_std: 1e-6,
            max_iter: 200,
            tolerance: 1e-6,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.min_std > 0.0) || !self.min_std.is_finite() {
            return Err(Error::Parameter(format!("min_std must be positive, got {}", self.min_std)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pixel centers of a region as a point cloud.
pub fn points_of(pixels: &[Pixel]) -> Vec<Point> {
    pixels.iter().map(|p| [p.x as f64, p.y as f64]).collect()
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(centroids: &[Point], p: &Point) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, p);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// One assignment plus update pass. Empty clusters keep their centroid.
/// Returns whether any assignment changed.
fn lloyd_step(points: &[Point], centroids: &mut [Point], assign: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut changed = false;
    for (a, p) in assign.iter_mut().zip(points) {
        let n = nearest(centroids, p);
        if *a != n {
            *a = n;
            changed = true;
        }
    }
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (a, p) in assign.iter().zip(points) {
        sums[*a][0] += p[0];
        sums[*a][1] += p[1];
        counts[*a] += 1;
    }
    for i in 0..k {
        if counts[i] > 0 {
            centroids[i] = [sums[i][0] / counts[i] as f64, sums[i][1] / counts[i] as f64];
        }
    }
    changed
}

fn kmeans_pp(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>, max_iter: usize) -> Vec<Point> {
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        if !lloyd_step(points, &mut centroids, &mut assign) {
            break;
        }
    }
    centroids
}

fn objective(points: &[Point], centroids: &[Point]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, &centroids[nearest(centroids, p)]))
        .sum()
}

/// Greedy nearest pairing: `perm[i]` is the index in `other` matched to `reference[i]`.
fn match_centroids(reference: &[Point], other: &[Point]) -> Vec<usize> {
    let k = reference.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (i, r) in reference.iter().enumerate() {
        for (j, o) in other.iter().enumerate() {
            pairs.push((dist2(r, o), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, i, j) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
        }
    }
    perm
}

/// k-means with `restarts` k-means++ runs on random 90% subsets; centroid
/// sets are matched to the best run, averaged, and polished by one Lloyd
/// pass over all points.
pub fn kmeans(points: &[Point], k: usize, restarts: usize, seed: u64) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::Input("k-means on an empty point cloud".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Parameter(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let restarts = restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let subset_len = (n * 9).div_ceil(10);
    let mut runs: Vec<Vec<Point>> = Vec::with_capacity(restarts);
    let mut index: Vec<usize> = (0..n).collect();
    for _ in 0..restarts {
        let sample: Vec<Point> = if k > subset_len {
            points.to_vec()
        } else {
            // Partial Fisher-Yates for a uniform subset.
            for i in 0..subset_len {
                let j = rng.random_range(i..n);
                index.swap(i, j);
            }
            let mut chosen = index[..subset_len].to_vec();
            chosen.sort_unstable();
            chosen.into_iter().map(|i| points[i]).collect()
        };
        let init = kmeans_pp(&sample, k, &mut rng);
        runs.push(lloyd(&sample, init, 100));
    }

    let best = runs
        .iter()
        .enumerate()
        .map(|(i, c)| (objective(points, c), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .expect("at least one restart");
    let reference = runs[best].clone();
    let mut avg = vec![[0.0f64; 2]; k];
    for run in &runs {
        let perm = match_centroids(&reference, run);
        for (i, &j) in perm.iter().enumerate() {
            avg[i][0] += run[j][0];
            avg[i][1] += run[j][1];
        }
    }
    for c in &mut avg {
        c[0] /= runs.len() as f64;
        c[1] /= runs.len() as f64;
    }
    let mut assign = vec![usize::MAX; n];
    lloyd_step(points, &mut avg, &mut assign);
    Ok(avg)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Total log-likelihood of `points` under the mixture.
pub fn log_likelihood(components: &[GaussianComponent], points: &[Point]) -> f64 {
    let evals: Vec<Evaluator> = components.iter().map(Evaluator::new).collect();
    let mut buf = vec![0.0; evals.len()];
    points
        .iter()
        .map(|p| {
            for (b, e) in buf.iter_mut().zip(&evals) {
                *b = e.eval(p);
            }
            log_sum_exp(&buf)
        })
        .sum()
}

/// Posterior membership probabilities, one row per point.
pub fn responsibilities(components: &[GaussianComponent], points: &[Point]) -> Vec<Vec<f64>> {
    let mut resp = vec![0.0; points.len() * components.len()];
    e_step(components, points, &mut resp);
    resp.chunks(components.len()).map(|c| c.to_vec()).collect()
}

/// Fills the flat `n x k` responsibility matrix and returns the log-likelihood.
fn e_step(components: &[GaussianComponent], points: &[Point], resp: &mut [f64]) -> f64 {
    let k = components.len();
    let evals: Vec<Evaluator> = components.iter().map(Evaluator::new).collect();
    let mut ll = 0.0;
    for (row, p) in resp.chunks_mut(k).zip(points) {
        let mut m = f64::NEG_INFINITY;
        for (r, e) in row.iter_mut().zip(&evals) {
            *r = e.eval(p);
            m = m.max(*r);
        }
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - m).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        ll += m + s.ln();
    }
    ll
}

fn m_step(points: &[Point], resp: &[f64], components: &mut [GaussianComponent], floor: f64) {
    let k = components.len();
    let n = points.len() as f64;
    for (j, comp) in components.iter_mut().enumerate() {
        let mut nk = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (row, p) in resp.chunks(k).zip(points) {
            let a = row[j];
            nk += a;
            sx += a * p[0];
            sy += a * p[1];
        }
        comp.weight = nk / n;
        if nk < 1e-12 {
            continue;
        }
        let mean = [sx / nk, sy / nk];
        let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
        for (row, p) in resp.chunks(k).zip(points) {
            let a = row[j];
            let dx = p[0] - mean[0];
            let dy = p[1] - mean[1];
            cxx += a * dx * dx;
            cxy += a * dx * dy;
            cyy += a * dy * dy;
        }
        comp.mean = mean;
        comp.cov = Cov2::from_moments(cxx / nk, cxy / nk, cyy / nk).floored(floor);
    }
    // Guard the simplex against rounding drift.
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
}

/// Population covariance of a cloud.
pub fn sample_covariance(points: &[Point]) -> (Point, Cov2) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    ([mx, my], Cov2::from_moments(xx / n, xy / n, yy / n))
}

/// Fit a `k`-component mixture. Means start at `seeds` when given, otherwise
/// at the k-means centroids; covariances start isotropic at the cloud's
/// average per-axis variance; weights start uniform.
pub fn em_fit(points: &[Point], k: usize, config: &EmConfig, seeds: Option<&[Point]>) -> Result<MixtureModel> {
    config.validate()?;
    if points.is_empty() {
        return Err(Error::Input("EM on an empty point cloud".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Parameter(format!(
            "EM needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let means = match seeds {
        Some(s) if s.len() != k => {
            return Err(Error::Parameter(format!("{} seeds for k = {k}", s.len())))
        }
        Some(s) => s.to_vec(),
        None => kmeans(points, k, config.kmeans_restarts, config.seed)?,
    };
    let floor = config.min_std * config.min_std;
    let (_, global) = sample_covariance(points);
    let var = (0.5 * (global.major + global.minor)).max(floor);
    let initial = means
        .into_iter()
        .map(|mean| GaussianComponent {
            weight: 1.0 / k as f64,
            mean,
            cov: Cov2::isotropic(var),
        })
        .collect();
    em_fit_from(points, initial, config)
}

/// Run EM from explicit starting components.
pub fn em_fit_from(points: &[Point], initial: Vec<GaussianComponent>, config: &EmConfig) -> Result<MixtureModel> {
    config.validate()?;
    if points.is_empty() || initial.is_empty() {
        return Err(Error::Input("EM needs points and at least one component".into()));
    }
    let floor = config.min_std * config.min_std;
    let mut components = initial;
    for c in &mut components {
        c.cov = c.cov.floored(floor);
    }
    let k = components.len();
    let mut resp = vec![0.0; points.len() * k];
    let mut ll = e_step(&components, points, &mut resp);
    if !ll.is_finite() {
        return Err(Error::Estimation("non-finite initial log-likelihood".into()));
    }
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        m_step(points, &resp, &mut components, floor);
        iterations += 1;
        let next = e_step(&components, points, &mut resp);
        if !next.is_finite() {
            return Err(Error::Estimation(format!("log-likelihood diverged at iteration {iterations}")));
        }
        history.push(next);
        let gain = next - ll;
        ll = next;
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(MixtureModel {
        components,
        log_likelihood: ll,
        iterations_used: iterations,
        converged,
        ll_history: history,
    })
}

/// Split a region into `k` sub-regions by maximum responsibility. If a
/// component ends up with no pixels the fit is redone with one component
/// fewer. Sub-regions get ids `first_id, first_id + 1, ...` and inherit the
/// parent's kind and border flag.
pub fn decluster(region: &Region, k: usize, first_id: u32, config: &EmConfig) -> Result<Vec<Region>> {
    if k == 0 {
        return Err(Error::Parameter("decluster needs k >= 1".into()));
    }
    if region.pixels.len() < k {
        return Err(Error::Decluster(format!(
            "region {} has {} pixels, fewer than k = {k}",
            region.id,
            region.pixels.len()
        )));
    }
    let points = points_of(&region.pixels);
    let mut k = k;
    let parts = loop {
        if k == 1 {
            break vec![region.pixels.clone()];
        }
        let model = em_fit(&points, k, config, None).map_err(|e| Error::Decluster(e.to_string()))?;
        let resp = responsibilities(&model.components, &points);
        let mut parts: Vec<Vec<Pixel>> = vec![Vec::new(); k];
        for (row, px) in resp.iter().zip(&region.pixels) {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            parts[best].push(*px);
        }
        if parts.iter().all(|p| !p.is_empty()) {
            break parts;
        }
        k -= 1;
    };
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(i, pixels)| {
            let id = first_id + i as u32;
            Region {
                id,
                pixels,
                touches_border: region.touches_border,
                kind: region.kind,
                parasite_count: 0,
                color_code: color_for(id),
                contour: None,
            }
        })
        .collect())
}

/// Centroid of each sub-region, in order.
pub fn sub_centroids(parts: &[Region]) -> Vec<(f64, f64)> {
    parts.iter().map(|r| centroid(&r.pixels)).collect()
}
