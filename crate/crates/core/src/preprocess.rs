//! Per-channel intensity normalization: histogram, percentile contrast
//! stretch, histogram equalization and a small separable Gaussian blur.
//!
//! All rounding is half-up. The default pipeline only stretches; the other
//! two operations are opt-in.

use serde::{Deserialize, Serialize};

use crate::raster::Plane;
use crate::{Error, Result};

/// 256-bin intensity histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    bins: [u64; 256],
    total: u64,
}

impl Histogram {
    pub fn of(plane: &Plane) -> Self {
        let mut bins = [0u64; 256];
        for &v in plane.data() {
            bins[v as usize] += 1;
        }
        Self {
            bins,
            total: plane.data().len() as u64,
        }
    }

    pub fn from_bins(bins: [u64; 256]) -> Result<Self> {
        let total = bins.iter().sum();
        if total == 0 {
            return Err(Error::DegenerateHistogram("histogram is empty".into()));
        }
        Ok(Self { bins, total })
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn occupied(&self) -> usize {
        self.bins.iter().filter(|&&n| n > 0).count()
    }

    /// Nearest-rank percentile: the smallest intensity whose cumulative count
    /// reaches `ceil(p * total)` (rank at least 1).
    pub fn percentile(&self, p: f64) -> u8 {
        let rank = ((p * self.total as f64).ceil() as u64).clamp(1, self.total);
        let mut cum = 0;
        for (i, &n) in self.bins.iter().enumerate() {
            cum += n;
            if cum >= rank {
                return i as u8;
            }
        }
        255
    }
}

/// Round `num / den` half-up (toward +inf on exact halves); `den > 0`.
#[inline]
pub(crate) fn div_round_half_up(num: i64, den: i64) -> i64 {
    (2 * num + den).div_euclid(2 * den)
}

#[inline]
pub(crate) fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Linear stretch mapping the low/high percentile intensities to 0 and 255.
///
/// Fails with [`Error::DegenerateStretch`] when both percentiles hit the same
/// intensity; see [`stretch_or_identity`] for the pipeline's fallback.
pub fn contrast_stretch(plane: &Plane, low: f64, high: f64) -> Result<Plane> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
        return Err(Error::Parameter(format!(
            "stretch percentiles must satisfy 0 <= low < high <= 1, got ({low}, {high})"
        )));
    }
    let hist = Histogram::of(plane);
    let c = hist.percentile(low);
    let d = hist.percentile(high);
    if c == d {
        return Err(Error::DegenerateStretch(c));
    }
    Ok(stretch_with_bounds(plane, c, d))
}

/// `s = (r - c) * 255 / (d - c)`, rounded half-up and clamped; `c < d`.
pub fn stretch_with_bounds(plane: &Plane, c: u8, d: u8) -> Plane {
    let (c, d) = (c as i64, d as i64);
    let mut lut = [0u8; 256];
    for (r, out) in lut.iter_mut().enumerate() {
        *out = div_round_half_up((r as i64 - c) * 255, d - c).clamp(0, 255) as u8;
    }
    plane.map(|v| lut[v as usize])
}

/// Stretch, or return the input unchanged with `true` when the stretch is degenerate.
pub fn stretch_or_identity(plane: &Plane, low: f64, high: f64) -> Result<(Plane, bool)> {
    match contrast_stretch(plane, low, high) {
        Ok(p) => Ok((p, false)),
        Err(Error::DegenerateStretch(_)) => Ok((plane.clone(), true)),
        Err(e) => Err(e),
    }
}

/// Map each intensity through its cumulative distribution: `round(255 * cdf(x))`.
pub fn histogram_equalize(plane: &Plane) -> Plane {
    let hist = Histogram::of(plane);
    let n = hist.total as i64;
    let mut lut = [0u8; 256];
    let mut cum = 0i64;
    for (i, &count) in hist.bins.iter().enumerate() {
        cum += count as i64;
        lut[i] = div_round_half_up(255 * cum, n) as u8;
    }
    plane.map(|v| lut[v as usize])
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if size != 3 && size != 5 {
        return Err(Error::Parameter(format!(
            "kernel size must be 3 or 5, got {size}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let half = (size / 2) as i64;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Separable Gaussian convolution with edge replication.
pub fn gaussian_blur(plane: &Plane, sigma: f64, kernel_size: usize) -> Result<Plane> {
    let taps = gaussian_kernel(sigma, kernel_size)?;
    let half = (kernel_size / 2) as i64;
    let (w, h) = (plane.width() as i64, plane.height() as i64);
    let src: Vec<f64> = plane.data().iter().map(|&v| v as f64).collect();

    let mut rows = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x + k as i64 - half).clamp(0, w - 1);
                acc += t * src[(y * w + xx) as usize];
            }
            rows[(y * w + x) as usize] = acc;
        }
    }
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y + k as i64 - half).clamp(0, h - 1);
                acc += t * rows[(yy * w + x) as usize];
            }
            out.push(round_half_up(acc).clamp(0.0, 255.0) as u8);
        }
    }
    Plane::new(plane.width(), plane.height(), out)
}

/// Preprocessing switches for one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub equalize: bool,
    /// `(sigma, kernel_size)`
    pub blur: Option<(f64, usize)>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stretch_low: 0.05,
            stretch_high: 0.95,
            equalize: false,
            blur: None,
        }
    }
}

/// Result of [`preprocess`]: the plane plus whether the stretch fell back to identity.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub plane: Plane,
    pub degenerate_stretch: bool,
}

/// Blur (if enabled), then stretch, then equalize (if enabled).
pub fn preprocess(plane: &Plane, config: &PreprocessConfig) -> Result<Preprocessed> {
    let blurred;
    let mut src = plane;
    if let Some((sigma, size)) = config.blur {
        blurred = gaussian_blur(plane, sigma, size)?;
        src = &blurred;
    }
    let (mut out, degenerate) = stretch_or_identity(src, config.stretch_low, config.stretch_high)?;
    if config.equalize {
        out = histogram_equalize(&out);
    }
    Ok(Preprocessed {
        plane: out,
        degenerate_stretch: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn row(values: &[u8]) -> Plane {
        Plane::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn histogram_counts() {
        let h = Histogram::of(&row(&[0, 255]));
        assert_eq!((h.bins()[0], h.bins()[255], h.total()), (1, 1, 2));
        let h = Histogram::of(&Plane::filled(10, 10, 7).unwrap());
        assert_eq!(h.bins()[7], 100);
    }

    #[test]
    fn histogram_matches_naive_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
        let plane = Plane::new(64, 64, data.clone()).unwrap();
        let h = Histogram::of(&plane);
        assert_eq!(h.bins().iter().sum::<u64>(), 4096);
        for v in 0..=255u8 {
            let naive = data.iter().filter(|&&x| x == v).count() as u64;
            assert_eq!(h.bins()[v as usize], naive);
        }
    }

    #[test]
    fn stretch_arithmetic() {
        let p = row(&[50, 100, 150]);
        let s = stretch_with_bounds(&p, 50, 150);
        assert_eq!(s.data(), &[0, 128, 255]);
        let ramp: Vec<u8> = (0..=255).collect();
        assert_eq!(stretch_with_bounds(&row(&ramp), 0, 255).data(), &ramp[..]);
    }

    #[test]
    fn stretch_of_ramp_uses_nearest_rank_percentiles() {
        let ramp: Vec<u8> = (0..100).collect();
        let plane = row(&ramp);
        // Sort-based nearest-rank oracle.
        let mut sorted = ramp.clone();
        sorted.sort();
        let c = sorted[(0.05f64 * 100.0).ceil() as usize - 1] as f64;
        let d = sorted[(0.95f64 * 100.0).ceil() as usize - 1] as f64;
        assert_eq!((c, d), (4.0, 94.0));
        let out = contrast_stretch(&plane, 0.05, 0.95).unwrap();
        for (&r, &s) in ramp.iter().zip(out.data()) {
            let expect = ((r as f64 - c) * 255.0 / (d - c) + 0.5).floor().clamp(0.0, 255.0);
            assert_eq!(s as f64, expect, "r={r}");
        }
        assert_eq!(out.data()[0], 0);
        assert_eq!(out.data()[99], 255);
    }

    #[test]
    fn flat_plane_stretch_is_degenerate() {
        let flat = Plane::filled(4, 4, 9).unwrap();
        assert!(matches!(
            contrast_stretch(&flat, 0.05, 0.95),
            Err(Error::DegenerateStretch(9))
        ));
        let (out, degenerate) = stretch_or_identity(&flat, 0.05, 0.95).unwrap();
        assert!(degenerate);
        assert_eq!(out, flat);
        assert!(contrast_stretch(&flat, 0.9, 0.1).is_err());
    }

    #[test]
    fn equalize_cases() {
        let c = histogram_equalize(&Plane::filled(3, 3, 17).unwrap());
        assert!(c.data().iter().all(|&v| v == 255));
        let two = histogram_equalize(&row(&[0, 0, 255, 255]));
        // cdf(0) = 1/2 -> 127.5 rounds half-up.
        assert_eq!(two.data(), &[128, 128, 255, 255]);
        let ramp: Vec<u8> = (0..=255).collect();
        let eq = histogram_equalize(&row(&ramp));
        for (&a, &b) in ramp.iter().zip(eq.data()) {
            assert!((a as i32 - b as i32).abs() <= 1);
        }
    }

    #[test]
    fn blur_kernel_size_is_validated() {
        let p = Plane::filled(5, 5, 1).unwrap();
        assert!(matches!(gaussian_blur(&p, 1.0, 4), Err(Error::Parameter(_))));
        assert!(gaussian_blur(&p, 1.0, 7).is_err());
        assert!(gaussian_blur(&p, 0.0, 3).is_err());
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane::filled(7, 6, 93).unwrap();
        assert_eq!(gaussian_blur(&p, 1.3, 5).unwrap(), p);
    }

    #[test]
    fn blur_of_impulse_is_sampled_gaussian_stamp() {
        let mut data = vec![0u8; 81];
        data[4 * 9 + 4] = 255;
        let p = Plane::new(9, 9, data).unwrap();
        let sigma = 0.8;
        let out = gaussian_blur(&p, sigma, 3).unwrap();
        // Direct 2-D sampling of the Gaussian, normalized over the 3x3 support.
        let w = |dx: i32, dy: i32| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
        let total: f64 = (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| w(dx, dy))).sum();
        for y in 0..9 {
            for x in 0..9 {
                let (dx, dy) = (x as i32 - 4, y as i32 - 4);
                let expect = if dx.abs() <= 1 && dy.abs() <= 1 {
                    (255.0 * w(dx, dy) / total + 0.5).floor() as u8
                } else {
                    0
                };
                assert_eq!(out.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn wide_sigma_approaches_box_filter() {
        let taps = gaussian_kernel(1e6, 3).unwrap();
        for t in taps {
            assert!((t - 1.0 / 3.0).abs() < 1e-9);
        }
        let mut data = vec![0u8; 25];
        data[12] = 255;
        let out = gaussian_blur(&Plane::new(5, 5, data).unwrap(), 1e6, 3).unwrap();
        assert_eq!(out.get(2, 2), 28); // 255 / 9 = 28.3
        assert_eq!(out.get(1, 1), 28);
    }

    #[test]
    fn blur_preserves_interior_mass() {
        let mut data = vec![0u8; 15 * 15];
        data[7 * 15 + 7] = 200;
        data[7 * 15 + 8] = 120;
        let p = Plane::new(15, 15, data).unwrap();
        let out = gaussian_blur(&p, 1.1, 5).unwrap();
        let before: i64 = p.data().iter().map(|&v| v as i64).sum();
        let after: i64 = out.data().iter().map(|&v| v as i64).sum();
        // Each of the at most 30 touched pixels rounds by at most 1/2.
        assert!((before - after).abs() <= 15, "{before} vs {after}");
    }

    proptest! {
        #[test]
        fn stretch_is_monotone(c in 0u8..255, span in 1u8..=255, a in any::<u8>(), b in any::<u8>()) {
            let d = c.saturating_add(span);
            prop_assume!(d > c);
            let p = row(&[a.min(b), a.max(b)]);
            let s = stretch_with_bounds(&p, c, d);
            prop_assert!(s.data()[0] <= s.data()[1]);
        }

        #[test]
        fn stretch_preserves_mode_order(data in proptest::collection::vec(any::<u8>(), 50..400)) {
            let plane = row(&data);
            let hist = Histogram::of(&plane);
            let Ok(out) = contrast_stretch(&plane, 0.05, 0.95) else { return Ok(()); };
            let out_hist = Histogram::of(&out);
            let (c, d) = (hist.percentile(0.05), hist.percentile(0.95));
            let s = |v: u8| stretch_with_bounds(&row(&[v]), c, d).data()[0] as usize;
            // Strictly inside (c, d) the map is injective, so bin counts carry over
            // and their ranking is unchanged.
            let inner: Vec<u8> = (c.saturating_add(1)..d).collect();
            for &i in &inner {
                prop_assert_eq!(out_hist.bins()[s(i)], hist.bins()[i as usize]);
                for &j in &inner {
                    let before = hist.bins()[i as usize].cmp(&hist.bins()[j as usize]);
                    let after = out_hist.bins()[s(i)].cmp(&out_hist.bins()[s(j)]);
                    prop_assert_eq!(before, after);
                }
            }
        }

        #[test]
        fn equalized_cdf_is_near_linear(data in proptest::collection::vec(any::<u8>(), 1..500)) {
            let plane = row(&data);
            let out = histogram_equalize(&plane);
            let hist = Histogram::of(&out);
            let n = hist.total() as f64;
            let mut cum = 0u64;
            for (y, &count) in hist.bins().iter().enumerate() {
                cum += count;
                if count > 0 {
                    let cdf = cum as f64 / n;
                    prop_assert!((cdf - y as f64 / 255.0).abs() <= 1.0 / 256.0 + 1e-12);
                }
            }
        }
    }
}
