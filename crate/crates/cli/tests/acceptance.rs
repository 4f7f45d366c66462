//! Acceptance suite. Runs every criterion in sequence (timings are wall
//! clock on whatever the machine is doing, so nothing else runs alongside)
//! and prints one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use leishcount::classify::{rule_classify, vote, Calibration, NucleiClassifier, SvmModel, VOTE_TRUST_BAND};
use leishcount::mixture::{decluster, em_fit, responsibilities, EmConfig, Point};
use leishcount::pipeline::{analyze_channels, classify_region, region_seed, segment_cluster, AnalysisConfig};
use leishcount::preprocess::Histogram;
use leishcount::raster::Channel;
use leishcount::report::{render_report, segmentation_accuracy, InfectionReport};
use leishcount::segment::{label_regions, multi_otsu, otsu_threshold, valley_constraints, BinaryMask, Connectivity};
use leishcount::synth::{generate, SceneSpec};
use leishcount_cli::config::DEFAULT_MODEL_JSON;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(limit: Duration, elapsed: Duration, detail: String) -> Outcome {
    let detail = format!("{detail}; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    ensure(elapsed < limit, detail)
}

// ---------------------------------------------------------------- histograms

fn bump_histogram(rng: &mut ChaCha8Rng, bumps: &[(f64, f64, f64)], total: f64, noise: u64) -> [u64; 256] {
    let mut bins = [0u64; 256];
    for (i, b) in bins.iter_mut().enumerate() {
        let x = i as f64;
        let density: f64 = bumps
            .iter()
            .map(|&(m, s, w)| w * (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum();
        *b = (density * total).round() as u64 + rng.random_range(0..=noise);
    }
    bins
}

/// Smallest `t` maximizing `w0 w1 (mu0 - mu1)^2`, compared exactly as
/// `(N1 S0 - N0 S1)^2 / (N0 N1)` in integers.
fn otsu_oracle(bins: &[u64; 256]) -> u8 {
    let n: i128 = bins.iter().map(|&b| b as i128).sum();
    let s: i128 = bins.iter().enumerate().map(|(i, &b)| i as i128 * b as i128).sum();
    let mut best: Option<(i128, i128, u8)> = None;
    let (mut n0, mut s0) = (0i128, 0i128);
    for t in 1..=255usize {
        n0 += bins[t - 1] as i128;
        s0 += (t as i128 - 1) * bins[t - 1] as i128;
        let (n1, s1) = (n - n0, s - s0);
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0, 1)
        } else {
            let d = n1 * s0 - n0 * s1;
            (d * d, n0 * n1)
        };
        let better = match best {
            None => true,
            Some((bn, bd, _)) => num * bd > bn * den,
        };
        if better {
            best = Some((num, den, t as u8));
        }
    }
    best.expect("255 candidates").2
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = Vec::new();
    while cases.len() < 500 {
        let k = rng.random_range(1..=3);
        let bumps: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| (rng.random_range(10.0..245.0), rng.random_range(2.0..30.0), rng.random_range(0.1..1.0)))
            .collect();
        let total = rng.random_range(2_000.0..40_000.0);
        let bins = bump_histogram(&mut rng, &bumps, total, 4);
        if bins.iter().filter(|&&b| b > 0).count() >= 2 {
            cases.push(bins);
        }
    }
    let start = Instant::now();
    let mut agree = 0;
    for bins in &cases {
        let got = otsu_threshold(&Histogram::from_bins(*bins).unwrap()).unwrap();
        agree += usize::from(got == otsu_oracle(bins));
    }
    let elapsed = start.elapsed();
    let detail = format!("{agree}/500 thresholds equal the exhaustive argmax");
    if agree != 500 {
        return Err(detail);
    }
    within_time(Duration::from_secs(1), elapsed, detail)
}

/// Exhaustive two-threshold search over `1 <= t1 < t2 <= 255` of the
/// textbook three-class between-class variance.
fn two_threshold_oracle(bins: &[u64; 256]) -> ((u8, u8), f64) {
    let n: f64 = bins.iter().map(|&b| b as f64).sum();
    let p: Vec<f64> = bins.iter().map(|&b| b as f64 / n).collect();
    let mu_t: f64 = p.iter().enumerate().map(|(i, q)| i as f64 * q).sum();
    let mut omega = vec![0.0; 257];
    let mut mu = vec![0.0; 257];
    for i in 0..256 {
        omega[i + 1] = omega[i] + p[i];
        mu[i + 1] = mu[i] + i as f64 * p[i];
    }
    let class = |lo: usize, hi: usize| {
        let w = omega[hi] - omega[lo];
        if w <= 0.0 {
            0.0
        } else {
            let m = (mu[hi] - mu[lo]) / w;
            w * (m - mu_t) * (m - mu_t)
        }
    };
    let mut best = ((0u8, 0u8), f64::NEG_INFINITY);
    for t1 in 1..255usize {
        for t2 in t1 + 1..=255usize {
            let v = class(0, t1) + class(t1, t2) + class(t2, 256);
            if v > best.1 {
                best = ((t1 as u8, t2 as u8), v);
            }
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut agree = 0;
    let mut first_miss = None;
    for case in 0..100 {
        let means = [
            rng.random_range(35.0..60.0),
            rng.random_range(115.0..140.0),
            rng.random_range(195.0..220.0),
        ];
        let bumps: Vec<(f64, f64, f64)> = means
            .iter()
            .map(|&m| (m, rng.random_range(8.0..14.0), rng.random_range(0.25..0.45)))
            .collect();
        let total = rng.random_range(20_000.0..60_000.0);
        let bins = bump_histogram(&mut rng, &bumps, total, 3);
        // Valleys of the noise-free mixture between consecutive bumps.
        let clean = bump_histogram(&mut ChaCha8Rng::seed_from_u64(0), &bumps, 1e6, 0);
        let valleys: Vec<usize> = means
            .windows(2)
            .map(|w| (w[0] as usize..=w[1] as usize).min_by_key(|&i| clean[i]).unwrap())
            .collect();
        let constraints = valley_constraints(&valleys, 20);
        let got = multi_otsu(&Histogram::from_bins(bins).unwrap(), 3, &constraints).unwrap();
        let (expected, _) = two_threshold_oracle(&bins);
        if got.levels == [expected.0, expected.1] {
            agree += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!(" (case {case}: got {:?}, exhaustive {expected:?})", got.levels));
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("{agree}/100 constrained results equal the exhaustive search{}", first_miss.unwrap_or_default());
    if agree != 100 {
        return Err(detail);
    }
    within_time(Duration::from_secs(5), elapsed, detail)
}

// ---------------------------------------------------------------- labeling

fn flood_fill_oracle(bits: &[bool], w: usize, h: usize, eight: bool) -> Vec<u32> {
    let mut label = vec![0u32; w * h];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if bits[j] && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    label
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let masks: Vec<Vec<bool>> = (0..500)
        .map(|_| {
            let p = rng.random_range(0.2..0.8);
            (0..64 * 64).map(|_| rng.random_bool(p)).collect()
        })
        .collect();
    let start = Instant::now();
    let mut agree = 0;
    for bits in &masks {
        let mask = BinaryMask::new(64, 64, bits.clone()).unwrap();
        let mut ok = true;
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let regions = label_regions(&mask, conn);
            let oracle = flood_fill_oracle(bits, 64, 64, eight);
            let components = oracle.iter().copied().max().unwrap_or(0) as usize;
            let mut seen = vec![false; 64 * 64];
            let mut used = BTreeSet::new();
            ok &= regions.len() == components;
            for r in &regions {
                let i0 = r.pixels[0].y as usize * 64 + r.pixels[0].x as usize;
                let comp = oracle[i0];
                ok &= used.insert(comp);
                for p in &r.pixels {
                    let i = p.y as usize * 64 + p.x as usize;
                    ok &= oracle[i] == comp && !seen[i];
                    seen[i] = true;
                }
            }
            ok &= seen == *bits;
        }
        agree += usize::from(ok);
    }
    let elapsed = start.elapsed();
    let detail = format!("{agree}/500 masks partition identically at 4- and 8-connectivity");
    if agree != 500 {
        return Err(detail);
    }
    within_time(Duration::from_secs(2), elapsed, detail)
}

// ---------------------------------------------------------------- EM

fn gaussian_cloud(rng: &mut ChaCha8Rng, center: Point, sx: f64, sy: f64, rho: f64, n: usize) -> Vec<Point> {
    let z = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let (a, b): (f64, f64) = (z.sample(rng), z.sample(rng));
            [center[0] + sx * a, center[1] + sy * (rho * a + (1.0 - rho * rho).sqrt() * b)]
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut worst_drop = 0.0f64;
    for case in 0..200 {
        let clusters = rng.random_range(1..=4);
        let mut points = Vec::new();
        for _ in 0..clusters {
            let c = [rng.random_range(0.0..60.0), rng.random_range(0.0..60.0)];
            let n = rng.random_range(30..150);
            let (sx, sy, rho) = (rng.random_range(1.0..6.0), rng.random_range(1.0..6.0), rng.random_range(-0.7..0.7));
            points.extend(gaussian_cloud(&mut rng, c, sx, sy, rho, n));
        }
        let k = rng.random_range(1..=4);
        let config = EmConfig {
            seed: case,
            ..EmConfig::default()
        };
        let model = match em_fit(&points, k, &config, None) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        for w in model.ll_history.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let weight_sum: f64 = model.components.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            failures.push(format!("case {case}: weights sum to {weight_sum}"));
        }
        let resp = responsibilities(&model.components, &points);
        if let Some(row) = resp.iter().find(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
            failures.push(format!("case {case}: responsibility row sums to {}", row.iter().sum::<f64>()));
        }

        // k = 1 is the closed-form sample mean and (divisor N) covariance.
        let one = em_fit(&points, 1, &config, None).map_err(|e| e.to_string())?;
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let cxx = points.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / n;
        let cxy = points.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / n;
        let cyy = points.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / n;
        let c = &one.components[0];
        let errs = [
            c.mean[0] - mx,
            c.mean[1] - my,
            c.cov.xx() - cxx,
            c.cov.xy() - cxy,
            c.cov.yy() - cyy,
        ];
        if errs.iter().any(|e| e.abs() > 1e-6) {
            failures.push(format!("case {case}: k=1 fit differs from the sample moments by {errs:?}"));
        }
    }
    if worst_drop > 1e-9 {
        failures.push(format!("log-likelihood decreased by {worst_drop:e}"));
    }
    let detail = format!(
        "200 clouds: largest per-iteration LL decrease {worst_drop:.1e}, {} violations",
        failures.len()
    );
    match failures.first() {
        None => Ok(detail),
        Some(f) => Err(format!("{detail}; first: {f}")),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let a = [rng.random_range(20.0..40.0), rng.random_range(20.0..40.0)];
        let b = [a[0] + 20.0 * angle.cos(), a[1] + 20.0 * angle.sin()];
        let mut points = gaussian_cloud(&mut rng, a, 2.0, 2.0, 0.0, 500);
        points.extend(gaussian_cloud(&mut rng, b, 2.0, 2.0, 0.0, 500));
        let config = EmConfig {
            seed,
            ..EmConfig::default()
        };
        let Ok(model) = em_fit(&points, 2, &config, None) else { continue };
        let dist = |p: Point, q: Point| (p[0] - q[0]).hypot(p[1] - q[1]);
        let (c0, c1) = (&model.components[0], &model.components[1]);
        let (ma, mb) = if dist(c0.mean, a) + dist(c1.mean, b) <= dist(c0.mean, b) + dist(c1.mean, a) {
            (c0, c1)
        } else {
            (c1, c0)
        };
        let means_ok = dist(ma.mean, a) <= 0.5 && dist(mb.mean, b) <= 0.5;
        let weights_ok = (ma.weight - 0.5).abs() <= 0.05 && (mb.weight - 0.5).abs() <= 0.05;
        good += usize::from(means_ok && weights_ok);
    }
    let elapsed = start.elapsed();
    let detail = format!("{good}/20 seeds recover both means within 0.5 px and weights within 0.05");
    if good < 19 {
        return Err(detail);
    }
    within_time(Duration::from_secs(10), elapsed, detail)
}

// ---------------------------------------------------------------- classification

fn criterion_6() -> Outcome {
    let set = Calibration::default().macrophage.zoom5;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut correct = 0;
    for i in 0..10_000u32 {
        let k = 1 + i % 9;
        let area = Normal::new(k as f64 * 300.0, 48.0).unwrap().sample(&mut rng).round().max(1.0) as usize;
        correct += usize::from(rule_classify(area, &set) == Some(k));
    }
    let acc = correct as f64 / 10_000.0;
    ensure(acc >= 0.99, format!("accuracy {:.2}% on 10000 areas from N(300k, 48^2), k = 1..9", acc * 100.0))
}

fn criterion_7() -> Outcome {
    let mut ok = 0;
    let mut total = 0;
    for rule in 0..=9u32 {
        for svm in 0..=9u32 {
            total += 1;
            let e = vote(rule, Some(svm));
            let expected = if svm.abs_diff(rule) <= 2 { svm } else { rule };
            ok += usize::from(e.final_vote == expected && e.agreed == (svm == rule) && VOTE_TRUST_BAND == 2);
        }
        total += 1;
        let e = vote(rule, None);
        ok += usize::from(e.final_vote == rule);
    }
    ensure(ok == total, format!("{ok}/{total} (rule, svm) pairs follow the trust band rule"))
}

// ---------------------------------------------------------------- declustering

fn criterion_8(model: &SvmModel) -> Outcome {
    let start = Instant::now();
    let config = AnalysisConfig::default();
    let set = config.calibration.macrophage.zoom5.clone();
    let classifier: &dyn NucleiClassifier = model;
    let mut correct = 0;
    let (mut px_right, mut px_total) = (0usize, 0usize);
    for i in 0..200u64 {
        let k = 2 + (i % 4) as u32;
        let sample = segment_cluster(k, 5_000_000 + i, 5.0, 0.15, &config).map_err(|e| e.to_string())?;
        let mut predicted = 0;
        let mut cluster_vote = None;
        for (idx, r) in sample.regions.iter().enumerate().filter(|(_, r)| !r.touches_border) {
            let em = EmConfig {
                seed: region_seed(config.em.seed, Channel::Macrophage, r.id),
                ..config.em
            };
            let (e, _) = classify_region(r, &set, Some(classifier), &em);
            let v = e.map_or(0, |e| e.final_vote);
            predicted += v;
            if Some(idx) == sample.cluster {
                cluster_vote = Some((v, em));
            }
        }
        if predicted != k {
            continue;
        }
        correct += 1;
        // Pixel assignment of the split, under the best matching of parts
        // to generating nuclei.
        let (Some(idx), Some((v, em))) = (sample.cluster, cluster_vote) else { continue };
        if v != k {
            continue;
        }
        let region = &sample.regions[idx];
        let parts = decluster(region, k as usize, 1000, &em).map_err(|e| e.to_string())?;
        let owners: Vec<Vec<Option<usize>>> = parts
            .iter()
            .map(|p| p.pixels.iter().map(|q| sample.truth.owner(q.x as f64, q.y as f64)).collect())
            .collect();
        let nuclei = sample.truth.macrophages.len();
        let mut best = 0;
        for perm in permutations(nuclei) {
            let hits: usize = owners
                .iter()
                .enumerate()
                .map(|(j, o)| o.iter().filter(|&&w| w.is_some() && w == perm.get(j).copied()).count())
                .sum();
            best = best.max(hits);
        }
        px_right += best;
        px_total += owners.iter().flatten().filter(|o| o.is_some()).count();
    }
    let elapsed = start.elapsed();
    let acc = correct as f64 / 200.0;
    let px = px_right as f64 / px_total.max(1) as f64;
    let detail = format!(
        "count accuracy {:.1}% over 200 clusters of 2-5 nuclei, {:.1}% of pixels assigned to their nucleus",
        acc * 100.0,
        px * 100.0
    );
    if acc < 0.75 || px < 0.90 {
        return Err(detail);
    }
    within_time(Duration::from_secs(120), elapsed, detail)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

// ---------------------------------------------------------------- end to end

fn criterion_9(model: &SvmModel) -> Outcome {
    let start = Instant::now();
    let config = AnalysisConfig::default();
    let (mut mac, mut par, mut true_mac, mut true_par) = (0u64, 0u64, 0u64, 0u64);
    let mut worst_ratio = 0.0f64;
    for seed in 1..=20u64 {
        let spec = SceneSpec::benchmark(seed);
        let (channels, truth) = generate(&spec).map_err(|e| e.to_string())?;
        let a = analyze_channels(&channels, &config, Some(model), "bench", None).map_err(|e| e.to_string())?;
        mac += a.report.total_macrophages;
        par += a.report.total_parasites;
        true_mac += truth.total_macrophages() as u64;
        true_par += truth.total_parasites() as u64;
        worst_ratio = worst_ratio.max((a.report.infection_ratio - truth.infection_ratio()).abs());
    }
    let elapsed = start.elapsed();
    let rel = |got: u64, want: u64| (got as f64 - want as f64).abs() / want as f64;
    let detail = format!(
        "macrophages {mac}/{true_mac}, parasites {par}/{true_par}, worst infection ratio error {worst_ratio:.4}"
    );
    if rel(mac, true_mac) > 0.02 || rel(par, true_par) > 0.02 || worst_ratio > 0.02 {
        return Err(detail);
    }
    within_time(Duration::from_secs(60), elapsed, detail)
}

// ---------------------------------------------------------------- reports

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leishcount"))
}

fn criterion_10() -> Outcome {
    let table = |name: &str| -> Result<serde_json::Value, String> {
        let out = binary()
            .args(["-q", "eval", "--json", "--totals"])
            .arg(fixture(name))
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("eval failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
    };
    let mut misses = Vec::new();
    let mut check = |t: &serde_json::Value, label: &str, metric: &str, expected: [f64; 5]| {
        let r = &t[0][metric];
        let got = [&r["mean"], &r["std"], &r["upper"], &r["lower"], &r["algorithm_error"]].map(|v| v.as_f64().unwrap_or(f64::NAN));
        for (g, e) in got.iter().zip(expected) {
            if (g.round() - e).abs() > 1.0 {
                misses.push(format!("{label} {metric}: {g:.2} vs {e}"));
            }
        }
        if r["within_bounds"] != serde_json::Value::Bool(true) && metric == "macrophages" {
            misses.push(format!("{label} {metric}: not within bounds"));
        }
    };
    let a = table("dataset_a_totals.csv")?;
    check(&a, "dataset A", "macrophages", [3020.0, 885.0, 4790.0, 1250.0, 1353.0]);
    check(&a, "dataset A", "parasites", [4037.0, 1110.0, 6258.0, 1816.0, 1574.0]);
    // The reference summary lists 546 for this deviation, but its own
    // bounds 824 and 2922 span 2 x 524.5, which is what the three
    // annotations give.
    check(&a, "dataset A", "infected", [1873.0, 525.0, 2922.0, 824.0, 719.0]);
    let b = table("dataset_b_totals.csv")?;
    check(&b, "dataset B", "macrophages", [5069.0, 294.0, 5658.0, 4481.0, 223.0]);
    check(&b, "dataset B", "parasites", [1967.0, 34.0, 2036.0, 1898.0, 133.0]);
    check(&b, "dataset B", "infected", [1024.0, 38.0, 1100.0, 949.0, 28.0]);
    let acc = segmentation_accuracy(3916, 4025).map_err(|e| e.to_string())? * 100.0;
    if (acc - 97.29).abs() > 0.01 {
        misses.push(format!("segmentation accuracy {acc:.4}%"));
    }
    let detail = format!("dataset A and B summaries reproduced from annotation totals, accuracy(3916, 4025) = {acc:.2}%");
    match misses.first() {
        None => Ok(detail),
        Some(m) => Err(format!("{} mismatches; first: {m}", misses.len())),
    }
}

fn sample_report(generated_at: Option<&str>) -> InfectionReport {
    InfectionReport {
        image_path: r"D:\Thesis\final data\dataset 1\FS554_5uM_CS3_3_2.zvi".into(),
        generated_at: generated_at.map(str::to_string),
        macrophagic_regions: 486,
        uni_nucleic_macrophagic: 373,
        multi_nucleic_macrophagic: 29,
        parasitic_regions: 235,
        uni_nucleic_parasitic: 192,
        multi_nucleic_parasitic: 22,
        total_macrophages: 446,
        total_parasites: 225,
        sync_rate_macrophages: 100.0 * 446.0 / 449.0,
        sync_rate_parasites: 100.0,
        infection_ratio: 138.0 / 446.0,
        avg_parasites_per_infected: 245.0 / 138.0,
        avg_parasites_per_total: 245.0 / 446.0,
        infected_macrophages: 138,
        associated_parasites: 245,
        warnings: Vec::new(),
    }
}

fn criterion_11() -> Outcome {
    let read = |n: &str| std::fs::read_to_string(fixture(n)).map_err(|e| e.to_string());
    let stamped = render_report(&sample_report(Some("23 - 04 - 2011 @ 23:47")));
    let bare = render_report(&sample_report(None));
    let ok = stamped == read("golden_report.txt")? && bare == read("golden_report_no_timestamp.txt")?;
    ensure(
        ok,
        format!("sample report rendered byte-for-byte ({} lines) with and without timestamp", bare.lines().count()),
    )
}

// ---------------------------------------------------------------- determinism

fn run_analyze(inputs: &[PathBuf], out: &Path, extra: &[&str]) -> Result<(), String> {
    let status = binary()
        .args(["-q", "analyze", "--json", "--no-timestamp", "--out"])
        .arg(out)
        .args(extra)
        .args(inputs)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    if status.success() {
        Ok(())
    } else {
        Err(format!("analyze exited with {status}"))
    }
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenes = dir.path().join("scenes");
    let status = binary()
        .args(["-q", "synth", "--benchmark", "--seed", "7", "--count", "20", "--stem", "bench", "--out"])
        .arg(&scenes)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    if !status.success() {
        return Err("synth failed".into());
    }
    let inputs: Vec<PathBuf> = (0..20).map(|i| scenes.join(format!("bench_{i:03}.json"))).collect();
    let runs = [("serial_a", vec!["--seed", "11"]), ("serial_b", vec!["--seed", "11"]), ("jobs8", vec!["--seed", "11", "--jobs", "8"])];
    for (name, extra) in &runs {
        run_analyze(&inputs, &dir.path().join(name), extra)?;
    }
    let mut identical = 0;
    for i in 0..20 {
        let file = format!("bench_{i:03}_report.json");
        let bytes: Vec<Vec<u8>> = runs
            .iter()
            .map(|(name, _)| std::fs::read(dir.path().join(name).join(&file)).unwrap_or_default())
            .collect();
        identical += usize::from(!bytes[0].is_empty() && bytes[0] == bytes[1] && bytes[0] == bytes[2]);
    }
    ensure(
        identical == 20,
        format!("{identical}/20 sidecars byte-identical across two serial runs and a --jobs 8 run"),
    )
}

fn main() {
    let model = SvmModel::from_json(DEFAULT_MODEL_JSON).expect("shipped model loads");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Otsu oracle equivalence", Box::new(criterion_1)),
        ("constrained multi-Otsu", Box::new(criterion_2)),
        ("CCL oracle equivalence", Box::new(criterion_3)),
        ("EM properties", Box::new(criterion_4)),
        ("EM recovery", Box::new(criterion_5)),
        ("rule classifier on its generative model", Box::new(criterion_6)),
        ("voting rule conformance", Box::new(criterion_7)),
        ("decluster accuracy", Box::new(|| criterion_8(&model))),
        ("end-to-end synthetic benchmark", Box::new(|| criterion_9(&model))),
        ("evaluation harness fixtures", Box::new(criterion_10)),
        ("report golden file", Box::new(criterion_11)),
        ("determinism", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} [{tag}] {name}: {detail}", i + 1);
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
