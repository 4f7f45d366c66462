//! Infection statistics, the plain-text report, and evaluation against
//! manual annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::associate::AssociationResult;
use crate::classify::NucleiEstimate;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfectionReport {
    pub image_path: String,
    /// Preformatted `DD - MM - YYYY @ HH:MM`; `None` renders a placeholder.
    pub generated_at: Option<String>,
    pub macrophagic_regions: u64,
    pub uni_nucleic_macrophagic: u64,
    pub multi_nucleic_macrophagic: u64,
    pub parasitic_regions: u64,
    pub uni_nucleic_parasitic: u64,
    pub multi_nucleic_parasitic: u64,
    pub total_macrophages: u64,
    pub total_parasites: u64,
    /// Percentages in `[0, 100]`.
    pub sync_rate_macrophages: f64,
    pub sync_rate_parasites: f64,
    pub infection_ratio: f64,
    pub avg_parasites_per_infected: f64,
    pub avg_parasites_per_total: f64,
    pub infected_macrophages: u64,
    pub associated_parasites: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Classification outcome of one labeled region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionOutcome {
    pub touches_border: bool,
    /// `None` when the region was too large to classify.
    pub estimate: Option<NucleiEstimate>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub regions: u64,
    pub uni: u64,
    pub multi: u64,
    pub total: u64,
    pub agreed: u64,
    pub classified: u64,
}

impl ChannelCounts {
    /// Counts over regions off the image border.
    pub fn of(outcomes: &[RegionOutcome]) -> Self {
        let mut c = Self::default();
        for o in outcomes.iter().filter(|o| !o.touches_border) {
            c.regions += 1;
            let Some(e) = o.estimate else { continue };
            c.classified += 1;
            c.agreed += e.agreed as u64;
            match e.final_vote {
                0 => {}
                1 => c.uni += 1,
                _ => c.multi += 1,
            }
            c.total += e.final_vote as u64;
        }
        c
    }

    pub fn sync_rate(&self) -> f64 {
        if self.classified == 0 {
            100.0
        } else {
            100.0 * self.agreed as f64 / self.classified as f64
        }
    }
}

/// Assemble the report from per-region outcomes and the association.
pub fn compute_stats(
    image_path: &str,
    generated_at: Option<String>,
    macrophages: &[RegionOutcome],
    parasites: &[RegionOutcome],
    association: &AssociationResult,
) -> InfectionReport {
    let m = ChannelCounts::of(macrophages);
    let p = ChannelCounts::of(parasites);
    let infected = association.infected_macrophages.len() as u64;
    let associated = association.pairs.len() as u64;
    let mut warnings = Vec::new();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    if m.total == 0 {
        warnings.push("no macrophages counted; ratios reported as 0".to_string());
    }
    if infected == 0 {
        warnings.push("no infected macrophages; average per infected reported as 0".to_string());
    }
    InfectionReport {
        image_path: image_path.to_string(),
        generated_at,
        macrophagic_regions: m.regions,
        uni_nucleic_macrophagic: m.uni,
        multi_nucleic_macrophagic: m.multi,
        parasitic_regions: p.regions,
        uni_nucleic_parasitic: p.uni,
        multi_nucleic_parasitic: p.multi,
        total_macrophages: m.total,
        total_parasites: p.total,
        sync_rate_macrophages: m.sync_rate(),
        sync_rate_parasites: p.sync_rate(),
        infection_ratio: ratio(infected, m.total).min(1.0),
        avg_parasites_per_infected: ratio(associated, infected),
        avg_parasites_per_total: ratio(associated, m.total),
        infected_macrophages: infected,
        associated_parasites: associated,
        warnings,
    }
}

pub const NO_TIMESTAMP: &str = "(no timestamp)";

/// Percentage with at most four decimals and no trailing zeros.
pub fn format_percent(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

/// Ratios print at single precision, shortest round-trip form.
pub fn format_ratio(v: f64) -> String {
    format!("{}", v as f32)
}

const LABELS: [&str; 14] = [
    "Macrophagic regions",
    "Uni-nucleic macrophagic regions",
    "Multi-nucleic macrophagic regions",
    "Parasitic regions",
    "Uni-nucleic parasitic regions",
    "Multi-nucleic parasitic regions",
    "Total counted macrophages",
    "Total counted parasites",
    "Classifier synchronization rate (macrophages)",
    "Classifier synchronization rate (parasites)",
    "Overall infection ratio",
    "Average parasites per infected macrophage",
    "Average parasites per total macrophages",
    "Report generated on",
];

pub fn render_report(r: &InfectionReport) -> String {
    let mut out = String::new();
    let ts = r.generated_at.as_deref().unwrap_or(NO_TIMESTAMP);
    let _ = writeln!(out, "{}", r.image_path);
    let _ = writeln!(out, "{}: {ts}", LABELS[13]);
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[0], r.macrophagic_regions);
    let _ = writeln!(out, "{}: {}", LABELS[1], r.uni_nucleic_macrophagic);
    let _ = writeln!(out, "{}: {}", LABELS[2], r.multi_nucleic_macrophagic);
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[3], r.parasitic_regions);
    let _ = writeln!(out, "{}: {}", LABELS[4], r.uni_nucleic_parasitic);
    let _ = writeln!(out, "{}: {}", LABELS[5], r.multi_nucleic_parasitic);
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[6], r.total_macrophages);
    let _ = writeln!(out, "{}: {}", LABELS[7], r.total_parasites);
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[8], format_percent(r.sync_rate_macrophages));
    let _ = writeln!(out, "{}: {}", LABELS[9], format_percent(r.sync_rate_parasites));
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[10], format_ratio(r.infection_ratio));
    out.push('\n');
    let _ = writeln!(out, "{}: {}", LABELS[11], format_ratio(r.avg_parasites_per_infected));
    let _ = writeln!(out, "{}: {}", LABELS[12], format_ratio(r.avg_parasites_per_total));
    out
}

/// Parse the text produced by [`render_report`]. Fields that the text does
/// not carry (infected and associated counts, warnings) are left at zero.
pub fn parse_report(text: &str) -> Result<InfectionReport> {
    let lines: Vec<&str> = text.lines().collect();
    let err = |line: usize, reason: &str| Error::ReportParse {
        line: line + 1,
        reason: reason.to_string(),
    };
    if lines.len() < 2 {
        return Err(err(0, "report is too short"));
    }
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (label, value) = line.split_once(": ").ok_or_else(|| err(i, "expected 'label: value'"))?;
        if !LABELS.contains(&label) {
            return Err(err(i, &format!("unknown label '{label}'")));
        }
        fields.insert(label, (i, value));
    }
    let get = |k: usize| fields.get(LABELS[k]).copied().ok_or_else(|| err(lines.len(), &format!("missing '{}'", LABELS[k])));
    let int = |k: usize| -> Result<u64> {
        let (i, v) = get(k)?;
        v.parse().map_err(|_| err(i, "expected an integer"))
    };
    let real = |k: usize| -> Result<f64> {
        let (i, v) = get(k)?;
        v.parse().map_err(|_| err(i, "expected a number"))
    };
    let pct = |k: usize| -> Result<f64> {
        let (i, v) = get(k)?;
        v.strip_suffix('%')
            .ok_or_else(|| err(i, "expected a percentage"))?
            .parse()
            .map_err(|_| err(i, "expected a percentage"))
    };
    let ts = get(13)?.1;
    Ok(InfectionReport {
        image_path: lines[0].to_string(),
        generated_at: (ts != NO_TIMESTAMP).then(|| ts.to_string()),
        macrophagic_regions: int(0)?,
        uni_nucleic_macrophagic: int(1)?,
        multi_nucleic_macrophagic: int(2)?,
        parasitic_regions: int(3)?,
        uni_nucleic_parasitic: int(4)?,
        multi_nucleic_parasitic: int(5)?,
        total_macrophages: int(6)?,
        total_parasites: int(7)?,
        sync_rate_macrophages: pct(8)?,
        sync_rate_parasites: pct(9)?,
        infection_ratio: real(10)?,
        avg_parasites_per_infected: real(11)?,
        avg_parasites_per_total: real(12)?,
        infected_macrophages: 0,
        associated_parasites: 0,
        warnings: Vec::new(),
    })
}

/// `correct / total` over all images.
pub fn segmentation_accuracy(correct: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(Error::UndefinedAccuracy);
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
    pub algorithm: f64,
    pub within_bounds: bool,
    pub algorithm_error: f64,
}

/// Model the annotators as a normal distribution (population standard
/// deviation) and test whether the algorithm lies within two deviations.
pub fn evaluate(algorithm: f64, annotations: &[f64]) -> Result<EvalResult> {
    if annotations.len() < 2 {
        return Err(Error::Input(format!(
            "evaluation needs at least two annotation values, got {}",
            annotations.len()
        )));
    }
    let n = annotations.len() as f64;
    let mean = annotations.iter().sum::<f64>() / n;
    let std = (annotations.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let error = (algorithm - mean).abs();
    Ok(EvalResult {
        mean,
        std,
        lower: mean - 2.0 * std,
        upper: mean + 2.0 * std,
        algorithm,
        within_bounds: error <= 2.0 * std + 1e-9 * mean.abs().max(1.0),
        algorithm_error: error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Macrophage,
    Parasite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub x: f64,
    pub y: f64,
    pub kind: PointKind,
}

/// Indices into the image's point list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub parasite: usize,
    pub macrophage: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image: String,
    pub points: Vec<AnnotatedPoint>,
    #[serde(default)]
    pub links: Vec<Link>,
}

/// One annotator's ground truth over a set of images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub annotator: String,
    pub images: Vec<ImageAnnotation>,
}

impl AnnotationSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: AnnotationSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            for l in &img.links {
                let kind = |i: usize| img.points.get(i).map(|p| p.kind);
                if kind(l.parasite) != Some(PointKind::Parasite) || kind(l.macrophage) != Some(PointKind::Macrophage) {
                    return Err(Error::Input(format!(
                        "{}: link {} -> {} does not reference a parasite and a macrophage",
                        img.image, l.parasite, l.macrophage
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn totals(&self) -> Vec<ImageTotals> {
        self.images
            .iter()
            .map(|img| {
                let count = |k| img.points.iter().filter(|p| p.kind == k).count() as f64;
                let infected: BTreeSet<usize> = img.links.iter().map(|l| l.macrophage).collect();
                ImageTotals {
                    image: img.image.clone(),
                    annotator: self.annotator.clone(),
                    macrophages: count(PointKind::Macrophage),
                    parasites: count(PointKind::Parasite),
                    infected: infected.len() as f64,
                }
            })
            .collect()
    }
}

/// One row of a totals table: `image,annotator,macrophages,parasites,infected`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTotals {
    pub image: String,
    pub annotator: String,
    pub macrophages: f64,
    pub parasites: f64,
    pub infected: f64,
}

/// Annotator names that mark algorithm output rather than a human.
pub const ALGORITHM_ANNOTATORS: [&str; 2] = ["PA", "algorithm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEvaluation {
    pub image: String,
    pub macrophages: EvalResult,
    pub parasites: EvalResult,
    pub infected: EvalResult,
}

/// Group totals by image and evaluate each metric. Images lacking an
/// algorithm row or two annotators are returned in the second list.
pub fn evaluate_totals(rows: &[ImageTotals]) -> (Vec<ImageEvaluation>, Vec<String>) {
    let mut by_image: BTreeMap<&str, (Option<&ImageTotals>, Vec<&ImageTotals>)> = BTreeMap::new();
    for r in rows {
        let entry = by_image.entry(r.image.as_str()).or_default();
        if ALGORITHM_ANNOTATORS.contains(&r.annotator.as_str()) {
            entry.0 = Some(r);
        } else {
            entry.1.push(r);
        }
    }
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (image, (alg, manual)) in by_image {
        let Some(alg) = alg else {
            skipped.push(format!("{image}: no algorithm values"));
            continue;
        };
        let metric = |f: fn(&ImageTotals) -> f64| {
            let values: Vec<f64> = manual.iter().map(|r| f(r)).collect();
            evaluate(f(alg), &values)
        };
        match (metric(|r| r.macrophages), metric(|r| r.parasites), metric(|r| r.infected)) {
            (Ok(m), Ok(p), Ok(i)) => done.push(ImageEvaluation {
                image: image.to_string(),
                macrophages: m,
                parasites: p,
                infected: i,
            }),
            (Err(e), ..) | (_, Err(e), _) | (.., Err(e)) => skipped.push(format!("{image}: {e}")),
        }
    }
    (done, skipped)
}

/// Table with mean, deviation, bounds and algorithm error per metric.
pub fn render_eval_table(evals: &[ImageEvaluation]) -> String {
    let mut out = String::new();
    for e in evals {
        let _ = writeln!(out, "{}", e.image);
        let _ = writeln!(out, "\tMacrophages (total)\tParasites (total)\tInfected Macrophages");
        let row = |name: &str, f: fn(&EvalResult) -> f64| {
            format!(
                "{name}\t{:.0}\t{:.0}\t{:.0}\n",
                f(&e.macrophages),
                f(&e.parasites),
                f(&e.infected)
            )
        };
        out.push_str(&row("Mean (u)", |r| r.mean));
        out.push_str(&row("Standard Deviation (s)", |r| r.std));
        out.push_str(&row("u + 2s", |r| r.upper));
        out.push_str(&row("u - 2s", |r| r.lower));
        out.push_str(&row("Algorithm Error", |r| r.algorithm_error));
        let flag = |r: &EvalResult| if r.within_bounds { "yes" } else { "no" };
        let _ = writeln!(
            out,
            "Within bounds\t{}\t{}\t{}",
            flag(&e.macrophages),
            flag(&e.parasites),
            flag(&e.infected)
        );
        out.push('\n');
    }
    out
}
