//! Comparison of algorithm counts with manual annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{Context, Result};
use leishcount::report::{evaluate_totals, AnnotationSet, ImageEvaluation, ImageTotals, InfectionReport};
use serde::Deserialize;

/// Name of the row summing every evaluated image.
pub const AGGREGATE: &str = "aggregate";

/// Image key: the file name without directories or extension. Handles both
/// path separators since annotations often come from another machine.
pub fn image_key(path: &str) -> String {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match name.rfind('.') {
        Some(i) if i > 0 => name[..i].to_string(),
        _ => name.to_string(),
    }
}

#[derive(Deserialize)]
struct Sidecar {
    report: InfectionReport,
}

/// Algorithm totals from an analysis sidecar (or a bare report JSON).
pub fn read_sidecar(path: &Path) -> Result<ImageTotals> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let report = match serde_json::from_str::<Sidecar>(&text) {
        Ok(s) => s.report,
        Err(_) => serde_json::from_str::<InfectionReport>(&text).with_context(|| format!("{} is not a report sidecar", path.display()))?,
    };
    Ok(ImageTotals {
        image: image_key(&report.image_path),
        annotator: "algorithm".into(),
        macrophages: report.total_macrophages as f64,
        parasites: report.total_parasites as f64,
        infected: report.infected_macrophages as f64,
    })
}

/// Annotation totals; an empty file yields no rows and a warning.
pub fn read_annotations(path: &Path) -> Result<Vec<ImageTotals>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if text.trim().is_empty() {
        log::warn!("{}: empty annotation file", path.display());
        return Ok(Vec::new());
    }
    let set = AnnotationSet::from_json(&text).with_context(|| format!("invalid annotations in {}", path.display()))?;
    if set.images.is_empty() {
        log::warn!("{}: annotation file lists no images", path.display());
    }
    Ok(set
        .totals()
        .into_iter()
        .map(|t| ImageTotals {
            image: image_key(&t.image),
            ..t
        })
        .collect())
}

/// Rows of a `image,annotator,macrophages,parasites,infected` CSV.
pub fn read_totals_csv(path: &Path) -> Result<Vec<ImageTotals>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("bad totals row in {}", path.display())))
        .collect()
}

/// Per-image evaluations plus, for several images, an aggregate over the
/// images that could be evaluated. Skipped images come back as warnings.
pub fn evaluate_rows(rows: &[ImageTotals]) -> (Vec<ImageEvaluation>, Vec<String>) {
    let (mut evals, skipped) = evaluate_totals(rows);
    if evals.len() > 1 {
        let done: BTreeSet<&str> = evals.iter().map(|e| e.image.as_str()).collect();
        let mut sums: BTreeMap<&str, ImageTotals> = BTreeMap::new();
        for r in rows.iter().filter(|r| done.contains(r.image.as_str())) {
            let s = sums.entry(r.annotator.as_str()).or_insert_with(|| ImageTotals {
                image: AGGREGATE.into(),
                annotator: r.annotator.clone(),
                macrophages: 0.0,
                parasites: 0.0,
                infected: 0.0,
            });
            s.macrophages += r.macrophages;
            s.parasites += r.parasites;
            s.infected += r.infected;
        }
        let sums: Vec<ImageTotals> = sums.into_values().collect();
        evals.extend(evaluate_totals(&sums).0);
    }
    (evals, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_ignore_directories_and_extensions() {
        assert_eq!(image_key(r"D:\Thesis\final data\FS554_5uM.zvi"), "FS554_5uM");
        assert_eq!(image_key("out/scene_001.json"), "scene_001");
        assert_eq!(image_key("plain"), "plain");
        assert_eq!(image_key(".hidden"), ".hidden");
    }

    #[test]
    fn aggregate_sums_per_annotator() {
        let row = |img: &str, a: &str, m: f64| ImageTotals {
            image: img.into(),
            annotator: a.into(),
            macrophages: m,
            parasites: m,
            infected: m,
        };
        let rows = vec![
            row("a", "x", 10.0),
            row("a", "y", 14.0),
            row("a", "algorithm", 12.0),
            row("b", "x", 20.0),
            row("b", "y", 22.0),
            row("b", "algorithm", 21.0),
            row("c", "x", 1.0),
        ];
        let (evals, skipped) = evaluate_rows(&rows);
        assert_eq!(skipped.len(), 1);
        let agg = evals.iter().find(|e| e.image == AGGREGATE).unwrap();
        assert_eq!(agg.macrophages.mean, 33.0);
        assert_eq!(agg.macrophages.algorithm, 33.0);
    }
}
