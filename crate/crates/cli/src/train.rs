//! Training of the learned nuclei counter.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use leishcount::classify::{train_model, Kernel, SvmModel, TrainingSummary, LL_FEATURE_LEN};
use leishcount::pipeline::{training_corpus, AnalysisConfig};
use serde::{Deserialize, Serialize};

/// Fraction of the corpus, in order, used for training in the holdout run.
pub const HOLDOUT_SPLIT: f64 = 0.66;

pub type Sample = (Vec<f64>, u32);

/// Synthetic corpus in round-robin class order, so a sequential split
/// keeps every class on both sides.
pub fn synthetic_corpus(min_class: u32, max_class: u32, per_class: usize, seed: u64, config: &AnalysisConfig) -> Result<Vec<Sample>> {
    if min_class < 2 || max_class < min_class {
        bail!("class range {min_class}..={max_class} must start at 2 or above and be non-empty");
    }
    let grouped = training_corpus(min_class..=max_class, per_class, seed, config)?;
    let mut by_class: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for (x, k) in grouped {
        by_class.entry(k).or_default().push(x);
    }
    let mut out = Vec::new();
    for i in 0..per_class {
        for (k, xs) in &by_class {
            if let Some(x) = xs.get(i) {
                out.push((x.clone(), *k));
            }
        }
    }
    Ok(out)
}

fn header() -> String {
    let mut cols = vec!["label".to_string()];
    cols.extend((0..LL_FEATURE_LEN).map(|i| format!("f{i}")));
    cols.join(",")
}

pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header().split(','))?;
    for (x, k) in samples {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `label,f0,...` CSV in file order.
pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let label: u32 = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("{}:{line}: bad label", path.display()))?;
        let x = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{line}: bad feature value", path.display()))?;
        out.push((x, label));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub train: usize,
    pub test: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kernel: Kernel,
    pub c: f64,
    #[serde(flatten)]
    pub summary: TrainingSummary,
    /// `None` when the training part of the split lacks a class.
    pub holdout: Option<Holdout>,
}

/// Train on the first 66% and score the rest.
pub fn holdout(samples: &[Sample], kernel: Kernel, c: f64) -> Result<Option<Holdout>> {
    let cut = (samples.len() as f64 * HOLDOUT_SPLIT).round() as usize;
    let (train, test) = samples.split_at(cut.min(samples.len()));
    if test.is_empty() {
        return Ok(None);
    }
    let model = match train_model(train, kernel, c) {
        Ok((m, _)) => m,
        Err(e) => {
            log::warn!("holdout skipped: {e}");
            return Ok(None);
        }
    };
    let mut correct = 0;
    for (x, k) in test {
        if model.predict_raw(x)? == *k {
            correct += 1;
        }
    }
    Ok(Some(Holdout {
        train: train.len(),
        test: test.len(),
        accuracy: correct as f64 / test.len() as f64,
    }))
}

/// Holdout estimate, then the final model on the whole corpus.
pub fn train(samples: &[Sample], kernel: Kernel, c: f64) -> Result<(SvmModel, TrainReport)> {
    let (model, summary) = train_model(samples, kernel, c)?;
    let holdout = holdout(samples, kernel, c)?;
    Ok((
        model,
        TrainReport {
            kernel,
            c,
            summary,
            holdout,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<Sample> {
        (0..30)
            .map(|i| {
                let k = 2 + (i % 3) as u32;
                let base = k as f64 * 10.0;
                (vec![base + (i as f64 * 0.37).sin(), base * 0.5 - (i as f64).cos()], k)
            })
            .collect()
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let samples: Vec<Sample> = vec![(vec![0.1; LL_FEATURE_LEN], 2), (vec![-3.5; LL_FEATURE_LEN], 4)];
        write_corpus(&path, &samples).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), samples);
    }

    #[test]
    fn holdout_on_separable_classes() {
        let (model, report) = train(&toy(), Kernel::Rbf { gamma: 0.5 }, 10.0).unwrap();
        let h = report.holdout.unwrap();
        assert_eq!(h.train + h.test, 30);
        assert_eq!(h.train, 20);
        assert_eq!(h.accuracy, 1.0);
        assert_eq!(model.classes, vec![2, 3, 4]);
    }

    #[test]
    fn single_class_is_an_error() {
        let samples: Vec<Sample> = toy().into_iter().filter(|s| s.1 == 2).collect();
        assert!(train(&samples, Kernel::Linear, 1.0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&toy(), Kernel::Rbf { gamma: 0.5 }, 1.0).unwrap().0.to_json();
        let b = train(&toy(), Kernel::Rbf { gamma: 0.5 }, 1.0).unwrap().0.to_json();
        assert_eq!(a, b);
    }
}
