use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LLFeatures, NucleiClassifier};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `(x.y + 1)^degree`
    Polynomial { degree: u32 },
    /// `exp(-gamma |x - y|^2)`
    Rbf { gamma: f64 },
    /// `tanh(kappa x.y + c)`
    Tanh { kappa: f64, c: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot = || a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        match *self {
            Kernel::Linear => dot(),
            Kernel::Polynomial { degree } => (dot() + 1.0).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Tanh { kappa, c } => (kappa * dot() + c).tanh(),
        }
    }
}

/// One-vs-one decision function: positive means `positive`, otherwise `negative`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: u32,
    pub negative: u32,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl PairMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format_version: u32,
    pub kernel: Kernel,
    pub c: f64,
    pub classes: Vec<u32>,
    pub scaling: Vec<Scaling>,
    pub machines: Vec<PairMachine>,
}

/// Per-class counts and accuracy of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub class_counts: BTreeMap<u32, usize>,
    pub training_accuracy: f64,
}

fn standardize(x: &[f64], scaling: &[Scaling]) -> Vec<f64> {
    x.iter().zip(scaling).map(|(v, s)| (v - s.mean) / s.std).collect()
}

impl SvmModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let model: SvmModel = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        let k = model.classes.len();
        if model.machines.len() != k * (k - 1) / 2 {
            return Err(Error::Model("model is missing class-pair machines".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// One-vs-one majority vote on a raw (unscaled) feature vector. Ties go
    /// to the smaller class.
    pub fn predict_raw(&self, x: &[f64]) -> Result<u32> {
        if x.len() != self.scaling.len() {
            return Err(Error::Model(format!(
                "feature vector has {} coefficients, model expects {}",
                x.len(),
                self.scaling.len()
            )));
        }
        let z = standardize(x, &self.scaling);
        let mut votes: BTreeMap<u32, usize> = self.classes.iter().map(|&c| (c, 0)).collect();
        for m in &self.machines {
            let winner = if m.decision(&self.kernel, &z) > 0.0 { m.positive } else { m.negative };
            *votes.get_mut(&winner).expect("known class") += 1;
        }
        let best = votes.values().copied().max().unwrap_or(0);
        Ok(*votes
            .iter()
            .find(|(_, &v)| v == best)
            .map(|(c, _)| c)
            .expect("at least one class"))
    }
}

impl NucleiClassifier for SvmModel {
    fn predict(&self, features: &LLFeatures) -> Result<u32> {
        self.predict_raw(&features.to_vec())
    }
}

/// Binary C-SVC dual solved by SMO with second-order working set selection.
/// Returns `(alpha, rho)`.
fn solve_binary(gram: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    for _ in 0..max_iter {
        // i: maximal violating index from the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            } else if alpha[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        // j: best second-order gain from the "low" set.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let grad_diff;
            if y[t] > 0.0 {
                if alpha[t] <= 0.0 {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                grad_diff = gmax + grad[t];
            } else {
                if alpha[t] >= c {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                grad_diff = gmax - grad[t];
            }
            if grad_diff > 0.0 {
                let mut quad = gram[i][i] + gram[t][t] - 2.0 * gram[i][t];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = t;
                }
            }
        }
        if gmax + gmax2 < eps || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Bias from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { 0.5 * (ub + lb) };
    (alpha, rho)
}

/// Train a one-vs-one kernel SVM on raw feature vectors. Features are
/// standardized with the training mean and standard deviation, which the
/// model stores. Every class needs at least two samples.
pub fn train_model(samples: &[(Vec<f64>, u32)], kernel: Kernel, c: f64) -> Result<(SvmModel, TrainingSummary)> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Training(format!("C must be positive, got {c}")));
    }
    let dim = samples.first().map(|s| s.0.len()).unwrap_or(0);
    if dim == 0 || samples.iter().any(|s| s.0.len() != dim) {
        return Err(Error::Training("samples must share a non-zero feature length".into()));
    }
    if samples.iter().any(|s| s.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("non-finite feature value".into()));
    }
    let mut class_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in samples {
        *class_counts.entry(s.1).or_default() += 1;
    }
    if class_counts.len() < 2 {
        return Err(Error::Training(format!(
            "need at least two classes, found {}",
            class_counts.len()
        )));
    }
    if let Some((cls, n)) = class_counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Training(format!("class {cls} has only {n} sample(s)")));
    }

    let n = samples.len() as f64;
    let scaling: Vec<Scaling> = (0..dim)
        .map(|d| {
            let mean = samples.iter().map(|s| s.0[d]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.0[d] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            Scaling {
                mean,
                std: if std > 0.0 { std } else { 1.0 },
            }
        })
        .collect();
    let scaled: Vec<Vec<f64>> = samples.iter().map(|s| standardize(&s.0, &scaling)).collect();

    let classes: Vec<u32> = class_counts.keys().copied().collect();
    let mut machines = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let idx: Vec<usize> = (0..samples.len())
                .filter(|&i| samples[i].1 == pos || samples[i].1 == neg)
                .collect();
            let y: Vec<f64> = idx.iter().map(|&i| if samples[i].1 == pos { 1.0 } else { -1.0 }).collect();
            let gram: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| idx.iter().map(|&j| kernel.eval(&scaled[i], &scaled[j])).collect())
                .collect();
            let (alpha, rho) = solve_binary(&gram, &y, c, 1e-3);
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (k, &i) in idx.iter().enumerate() {
                if alpha[k] > 0.0 {
                    support.push(scaled[i].clone());
                    coef.push(alpha[k] * y[k]);
                }
            }
            machines.push(PairMachine {
                positive: pos,
                negative: neg,
                support,
                coef,
                rho,
            });
        }
    }
    let model = SvmModel {
        format_version: MODEL_FORMAT_VERSION,
        kernel,
        c,
        classes,
        scaling,
        machines,
    };
    let correct = samples
        .iter()
        .filter(|s| model.predict_raw(&s.0).ok() == Some(s.1))
        .count();
    let summary = TrainingSummary {
        class_counts,
        training_accuracy: correct as f64 / samples.len() as f64,
    };
    Ok((model, summary))
}
