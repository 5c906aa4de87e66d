//! Scene-level evaluation metrics.

use crate::error::{Error, Result};
use crate::harness::config::AccuracyMode;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub logloss: f64,
}

/// Argmax with ties broken toward the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean cross-entropy over (true scene, predicted distribution)
/// pairs. Macro accuracy averages per-class accuracies over the classes that
/// appear; micro counts all samples equally.
pub fn compute_metrics(
    truths: &[usize],
    probs: &[Vec<f64>],
    c_s: usize,
    mode: AccuracyMode,
) -> Result<Metrics> {
    if truths.len() != probs.len() || truths.is_empty() {
        return Err(Error::Contract(format!(
            "metrics need matching non-empty inputs, got {} truths and {} predictions",
            truths.len(),
            probs.len()
        )));
    }
    let mut correct = vec![0usize; c_s];
    let mut total = vec![0usize; c_s];
    let mut logloss_sum = 0.0;
    for (&t, p) in truths.iter().zip(probs) {
        if t >= c_s || p.len() != c_s {
            return Err(Error::Contract(format!(
                "scene {t} or prediction width {} out of range for c_s={c_s}",
                p.len()
            )));
        }
        total[t] += 1;
        if argmax(p) == t {
            correct[t] += 1;
        }
        logloss_sum -= p[t].clamp(1e-12, 1.0).ln();
    }
    let acc = match mode {
        AccuracyMode::Macro => {
            let classes: Vec<usize> = (0..c_s).filter(|&c| total[c] > 0).collect();
            classes
                .iter()
                .map(|&c| correct[c] as f64 / total[c] as f64)
                .sum::<f64>()
                / classes.len() as f64
        }
        AccuracyMode::Micro => {
            correct.iter().sum::<usize>() as f64 / truths.len() as f64
        }
    };
    Ok(Metrics {
        acc,
        logloss: logloss_sum / truths.len() as f64,
    })
}
