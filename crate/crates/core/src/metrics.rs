//! Anomaly scores, AUROC and loss-curve statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{lmse_element, DEFAULT_EPSILON};

/// Per-sample reconstruction score; higher means more anomalous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ScoreKind {
    #[default]
    Mse,
    Lmse {
        #[serde(default = "default_eps")]
        epsilon: f64,
    },
}

fn default_eps() -> f64 {
    DEFAULT_EPSILON
}

/// Score of one sample: pixel-mean squared error, or pixel-mean LMSE.
pub fn anomaly_score(y: &[f64], yhat: &[f64], kind: ScoreKind) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "sample has {} target and {} predicted values",
            y.len(),
            yhat.len()
        )));
    }
    let e = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b));
    let total: f64 = match kind {
        ScoreKind::Mse => e.sum(),
        ScoreKind::Lmse { epsilon } => e.map(|e| lmse_element(e.min(1.0), epsilon)).sum(),
    };
    Ok(total / y.len() as f64)
}

/// Scores for consecutive samples of `sample_len` values each.
pub fn anomaly_scores(
    y: &[f64],
    yhat: &[f64],
    sample_len: usize,
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    if y.len() != yhat.len() || sample_len == 0 || !y.len().is_multiple_of(sample_len) {
        return Err(Error::Dimension(format!(
            "cannot split {} / {} values into samples of {sample_len}",
            y.len(),
            yhat.len()
        )));
    }
    y.chunks(sample_len)
        .zip(yhat.chunks(sample_len))
        .map(|(a, b)| anomaly_score(a, b, kind))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub normal: Vec<f64>,
    pub anomalous: Vec<f64>,
}

impl ScoreSet {
    pub fn new(normal: Vec<f64>, anomalous: Vec<f64>) -> Self {
        ScoreSet { normal, anomalous }
    }

    pub fn from_labels(scores: &[f64], is_anomalous: &[bool]) -> Result<Self> {
        if scores.len() != is_anomalous.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} labels",
                scores.len(),
                is_anomalous.len()
            )));
        }
        let mut set = ScoreSet::default();
        for (&s, &a) in scores.iter().zip(is_anomalous) {
            if a {
                set.anomalous.push(s);
            } else {
                set.normal.push(s);
            }
        }
        Ok(set)
    }

    pub fn swapped(&self) -> Self {
        ScoreSet {
            normal: self.anomalous.clone(),
            anomalous: self.normal.clone(),
        }
    }
}

/// Area under the ROC curve via the Mann–Whitney rank sum:
/// `P(anomalous > normal) + P(tie) / 2`. Ties receive their average rank.
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    let (n, m) = (scores.normal.len(), scores.anomalous.len());
    if n == 0 || m == 0 {
        return Err(Error::Contract(format!(
            "AUROC needs both classes, got {n} normal and {m} anomalous scores"
        )));
    }
    let mut all: Vec<(f64, bool)> = scores
        .normal
        .iter()
        .map(|&s| (s, false))
        .chain(scores.anomalous.iter().map(|&s| (s, true)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Contract("AUROC over NaN scores".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the rank sum keeps average ranks integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share (i + 1 + j) / 2
        let avg_x2 = (i + 1 + j) as u128;
        let hits = all[i..j].iter().filter(|(_, a)| *a).count() as u128;
        rank_sum_x2 += avg_x2 * hits;
        i = j;
    }
    let m128 = m as u128;
    let u_x2 = rank_sum_x2 - m128 * (m128 + 1);
    Ok(u_x2 as f64 / (2.0 * n as f64 * m as f64))
}

/// Per-epoch spread of loss curves across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub runs: usize,
}

/// Curves of unequal length are truncated to the shortest.
pub fn convergence_stats(curves: &[Vec<f64>]) -> Result<ConvergenceStats> {
    if curves.is_empty() {
        return Err(Error::Contract("convergence_stats over zero runs".into()));
    }
    let epochs = curves.iter().map(Vec::len).min().unwrap_or(0);
    let runs = curves.len() as f64;
    let mut stats = ConvergenceStats {
        mean: Vec::with_capacity(epochs),
        std: Vec::with_capacity(epochs),
        min: Vec::with_capacity(epochs),
        max: Vec::with_capacity(epochs),
        runs: curves.len(),
    };
    for e in 0..epochs {
        let col = || curves.iter().map(move |c| c[e]);
        let mean = col().sum::<f64>() / runs;
        let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / runs;
        stats.mean.push(mean);
        stats.std.push(var.sqrt());
        stats.min.push(col().fold(f64::INFINITY, f64::min));
        stats.max.push(col().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(stats)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
