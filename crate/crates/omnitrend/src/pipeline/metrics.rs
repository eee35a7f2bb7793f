//! Metrics and diagnostics: tie-aware Spearman rank correlation, log-scale
//! error metrics, the rank–rank independence grid, and label-distribution
//! comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

/// ỹ̂ = α̂ + φ̂ and ŷ = exp(ỹ̂) − 1 clamped at zero.
pub fn combine_prediction(alpha: f64, phi: f64) -> (f64, f64) {
    let y_tilde = alpha + phi;
    (y_tilde, (y_tilde.exp() - 1.0).max(0.0))
}

/// Average ranks (1-based); ties receive the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks. Returns
/// (src, degenerate); degenerate inputs (constant vector) report 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(OmniError::Data("spearman needs two aligned vectors, n >= 2".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Ok((0.0, true));
    }
    Ok((cov / (va * vb).sqrt(), false))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TercileMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub src: f64,
    pub src_degenerate: bool,
    /// Per-tercile breakdown over the split's true log-labels (low/mid/high).
    pub terciles: Vec<TercileMetrics>,
}

/// Log-scale MSE/MAE and the tie-aware SRC over one split.
pub fn evaluate(preds: &[f64], labels: &[f64]) -> Result<SplitMetrics> {
    if preds.len() != labels.len() || preds.len() < 2 {
        return Err(OmniError::Data("evaluate needs two aligned vectors, n >= 2".into()));
    }
    let n = preds.len();
    let mse = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).powi(2))
        .sum::<f64>()
        / n as f64;
    let mae = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum::<f64>()
        / n as f64;
    let (src, degenerate) = spearman(preds, labels)?;

    // tercile breakdown by the true labels
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(a.cmp(&b)));
    let mut terciles = Vec::with_capacity(3);
    for t in 0..3 {
        let lo = t * n / 3;
        let hi = (t + 1) * n / 3;
        let members = &order[lo..hi];
        let tn = members.len().max(1) as f64;
        terciles.push(TercileMetrics {
            n: members.len(),
            mse: members
                .iter()
                .map(|&i| (preds[i] - labels[i]).powi(2))
                .sum::<f64>()
                / tn,
            mae: members
                .iter()
                .map(|&i| (preds[i] - labels[i]).abs())
                .sum::<f64>()
                / tn,
        });
    }
    Ok(SplitMetrics {
        n,
        mse,
        mae,
        src,
        src_degenerate: degenerate,
        terciles,
    })
}

/// 10x10 normalized rank–rank density plus the cross-Spearman. Under
/// independence every cell is close to 0.01.
pub fn rank_rank_diag(alpha: &[f64], phi: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    if alpha.len() != phi.len() || alpha.len() < 2 {
        return Err(OmniError::Data("rank-rank diag needs aligned vectors".into()));
    }
    let n = alpha.len();
    let ra = average_ranks(alpha);
    let rb = average_ranks(phi);
    let mut grid = vec![vec![0.0f64; 10]; 10];
    for (x, y) in ra.iter().zip(&rb) {
        let cx = (((x - 0.5) / n as f64) * 10.0).floor().clamp(0.0, 9.0) as usize;
        let cy = (((y - 0.5) / n as f64) * 10.0).floor().clamp(0.0, 9.0) as usize;
        grid[cx][cy] += 1.0 / n as f64;
    }
    let (src, _) = spearman(alpha, phi)?;
    Ok((grid, src))
}

/// 1-Wasserstein distance between equal-length empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(OmniError::Data("wasserstein needs equal nonempty samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    Ok(sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DistributionDiag {
    pub bin_edges: Vec<f64>,
    pub truth: Vec<f64>,
    pub content_only: Vec<f64>,
    pub full: Vec<f64>,
    pub wasserstein_content_only: f64,
    pub wasserstein_full: f64,
}

/// Histograms of the three series over 20 shared bins spanning the pooled
/// range, plus the Wasserstein-1 distance of each prediction series to truth.
pub fn distribution_diag(
    truth: &[f64],
    content_only: &[f64],
    full: &[f64],
) -> Result<DistributionDiag> {
    if truth.len() != content_only.len() || truth.len() != full.len() || truth.is_empty() {
        return Err(OmniError::Data("distribution diag needs aligned series".into()));
    }
    const BINS: usize = 20;
    let pooled = truth.iter().chain(content_only).chain(full);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in pooled {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / BINS as f64;
    let edges: Vec<f64> = (0..=BINS).map(|i| lo + width * i as f64).collect();
    let hist = |series: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; BINS];
        for &v in series {
            let b = (((v - lo) / width).floor() as usize).min(BINS - 1);
            h[b] += 1.0 / series.len() as f64;
        }
        h
    };
    Ok(DistributionDiag {
        bin_edges: edges,
        truth: hist(truth),
        content_only: hist(content_only),
        full: hist(full),
        wasserstein_content_only: wasserstein1(content_only, truth)?,
        wasserstein_full: wasserstein1(full, truth)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub splits: BTreeMap<String, SplitMetrics>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// Canonical serialization: sorted keys, deterministic float formatting.
    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)
            .map_err(|e| OmniError::Format(format!("report encode: {e}")))?;
        serde_json::to_string_pretty(&value)
            .map_err(|e| OmniError::Format(format!("report encode: {e}")))
    }
}

/// FNV-1a over bytes, hex-encoded; stable across runs and platforms.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
