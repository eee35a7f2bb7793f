//! Canonical post data model, log-label transforms, chronological splitting,
//! per-platform label scaling, and popularity-bin sample weights.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

/// One social post with metadata, engagement count, and modality flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: u64,
    pub platform_id: u32,
    pub author_id: u64,
    pub category_id: u32,
    pub location_id: u32,
    /// Seconds since epoch, strictly positive.
    pub timestamp: i64,
    /// Engagement count.
    pub y: u64,
    pub has_image: bool,
    pub has_text: bool,
    pub has_video: bool,
}

impl PostRecord {
    pub fn validate(&self) -> Result<()> {
        if self.timestamp <= 0 {
            return Err(OmniError::Data(format!(
                "post {}: timestamp must be strictly positive",
                self.post_id
            )));
        }
        if !(self.has_image || self.has_text || self.has_video) {
            return Err(OmniError::Data(format!(
                "post {}: at least one modality flag must be set",
                self.post_id
            )));
        }
        Ok(())
    }

    pub fn log_label(&self) -> f64 {
        log_transform(self.y)
    }
}

/// y -> ln(1 + y), the log-scale popularity label.
pub fn log_transform(y: u64) -> f64 {
    (1.0 + y as f64).ln()
}

/// Inverse of [`log_transform`] on the real line.
pub fn inverse_log_transform(y_tilde: f64) -> f64 {
    y_tilde.exp() - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

/// Chronological train/val/test assignment keyed by post id.
#[derive(Debug, Clone)]
pub struct SplitAssignment {
    roles: BTreeMap<u64, SplitRole>,
}

impl SplitAssignment {
    pub fn role(&self, post_id: u64) -> Option<SplitRole> {
        self.roles.get(&post_id).copied()
    }

    pub fn ids_with_role(&self, role: SplitRole) -> Vec<u64> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

/// Sorts by (timestamp, post_id) and partitions by cumulative ratio.
pub fn chronological_split(posts: &[PostRecord], ratios: (u32, u32, u32)) -> Result<SplitAssignment> {
    if posts.len() < 3 {
        return Err(OmniError::Data(format!(
            "chronological split needs at least 3 posts, got {}",
            posts.len()
        )));
    }
    let (a, b, c) = ratios;
    let total = (a + b + c) as u64;
    if total == 0 || a == 0 || b == 0 || c == 0 {
        return Err(OmniError::Config("split ratios must all be positive".into()));
    }
    let mut order: Vec<&PostRecord> = posts.iter().collect();
    order.sort_by_key(|p| (p.timestamp, p.post_id));
    let n = order.len() as u64;
    let train_end = (n * a as u64 / total) as usize;
    let val_end = (n * (a + b) as u64 / total) as usize;
    let mut roles = BTreeMap::new();
    for (i, p) in order.iter().enumerate() {
        let role = if i < train_end {
            SplitRole::Train
        } else if i < val_end {
            SplitRole::Val
        } else {
            SplitRole::Test
        };
        roles.insert(p.post_id, role);
    }
    Ok(SplitAssignment { roles })
}

/// Per-platform mean/std of train log-labels; population std.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelScaler {
    stats: BTreeMap<u32, (f64, f64)>,
}

impl LabelScaler {
    /// Fits on (platform_id, y_tilde) pairs from the train split only.
    pub fn fit(train: &[(u32, f64)]) -> Result<Self> {
        let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for &(plat, y) in train {
            groups.entry(plat).or_default().push(y);
        }
        let mut stats = BTreeMap::new();
        for (plat, ys) in groups {
            if ys.len() < 2 {
                return Err(OmniError::Data(format!(
                    "platform {plat}: need at least 2 train posts to fit scaler"
                )));
            }
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 0.0 {
                return Err(OmniError::Data(format!(
                    "platform {plat}: constant train labels, cannot standardize"
                )));
            }
            stats.insert(plat, (mean, std));
        }
        Ok(LabelScaler { stats })
    }

    pub fn platforms(&self) -> impl Iterator<Item = u32> + '_ {
        self.stats.keys().copied()
    }

    pub fn stats(&self, platform: u32) -> Option<(f64, f64)> {
        self.stats.get(&platform).copied()
    }

    pub fn apply(&self, platform: u32, y_tilde: f64) -> Result<f64> {
        let (mean, std) = self.stats.get(&platform).ok_or_else(|| {
            OmniError::Data(format!("scaler has no stats for platform {platform}"))
        })?;
        Ok((y_tilde - mean) / std)
    }

    pub fn invert(&self, platform: u32, standardized: f64) -> Result<f64> {
        let (mean, std) = self.stats.get(&platform).ok_or_else(|| {
            OmniError::Data(format!("scaler has no stats for platform {platform}"))
        })?;
        Ok(standardized * std + mean)
    }
}

/// Tercile edges of train y_tilde with the fixed (1.0, 1.5, 3.0) weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BinWeights {
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub weights: (f64, f64, f64),
}

impl BinWeights {
    pub const DEFAULT_WEIGHTS: (f64, f64, f64) = (1.0, 1.5, 3.0);

    /// Tercile thresholds (33.3% / 66.7% train quantiles).
    pub fn fit(train_labels: &[f64]) -> Result<Self> {
        if train_labels.is_empty() {
            return Err(OmniError::Data("cannot fit bins on empty train set".into()));
        }
        let mut sorted = train_labels.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lower = quantile(&sorted, 1.0 / 3.0);
        let upper = quantile(&sorted, 2.0 / 3.0);
        Ok(BinWeights {
            lower_edge: lower,
            upper_edge: upper,
            weights: Self::DEFAULT_WEIGHTS,
        })
    }

    /// Edges inclusive on the lower bin: y <= lower -> low, y <= upper -> mid.
    pub fn weight(&self, y_tilde: f64) -> f64 {
        if y_tilde <= self.lower_edge {
            self.weights.0
        } else if y_tilde <= self.upper_edge {
            self.weights.1
        } else {
            self.weights.2
        }
    }
}

/// Type-1 empirical quantile: Q(q) = sorted[ceil(q*n) - 1]. With n = 9 and
/// q = 1/3, 2/3 this yields the 3rd and 6th order statistics, i.e. equal-mass
/// terciles under the inclusive-lower-edge rule.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

/// Writes corpus.jsonl: one object per line.
pub fn write_posts_jsonl(path: &Path, posts: &[PostRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in posts {
        serde_json::to_writer(&mut w, p)
            .map_err(|e| OmniError::Format(format!("jsonl encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_posts_jsonl(path: &Path) -> Result<Vec<PostRecord>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut posts = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PostRecord = serde_json::from_str(&line)
            .map_err(|e| OmniError::Format(format!("corpus.jsonl line {}: {e}", i + 1)))?;
        p.validate()?;
        if !seen.insert(p.post_id) {
            return Err(OmniError::Format(format!("duplicate post_id {}", p.post_id)));
        }
        posts.push(p);
    }
    Ok(posts)
}
