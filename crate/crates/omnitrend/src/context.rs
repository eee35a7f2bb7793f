//! Exogenous context features x_ctx = [time, user, topic, geo, hist, plat]:
//! cyclic time encodings, causal author statistics, leak-safe out-of-fold
//! target encodings, rolling history means, and per-platform standardization.
//! Content embeddings never enter this module.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{log_transform, PostRecord};
use crate::error::{OmniError, Result};
use crate::synthgen::splitmix64;
use crate::tensor::Tensor;
use crate::timeutil::{hour_of_day, weekday, SECONDS_PER_DAY};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_SMOOTHING: f64 = 10.0;

/// Number of numeric (standardized) context columns before the platform
/// one-hot block: 4 time + 3 user + 1 topic + 1 geo + 2 hist.
pub const NUMERIC_CONTEXT_DIM: usize = 11;

/// (sin, cos) of hour-of-day and weekday phases, UTC.
pub fn encode_time_cyclic(timestamp: i64) -> [f64; 4] {
    let hour_phase = 2.0 * std::f64::consts::PI * hour_of_day(timestamp) as f64 / 24.0;
    let day_phase = 2.0 * std::f64::consts::PI * weekday(timestamp) as f64 / 7.0;
    [
        hour_phase.sin(),
        hour_phase.cos(),
        day_phase.sin(),
        day_phase.cos(),
    ]
}

/// Per-author post history sorted by (timestamp, post_id); every query is
/// restricted to posts strictly earlier than the query time.
#[derive(Debug, Clone)]
pub struct AuthorHistories {
    // author -> sorted (timestamp, post_id, y, y_tilde)
    map: BTreeMap<u64, Vec<(i64, u64, u64, f64)>>,
}

impl AuthorHistories {
    pub fn build(posts: &[PostRecord]) -> AuthorHistories {
        let mut map: BTreeMap<u64, Vec<(i64, u64, u64, f64)>> = BTreeMap::new();
        for p in posts {
            map.entry(p.author_id)
                .or_default()
                .push((p.timestamp, p.post_id, p.y, log_transform(p.y)));
        }
        for v in map.values_mut() {
            v.sort_unstable_by_key(|&(ts, id, _, _)| (ts, id));
        }
        AuthorHistories { map }
    }

    /// Author posts with timestamp strictly before `t`.
    fn before(&self, author_id: u64, t: i64) -> &[(i64, u64, u64, f64)] {
        let Some(v) = self.map.get(&author_id) else {
            return &[];
        };
        let end = v.partition_point(|&(ts, _, _, _)| ts < t);
        &v[..end]
    }

    /// log1p of (prior post count, posts in the trailing 30 days, mean raw y
    /// of the trailing 10 posts); zeros for an empty history.
    pub fn user_stats(&self, author_id: u64, t: i64) -> [f64; 3] {
        let past = self.before(author_id, t);
        if past.is_empty() {
            return [0.0, 0.0, 0.0];
        }
        let horizon = t - 30 * SECONDS_PER_DAY;
        let recent_count = past.iter().filter(|&&(ts, _, _, _)| ts >= horizon).count();
        [
            (past.len() as f64).ln_1p(),
            (recent_count as f64).ln_1p(),
            self.recent_mean_y(author_id, t).ln_1p(),
        ]
    }

    /// Mean raw y of the author's trailing 10 posts strictly before `t`;
    /// zero for an empty history.
    pub fn recent_mean_y(&self, author_id: u64, t: i64) -> f64 {
        let past = self.before(author_id, t);
        if past.is_empty() {
            return 0.0;
        }
        let tail = &past[past.len().saturating_sub(10)..];
        tail.iter().map(|&(_, _, y, _)| y as f64).sum::<f64>() / tail.len() as f64
    }

    /// Author mean of log-labels over the trailing 7 and 30 days, strictly
    /// before `t`; zeros when the window is empty.
    pub fn rolling_log_means(&self, author_id: u64, t: i64) -> [f64; 2] {
        let past = self.before(author_id, t);
        let mut out = [0.0; 2];
        for (slot, days) in [(0usize, 7i64), (1, 30)] {
            let horizon = t - days * SECONDS_PER_DAY;
            let window: Vec<f64> = past
                .iter()
                .filter(|&&(ts, _, _, _)| ts >= horizon)
                .map(|&(_, _, _, yt)| yt)
                .collect();
            if !window.is_empty() {
                out[slot] = window.iter().sum::<f64>() / window.len() as f64;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
struct TargetTable {
    // key -> per-fold (sum, count) of train y_tilde
    per_fold: BTreeMap<u32, Vec<(f64, f64)>>,
    total: BTreeMap<u32, (f64, f64)>,
}

impl TargetTable {
    fn fit(entries: &[(u32, f64, usize)], n_folds: usize) -> TargetTable {
        let mut t = TargetTable::default();
        for &(key, y, fold) in entries {
            let folds = t.per_fold.entry(key).or_insert_with(|| vec![(0.0, 0.0); n_folds]);
            folds[fold].0 += y;
            folds[fold].1 += 1.0;
            let tot = t.total.entry(key).or_insert((0.0, 0.0));
            tot.0 += y;
            tot.1 += 1.0;
        }
        t
    }

    fn encode(
        &self,
        key: u32,
        own_fold: Option<usize>,
        m: f64,
        global_mean: f64,
        fallback_mean: f64,
    ) -> f64 {
        let (sum, cnt) = match own_fold {
            // sum the other folds directly (never total minus own fold):
            // the result must be bitwise independent of the own-fold labels
            Some(f) => match self.per_fold.get(&key) {
                Some(folds) => folds
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != f)
                    .fold((0.0, 0.0), |(s, c), (_, &(fs, fc))| (s + fs, c + fc)),
                None => (0.0, 0.0),
            },
            None => match self.total.get(&key) {
                Some(&(s, c)) => (s, c),
                None => return fallback_mean,
            },
        };
        let denom = cnt + m;
        if denom <= 0.0 {
            // the key is unseen outside the excluded fold and m = 0; the
            // fallback must not involve the excluded fold's labels
            return fallback_mean;
        }
        (sum + m * global_mean) / denom
    }
}

/// Per-feature train-fit (mean, population std) per platform. Constant
/// columns standardize to zero (std clamped to 1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlatformStandardizer {
    stats: BTreeMap<u32, Vec<(f64, f64)>>,
}

impl PlatformStandardizer {
    /// Fits on rows of `matrix` whose index is in `rows`, grouped by the
    /// aligned platform ids; only the first `numeric_dim` columns are fit.
    pub fn fit(
        matrix: &Tensor,
        platforms: &[u32],
        rows: &[usize],
        numeric_dim: usize,
    ) -> Result<PlatformStandardizer> {
        if rows.is_empty() {
            return Err(OmniError::Data("standardizer fit on empty row set".into()));
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &r in rows {
            groups.entry(platforms[r]).or_default().push(r);
        }
        let mut stats = BTreeMap::new();
        for (plat, members) in groups {
            let n = members.len() as f64;
            let mut cols = Vec::with_capacity(numeric_dim);
            for c in 0..numeric_dim {
                let mean = members.iter().map(|&r| matrix.get(r, c)).sum::<f64>() / n;
                let var = members
                    .iter()
                    .map(|&r| (matrix.get(r, c) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                // std of 0.0 marks a constant column (output forced to 0)
                let std = var.sqrt();
                cols.push((mean, if std > 1e-12 { std } else { 0.0 }));
            }
            stats.insert(plat, cols);
        }
        Ok(PlatformStandardizer { stats })
    }

    /// Standardizes the first `numeric_dim` columns of every row in place;
    /// platforms unseen at fit time pass through centered at zero.
    pub fn apply(&self, matrix: &mut Tensor, platforms: &[u32]) {
        for r in 0..matrix.rows {
            let Some(cols) = self.stats.get(&platforms[r]) else {
                continue;
            };
            let row = matrix.row_mut(r);
            for (c, &(mean, std)) in cols.iter().enumerate() {
                row[c] = if std > 0.0 { (row[c] - mean) / std } else { 0.0 };
            }
        }
    }

    pub fn numeric_dim(&self) -> usize {
        self.stats.values().next().map_or(0, |v| v.len())
    }
}

/// Fitted encoder: fold assignments, OOF target tables for category and
/// location, and the per-platform standardizer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureEncoderState {
    pub n_folds: usize,
    pub smoothing: f64,
    folds: BTreeMap<u64, usize>,
    category: TargetTable,
    location: TargetTable,
    global_mean: f64,
    // per-fold (sum, count) of all train y_tilde, for leave-fold-out means
    global_per_fold: Vec<(f64, f64)>,
    /// Sorted train platform ids defining the one-hot block.
    pub platforms: Vec<u32>,
    standardizer: Option<PlatformStandardizer>,
}

impl FeatureEncoderState {
    /// Fits target tables on the train posts with hash-assigned folds.
    pub fn fit(train: &[PostRecord], n_folds: usize, smoothing: f64) -> Result<Self> {
        let assigned: Vec<(u64, usize)> = train
            .iter()
            .map(|p| (p.post_id, (splitmix64(p.post_id) % n_folds as u64) as usize))
            .collect();
        Self::fit_with_folds(train, &assigned, n_folds, smoothing)
    }

    /// Fits with explicit fold assignments (post_id -> fold index).
    pub fn fit_with_folds(
        train: &[PostRecord],
        fold_assignment: &[(u64, usize)],
        n_folds: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(OmniError::Data("encoder fit on empty train set".into()));
        }
        if n_folds < 2 {
            return Err(OmniError::Config("need at least 2 folds".into()));
        }
        if smoothing < 0.0 {
            return Err(OmniError::Config("smoothing must be >= 0".into()));
        }
        let folds: BTreeMap<u64, usize> = fold_assignment.iter().copied().collect();
        for (_, f) in fold_assignment {
            if *f >= n_folds {
                return Err(OmniError::Config(format!(
                    "fold index {f} out of range for {n_folds} folds"
                )));
            }
        }
        let mut cat_entries = Vec::with_capacity(train.len());
        let mut loc_entries = Vec::with_capacity(train.len());
        let mut sum = 0.0;
        let mut global_per_fold = vec![(0.0, 0.0); n_folds];
        for p in train {
            let fold = *folds.get(&p.post_id).ok_or_else(|| {
                OmniError::Data(format!("post {} has no fold assignment", p.post_id))
            })?;
            let y = log_transform(p.y);
            cat_entries.push((p.category_id, y, fold));
            loc_entries.push((p.location_id, y, fold));
            global_per_fold[fold].0 += y;
            global_per_fold[fold].1 += 1.0;
            sum += y;
        }
        let mut platforms: Vec<u32> = train.iter().map(|p| p.platform_id).collect();
        platforms.sort_unstable();
        platforms.dedup();
        Ok(FeatureEncoderState {
            n_folds,
            smoothing,
            folds,
            category: TargetTable::fit(&cat_entries, n_folds),
            location: TargetTable::fit(&loc_entries, n_folds),
            global_mean: sum / train.len() as f64,
            global_per_fold,
            platforms,
            standardizer: None,
        })
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    fn own_fold(&self, post_id: u64) -> Option<usize> {
        self.folds.get(&post_id).copied()
    }

    /// Leave-fold-out global mean used as the zero-denominator fallback for
    /// train posts, so the fallback is leak-free even at m = 0.
    fn fallback_mean(&self, own_fold: Option<usize>) -> f64 {
        match own_fold {
            Some(f) => {
                let (sum, cnt) = self
                    .global_per_fold
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != f)
                    .fold((0.0, 0.0), |(s, c), (_, &(fs, fc))| (s + fs, c + fc));
                if cnt > 0.0 {
                    sum / cnt
                } else {
                    self.global_mean
                }
            }
            None => self.global_mean,
        }
    }

    /// OOF for train posts (identified by their fold assignment), all-train
    /// table for everything else; unseen keys fall back to the global mean.
    pub fn encode_category(&self, post_id: u64, category_id: u32) -> f64 {
        let fold = self.own_fold(post_id);
        self.category.encode(
            category_id,
            fold,
            self.smoothing,
            self.global_mean,
            self.fallback_mean(fold),
        )
    }

    pub fn encode_location(&self, post_id: u64, location_id: u32) -> f64 {
        let fold = self.own_fold(post_id);
        self.location.encode(
            location_id,
            fold,
            self.smoothing,
            self.global_mean,
            self.fallback_mean(fold),
        )
    }

    pub fn standardizer(&self) -> Option<&PlatformStandardizer> {
        self.standardizer.as_ref()
    }
}

/// Assembled context features for a post set: matrix rows align with the
/// input posts; the first [`NUMERIC_CONTEXT_DIM`] columns are standardized,
/// the trailing block is the platform one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures {
    pub post_ids: Vec<u64>,
    pub platforms: Vec<u32>,
    pub names: Vec<String>,
    pub matrix: Tensor,
    pub numeric_dim: usize,
}

pub fn context_column_names(platforms: &[u32]) -> Vec<String> {
    let mut names = vec![
        "time.hour_sin".into(),
        "time.hour_cos".into(),
        "time.weekday_sin".into(),
        "time.weekday_cos".into(),
        "user.prior_posts".into(),
        "user.posts_30d".into(),
        "user.recent_mean_y".into(),
        "topic.category_te".into(),
        "geo.location_te".into(),
        "hist.log_mean_7d".into(),
        "hist.log_mean_30d".into(),
    ];
    for p in platforms {
        names.push(format!("plat.platform_{p}"));
    }
    names
}

/// Raw (unstandardized) context row for one post.
fn raw_context_row(
    post: &PostRecord,
    histories: &AuthorHistories,
    state: &FeatureEncoderState,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(NUMERIC_CONTEXT_DIM + state.platforms.len());
    row.extend_from_slice(&encode_time_cyclic(post.timestamp));
    row.extend_from_slice(&histories.user_stats(post.author_id, post.timestamp));
    row.push(state.encode_category(post.post_id, post.category_id));
    row.push(state.encode_location(post.post_id, post.location_id));
    row.extend_from_slice(&histories.rolling_log_means(post.author_id, post.timestamp));
    for &p in &state.platforms {
        row.push((p == post.platform_id) as u8 as f64);
    }
    row
}

/// Fits the encoder on the train rows and assembles standardized context
/// features for every post. `train_rows` indexes into `posts`.
pub fn assemble_context_features(
    posts: &[PostRecord],
    train_rows: &[usize],
    n_folds: usize,
    smoothing: f64,
) -> Result<(FeatureEncoderState, ContextFeatures)> {
    let train: Vec<PostRecord> = train_rows.iter().map(|&i| posts[i].clone()).collect();
    let mut state = FeatureEncoderState::fit(&train, n_folds, smoothing)?;
    let histories = AuthorHistories::build(posts);

    let width = NUMERIC_CONTEXT_DIM + state.platforms.len();
    let mut matrix = Tensor::zeros(posts.len(), width);
    for (i, p) in posts.iter().enumerate() {
        let row = raw_context_row(p, &histories, &state);
        matrix.row_mut(i).copy_from_slice(&row);
    }
    if !matrix.all_finite() {
        return Err(OmniError::Numeric("non-finite context feature".into()));
    }

    let platforms: Vec<u32> = posts.iter().map(|p| p.platform_id).collect();
    let standardizer =
        PlatformStandardizer::fit(&matrix, &platforms, train_rows, NUMERIC_CONTEXT_DIM)?;
    standardizer.apply(&mut matrix, &platforms);
    state.standardizer = Some(standardizer);

    let names = context_column_names(&state.platforms);
    Ok((
        state,
        ContextFeatures {
            post_ids: posts.iter().map(|p| p.post_id).collect(),
            platforms,
            names,
            matrix,
            numeric_dim: NUMERIC_CONTEXT_DIM,
        },
    ))
}

/// CSV export: post_id column followed by every named feature column.
pub fn write_features_csv(path: &Path, features: &ContextFeatures) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "post_id")?;
    for n in &features.names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, id) in features.post_ids.iter().enumerate() {
        write!(w, "{id}")?;
        for &x in features.matrix.row(i) {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn post(
        post_id: u64,
        author_id: u64,
        category_id: u32,
        timestamp: i64,
        y: u64,
    ) -> PostRecord {
        PostRecord {
            post_id,
            platform_id: 0,
            author_id,
            category_id,
            location_id: 0,
            timestamp,
            y,
            has_image: true,
            has_text: true,
            has_video: false,
        }
    }

    #[test]
    fn time_phase_zero() {
        // epoch is Thursday 00:00 UTC; pick a Monday midnight instead
        let monday = 4 * SECONDS_PER_DAY;
        let t = encode_time_cyclic(monday);
        assert_relative_eq!(t[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(t[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn time_quarter_phase() {
        let monday_6am = 4 * SECONDS_PER_DAY + 6 * 3600;
        let t = encode_time_cyclic(monday_6am);
        assert_relative_eq!(t[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(t[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn user_stats_empty_history() {
        let h = AuthorHistories::build(&[post(1, 9, 0, 1000, 5)]);
        assert_eq!(h.user_stats(9, 1000), [0.0, 0.0, 0.0]);
        assert_eq!(h.user_stats(42, 5000), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn user_stats_single_prior_post() {
        let h = AuthorHistories::build(&[post(1, 9, 0, 1000, 99)]);
        let s = h.user_stats(9, 2000);
        assert_relative_eq!(s[0], 2.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(s[2], 100.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn user_stats_ignore_future_posts() {
        let base = vec![post(1, 9, 0, 1000, 10), post(2, 9, 0, 2000, 20)];
        let mut with_future = base.clone();
        with_future.push(post(3, 9, 0, 2500, 1_000_000));
        let t = 2500;
        let h1 = AuthorHistories::build(&base);
        let h2 = AuthorHistories::build(&with_future);
        assert_eq!(h1.user_stats(9, t), h2.user_stats(9, t));
        assert_eq!(h1.rolling_log_means(9, t), h2.rolling_log_means(9, t));
    }

    #[test]
    fn rolling_means_respect_windows() {
        let t0 = 100 * SECONDS_PER_DAY;
        let posts = vec![
            post(1, 9, 0, t0 - 20 * SECONDS_PER_DAY, 7), // only in 30d window
            post(2, 9, 0, t0 - 2 * SECONDS_PER_DAY, 3),  // in both
        ];
        let h = AuthorHistories::build(&posts);
        let m = h.rolling_log_means(9, t0);
        assert_relative_eq!(m[0], 4.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(m[1], (8.0f64.ln() + 4.0f64.ln()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn oof_hand_example() {
        // m = 0, 2 folds; category 7 log-labels fold0 {ln2, ln4}, fold1 {ln6}:
        // fold0 posts see only fold1 and vice versa
        let train = vec![
            post(1, 1, 7, 100, 1),
            post(2, 2, 7, 200, 3),
            post(3, 3, 7, 300, 5),
        ];
        let folds = vec![(1, 0), (2, 0), (3, 1)];
        let state = FeatureEncoderState::fit_with_folds(&train, &folds, 2, 0.0).unwrap();
        let (l2, l4, l6) = (2f64.ln(), 4f64.ln(), 6f64.ln());
        let tol = 1e-12;
        assert_relative_eq!(state.encode_category(1, 7), l6, epsilon = tol);
        assert_relative_eq!(state.encode_category(2, 7), l6, epsilon = tol);
        assert_relative_eq!(state.encode_category(3, 7), (l2 + l4) / 2.0, epsilon = tol);
        // a non-train post id uses the all-train table
        assert_relative_eq!(state.encode_category(99, 7), (l2 + l4 + l6) / 3.0, epsilon = tol);
    }

    #[test]
    fn oof_unseen_category_gets_global_mean() {
        let train = vec![post(1, 1, 7, 100, 10), post(2, 2, 8, 200, 20)];
        let state = FeatureEncoderState::fit(&train, 2, 0.0).unwrap();
        assert_eq!(state.encode_category(50, 999), state.global_mean());
    }

    #[test]
    fn oof_whole_category_in_own_fold_falls_back() {
        // category 7 lives entirely in fold 0; with m = 0 its fold-0 posts
        // would divide by zero without the global-mean fallback
        let train = vec![post(1, 1, 7, 100, 10), post(2, 2, 8, 200, 20)];
        let folds = vec![(1, 0), (2, 1)];
        let state = FeatureEncoderState::fit_with_folds(&train, &folds, 2, 0.0).unwrap();
        // the fallback is the leave-fold-out mean, here fold 1's only label
        assert_eq!(state.encode_category(1, 7), log_transform(20));
    }

    #[test]
    fn oof_large_smoothing_approaches_global_mean() {
        let train: Vec<PostRecord> = (0..40)
            .map(|i| post(i, i, (i % 4) as u32, 100 * i as i64, i * 3))
            .collect();
        let state = FeatureEncoderState::fit(&train, 5, 1e9).unwrap();
        for p in &train {
            let e = state.encode_category(p.post_id, p.category_id);
            assert!((e - state.global_mean()).abs() < 1e-6);
        }
    }

    #[test]
    fn oof_no_leak_own_label() {
        // with m = 0, a post's own encoding excludes its fold entirely, so
        // perturbing its own label changes nothing
        for corpus_seed in 0..10u64 {
            let train: Vec<PostRecord> = (0..30)
                .map(|i| {
                    let r = splitmix64(corpus_seed * 1000 + i);
                    post(i, r % 7, (r % 3) as u32, 100 * i as i64, r % 50)
                })
                .collect();
            let s1 = FeatureEncoderState::fit(&train, 5, 0.0).unwrap();
            for victim in 0..train.len() {
                let mut mutated = train.clone();
                mutated[victim].y += 1000;
                let s2 = FeatureEncoderState::fit(&mutated, 5, 0.0).unwrap();
                let p = &train[victim];
                assert_eq!(
                    s1.encode_category(p.post_id, p.category_id),
                    s2.encode_category(p.post_id, p.category_id),
                );
                assert_eq!(
                    s1.encode_location(p.post_id, p.location_id),
                    s2.encode_location(p.post_id, p.location_id),
                );
            }
        }
    }

    fn random_posts(n: usize, seed: u64) -> Vec<PostRecord> {
        (0..n as u64)
            .map(|i| {
                let r = splitmix64(seed ^ splitmix64(i));
                let mut p = post(i, r % 9, (r % 5) as u32, (i as i64) * 3600, r % 200);
                p.location_id = ((r >> 8) % 4) as u32;
                p
            })
            .collect()
    }

    #[test]
    fn standardized_train_columns_are_centered() {
        let posts = random_posts(60, 3);
        let train_rows: Vec<usize> = (0..48).collect();
        let (_, feats) = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        for c in 0..feats.numeric_dim {
            let vals: Vec<f64> = train_rows.iter().map(|&r| feats.matrix.get(r, c)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "col {c} mean {mean}");
            // constant columns become all-zero, otherwise unit variance
            if var > 1e-18 {
                assert!((var.sqrt() - 1.0).abs() < 1e-9, "col {c} std {}", var.sqrt());
            } else {
                assert!(vals.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let posts = random_posts(40, 4);
        let train_rows: Vec<usize> = (0..32).collect();
        let a = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        let b = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mutating_later_posts_keeps_earlier_rows() {
        // mutations beyond the train region leave earlier rows bitwise intact
        let posts = random_posts(50, 5);
        let train_rows: Vec<usize> = (0..40).collect();
        let (_, base) = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        let mut mutated = posts.clone();
        for p in &mut mutated[45..] {
            p.y = p.y.wrapping_mul(7) + 123;
            p.category_id += 17;
        }
        let (_, changed) = assemble_context_features(&mutated, &train_rows, 5, 10.0).unwrap();
        for r in 0..45 {
            assert_eq!(base.matrix.row(r), changed.matrix.row(r), "row {r}");
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let posts = random_posts(10, 6);
        let train_rows: Vec<usize> = (0..8).collect();
        let (_, feats) = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        write_features_csv(&path, &feats).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("post_id,time.hour_sin,"));
        assert_eq!(lines.count(), 10);
    }
}
