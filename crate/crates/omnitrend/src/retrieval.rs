//! Past-only exact top-K retrieval over fused content embeddings, temporal
//! decay weighting, and the weighted neighborhood statistics appended to the
//! context vector.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::context::{AuthorHistories, ContextFeatures, PlatformStandardizer};
use crate::corpus::PostRecord;
use crate::error::{OmniError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TOP_K: usize = 10;
/// Temporal decay constant, seconds (one day).
pub const DEFAULT_TAU_DECAY: f64 = 86_400.0;

/// Immutable per-platform index: rows sorted by (timestamp, post_id),
/// embeddings unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub platform_id: u32,
    pub dim: usize,
    post_ids: Vec<u64>,
    timestamps: Vec<i64>,
    /// Raw engagement counts y_j.
    ys: Vec<f64>,
    /// a_j: author mean y over the trailing 10 posts before post j.
    author_recent: Vec<f64>,
    embeddings: Tensor,
}

/// One retrieved neighbor with its similarity and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub post_id: u64,
    pub similarity: f64,
    /// t_query - t_neighbor, seconds, always > 0.
    pub delta_t: f64,
    pub y: f64,
    pub author_recent: f64,
}

impl EmbeddingIndex {
    /// Builds the index for one platform. `posts` and `embeddings` rows are
    /// aligned; `histories` must cover the same corpus so a_j is causal.
    pub fn build(
        platform_id: u32,
        posts: &[PostRecord],
        embeddings: &Tensor,
        histories: &AuthorHistories,
    ) -> Result<EmbeddingIndex> {
        if posts.len() != embeddings.rows {
            return Err(OmniError::Data(format!(
                "index build: {} posts vs {} embedding rows",
                posts.len(),
                embeddings.rows
            )));
        }
        let mut order: Vec<usize> = (0..posts.len())
            .filter(|&i| posts[i].platform_id == platform_id)
            .collect();
        order.sort_unstable_by_key(|&i| (posts[i].timestamp, posts[i].post_id));

        let dim = embeddings.cols;
        let mut index = EmbeddingIndex {
            platform_id,
            dim,
            post_ids: Vec::with_capacity(order.len()),
            timestamps: Vec::with_capacity(order.len()),
            ys: Vec::with_capacity(order.len()),
            author_recent: Vec::with_capacity(order.len()),
            embeddings: Tensor::zeros(order.len(), dim),
        };
        for (row, &i) in order.iter().enumerate() {
            let p = &posts[i];
            let mut e = embeddings.row(i).to_vec();
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                return Err(OmniError::Data(format!(
                    "zero embedding for post {}",
                    p.post_id
                )));
            }
            if (norm - 1.0).abs() > 1e-9 {
                for x in e.iter_mut() {
                    *x /= norm;
                }
            }
            index.embeddings.row_mut(row).copy_from_slice(&e);
            index.post_ids.push(p.post_id);
            index.timestamps.push(p.timestamp);
            index.ys.push(p.y as f64);
            index
                .author_recent
                .push(histories.recent_mean_y(p.author_id, p.timestamp));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.post_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.post_ids.is_empty()
    }

    /// Exact top-K past neighbors by cosine similarity among posts strictly
    /// earlier than `t_query`; ties by earlier timestamp then smaller id.
    pub fn query_past_topk(&self, query: &[f64], t_query: i64, k: usize) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        // rows are time-sorted, so the causal prefix is contiguous
        let end = self.timestamps.partition_point(|&ts| ts < t_query);
        // fixed-size sorted keep buffer: better similarity first, ties by
        // (timestamp, post_id) ascending
        let mut keep: Vec<(f64, i64, u64, usize)> = Vec::with_capacity(k + 1);
        for row in 0..end {
            let s: f64 = self
                .embeddings
                .row(row)
                .iter()
                .zip(query)
                .map(|(a, b)| a * b)
                .sum();
            let key = (s, self.timestamps[row], self.post_ids[row], row);
            let better = |a: &(f64, i64, u64, usize), b: &(f64, i64, u64, usize)| {
                a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
            };
            if keep.len() == k && !better(&key, keep.last().unwrap()) {
                continue;
            }
            let pos = keep.partition_point(|e| better(e, &key));
            keep.insert(pos, key);
            keep.truncate(k);
        }
        keep.into_iter()
            .map(|(s, ts, id, row)| Neighbor {
                post_id: id,
                similarity: s,
                delta_t: (t_query - ts) as f64,
                y: self.ys[row],
                author_recent: self.author_recent[row],
            })
            .collect()
    }
}

/// Normalized weights combining temporal decay and shifted similarity:
/// w̃ = exp(−Δt/τ) · exp(s − max s), normalized to the simplex.
pub fn neighbor_weights(neighbors: &[Neighbor], tau_decay: f64) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(OmniError::Data("weights of empty neighbor set".into()));
    }
    if tau_decay <= 0.0 {
        return Err(OmniError::Config("tau_decay must be positive".into()));
    }
    // w̃ = exp(−Δt/τ)·exp(s − max s); shifting by the max total exponent
    // yields identical normalized weights and never underflows to all-zero
    let exps: Vec<f64> = neighbors
        .iter()
        .map(|n| -n.delta_t / tau_decay + n.similarity)
        .collect();
    let e_max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = exps.iter().map(|e| (e - e_max).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(OmniError::Numeric("degenerate neighbor weights".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// The six weighted statistics of Eq. nbr: E_w and Var_w of y, a, Δt.
pub fn neighbor_stats(neighbors: &[Neighbor], weights: &[f64]) -> [f64; 6] {
    assert_eq!(neighbors.len(), weights.len());
    let moments = |values: &dyn Fn(&Neighbor) -> f64| -> (f64, f64) {
        let mean: f64 = neighbors
            .iter()
            .zip(weights)
            .map(|(n, &w)| w * values(n))
            .sum();
        let var: f64 = neighbors
            .iter()
            .zip(weights)
            .map(|(n, &w)| w * (values(n) - mean).powi(2))
            .sum();
        (mean, var)
    };
    let (ey, vy) = moments(&|n: &Neighbor| n.y);
    let (ea, va) = moments(&|n: &Neighbor| n.author_recent);
    let (et, vt) = moments(&|n: &Neighbor| n.delta_t);
    [ey, vy, ea, va, et, vt]
}

pub const NEIGHBOR_STAT_NAMES: [&str; 7] = [
    "nbr.mean_y",
    "nbr.var_y",
    "nbr.mean_author_eng",
    "nbr.var_author_eng",
    "nbr.mean_dt",
    "nbr.var_dt",
    "nbr.has_neighbors",
];

/// Context features augmented with the standardized neighbor block:
/// x̄ = [x_ctx ; x_nbr ; has_neighbors].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeatures {
    pub post_ids: Vec<u64>,
    pub platforms: Vec<u32>,
    pub names: Vec<String>,
    pub matrix: Tensor,
}

/// Queries each post's platform index, standardizes the six statistics with
/// the per-platform train-fit rule, and appends them (plus the indicator) to
/// the context matrix. Cold-start posts get an all-zero block with flag 0.
pub fn augment_context_features(
    ctx: &ContextFeatures,
    posts: &[PostRecord],
    fused: &Tensor,
    indexes: &BTreeMap<u32, EmbeddingIndex>,
    train_rows: &[usize],
    k: usize,
    tau_decay: f64,
) -> Result<AugmentedFeatures> {
    if posts.len() != ctx.matrix.rows || posts.len() != fused.rows {
        return Err(OmniError::Data(
            "augment: posts, context rows, and embeddings must align".into(),
        ));
    }
    let n = posts.len();
    let mut stats = Tensor::zeros(n, 6);
    let mut has_neighbors = vec![0.0f64; n];
    for (i, p) in posts.iter().enumerate() {
        let Some(index) = indexes.get(&p.platform_id) else {
            continue;
        };
        let neighbors = index.query_past_topk(fused.row(i), p.timestamp, k);
        if neighbors.is_empty() {
            continue;
        }
        let weights = neighbor_weights(&neighbors, tau_decay)?;
        stats
            .row_mut(i)
            .copy_from_slice(&neighbor_stats(&neighbors, &weights));
        has_neighbors[i] = 1.0;
    }

    // standardize on train rows that actually have neighbors so cold-start
    // zeros do not distort the moments
    let fit_rows: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&r| has_neighbors[r] > 0.0)
        .collect();
    if !fit_rows.is_empty() {
        let std = PlatformStandardizer::fit(&stats, &ctx.platforms, &fit_rows, 6)?;
        std.apply(&mut stats, &ctx.platforms);
        for i in 0..n {
            if has_neighbors[i] == 0.0 {
                stats.row_mut(i).fill(0.0);
            }
        }
    }

    let width = ctx.matrix.cols + 7;
    let mut matrix = Tensor::zeros(n, width);
    for i in 0..n {
        let row = matrix.row_mut(i);
        row[..ctx.matrix.cols].copy_from_slice(ctx.matrix.row(i));
        row[ctx.matrix.cols..ctx.matrix.cols + 6].copy_from_slice(stats.row(i));
        row[width - 1] = has_neighbors[i];
    }
    let mut names = ctx.names.clone();
    names.extend(NEIGHBOR_STAT_NAMES.iter().map(|s| s.to_string()));
    Ok(AugmentedFeatures {
        post_ids: ctx.post_ids.clone(),
        platforms: ctx.platforms.clone(),
        names,
        matrix,
    })
}

const INDEX_MAGIC: &[u8; 4] = b"OTIX";
const INDEX_VERSION: u16 = 1;

pub fn write_index(path: &Path, index: &EmbeddingIndex) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&index.platform_id.to_le_bytes())?;
    w.write_all(&(index.dim as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    for i in 0..index.len() {
        w.write_all(&index.post_ids[i].to_le_bytes())?;
        w.write_all(&index.timestamps[i].to_le_bytes())?;
        w.write_all(&index.ys[i].to_le_bytes())?;
        w.write_all(&index.author_recent[i].to_le_bytes())?;
    }
    for &x in &index.embeddings.data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_index(path: &Path) -> Result<EmbeddingIndex> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    if &read_array::<4>(&mut r)? != INDEX_MAGIC {
        return Err(OmniError::Format("bad index magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != INDEX_VERSION {
        return Err(OmniError::Format(format!("unsupported index version {version}")));
    }
    let platform_id = u32::from_le_bytes(read_array(&mut r)?);
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut index = EmbeddingIndex {
        platform_id,
        dim,
        post_ids: Vec::with_capacity(n),
        timestamps: Vec::with_capacity(n),
        ys: Vec::with_capacity(n),
        author_recent: Vec::with_capacity(n),
        embeddings: Tensor::zeros(n, dim),
    };
    for _ in 0..n {
        index.post_ids.push(u64::from_le_bytes(read_array(&mut r)?));
        index.timestamps.push(i64::from_le_bytes(read_array(&mut r)?));
        index.ys.push(f64::from_le_bytes(read_array(&mut r)?));
        index
            .author_recent
            .push(f64::from_le_bytes(read_array(&mut r)?));
    }
    for x in index.embeddings.data.iter_mut() {
        *x = f64::from_le_bytes(read_array(&mut r)?);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(OmniError::Format("trailing bytes after index".into()));
    }
    Ok(index)
}

/// Exports one post's neighbor list as CSV for diagnostics.
pub fn write_neighbors_csv(path: &Path, query_post_id: u64, neighbors: &[Neighbor]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "query_post_id,neighbor_post_id,similarity,delta_t,y,author_recent")?;
    for n in neighbors {
        writeln!(
            w,
            "{query_post_id},{},{},{},{},{}",
            n.post_id, n.similarity, n.delta_t, n.y, n.author_recent
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::splitmix64;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn post(post_id: u64, author_id: u64, timestamp: i64, y: u64) -> PostRecord {
        PostRecord {
            post_id,
            platform_id: 0,
            author_id,
            category_id: 0,
            location_id: 0,
            timestamp,
            y,
            has_image: true,
            has_text: true,
            has_video: false,
        }
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn toy_index(n: usize, seed: u64) -> (Vec<PostRecord>, Tensor, EmbeddingIndex) {
        let dim = 4;
        let posts: Vec<PostRecord> = (0..n as u64)
            .map(|i| {
                let r = splitmix64(seed ^ splitmix64(i));
                post(i, r % 5, (i as i64) * 1000, r % 100)
            })
            .collect();
        let mut emb = Tensor::zeros(n, dim);
        for i in 0..n {
            let r = splitmix64(seed.wrapping_add(7) ^ splitmix64(i as u64));
            let raw: Vec<f64> = (0..dim)
                .map(|d| ((splitmix64(r ^ d as u64) % 1000) as f64 / 500.0) - 1.0)
                .collect();
            emb.row_mut(i).copy_from_slice(&unit(raw));
        }
        let histories = AuthorHistories::build(&posts);
        let index = EmbeddingIndex::build(0, &posts, &emb, &histories).unwrap();
        (posts, emb, index)
    }

    #[test]
    fn cold_start_returns_empty() {
        let (_, emb, index) = toy_index(10, 1);
        assert!(index.query_past_topk(emb.row(0), 0, 10).is_empty());
    }

    #[test]
    fn exact_match_ranks_first_with_unit_similarity() {
        let (_, emb, index) = toy_index(10, 2);
        let got = index.query_past_topk(emb.row(3), 100_000, 10);
        assert_eq!(got[0].post_id, 3);
        assert_relative_eq!(got[0].similarity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_timestamp_is_excluded() {
        let (posts, emb, index) = toy_index(10, 3);
        let t = posts[5].timestamp;
        let got = index.query_past_topk(emb.row(5), t, 10);
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|n| n.post_id < 5));
    }

    #[test]
    fn weight_oracle_temporal_decay() {
        let mk = |dt: f64| Neighbor {
            post_id: 0,
            similarity: 0.5,
            delta_t: dt,
            y: 0.0,
            author_recent: 0.0,
        };
        let w = neighbor_weights(&[mk(0.0), mk(DEFAULT_TAU_DECAY)], DEFAULT_TAU_DECAY).unwrap();
        assert_relative_eq!(w[0], 0.73106, epsilon = 1e-5);
        assert_relative_eq!(w[1], 0.26894, epsilon = 1e-5);
    }

    #[test]
    fn weight_oracle_similarity() {
        let mk = |s: f64| Neighbor {
            post_id: 0,
            similarity: s,
            delta_t: 500.0,
            y: 0.0,
            author_recent: 0.0,
        };
        let w = neighbor_weights(&[mk(0.9), mk(0.4)], DEFAULT_TAU_DECAY).unwrap();
        assert_relative_eq!(w[0], 0.62246, epsilon = 1e-5);
        assert_relative_eq!(w[1], 0.37754, epsilon = 1e-5);
    }

    #[test]
    fn single_neighbor_weight_is_one() {
        let n = Neighbor {
            post_id: 0,
            similarity: -0.3,
            delta_t: 1e9,
            y: 0.0,
            author_recent: 0.0,
        };
        let w = neighbor_weights(&[n], DEFAULT_TAU_DECAY).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn stats_single_neighbor() {
        let n = Neighbor {
            post_id: 0,
            similarity: 0.5,
            delta_t: 3600.0,
            y: 100.0,
            author_recent: 10.0,
        };
        let s = neighbor_stats(&[n], &[1.0]);
        assert_eq!(s, [100.0, 0.0, 10.0, 0.0, 3600.0, 0.0]);
    }

    #[test]
    fn stats_two_equal_weight() {
        let mk = |y: f64| Neighbor {
            post_id: 0,
            similarity: 0.5,
            delta_t: 0.0,
            y,
            author_recent: 0.0,
        };
        let s = neighbor_stats(&[mk(0.0), mk(2.0)], &[0.5, 0.5]);
        assert_relative_eq!(s[0], 1.0);
        assert_relative_eq!(s[1], 1.0);
    }

    #[test]
    fn stats_scale_homogeneity() {
        let mk = |y: f64| Neighbor {
            post_id: 0,
            similarity: 0.5,
            delta_t: 100.0,
            y,
            author_recent: 0.0,
        };
        let base = [mk(1.0), mk(4.0), mk(9.0)];
        let scaled: Vec<Neighbor> = base
            .iter()
            .map(|n| Neighbor { y: 3.0 * n.y, ..n.clone() })
            .collect();
        let w = [0.2, 0.3, 0.5];
        let s0 = neighbor_stats(&base, &w);
        let s1 = neighbor_stats(&scaled, &w);
        assert_relative_eq!(s1[0], 3.0 * s0[0], epsilon = 1e-12);
        assert_relative_eq!(s1[1], 9.0 * s0[1], epsilon = 1e-12);
    }

    #[test]
    fn topk_matches_brute_force_with_tie_rule() {
        for seed in 0..5u64 {
            let (posts, emb, index) = toy_index(120, 40 + seed);
            for qi in (0..posts.len()).step_by(7) {
                let t = posts[qi].timestamp;
                let got = index.query_past_topk(emb.row(qi), t, 10);
                // independent full scan
                let mut cand: Vec<(f64, i64, u64)> = posts
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.timestamp < t)
                    .map(|(i, p)| {
                        let s: f64 = emb
                            .row(i)
                            .iter()
                            .zip(emb.row(qi))
                            .map(|(a, b)| a * b)
                            .sum();
                        (s, p.timestamp, p.post_id)
                    })
                    .collect();
                cand.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap()
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                });
                let expect: Vec<u64> = cand.iter().take(10).map(|c| c.2).collect();
                let ids: Vec<u64> = got.iter().map(|n| n.post_id).collect();
                assert_eq!(ids, expect, "query {qi} seed {seed}");
            }
        }
    }

    #[test]
    fn index_file_round_trip_bitwise() {
        let (_, _, index) = toy_index(30, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.otix");
        write_index(&path, &index).unwrap();
        assert_eq!(read_index(&path).unwrap(), index);
    }

    #[test]
    fn corrupt_index_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.otix");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_index(&path).is_err());
    }

    #[test]
    fn augmentation_shape_and_cold_start() {
        let (posts, emb, index) = toy_index(40, 8);
        let train_rows: Vec<usize> = (0..32).collect();
        let (_, ctx) =
            crate::context::assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
        let mut indexes = BTreeMap::new();
        indexes.insert(0u32, index);
        let aug = augment_context_features(
            &ctx,
            &posts,
            &emb,
            &indexes,
            &train_rows,
            10,
            DEFAULT_TAU_DECAY,
        )
        .unwrap();
        assert_eq!(aug.matrix.cols, ctx.matrix.cols + 7);
        assert_eq!(aug.names.len(), aug.matrix.cols);
        // the chronologically first post is a cold start: zero block, flag 0
        let first = aug.matrix.row(0);
        assert!(first[ctx.matrix.cols..].iter().all(|&x| x == 0.0));
        // context block is untouched
        for r in 0..posts.len() {
            assert_eq!(&aug.matrix.row(r)[..ctx.matrix.cols], ctx.matrix.row(r));
        }
        // later posts have neighbors
        assert_eq!(aug.matrix.row(39)[aug.matrix.cols - 1], 1.0);
    }

    proptest! {
        #[test]
        fn weights_on_simplex(
            sims in proptest::collection::vec(-1.0f64..1.0, 1..20),
            dts in proptest::collection::vec(0.0f64..1e6, 1..20),
        ) {
            let n = sims.len().min(dts.len());
            let neighbors: Vec<Neighbor> = (0..n)
                .map(|i| Neighbor {
                    post_id: i as u64,
                    similarity: sims[i],
                    delta_t: dts[i],
                    y: 0.0,
                    author_recent: 0.0,
                })
                .collect();
            let w = neighbor_weights(&neighbors, DEFAULT_TAU_DECAY).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn weights_shift_invariant(
            sims in proptest::collection::vec(-1.0f64..1.0, 2..10),
            shift in -5.0f64..5.0,
        ) {
            let mk = |s: f64, i: usize| Neighbor {
                post_id: i as u64,
                similarity: s,
                delta_t: (i as f64) * 100.0,
                y: 0.0,
                author_recent: 0.0,
            };
            let a: Vec<Neighbor> = sims.iter().enumerate().map(|(i, &s)| mk(s, i)).collect();
            let b: Vec<Neighbor> = sims.iter().enumerate().map(|(i, &s)| mk(s + shift, i)).collect();
            let wa = neighbor_weights(&a, DEFAULT_TAU_DECAY).unwrap();
            let wb = neighbor_weights(&b, DEFAULT_TAU_DECAY).unwrap();
            for (x, y) in wa.iter().zip(&wb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
