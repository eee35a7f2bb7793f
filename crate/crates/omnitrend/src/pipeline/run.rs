//! End-to-end experiment runner: content training, residual construction,
//! feature assembly, retrieval augmentation, exposure boosting, combination,
//! and the ablation/transfer variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{
    combine_prediction, evaluate, fingerprint, rank_rank_diag, spearman, wasserstein1,
    MetricsReport,
};
use crate::content::{
    fused_embeddings, predict_alpha, train_content, ContentModelParams, ContentSample,
    EpochTrace, TrainConfig,
};
use crate::context::{assemble_context_features, ContextFeatures, NUMERIC_CONTEXT_DIM};
use crate::corpus::{
    chronological_split, log_transform, BinWeights, LabelScaler, PostRecord, SplitRole,
};
use crate::error::{OmniError, Result};
use crate::exposure::{calibrate_phi, fit_exposure, ExposureConfig};
use crate::retrieval::{augment_context_features, EmbeddingIndex};
use crate::synthgen::EmbeddingSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoContext,
    NoContent,
    NoRetrieval,
    NoContextFeatures,
    ContentImageOnly,
    ContentTextOnly,
    TransferFrozenContent,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoContext,
        Variant::NoContent,
        Variant::NoRetrieval,
        Variant::NoContextFeatures,
        Variant::ContentImageOnly,
        Variant::ContentTextOnly,
        Variant::TransferFrozenContent,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContext => "no_context",
            Variant::NoContent => "no_content",
            Variant::NoRetrieval => "no_retrieval",
            Variant::NoContextFeatures => "no_context_features",
            Variant::ContentImageOnly => "content_image_only",
            Variant::ContentTextOnly => "content_text_only",
            Variant::TransferFrozenContent => "transfer_frozen_content",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| OmniError::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    pub content: TrainConfig,
    pub exposure: ExposureConfig,
    pub top_k: usize,
    pub tau_decay: f64,
    pub n_folds: usize,
    pub smoothing: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            content: TrainConfig::default(),
            exposure: ExposureConfig::default(),
            top_k: crate::retrieval::DEFAULT_TOP_K,
            tau_decay: crate::retrieval::DEFAULT_TAU_DECAY,
            n_folds: crate::context::DEFAULT_FOLDS,
            smoothing: crate::context::DEFAULT_SMOOTHING,
        }
    }
}

/// All per-post pipeline outputs, rows in chronological (timestamp, post_id)
/// order, plus the canonical report.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub post_ids: Vec<u64>,
    pub platforms: Vec<u32>,
    pub roles: Vec<SplitRole>,
    pub y_tilde: Vec<f64>,
    /// De-standardized α̂, log scale.
    pub alpha: Vec<f64>,
    /// Calibrated φ̂, log scale.
    pub phi: Vec<f64>,
    pub y_tilde_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub content_trace: Vec<EpochTrace>,
    pub content_params: Option<ContentModelParams>,
    pub feature_names: Vec<String>,
}

struct Corpus {
    posts: Vec<PostRecord>,
    /// image/text/video rows aligned with `posts`.
    image: Tensor,
    text: Tensor,
    video: Tensor,
    roles: Vec<SplitRole>,
    y_tilde: Vec<f64>,
}

fn prepare_corpus(posts: &[PostRecord], emb: &EmbeddingSet) -> Result<Corpus> {
    if posts.len() != emb.n_rows() {
        return Err(OmniError::Data("posts and embeddings misaligned".into()));
    }
    let row_of = emb.row_index();
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.sort_unstable_by_key(|&i| (posts[i].timestamp, posts[i].post_id));

    let d = emb.dim;
    let n = posts.len();
    let mut c = Corpus {
        posts: Vec::with_capacity(n),
        image: Tensor::zeros(n, d),
        text: Tensor::zeros(n, d),
        video: Tensor::zeros(n, d),
        roles: Vec::with_capacity(n),
        y_tilde: Vec::with_capacity(n),
    };
    for (row, &i) in order.iter().enumerate() {
        let p = &posts[i];
        let er = *row_of
            .get(&p.post_id)
            .ok_or_else(|| OmniError::Data(format!("no embedding for post {}", p.post_id)))?;
        c.image.row_mut(row).copy_from_slice(emb.image.row(er));
        c.text.row_mut(row).copy_from_slice(emb.text.row(er));
        c.video.row_mut(row).copy_from_slice(emb.video.row(er));
        c.y_tilde.push(log_transform(p.y));
        c.posts.push(p.clone());
    }
    let split = chronological_split(&c.posts, (8, 1, 1))?;
    for p in &c.posts {
        c.roles.push(split.role(p.post_id).unwrap());
    }
    Ok(c)
}

/// Standardize with the post's platform stats, falling back to the scaler's
/// first platform for platforms unseen at fit time (cross-platform transfer).
fn apply_or_first(scaler: &LabelScaler, platform: u32, y: f64) -> f64 {
    match scaler.stats(platform) {
        Some((m, s)) => (y - m) / s,
        None => {
            let p = scaler.platforms().next().expect("scaler has platforms");
            let (m, s) = scaler.stats(p).unwrap();
            (y - m) / s
        }
    }
}

fn invert_or_first(scaler: &LabelScaler, platform: u32, std: f64) -> f64 {
    match scaler.stats(platform) {
        Some((m, s)) => std * s + m,
        None => {
            let p = scaler.platforms().next().expect("scaler has platforms");
            let (m, s) = scaler.stats(p).unwrap();
            std * s + m
        }
    }
}

/// Which modalities survive corpus-wide masking for a variant.
fn modality_mask(variant: Variant) -> (bool, bool, bool) {
    match variant {
        Variant::ContentImageOnly => (true, false, false),
        Variant::ContentTextOnly => (false, true, false),
        _ => (true, true, true),
    }
}

fn content_samples(
    corpus: &Corpus,
    scaler: &LabelScaler,
    bins: &BinWeights,
    mask: (bool, bool, bool),
) -> Vec<ContentSample> {
    corpus
        .posts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let yt = corpus.y_tilde[i];
            ContentSample {
                image: corpus.image.row(i).to_vec(),
                text: corpus.text.row(i).to_vec(),
                video: corpus.video.row(i).to_vec(),
                has_image: p.has_image && mask.0,
                has_text: p.has_text && mask.1,
                has_video: p.has_video && mask.2,
                target_std: apply_or_first(scaler, p.platform_id, yt),
                weight: bins.weight(yt),
                platform_id: p.platform_id,
            }
        })
        .collect()
}

struct ContentStage {
    /// De-standardized α̂ per row, log scale.
    alpha: Vec<f64>,
    /// Unit-norm retrieval embeddings per row.
    fused: Tensor,
    trace: Vec<EpochTrace>,
    params: Option<ContentModelParams>,
}

/// Mean of the present raw modality embeddings, unit-normalized; the
/// retrieval space used when no content model exists.
fn raw_mean_embeddings(corpus: &Corpus) -> Tensor {
    let n = corpus.posts.len();
    let d = corpus.image.cols;
    let mut out = Tensor::zeros(n, d);
    for (i, p) in corpus.posts.iter().enumerate() {
        let mut acc = vec![0.0f64; d];
        let mut count = 0.0;
        for (present, m) in [
            (p.has_image, &corpus.image),
            (p.has_text, &corpus.text),
            (p.has_video, &corpus.video),
        ] {
            if present {
                for (a, &x) in acc.iter_mut().zip(m.row(i)) {
                    *a += x;
                }
                count += 1.0;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if count > 0.0 && norm > 1e-12 {
            for a in acc.iter_mut() {
                *a /= norm;
            }
        } else {
            acc[0] = 1.0;
        }
        out.row_mut(i).copy_from_slice(&acc);
    }
    out
}

fn train_content_stage(
    corpus: &Corpus,
    scaler: &LabelScaler,
    bins: &BinWeights,
    mask: (bool, bool, bool),
    cfg: &TrainConfig,
) -> Result<(ContentModelParams, Vec<EpochTrace>, Vec<ContentSample>)> {
    let samples = content_samples(corpus, scaler, bins, mask);
    let train: Vec<ContentSample> = samples
        .iter()
        .zip(&corpus.roles)
        .filter(|(_, &r)| r == SplitRole::Train)
        .map(|(s, _)| s.clone())
        .collect();
    let val: Vec<ContentSample> = samples
        .iter()
        .zip(&corpus.roles)
        .filter(|(_, &r)| r == SplitRole::Val)
        .map(|(s, _)| s.clone())
        .collect();
    let (params, trace) = train_content(&train, &val, cfg)?;
    Ok((params, trace, samples))
}

fn content_stage(
    corpus: &Corpus,
    scaler: &LabelScaler,
    bins: &BinWeights,
    variant: Variant,
    source: Option<&Corpus>,
    cfg: &PipelineConfig,
) -> Result<ContentStage> {
    match variant {
        Variant::NoContent => Ok(ContentStage {
            alpha: vec![0.0; corpus.posts.len()],
            fused: raw_mean_embeddings(corpus),
            trace: Vec::new(),
            params: None,
        }),
        Variant::TransferFrozenContent => {
            let src = source.ok_or_else(|| {
                OmniError::Config("transfer_frozen_content requires a source corpus".into())
            })?;
            // the content model and its label scale come from the source
            let src_scaler = LabelScaler::fit(
                &src.posts
                    .iter()
                    .zip(&src.roles)
                    .zip(&src.y_tilde)
                    .filter(|((_, &r), _)| r == SplitRole::Train)
                    .map(|((p, _), &y)| (p.platform_id, y))
                    .collect::<Vec<_>>(),
            )?;
            let src_bins = BinWeights::fit(
                &src.y_tilde
                    .iter()
                    .zip(&src.roles)
                    .filter(|(_, &r)| r == SplitRole::Train)
                    .map(|(&y, _)| y)
                    .collect::<Vec<_>>(),
            )?;
            let (params, trace, _) =
                train_content_stage(src, &src_scaler, &src_bins, (true, true, true), &cfg.content)?;
            let samples = content_samples(corpus, scaler, bins, (true, true, true));
            let alpha_std = predict_alpha(&params, &samples);
            let alpha = corpus
                .posts
                .iter()
                .zip(&alpha_std)
                .map(|(p, &a)| invert_or_first(&src_scaler, p.platform_id, a))
                .collect();
            let fused = fused_embeddings(&params, &samples);
            Ok(ContentStage {
                alpha,
                fused,
                trace,
                params: Some(params),
            })
        }
        _ => {
            let mask = modality_mask(variant);
            let (params, trace, samples) =
                train_content_stage(corpus, scaler, bins, mask, &cfg.content)?;
            let alpha_std = predict_alpha(&params, &samples);
            let alpha = corpus
                .posts
                .iter()
                .zip(&alpha_std)
                .map(|(p, &a)| invert_or_first(scaler, p.platform_id, a))
                .collect();
            let fused = fused_embeddings(&params, &samples);
            Ok(ContentStage {
                alpha,
                fused,
                trace,
                params: Some(params),
            })
        }
    }
}

/// A context block with zero numeric columns, for the neighbor-only variant.
fn empty_context(corpus: &Corpus) -> ContextFeatures {
    ContextFeatures {
        post_ids: corpus.posts.iter().map(|p| p.post_id).collect(),
        platforms: corpus.posts.iter().map(|p| p.platform_id).collect(),
        names: Vec::new(),
        matrix: Tensor::zeros(corpus.posts.len(), 0),
        numeric_dim: 0,
    }
}

struct FeatureStage {
    names: Vec<String>,
    matrix: Tensor,
}

fn feature_stage(
    corpus: &Corpus,
    fused: &Tensor,
    variant: Variant,
    cfg: &PipelineConfig,
) -> Result<FeatureStage> {
    let train_rows: Vec<usize> = corpus
        .roles
        .iter()
        .enumerate()
        .filter(|(_, &r)| r == SplitRole::Train)
        .map(|(i, _)| i)
        .collect();

    let ctx = if variant == Variant::NoContextFeatures {
        empty_context(corpus)
    } else {
        let (_, ctx) =
            assemble_context_features(&corpus.posts, &train_rows, cfg.n_folds, cfg.smoothing)?;
        ctx
    };

    if variant == Variant::NoRetrieval {
        return Ok(FeatureStage {
            names: ctx.names,
            matrix: ctx.matrix,
        });
    }

    let histories = crate::context::AuthorHistories::build(&corpus.posts);
    let mut platform_ids: Vec<u32> = corpus.posts.iter().map(|p| p.platform_id).collect();
    platform_ids.sort_unstable();
    platform_ids.dedup();
    let mut indexes = BTreeMap::new();
    for pid in platform_ids {
        indexes.insert(
            pid,
            EmbeddingIndex::build(pid, &corpus.posts, fused, &histories)?,
        );
    }
    let aug = augment_context_features(
        &ctx,
        &corpus.posts,
        fused,
        &indexes,
        &train_rows,
        cfg.top_k,
        cfg.tau_decay,
    )?;
    Ok(FeatureStage {
        names: aug.names,
        matrix: aug.matrix,
    })
}

fn gather_rows(matrix: &Tensor, rows: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(rows.len(), matrix.cols);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(matrix.row(i));
    }
    out
}

/// Per-platform exposure fitting and calibrated prediction for all rows.
fn exposure_stage(
    corpus: &Corpus,
    features: &FeatureStage,
    residuals: &[f64],
    bins: &BinWeights,
    variant: Variant,
    cfg: &PipelineConfig,
) -> Result<Vec<f64>> {
    let n = corpus.posts.len();
    let mut phi = vec![0.0f64; n];
    let mut platform_ids: Vec<u32> = corpus.posts.iter().map(|p| p.platform_id).collect();
    platform_ids.sort_unstable();
    platform_ids.dedup();

    for pid in platform_ids {
        let rows: Vec<usize> = (0..n)
            .filter(|&i| corpus.posts[i].platform_id == pid)
            .collect();
        let train_rows: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| corpus.roles[i] == SplitRole::Train)
            .collect();
        let val_rows: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| corpus.roles[i] == SplitRole::Val)
            .collect();
        if train_rows.is_empty() {
            return Err(OmniError::Data(format!("platform {pid} has no train rows")));
        }
        let train_r: Vec<f64> = train_rows.iter().map(|&i| residuals[i]).collect();

        if variant == Variant::NoContext {
            // exposure reduced to the train-mean residual
            let mean_r = train_r.iter().sum::<f64>() / train_r.len() as f64;
            for &i in &rows {
                phi[i] = mean_r;
            }
            continue;
        }

        let train_x = gather_rows(&features.matrix, &train_rows);
        let train_w: Vec<f64> = train_rows
            .iter()
            .map(|&i| bins.weight(corpus.y_tilde[i]))
            .collect();
        let val_x = gather_rows(&features.matrix, &val_rows);
        let val_r: Vec<f64> = val_rows.iter().map(|&i| residuals[i]).collect();
        let val_w: Vec<f64> = val_rows
            .iter()
            .map(|&i| bins.weight(corpus.y_tilde[i]))
            .collect();

        let (mut ensemble, trace) =
            fit_exposure(&train_x, &train_r, &train_w, &val_x, &val_r, &val_w, &cfg.exposure)?;
        if std::env::var_os("OMNITREND_DEBUG_BOOST").is_some() {
            eprintln!(
                "platform {pid}: {} rounds, best {}",
                trace.len(),
                ensemble.best_iteration
            );
        }
        let raw_train = ensemble.predict(&train_x);
        ensemble.calibration = Some(calibrate_phi(&raw_train, &train_r)?);
        let all_x = gather_rows(&features.matrix, &rows);
        let preds = ensemble.predict_calibrated(&all_x)?;
        for (&i, p) in rows.iter().zip(preds) {
            phi[i] = p;
        }
    }
    Ok(phi)
}

/// Executes one variant end to end on an in-memory corpus; `source` supplies
/// the transfer variant's training platform.
pub fn run_experiment(
    posts: &[PostRecord],
    embeddings: &EmbeddingSet,
    source: Option<(&[PostRecord], &EmbeddingSet)>,
    variant: Variant,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ExperimentOutput> {
    let mut cfg = cfg.clone();
    cfg.content.seed = seed;
    cfg.content.validate()?;
    cfg.exposure.validate()?;

    let corpus = prepare_corpus(posts, embeddings)?;
    let source_corpus = match source {
        Some((sp, se)) => Some(prepare_corpus(sp, se)?),
        None => None,
    };

    let train_pairs: Vec<(u32, f64)> = corpus
        .posts
        .iter()
        .zip(&corpus.roles)
        .zip(&corpus.y_tilde)
        .filter(|((_, &r), _)| r == SplitRole::Train)
        .map(|((p, _), &y)| (p.platform_id, y))
        .collect();
    let scaler = LabelScaler::fit(&train_pairs)?;
    let train_labels: Vec<f64> = corpus
        .y_tilde
        .iter()
        .zip(&corpus.roles)
        .filter(|(_, &r)| r == SplitRole::Train)
        .map(|(&y, _)| y)
        .collect();
    let bins = BinWeights::fit(&train_labels)?;

    let content = content_stage(
        &corpus,
        &scaler,
        &bins,
        variant,
        source_corpus.as_ref(),
        &cfg,
    )?;
    // Rescale alpha per platform by the train-split regression gain of
    // y_tilde on alpha-hat. This undoes the shrinkage of the content fit, so
    // the residuals handed to the exposure model are uncorrelated with
    // alpha-hat on train and the exposure model has no incentive to re-derive
    // attractiveness from neighborhood features.
    let mut alpha_cal = content.alpha.clone();
    {
        let mut platform_ids: Vec<u32> = corpus.posts.iter().map(|p| p.platform_id).collect();
        platform_ids.sort_unstable();
        platform_ids.dedup();
        for pid in platform_ids {
            let train: Vec<usize> = (0..corpus.posts.len())
                .filter(|&i| {
                    corpus.posts[i].platform_id == pid && corpus.roles[i] == SplitRole::Train
                })
                .collect();
            if train.is_empty() {
                continue;
            }
            let n = train.len() as f64;
            let ma = train.iter().map(|&i| content.alpha[i]).sum::<f64>() / n;
            let my = train.iter().map(|&i| corpus.y_tilde[i]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|&i| (content.alpha[i] - ma).powi(2))
                .sum::<f64>()
                / n;
            let cov = train
                .iter()
                .map(|&i| (content.alpha[i] - ma) * (corpus.y_tilde[i] - my))
                .sum::<f64>()
                / n;
            if var > 1e-12 {
                let gain = cov / var;
                for i in 0..corpus.posts.len() {
                    if corpus.posts[i].platform_id == pid {
                        alpha_cal[i] = ma + gain * (content.alpha[i] - ma);
                    }
                }
            }
        }
    }
    let residuals: Vec<f64> = corpus
        .y_tilde
        .iter()
        .zip(&alpha_cal)
        .map(|(&y, &a)| y - a)
        .collect();

    let features = feature_stage(&corpus, &content.fused, variant, &cfg)?;
    let mut phi = exposure_stage(&corpus, &features, &residuals, &bins, variant, &cfg)?;

    // Orthogonalize the decomposition: any component of phi-hat that is
    // linearly explainable by alpha-hat on train belongs to the content side,
    // so move it there. The sum alpha + phi (and hence the prediction) is
    // unchanged; only the split between the two factors shifts.
    {
        let mut platform_ids: Vec<u32> = corpus.posts.iter().map(|p| p.platform_id).collect();
        platform_ids.sort_unstable();
        platform_ids.dedup();
        for pid in platform_ids {
            let train: Vec<usize> = (0..corpus.posts.len())
                .filter(|&i| {
                    corpus.posts[i].platform_id == pid && corpus.roles[i] == SplitRole::Train
                })
                .collect();
            if train.is_empty() {
                continue;
            }
            let n = train.len() as f64;
            let ma = train.iter().map(|&i| alpha_cal[i]).sum::<f64>() / n;
            let mp = train.iter().map(|&i| phi[i]).sum::<f64>() / n;
            let var = train.iter().map(|&i| (alpha_cal[i] - ma).powi(2)).sum::<f64>() / n;
            let cov = train
                .iter()
                .map(|&i| (alpha_cal[i] - ma) * (phi[i] - mp))
                .sum::<f64>()
                / n;
            if var > 1e-12 {
                let slope = cov / var;
                for i in 0..corpus.posts.len() {
                    if corpus.posts[i].platform_id == pid {
                        let shift = slope * (alpha_cal[i] - ma);
                        phi[i] -= shift;
                        alpha_cal[i] += shift;
                    }
                }
            }
        }
    }

    let n = corpus.posts.len();
    let mut y_tilde_hat = Vec::with_capacity(n);
    let mut y_hat = Vec::with_capacity(n);
    for i in 0..n {
        let (yt, y) = combine_prediction(alpha_cal[i], phi[i]);
        y_tilde_hat.push(yt);
        y_hat.push(y);
    }

    // per-split metrics
    let mut splits = BTreeMap::new();
    for (name, role) in [
        ("train", SplitRole::Train),
        ("val", SplitRole::Val),
        ("test", SplitRole::Test),
    ] {
        let rows: Vec<usize> = (0..n).filter(|&i| corpus.roles[i] == role).collect();
        let preds: Vec<f64> = rows.iter().map(|&i| y_tilde_hat[i]).collect();
        let labels: Vec<f64> = rows.iter().map(|&i| corpus.y_tilde[i]).collect();
        splits.insert(name.to_string(), evaluate(&preds, &labels)?);
    }

    // test-split diagnostics
    let test_rows: Vec<usize> = (0..n).filter(|&i| corpus.roles[i] == SplitRole::Test).collect();
    let test_alpha: Vec<f64> = test_rows.iter().map(|&i| alpha_cal[i]).collect();
    let test_phi: Vec<f64> = test_rows.iter().map(|&i| phi[i]).collect();
    let test_truth: Vec<f64> = test_rows.iter().map(|&i| corpus.y_tilde[i]).collect();
    let test_pred: Vec<f64> = test_rows.iter().map(|&i| y_tilde_hat[i]).collect();
    let mut diagnostics = BTreeMap::new();
    let (s_ap, _) = spearman(&test_alpha, &test_phi)?;
    diagnostics.insert("spearman_alpha_phi_test".into(), s_ap);
    let (grid, _) = rank_rank_diag(&test_alpha, &test_phi)?;
    let max_dev = grid
        .iter()
        .flatten()
        .map(|&c| (c - 0.01).abs())
        .fold(0.0, f64::max);
    diagnostics.insert("rank_grid_max_dev_test".into(), max_dev);
    diagnostics.insert(
        "wasserstein_full_test".into(),
        wasserstein1(&test_pred, &test_truth)?,
    );

    let cfg_bytes = serde_json::to_vec(&cfg)
        .map_err(|e| OmniError::Format(format!("config encode: {e}")))?;
    let report = MetricsReport {
        variant: variant.id().to_string(),
        seed,
        config_fingerprint: fingerprint(&cfg_bytes),
        splits,
        diagnostics,
    };

    Ok(ExperimentOutput {
        report,
        post_ids: corpus.posts.iter().map(|p| p.post_id).collect(),
        platforms: corpus.posts.iter().map(|p| p.platform_id).collect(),
        roles: corpus.roles,
        y_tilde: corpus.y_tilde,
        alpha: alpha_cal,
        phi,
        y_tilde_hat,
        y_hat,
        content_trace: content.trace,
        content_params: content.params,
        feature_names: features.names,
    })
}

/// Per-variant summary over several seeds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationSummary {
    pub variant: String,
    pub per_seed_test_src: Vec<f64>,
    pub mean_test_src: f64,
    /// max − min over seeds.
    pub spread: f64,
}

/// Runs each variant across the given seeds and averages the test SRC.
pub fn run_ablation(
    posts: &[PostRecord],
    embeddings: &EmbeddingSet,
    source: Option<(&[PostRecord], &EmbeddingSet)>,
    variants: &[Variant],
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<AblationSummary>> {
    if seeds.is_empty() {
        return Err(OmniError::Config("ablation needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut srcs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let result = run_experiment(posts, embeddings, source, variant, cfg, seed)?;
            srcs.push(result.report.splits["test"].src);
        }
        let mean = srcs.iter().sum::<f64>() / srcs.len() as f64;
        let spread = srcs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - srcs.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(AblationSummary {
            variant: variant.id().to_string(),
            per_seed_test_src: srcs,
            mean_test_src: mean,
            spread,
        });
    }
    Ok(out)
}

/// Number of context feature columns a full-variant run produces, used by
/// interface checks.
pub fn full_feature_dim(n_platforms: usize) -> usize {
    NUMERIC_CONTEXT_DIM + n_platforms + 7
}
