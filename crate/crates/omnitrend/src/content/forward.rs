//! Tape-recorded forward pass and the four-part training objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, ContentModelParams, ContentSample, TrainConfig};
use crate::error::{OmniError, Result};
use crate::tape::{Tape, ValId};
use crate::tensor::Tensor;

/// Parameter leaves inserted into a tape for one forward/backward pass.
/// Order matches [`super::PARAM_BLOCK_NAMES`].
pub struct ParamIds {
    pub ids: Vec<ValId>,
}

impl ParamIds {
    pub fn insert(tape: &mut Tape, params: &ContentModelParams) -> ParamIds {
        let ids = params
            .blocks()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        ParamIds { ids }
    }

    fn by_name(&self, name: &str) -> ValId {
        let pos = super::PARAM_BLOCK_NAMES
            .iter()
            .position(|&n| n == name)
            .expect("unknown block");
        self.ids[pos]
    }
}

pub struct ForwardNodes {
    /// Attended image token, zeroed where the image is absent.
    pub v_att: ValId,
    pub t_att: ValId,
    pub s_att: ValId,
    pub fused: ValId,
    /// Predicted attractiveness, standardized scale, B x 1.
    pub alpha: ValId,
}

/// Cross-modal encoding, gated fusion, and the MLP head.
///
/// Each modality contributes a single token, so the cross-attention softmax
/// over one present key is identically one and the attended value reduces to
/// the key token's value/output projection added to the residual. Missing
/// modalities contribute zero key tokens and have their outputs zeroed.
pub fn forward(tape: &mut Tape, params: &ParamIds, batch: &Batch) -> ForwardNodes {
    let image = tape.leaf(batch.image.clone());
    let text = tape.leaf(batch.text.clone());
    let video = tape.leaf(batch.video.clone());

    let proj = |tape: &mut Tape, x: ValId, w: ValId, mask: &[f64]| {
        let p = tape.matmul(x, w);
        tape.mask_rows(p, mask.to_vec())
    };
    let v0 = proj(tape, image, params.by_name("proj_img"), &batch.img_mask);
    let t0 = proj(tape, text, params.by_name("proj_txt"), &batch.txt_mask);
    let s0 = proj(tape, video, params.by_name("proj_vid"), &batch.vid_mask);

    let attn_v = params.by_name("attn_v");
    let attn_o = params.by_name("attn_o");
    // value/output projection of each single key token, zeroed when absent
    let attend = |tape: &mut Tape, key: ValId, key_mask: &[f64]| {
        let v = tape.matmul(key, attn_v);
        let o = tape.matmul(v, attn_o);
        tape.mask_rows(o, key_mask.to_vec())
    };
    let from_text = attend(tape, t0, &batch.txt_mask);
    let from_image = attend(tape, v0, &batch.img_mask);

    let residual = |tape: &mut Tape, q: ValId, attended: ValId, q_mask: &[f64]| {
        let s = tape.add(q, attended);
        tape.mask_rows(s, q_mask.to_vec())
    };
    let v_att = residual(tape, v0, from_text, &batch.img_mask);
    let t_att = residual(tape, t0, from_image, &batch.txt_mask);
    let s_att = residual(tape, s0, from_text, &batch.vid_mask);

    // highway-gated fusion over the concatenated masked tokens: the gate
    // interpolates between a learned linear mix and the mean attended token.
    // The residual branch keeps the fused space geometrically close to the
    // input embeddings, which is what makes it usable for retrieval.
    let u = tape.concat_cols(&[v_att, t_att, s_att]);
    let gate_lin = tape.matmul(u, params.by_name("gate_w"));
    let gate_lin = tape.add_row_broadcast(gate_lin, params.by_name("gate_b"));
    let gate = tape.sigmoid(gate_lin);
    let fuse_lin = tape.matmul(u, params.by_name("fuse_w"));
    let fuse_lin = tape.add_row_broadcast(fuse_lin, params.by_name("fuse_b"));
    let inv_count: Vec<f64> = (0..batch.len())
        .map(|i| {
            let c = batch.img_mask[i] + batch.txt_mask[i] + batch.vid_mask[i];
            1.0 / c.max(1.0)
        })
        .collect();
    // the residual carrier is the raw modality mean when dimensions permit
    // (an untrained isometry, so the fused retrieval space keeps the input
    // embeddings' neighborhood structure); otherwise the projected tokens
    let model_dim = tape.value(params.by_name("fuse_b")).cols;
    let mean_tok = if batch.image.cols == model_dim {
        let im = tape.mask_rows(image, batch.img_mask.to_vec());
        let tx = tape.mask_rows(text, batch.txt_mask.to_vec());
        let vd = tape.mask_rows(video, batch.vid_mask.to_vec());
        let s = tape.add(im, tx);
        let s = tape.add(s, vd);
        tape.mask_rows(s, inv_count)
    } else {
        let summed = tape.add(v_att, t_att);
        let summed = tape.add(summed, s_att);
        tape.mask_rows(summed, inv_count)
    };
    let learned_path = tape.mul(gate, fuse_lin);
    let carrier = tape.scale(mean_tok, 5.0);
    let fused = tape.add(carrier, learned_path);

    // MLP head with a smooth GELU
    let h = tape.matmul(fused, params.by_name("mlp_w1"));
    let h = tape.add_row_broadcast(h, params.by_name("mlp_b1"));
    let h = tape.gelu(h);
    let alpha = tape.matmul(h, params.by_name("mlp_w2"));
    let alpha = tape.add_row_broadcast(alpha, params.by_name("mlp_b2"));

    ForwardNodes {
        v_att,
        t_att,
        s_att,
        fused,
        alpha,
    }
}

/// Frozen-parameter attractiveness predictions on the standardized scale.
pub fn predict_alpha(params: &ContentModelParams, samples: &[ContentSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&ContentSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, params);
        let fwd = forward(&mut tape, &ids, &batch);
        out.extend_from_slice(&tape.value(fwd.alpha).data);
    }
    out
}

/// Fused content representation z per sample, l2-normalized per row; this is
/// the retrieval embedding space of the frozen model.
pub fn fused_embeddings(params: &ContentModelParams, samples: &[ContentSample]) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&ContentSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, params);
        let fwd = forward(&mut tape, &ids, &batch);
        let z = tape.value(fwd.fused);
        for r in 0..z.rows {
            let mut row = z.row(r).to_vec();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            } else {
                // degenerate fused vector: fall back to a fixed unit vector
                row[0] = 1.0;
            }
            rows.push(row);
        }
    }
    let dim = rows.first().map_or(0, |r| r.len());
    let mut out = Tensor::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(r);
    }
    out
}

pub struct LossNodes {
    pub huber: ValId,
    pub pair: ValId,
    pub align: ValId,
    pub mu: ValId,
    pub total: ValId,
}

/// Splits batch indices into low/high terciles of the target and returns the
/// ranking pairs (high, low): exhaustive when there are at most
/// `batch_len` cross pairs, otherwise a fixed-seed sample of `batch_len`.
fn ranking_pairs(targets: &[f64], pair_seed: u64) -> Vec<(usize, usize)> {
    let n = targets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        targets[a]
            .partial_cmp(&targets[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let third = n / 3;
    if third == 0 {
        return Vec::new();
    }
    let low = &order[..third];
    let high = &order[n - third..];
    // degenerate batches where terciles overlap in value carry no ordering
    if targets[high[0]] <= targets[low[third - 1]] {
        return Vec::new();
    }
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(third * third);
    for &i in high {
        for &j in low {
            pairs.push((i, j));
        }
    }
    if pairs.len() > n {
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
        pairs.shuffle(&mut rng);
        pairs.truncate(n);
        pairs.sort_unstable();
    }
    pairs
}

/// The four loss terms and their lambda-weighted total.
pub fn content_losses(
    tape: &mut Tape,
    params: &ParamIds,
    fwd: &ForwardNodes,
    batch: &Batch,
    cfg: &TrainConfig,
    pair_seed: u64,
) -> Result<LossNodes> {
    if batch.is_empty() {
        return Err(OmniError::Data("content loss on empty batch".into()));
    }
    let n = batch.len();

    let target = tape.leaf(Tensor::from_vec(n, 1, batch.target_std.clone()));
    let residual = tape.sub(fwd.alpha, target);
    let huber = tape.weighted_huber_mean(residual, batch.weight.clone(), cfg.huber_delta);

    // margin ranking over cross-tercile pairs
    let pairs = ranking_pairs(&batch.target_std, pair_seed);
    let pair = if pairs.is_empty() {
        tape.leaf(Tensor::scalar(0.0))
    } else {
        let hi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let lo: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a_hi = tape.gather_rows(fwd.alpha, hi);
        let a_lo = tape.gather_rows(fwd.alpha, lo);
        let diff = tape.sub(a_hi, a_lo);
        let neg = tape.scale(diff, -1.0);
        let hinge_arg = tape.add_scalar(neg, cfg.margin);
        let hinged = tape.relu(hinge_arg);
        tape.mean_all(hinged)
    };

    // symmetric contrastive alignment over samples with image and text
    let both: Vec<usize> = (0..n)
        .filter(|&i| batch.img_mask[i] > 0.0 && batch.txt_mask[i] > 0.0)
        .collect();
    let align = if both.len() < 2 {
        tape.leaf(Tensor::scalar(0.0))
    } else {
        let v = tape.gather_rows(fwd.v_att, both.clone());
        let t = tape.gather_rows(fwd.t_att, both);
        let hv_lin = tape.matmul(v, params.by_name("align_vis"));
        let ht_lin = tape.matmul(t, params.by_name("align_txt"));
        let hv = tape.normalize_rows(hv_lin);
        let ht = tape.normalize_rows(ht_lin);
        let ht_t = tape.transpose(ht);
        let sims = tape.matmul(hv, ht_t);
        let logits = tape.scale(sims, 1.0 / cfg.align_temp);
        let fwd_ce = tape.diag_cross_entropy(logits);
        let logits_t = tape.transpose(logits);
        let bwd_ce = tape.diag_cross_entropy(logits_t);
        let sum = tape.add(fwd_ce, bwd_ce);
        tape.scale(sum, 0.5)
    };

    let mean_alpha = tape.mean_all(fwd.alpha);
    let mu = tape.abs(mean_alpha);

    let wh = tape.scale(huber, cfg.lambda_huber);
    let wp = tape.scale(pair, cfg.lambda_pair);
    let wa = tape.scale(align, cfg.lambda_align);
    let wm = tape.scale(mu, cfg.lambda_mu);
    let t1 = tape.add(wh, wp);
    let t2 = tape.add(wa, wm);
    let total = tape.add(t1, t2);

    Ok(LossNodes {
        huber,
        pair,
        align,
        mu,
        total,
    })
}
