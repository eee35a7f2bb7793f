//! Cross-platform attractiveness model: per-modality projections, a
//! bidirectional single-head cross-attention block, gated fusion, and an MLP
//! head trained with a four-part objective.

mod checkpoint;
mod forward;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    content_losses, forward, fused_embeddings, predict_alpha, ForwardNodes, LossNodes, ParamIds,
};
pub use gradcheck::{grad_check, loss_value};
pub use train::{cosine_lr, train_content, write_loss_trace_csv, EpochTrace};

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::tensor::Tensor;

/// All learnable tensors of the attractiveness model.
///
/// The query/key projections exist for the general multi-token layout but do
/// not reach the forward pass here: with a single token per modality the
/// attention softmax is identically one, so their gradients are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentModelParams {
    pub input_dim: usize,
    pub dim: usize,
    pub hidden: usize,
    pub proj_img: Tensor,
    pub proj_txt: Tensor,
    pub proj_vid: Tensor,
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_o: Tensor,
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub fuse_w: Tensor,
    pub fuse_b: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub align_vis: Tensor,
    pub align_txt: Tensor,
}

pub const PARAM_BLOCK_NAMES: [&str; 17] = [
    "proj_img", "proj_txt", "proj_vid", "attn_q", "attn_k", "attn_v", "attn_o", "gate_w",
    "gate_b", "fuse_w", "fuse_b", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "align_vis",
    "align_txt",
];

impl ContentModelParams {
    /// Seeded initialization: 1/sqrt(fan_in) normal weights, zero biases.
    pub fn init(input_dim: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| -> Tensor {
            let scale = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    scale * x
                })
                .collect();
            Tensor::from_vec(rows, cols, data)
        };
        ContentModelParams {
            input_dim,
            dim,
            hidden,
            proj_img: mat(input_dim, dim),
            proj_txt: mat(input_dim, dim),
            proj_vid: mat(input_dim, dim),
            attn_q: mat(dim, dim),
            attn_k: mat(dim, dim),
            attn_v: mat(dim, dim),
            attn_o: mat(dim, dim),
            gate_w: mat(3 * dim, dim),
            gate_b: Tensor::zeros(1, dim),
            fuse_w: mat(3 * dim, dim),
            fuse_b: Tensor::zeros(1, dim),
            mlp_w1: mat(dim, hidden),
            mlp_b1: Tensor::zeros(1, hidden),
            mlp_w2: mat(hidden, 1),
            mlp_b2: Tensor::zeros(1, 1),
            align_vis: mat(dim, dim),
            align_txt: mat(dim, dim),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("proj_img", &self.proj_img),
            ("proj_txt", &self.proj_txt),
            ("proj_vid", &self.proj_vid),
            ("attn_q", &self.attn_q),
            ("attn_k", &self.attn_k),
            ("attn_v", &self.attn_v),
            ("attn_o", &self.attn_o),
            ("gate_w", &self.gate_w),
            ("gate_b", &self.gate_b),
            ("fuse_w", &self.fuse_w),
            ("fuse_b", &self.fuse_b),
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
            ("align_vis", &self.align_vis),
            ("align_txt", &self.align_txt),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("proj_img", &mut self.proj_img),
            ("proj_txt", &mut self.proj_txt),
            ("proj_vid", &mut self.proj_vid),
            ("attn_q", &mut self.attn_q),
            ("attn_k", &mut self.attn_k),
            ("attn_v", &mut self.attn_v),
            ("attn_o", &mut self.attn_o),
            ("gate_w", &mut self.gate_w),
            ("gate_b", &mut self.gate_b),
            ("fuse_w", &mut self.fuse_w),
            ("fuse_b", &mut self.fuse_b),
            ("mlp_w1", &mut self.mlp_w1),
            ("mlp_b1", &mut self.mlp_b1),
            ("mlp_w2", &mut self.mlp_w2),
            ("mlp_b2", &mut self.mlp_b2),
            ("align_vis", &mut self.align_vis),
            ("align_txt", &mut self.align_txt),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, t)| t.all_finite())
    }
}

/// Training hyperparameters for the content objective.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub margin: f64,
    pub align_temp: f64,
    pub lambda_huber: f64,
    pub lambda_pair: f64,
    pub lambda_align: f64,
    pub lambda_mu: f64,
    pub shared_dim: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 2e-4,
            weight_decay: 1e-2,
            batch_size: 64,
            huber_delta: 1.0,
            margin: 0.1,
            align_temp: 0.07,
            lambda_huber: 1.0,
            lambda_pair: 0.5,
            lambda_align: 0.1,
            lambda_mu: 0.01,
            shared_dim: 64,
            mlp_hidden: 32,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(OmniError::Config("epochs and batch_size must be positive".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(OmniError::Config("learning_rate must be >= 0".into()));
        }
        if self.huber_delta <= 0.0 || self.align_temp <= 0.0 {
            return Err(OmniError::Config(
                "huber_delta and align_temp must be positive".into(),
            ));
        }
        if self.margin < 0.0 || self.weight_decay < 0.0 {
            return Err(OmniError::Config("margin and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One training sample: masked modality vectors, presence flags, a
/// standardized target, and its bin weight.
#[derive(Debug, Clone)]
pub struct ContentSample {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub video: Vec<f64>,
    pub has_image: bool,
    pub has_text: bool,
    pub has_video: bool,
    pub target_std: f64,
    pub weight: f64,
    pub platform_id: u32,
}

/// A dense batch view over samples; absent-modality rows are all-zero.
#[derive(Debug, Clone)]
pub struct Batch {
    pub image: Tensor,
    pub text: Tensor,
    pub video: Tensor,
    pub img_mask: Vec<f64>,
    pub txt_mask: Vec<f64>,
    pub vid_mask: Vec<f64>,
    pub target_std: Vec<f64>,
    pub weight: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[&ContentSample]) -> Batch {
        let n = samples.len();
        assert!(n > 0, "empty batch");
        let d = samples[0].image.len();
        let mut image = Tensor::zeros(n, d);
        let mut text = Tensor::zeros(n, d);
        let mut video = Tensor::zeros(n, d);
        let mut img_mask = Vec::with_capacity(n);
        let mut txt_mask = Vec::with_capacity(n);
        let mut vid_mask = Vec::with_capacity(n);
        let mut target_std = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        for (i, s) in samples.iter().enumerate() {
            if s.has_image {
                image.row_mut(i).copy_from_slice(&s.image);
            }
            if s.has_text {
                text.row_mut(i).copy_from_slice(&s.text);
            }
            if s.has_video {
                video.row_mut(i).copy_from_slice(&s.video);
            }
            img_mask.push(s.has_image as u8 as f64);
            txt_mask.push(s.has_text as u8 as f64);
            vid_mask.push(s.has_video as u8 as f64);
            target_std.push(s.target_std);
            weight.push(s.weight);
        }
        Batch {
            image,
            text,
            video,
            img_mask,
            txt_mask,
            vid_mask,
            target_std,
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.img_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.img_mask.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BinWeights, LabelScaler};
    use approx::assert_relative_eq;
    use rand::Rng;

    /// 1x1-dim params where every path is hand-computable: identity
    /// projections, zero attention, sum fusion, identity head.
    fn tiny_params(gate_bias: f64) -> ContentModelParams {
        let mut p = ContentModelParams::init(1, 1, 1, 0);
        p.proj_img = Tensor::from_vec(1, 1, vec![1.0]);
        p.proj_txt = Tensor::from_vec(1, 1, vec![1.0]);
        p.proj_vid = Tensor::from_vec(1, 1, vec![1.0]);
        p.attn_v = Tensor::from_vec(1, 1, vec![0.0]);
        p.attn_o = Tensor::from_vec(1, 1, vec![0.0]);
        p.gate_w = Tensor::zeros(3, 1);
        p.gate_b = Tensor::from_vec(1, 1, vec![gate_bias]);
        p.fuse_w = Tensor::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        p.fuse_b = Tensor::zeros(1, 1);
        p.mlp_w1 = Tensor::from_vec(1, 1, vec![1.0]);
        p.mlp_b1 = Tensor::zeros(1, 1);
        p.mlp_w2 = Tensor::from_vec(1, 1, vec![1.0]);
        p.mlp_b2 = Tensor::zeros(1, 1);
        p
    }

    fn sample(img: f64, txt: f64, vid: f64, present: (bool, bool, bool)) -> ContentSample {
        ContentSample {
            image: vec![img],
            text: vec![txt],
            video: vec![vid],
            has_image: present.0,
            has_text: present.1,
            has_video: present.2,
            target_std: 0.0,
            weight: 1.0,
            platform_id: 0,
        }
    }

    fn alpha_of(params: &ContentModelParams, samples: &[ContentSample]) -> Vec<f64> {
        predict_alpha(params, samples)
    }

    fn gelu_ref(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
    }

    #[test]
    fn gated_fusion_half_gate() {
        // zero gate pre-activation -> g = 0.5 -> fused interpolates the
        // linear mix (v + t + s = 6) and the mean token (2): 0.5*6 + 0.5*2
        let p = tiny_params(0.0);
        let a = alpha_of(&p, &[sample(2.0, 4.0, 0.0, (true, true, true))]);
        assert_relative_eq!(a[0], gelu_ref(4.0), epsilon = 1e-12);
    }

    #[test]
    fn gated_fusion_saturated_gate() {
        // gate bias 30 saturates the sigmoid to ~1
        let p = tiny_params(30.0);
        let a = alpha_of(&p, &[sample(2.0, 4.0, 0.0, (true, true, true))]);
        assert_relative_eq!(a[0], gelu_ref(6.0), epsilon = 1e-9);
    }

    #[test]
    fn all_modalities_zero_gives_bias_path() {
        let p = tiny_params(0.0);
        let a = alpha_of(&p, &[sample(0.0, 0.0, 0.0, (true, true, true))]);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn absent_modality_content_is_ignored() {
        let p = ContentModelParams::init(6, 4, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s1 = sample(0.0, 0.0, 0.0, (false, true, true));
        let mut s2 = s1.clone();
        s1.image = vec![9.0; 6];
        s2.image = vec![-3.0; 6];
        s1.text = base.clone();
        s2.text = base.clone();
        s1.video = base.clone();
        s2.video = base;
        let a = alpha_of(&p, &[s1, s2]);
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn attention_mixes_present_modalities() {
        // with nonzero attn_v/attn_o the text token must influence the image
        // token's output
        let mut p = tiny_params(0.0);
        p.attn_v = Tensor::from_vec(1, 1, vec![1.0]);
        p.attn_o = Tensor::from_vec(1, 1, vec![1.0]);
        // v_att = v + t, t_att = t + v, s_att = s + t
        let a = alpha_of(&p, &[sample(1.0, 2.0, 4.0, (true, true, true))]);
        // linear mix (3 + 3 + 6) = 12, mean token 4: 0.5*12 + 0.5*4 = 8
        assert_relative_eq!(a[0], gelu_ref(8.0), epsilon = 1e-12);
    }

    fn random_batch_samples(n: usize, dim: usize, seed: u64) -> Vec<ContentSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut v = |_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
                let mut s = sample(0.0, 0.0, 0.0, (true, true, true));
                s.image = v(0);
                s.text = v(1);
                s.video = v(2);
                // leave a few samples with missing modalities
                s.has_image = i % 5 != 3;
                s.has_text = i % 4 != 2;
                s.has_video = i % 3 != 1;
                if !s.has_image && !s.has_text && !s.has_video {
                    s.has_text = true;
                }
                s.target_std = rng.gen_range(-2.0..2.0);
                s.weight = if i % 2 == 0 { 1.0 } else { 1.5 };
                s
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = ContentModelParams::init(5, 4, 3, 21);
        let samples = random_batch_samples(9, 5, 33);
        let refs: Vec<&ContentSample> = samples.iter().collect();
        let batch = Batch::from_samples(&refs);
        let cfg = TrainConfig {
            shared_dim: 4,
            mlp_hidden: 3,
            ..TrainConfig::default()
        };
        let report = grad_check(&params, &batch, &cfg).unwrap();
        for (name, err) in &report {
            assert!(
                *err < 1e-4,
                "block {name} gradient mismatch: relative error {err}"
            );
        }
        // unused single-token attention projections have exactly zero gradient
        for (name, err) in &report {
            if *name == "attn_q" || *name == "attn_k" {
                assert_eq!(*err, 0.0);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let samples = random_batch_samples(30, 5, 1);
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            shared_dim: 4,
            mlp_hidden: 3,
            batch_size: 8,
            seed: 13,
            ..TrainConfig::default()
        };
        let (params, _) = train_content(&samples, &[], &cfg).unwrap();
        let init = ContentModelParams::init(5, 4, 3, 13);
        assert_eq!(params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let samples = random_batch_samples(40, 5, 2);
        let cfg = TrainConfig {
            epochs: 2,
            shared_dim: 4,
            mlp_hidden: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (p1, t1) = train_content(&samples, &samples[..10], &cfg).unwrap();
        let (p2, t2) = train_content(&samples, &samples[..10], &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn training_reduces_loss_on_learnable_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<ContentSample> = (0..120)
            .map(|_| {
                let img: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut s = sample(0.0, 0.0, 0.0, (true, true, false));
                s.text = img.clone();
                s.target_std = img.iter().sum::<f64>() / 2.0;
                s.image = img;
                s
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 5e-3,
            weight_decay: 0.0,
            shared_dim: 8,
            mlp_hidden: 8,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, trace) = train_content(&samples, &[], &cfg).unwrap();
        let first = trace.first().unwrap();
        let last = trace.last().unwrap();
        assert!(
            last.huber < 0.7 * first.huber,
            "huber did not improve: {} -> {}",
            first.huber,
            last.huber
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let samples = random_batch_samples(30, 5, 4);
        let cfg = TrainConfig {
            epochs: 1,
            shared_dim: 4,
            mlp_hidden: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (params, _) = train_content(&samples, &[], &cfg).unwrap();
        let scaler = LabelScaler::fit(&[(0, 1.0), (0, 3.0), (1, 0.5), (1, 2.5)]).unwrap();
        let bins = BinWeights::fit(&(1..=9).map(f64::from).collect::<Vec<_>>()).unwrap();
        let ckpt = Checkpoint {
            params,
            config: cfg,
            scaler,
            bins,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.otcp");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn checkpoint_rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.otcp");
        std::fs::write(&path, b"XXXX0000").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn config_rejects_negative_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fused_embeddings_are_unit_norm() {
        let params = ContentModelParams::init(5, 4, 3, 8);
        let samples = random_batch_samples(12, 5, 9);
        let z = fused_embeddings(&params, &samples);
        assert_eq!(z.rows, 12);
        for r in 0..z.rows {
            let norm: f64 = z.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }
}
