//! Deterministic training loop: adaptive moment optimizer with decoupled
//! weight decay and a cosine-decayed step size.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{content_losses, forward, Batch, ContentModelParams, ContentSample, ParamIds, TrainConfig};
use crate::error::{OmniError, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub split: &'static str,
    pub huber: f64,
    pub pair: f64,
    pub align: f64,
    pub mu: f64,
    pub total: f64,
}

fn mix(seed: u64, tag: u64, idx: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ idx.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Cosine decay from the base rate to zero over `total` steps; nonincreasing.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let frac = step as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: usize,
}

impl AdamW {
    fn new(params: &ContentModelParams) -> Self {
        let shapes: Vec<(usize, usize)> = params
            .blocks()
            .iter()
            .map(|(_, t)| (t.rows, t.cols))
            .collect();
        AdamW {
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ContentModelParams, grads: &[Tensor], lr: f64, wd: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (bi, (_, theta)) in params.blocks_mut().into_iter().enumerate() {
            let g = &grads[bi];
            let m = &mut self.m[bi];
            let v = &mut self.v[bi];
            for i in 0..theta.len() {
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * g.data[i];
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * g.data[i] * g.data[i];
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                theta.data[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * theta.data[i]);
            }
        }
    }
}

fn eval_losses(
    params: &ContentModelParams,
    samples: &[ContentSample],
    cfg: &TrainConfig,
    epoch: usize,
    split: &'static str,
) -> Result<EpochTrace> {
    let mut sums = [0.0; 5];
    let mut count = 0usize;
    for (bi, chunk) in samples.chunks(cfg.batch_size).enumerate() {
        let refs: Vec<&ContentSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, params);
        let fwd = forward(&mut tape, &ids, &batch);
        let losses = content_losses(
            &mut tape,
            &ids,
            &fwd,
            &batch,
            cfg,
            mix(cfg.seed, 500 + epoch as u64, bi as u64),
        )?;
        let n = batch.len() as f64;
        for (acc, id) in sums.iter_mut().zip([
            losses.huber,
            losses.pair,
            losses.align,
            losses.mu,
            losses.total,
        ]) {
            *acc += tape.scalar_value(id) * n;
        }
        count += batch.len();
    }
    let n = count.max(1) as f64;
    Ok(EpochTrace {
        epoch,
        split,
        huber: sums[0] / n,
        pair: sums[1] / n,
        align: sums[2] / n,
        mu: sums[3] / n,
        total: sums[4] / n,
    })
}

/// Trains on standardized-label samples pooled across platforms. Fixed seed
/// implies a bit-identical result; non-finite losses abort.
pub fn train_content(
    train: &[ContentSample],
    val: &[ContentSample],
    cfg: &TrainConfig,
) -> Result<(ContentModelParams, Vec<EpochTrace>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(OmniError::Data("no training samples".into()));
    }
    let input_dim = train[0].image.len();
    let mut params =
        ContentModelParams::init(input_dim, cfg.shared_dim, cfg.mlp_hidden, cfg.seed);
    let mut opt = AdamW::new(&params);

    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut trace = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 100, epoch as u64));
        order.shuffle(&mut rng);

        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&ContentSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_samples(&refs);
            let mut tape = Tape::new();
            let ids = ParamIds::insert(&mut tape, &params);
            let fwd = forward(&mut tape, &ids, &batch);
            let losses = content_losses(
                &mut tape,
                &ids,
                &fwd,
                &batch,
                cfg,
                mix(cfg.seed, 200, step as u64),
            )?;
            let loss = tape.scalar_value(losses.total);
            if !loss.is_finite() {
                return Err(OmniError::Numeric(format!(
                    "training diverged at step {step}: loss = {loss}"
                )));
            }
            let grads = tape.backward(losses.total);
            let block_grads: Vec<Tensor> = ids
                .ids
                .iter()
                .map(|id| grads[id.index()].clone())
                .collect();
            let lr = cosine_lr(cfg.learning_rate, step, total_steps);
            opt.step(&mut params, &block_grads, lr, cfg.weight_decay);
            step += 1;
        }

        trace.push(eval_losses(&params, train, cfg, epoch, "train")?);
        if !val.is_empty() {
            trace.push(eval_losses(&params, val, cfg, epoch, "val")?);
        }
        if !params.all_finite() {
            return Err(OmniError::Numeric(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
    }
    Ok((params, trace))
}

/// Writes the loss trace as CSV: epoch, split, L_huber, L_pair, L_align,
/// L_mu, L_total.
pub fn write_loss_trace_csv(path: &std::path::Path, trace: &[EpochTrace]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,split,huber,pair,align,mu,total")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.epoch, t.split, t.huber, t.pair, t.align, t.mu, t.total
        )?;
    }
    Ok(())
}
