//! Finite-difference verification of the analytic gradients.

use super::{content_losses, forward, Batch, ContentModelParams, ParamIds, TrainConfig};
use crate::error::Result;
use crate::tape::Tape;

/// Total objective value for fixed params on one batch.
pub fn loss_value(
    params: &ContentModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    pair_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ids = ParamIds::insert(&mut tape, params);
    let fwd = forward(&mut tape, &ids, batch);
    let losses = content_losses(&mut tape, &ids, &fwd, batch, cfg, pair_seed)?;
    Ok(tape.scalar_value(losses.total))
}

/// Compares the analytic gradient of the total objective against central
/// finite differences (step 1e-5). Returns the max relative error per
/// parameter block, with the block's max gradient magnitude (floored at
/// 1e-8) as denominator.
pub fn grad_check(
    params: &ContentModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<Vec<(&'static str, f64)>> {
    const STEP: f64 = 1e-5;
    let pair_seed = 42;

    let analytic = {
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, params);
        let fwd = forward(&mut tape, &ids, batch);
        let losses = content_losses(&mut tape, &ids, &fwd, batch, cfg, pair_seed)?;
        let grads = tape.backward(losses.total);
        ids.ids
            .iter()
            .map(|id| grads[id.index()].clone())
            .collect::<Vec<_>>()
    };

    let mut report = Vec::new();
    let names: Vec<&'static str> = params.blocks().iter().map(|(n, _)| *n).collect();
    for (bi, name) in names.iter().enumerate() {
        let block_len = params.blocks()[bi].1.len();
        let mut max_abs_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        for ei in 0..block_len {
            let mut perturbed = params.clone();
            perturbed.blocks_mut()[bi].1.data[ei] += STEP;
            let hi = loss_value(&perturbed, batch, cfg, pair_seed)?;
            perturbed.blocks_mut()[bi].1.data[ei] -= 2.0 * STEP;
            let lo = loss_value(&perturbed, batch, cfg, pair_seed)?;
            let numeric = (hi - lo) / (2.0 * STEP);
            let a = analytic[bi].data[ei];
            max_abs_diff = max_abs_diff.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        report.push((*name, max_abs_diff / max_mag.max(1e-8)));
    }
    Ok(report)
}
