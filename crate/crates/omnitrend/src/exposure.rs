//! Platform exposure estimator: gradient-boosted regression trees with a
//! weighted Huber objective on residual targets, early stopping on the
//! validation loss, and a post-hoc affine moment calibration.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelScaler;
use crate::error::{OmniError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExposureConfig {
    pub max_depth: usize,
    pub shrinkage: f64,
    pub max_rounds: usize,
    pub early_stopping_patience: usize,
    pub huber_delta: f64,
    /// Minimum sample count on each side of a split (1 = unrestricted).
    pub min_samples_leaf: usize,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig {
            max_depth: 8,
            shrinkage: 0.03,
            max_rounds: 2000,
            early_stopping_patience: 200,
            huber_delta: 1.0,
            min_samples_leaf: 100,
        }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(OmniError::Config("max_depth must be positive".into()));
        }
        if self.shrinkage <= 0.0 || self.huber_delta <= 0.0 {
            return Err(OmniError::Config(
                "shrinkage and huber_delta must be positive".into(),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(OmniError::Config("min_samples_leaf must be positive".into()));
        }
        Ok(())
    }
}

/// Affine moment-matching map φ̂' = a·φ̂ + b fitted on the train split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
}

impl CalibrationParams {
    pub fn apply(&self, phi: f64) -> f64 {
        self.a * phi + self.b
    }
}

/// a = std(r)/std(φ̂) (1 when φ̂ is constant), b = mean(r) − a·mean(φ̂);
/// population moments on the train split.
pub fn calibrate_phi(phi_raw: &[f64], r: &[f64]) -> Result<CalibrationParams> {
    if phi_raw.len() != r.len() || phi_raw.is_empty() {
        return Err(OmniError::Data("calibration needs aligned nonempty data".into()));
    }
    let n = r.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let std = |v: &[f64], m: f64| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let (mp, mr) = (mean(phi_raw), mean(r));
    let (sp, sr) = (std(phi_raw, mp), std(r, mr));
    let a = if sp > 1e-12 { sr / sp } else { 1.0 };
    Ok(CalibrationParams { a, b: mr - a * mp })
}

/// r = ỹ − de-standardized α̂, both in raw log scale.
pub fn residual_targets(
    y_tilde: &[f64],
    alpha_std: &[f64],
    platforms: &[u32],
    scaler: &LabelScaler,
) -> Result<Vec<f64>> {
    if y_tilde.len() != alpha_std.len() || y_tilde.len() != platforms.len() {
        return Err(OmniError::Data("residual targets: length mismatch".into()));
    }
    y_tilde
        .iter()
        .zip(alpha_std)
        .zip(platforms)
        .map(|((&yt, &a), &p)| {
            let r = yt - scaler.invert(p, a)?;
            if !r.is_finite() {
                return Err(OmniError::Numeric("non-finite residual target".into()));
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub leaf_value: f64,
    pub is_leaf: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if n.is_leaf {
                return n.leaf_value;
            }
            node = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf {
                0
            } else {
                1 + go(nodes, n.left as usize).max(go(nodes, n.right as usize))
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoostedEnsemble {
    pub base: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
    /// Number of trees actually used at prediction time.
    pub best_iteration: usize,
    pub calibration: Option<CalibrationParams>,
    /// Total split gain accumulated per feature across used trees.
    pub feature_gain: Vec<f64>,
}

impl BoostedEnsemble {
    /// Raw (uncalibrated) φ̂ for one row.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut out = self.base;
        for t in &self.trees[..self.best_iteration] {
            out += self.shrinkage * t.predict_row(x);
        }
        out
    }

    /// Raw φ̂ for every row of a feature matrix.
    pub fn predict(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Calibrated φ̂; errors if calibration was never fitted.
    pub fn predict_calibrated(&self, x: &Tensor) -> Result<Vec<f64>> {
        let cal = self
            .calibration
            .ok_or_else(|| OmniError::Data("ensemble has no calibration".into()))?;
        Ok(self.predict(x).into_iter().map(|p| cal.apply(p)).collect())
    }
}

/// Weighted median: smallest value whose cumulative weight reaches half the
/// total. Huber-consistent constant initializer.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(OmniError::Data("weighted median of empty/mismatched data".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(OmniError::Data("weights must have positive mass".into()));
    }
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= 0.5 * total {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().unwrap()])
}

fn huber_psi(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Mean weighted Huber loss of errors e = target − prediction.
pub fn weighted_huber_loss(targets: &[f64], preds: &[f64], weights: &[f64], delta: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&t, &p), &w) in targets.iter().zip(preds).zip(weights) {
        let e = (t - p).abs();
        let h = if e <= delta {
            0.5 * e * e
        } else {
            delta * (e - 0.5 * delta)
        };
        num += w * h;
        den += w;
    }
    num / den
}

const MIN_GAIN: f64 = 1e-12;

struct TreeBuilder<'a> {
    x: &'a Tensor,
    // per feature: sample indices sorted by (value, index)
    sorted: &'a [Vec<u32>],
    grad: &'a [f64],
    weight: &'a [f64],
    delta: f64,
    max_depth: usize,
    min_samples_leaf: usize,
}

#[derive(Clone, Copy)]
struct SplitCand {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// Exact greedy level-order build. Returns the tree, per-sample leaf
    /// predictions, and gain added per feature.
    fn build(&self) -> (Tree, Vec<f64>, Vec<f64>) {
        let n = self.grad.len();
        let n_features = self.x.cols;
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut node_of: Vec<u32> = vec![0; n];
        let mut gains = vec![0.0; n_features];

        let leaf = |value: f64| TreeNode {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            leaf_value: value,
            is_leaf: true,
        };
        nodes.push(leaf(0.0));
        let mut active: Vec<u32> = vec![0];

        for depth in 0..=self.max_depth {
            if active.is_empty() {
                break;
            }
            // compact slot per active node
            let mut slot_of: Vec<usize> = vec![usize::MAX; nodes.len()];
            for (s, &nid) in active.iter().enumerate() {
                slot_of[nid as usize] = s;
            }
            let n_slots = active.len();
            let mut tot_w = vec![0.0; n_slots];
            let mut tot_wg = vec![0.0; n_slots];
            let mut tot_cnt = vec![0usize; n_slots];
            for i in 0..n {
                let s = slot_of[node_of[i] as usize];
                if s != usize::MAX {
                    tot_w[s] += self.weight[i];
                    tot_wg[s] += self.weight[i] * self.grad[i];
                    tot_cnt[s] += 1;
                }
            }

            // at max depth (or single-sample nodes) everything becomes a leaf
            let at_limit = depth == self.max_depth;
            let mut best: Vec<Option<SplitCand>> = vec![None; n_slots];
            if !at_limit {
                let mut run_w = vec![0.0; n_slots];
                let mut run_wg = vec![0.0; n_slots];
                let mut run_cnt = vec![0usize; n_slots];
                let mut prev = vec![f64::NAN; n_slots];
                for f in 0..n_features {
                    run_w.fill(0.0);
                    run_wg.fill(0.0);
                    run_cnt.fill(0);
                    prev.fill(f64::NAN);
                    for &iu in &self.sorted[f] {
                        let i = iu as usize;
                        let s = slot_of[node_of[i] as usize];
                        if s == usize::MAX {
                            continue;
                        }
                        let v = self.x.get(i, f);
                        if run_cnt[s] > 0 && v > prev[s] {
                            // candidate threshold between distinct values
                            let lw = run_w[s];
                            let rw = tot_w[s] - lw;
                            let enough = run_cnt[s] >= self.min_samples_leaf
                                && tot_cnt[s] - run_cnt[s] >= self.min_samples_leaf;
                            if lw > 0.0 && rw > 0.0 && enough {
                                let lwg = run_wg[s];
                                let rwg = tot_wg[s] - lwg;
                                let gain = lwg * lwg / lw + rwg * rwg / rw
                                    - tot_wg[s] * tot_wg[s] / tot_w[s];
                                // strict improvement keeps the lowest feature
                                // index and lowest threshold on ties
                                if gain > best[s].map_or(MIN_GAIN, |b| b.gain) {
                                    best[s] = Some(SplitCand {
                                        gain,
                                        feature: f,
                                        threshold: 0.5 * (prev[s] + v),
                                    });
                                }
                            }
                        }
                        run_w[s] += self.weight[i];
                        run_wg[s] += self.weight[i] * self.grad[i];
                        run_cnt[s] += 1;
                        prev[s] = v;
                    }
                }
            }

            let mut next_active: Vec<u32> = Vec::new();
            for (s, &nid) in active.iter().enumerate() {
                match best[s] {
                    Some(cand) => {
                        let li = nodes.len() as u32;
                        nodes.push(leaf(0.0));
                        let ri = nodes.len() as u32;
                        nodes.push(leaf(0.0));
                        let node = &mut nodes[nid as usize];
                        node.is_leaf = false;
                        node.feature = cand.feature as u32;
                        node.threshold = cand.threshold;
                        node.left = li;
                        node.right = ri;
                        gains[cand.feature] += cand.gain;
                        next_active.push(li);
                        next_active.push(ri);
                    }
                    None => {
                        // finalize as leaf: clipped weighted Newton step
                        let value = if tot_w[s] > 0.0 {
                            (tot_wg[s] / tot_w[s]).clamp(-self.delta, self.delta)
                        } else {
                            0.0
                        };
                        nodes[nid as usize].leaf_value = value;
                    }
                }
            }

            // reroute samples of split nodes to their children
            if !next_active.is_empty() {
                for i in 0..n {
                    let nid = node_of[i] as usize;
                    if slot_of[nid] != usize::MAX && !nodes[nid].is_leaf {
                        let node = &nodes[nid];
                        node_of[i] = if self.x.get(i, node.feature as usize) <= node.threshold {
                            node.left
                        } else {
                            node.right
                        };
                    }
                }
            }
            active = next_active;
        }

        let tree = Tree { nodes };
        let preds: Vec<f64> = node_of
            .iter()
            .map(|&nid| tree.nodes[nid as usize].leaf_value)
            .collect();
        (tree, preds, gains)
    }
}

/// One row of the boosting trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Fits the boosted ensemble on (features, residual targets, bin weights).
/// An empty validation split disables early stopping.
pub fn fit_exposure(
    train_x: &Tensor,
    train_r: &[f64],
    train_w: &[f64],
    val_x: &Tensor,
    val_r: &[f64],
    val_w: &[f64],
    cfg: &ExposureConfig,
) -> Result<(BoostedEnsemble, Vec<RoundTrace>)> {
    cfg.validate()?;
    let n = train_x.rows;
    if n == 0 || train_r.len() != n || train_w.len() != n {
        return Err(OmniError::Data("exposure fit: empty or misaligned train data".into()));
    }
    if val_x.rows != val_r.len() || val_x.rows != val_w.len() {
        return Err(OmniError::Data("exposure fit: misaligned validation data".into()));
    }
    if !train_x.all_finite()
        || !val_x.all_finite()
        || train_r.iter().any(|v| !v.is_finite())
        || val_r.iter().any(|v| !v.is_finite())
    {
        return Err(OmniError::Numeric("non-finite exposure input".into()));
    }

    // global presort per feature, ties by sample index
    let sorted: Vec<Vec<u32>> = (0..train_x.cols)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                train_x
                    .get(a as usize, f)
                    .total_cmp(&train_x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let base = weighted_median(train_r, train_w)?;
    let mut ensemble = BoostedEnsemble {
        base,
        shrinkage: cfg.shrinkage,
        trees: Vec::new(),
        best_iteration: 0,
        calibration: None,
        feature_gain: vec![0.0; train_x.cols],
    };

    let mut train_pred = vec![base; n];
    let mut val_pred = vec![base; val_x.rows];
    let use_val = val_x.rows > 0;
    let mut best_loss = if use_val {
        weighted_huber_loss(val_r, &val_pred, val_w, cfg.huber_delta)
    } else {
        f64::INFINITY
    };
    let mut best_round = 0usize;
    let mut trace = Vec::new();
    let mut per_round_gains: Vec<Vec<f64>> = Vec::new();

    for round in 0..cfg.max_rounds {
        let grad: Vec<f64> = train_r
            .iter()
            .zip(&train_pred)
            .map(|(&r, &p)| huber_psi(r - p, cfg.huber_delta))
            .collect();
        let builder = TreeBuilder {
            x: train_x,
            sorted: &sorted,
            grad: &grad,
            weight: train_w,
            delta: cfg.huber_delta,
            max_depth: cfg.max_depth,
            min_samples_leaf: cfg.min_samples_leaf,
        };
        let (tree, leaf_preds, gains) = builder.build();
        for (p, lp) in train_pred.iter_mut().zip(&leaf_preds) {
            *p += cfg.shrinkage * lp;
        }
        for (i, p) in val_pred.iter_mut().enumerate() {
            *p += cfg.shrinkage * tree.predict_row(val_x.row(i));
        }
        ensemble.trees.push(tree);
        per_round_gains.push(gains);

        let train_loss = weighted_huber_loss(train_r, &train_pred, train_w, cfg.huber_delta);
        let val_loss = if use_val {
            let l = weighted_huber_loss(val_r, &val_pred, val_w, cfg.huber_delta);
            if l < best_loss {
                best_loss = l;
                best_round = round + 1;
            }
            Some(l)
        } else {
            None
        };
        trace.push(RoundTrace {
            round,
            train_loss,
            val_loss,
        });
        if use_val && (round + 1) - best_round >= cfg.early_stopping_patience {
            break;
        }
    }

    ensemble.best_iteration = if use_val {
        best_round
    } else {
        ensemble.trees.len()
    };
    for gains in &per_round_gains[..ensemble.best_iteration] {
        for (acc, g) in ensemble.feature_gain.iter_mut().zip(gains) {
            *acc += g;
        }
    }
    Ok((ensemble, trace))
}

const MODEL_MAGIC: &[u8; 4] = b"OTGB";
const MODEL_VERSION: u16 = 1;

pub fn write_model(path: &Path, ensemble: &BoostedEnsemble) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(ensemble)
        .map_err(|e| OmniError::Format(format!("model encode: {e}")))?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<BoostedEnsemble> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(OmniError::Format("bad model magic".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    if u16::from_le_bytes(v) != MODEL_VERSION {
        return Err(OmniError::Format("unsupported model version".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| OmniError::Format(format!("model decode: {e}")))
}

/// Total split gain per feature over the used trees, as CSV.
pub fn write_feature_importance_csv(
    path: &Path,
    names: &[String],
    ensemble: &BoostedEnsemble,
) -> Result<()> {
    if names.len() != ensemble.feature_gain.len() {
        return Err(OmniError::Data("importance: name/feature count mismatch".into()));
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        ensemble.feature_gain[b]
            .total_cmp(&ensemble.feature_gain[a])
            .then(a.cmp(&b))
    });
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "feature,total_gain")?;
    for i in order {
        writeln!(w, "{},{}", names[i], ensemble.feature_gain[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::splitmix64;
    use approx::assert_relative_eq;

    fn col(values: &[f64]) -> Tensor {
        Tensor::from_vec(values.len(), 1, values.to_vec())
    }

    fn empty_val() -> (Tensor, Vec<f64>, Vec<f64>) {
        (Tensor::zeros(0, 1), vec![], vec![])
    }

    #[test]
    fn stump_oracle() {
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        let r = [0.0, 2.0, 10.0, 12.0];
        let w = [1.0; 4];
        let cfg = ExposureConfig {
            max_depth: 1,
            shrinkage: 1.0,
            max_rounds: 1,
            early_stopping_patience: 200,
            huber_delta: 1e9,
            min_samples_leaf: 1,
        };
        let (v, vr, vw) = empty_val();
        let (ens, _) = fit_exposure(&x, &r, &w, &v, &vr, &vw, &cfg).unwrap();
        let preds = ens.predict(&x);
        for (p, e) in preds.iter().zip([1.0, 1.0, 11.0, 11.0]) {
            assert_relative_eq!(*p, e, epsilon = 1e-9);
        }
        assert_eq!(ens.trees[0].depth(), 1);
    }

    #[test]
    fn zero_rounds_is_weighted_median() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let r = [0.0, 2.0, 10.0, 12.0];
        let w = [1.0; 4];
        let cfg = ExposureConfig {
            max_rounds: 0,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (ens, _) = fit_exposure(&x, &r, &w, &v, &vr, &vw, &cfg).unwrap();
        let expect = weighted_median(&r, &w).unwrap();
        assert!(ens.predict(&x).iter().all(|&p| p == expect));
    }

    #[test]
    fn weighted_median_hand_cases() {
        assert_eq!(weighted_median(&[0.0, 2.0, 10.0, 12.0], &[1.0; 4]).unwrap(), 2.0);
        assert_eq!(weighted_median(&[5.0], &[3.0]).unwrap(), 5.0);
        // heavy weight dominates
        assert_eq!(
            weighted_median(&[1.0, 100.0], &[1.0, 10.0]).unwrap(),
            100.0
        );
    }

    fn random_regression(n: usize, d: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut x = Tensor::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut target = 0.0;
            for f in 0..d {
                let v = ((splitmix64(seed ^ splitmix64((i * d + f) as u64)) % 2000) as f64
                    / 1000.0)
                    - 1.0;
                x.set(i, f, v);
                target += v * (f as f64 + 1.0) * 0.3;
            }
            y.push(target + ((splitmix64(seed ^ (i as u64) << 32) % 100) as f64) * 1e-3);
        }
        (x, y)
    }

    #[test]
    fn duplication_invariance() {
        let (x, y) = random_regression(60, 3, 5);
        let w = vec![1.0; 60];
        let cfg = ExposureConfig {
            max_depth: 3,
            shrinkage: 0.1,
            max_rounds: 20,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (ens1, _) = fit_exposure(&x, &y, &w, &v, &vr, &vw, &cfg).unwrap();

        let mut x2 = Tensor::zeros(120, 3);
        let mut y2 = Vec::new();
        for i in 0..120 {
            x2.row_mut(i).copy_from_slice(x.row(i % 60));
            y2.push(y[i % 60]);
        }
        let (v2, vr2, vw2) = empty_val();
        let (ens2, _) = fit_exposure(&x2, &y2, &vec![1.0; 120], &v2, &vr2, &vw2, &cfg).unwrap();
        let p1 = ens1.predict(&x);
        let p2 = ens2.predict(&x);
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn train_loss_monotone_under_boosting() {
        let (x, y) = random_regression(100, 4, 6);
        let w = vec![1.0; 100];
        let cfg = ExposureConfig {
            max_depth: 3,
            shrinkage: 0.1,
            max_rounds: 60,
            huber_delta: 1e9,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (_, trace) = fit_exposure(&x, &y, &w, &v, &vr, &vw, &cfg).unwrap();
        for pair in trace.windows(2) {
            assert!(
                pair[1].train_loss <= pair[0].train_loss + 1e-9,
                "round {}: {} -> {}",
                pair[1].round,
                pair[0].train_loss,
                pair[1].train_loss
            );
        }
    }

    #[test]
    fn early_stopping_returns_best_round() {
        let (x, y) = random_regression(80, 3, 7);
        // validation from a different distribution so overfitting shows up
        let (vx, vy) = random_regression(40, 3, 8);
        let w = vec![1.0; 80];
        let vw = vec![1.0; 40];
        let cfg = ExposureConfig {
            max_depth: 4,
            shrinkage: 0.3,
            max_rounds: 200,
            early_stopping_patience: 10,
            ..ExposureConfig::default()
        };
        let (ens, trace) = fit_exposure(&x, &y, &w, &vx, &vy, &vw, &cfg).unwrap();
        let best = trace
            .iter()
            .map(|t| t.val_loss.unwrap())
            .fold(f64::INFINITY, f64::min);
        if ens.best_iteration > 0 {
            assert_eq!(
                trace[ens.best_iteration - 1].val_loss.unwrap(),
                best,
                "best_iteration must point at the minimum val loss"
            );
        }
        // stopped before max rounds
        assert!(trace.len() < cfg.max_rounds);
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = random_regression(200, 3, 9);
        let w = vec![1.0; 200];
        let cfg = ExposureConfig {
            max_depth: 2,
            shrinkage: 0.5,
            max_rounds: 5,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (ens, _) = fit_exposure(&x, &y, &w, &v, &vr, &vw, &cfg).unwrap();
        for t in &ens.trees {
            assert!(t.depth() <= 2);
        }
    }

    #[test]
    fn calibration_oracle() {
        // φ̂ with mean 0, var 1; r with mean 2, var 4
        let phi = [-1.0, 1.0];
        let r = [0.0, 4.0];
        let cal = calibrate_phi(&phi, &r).unwrap();
        assert_relative_eq!(cal.a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(cal.b, 2.0, epsilon = 1e-12);
        // applied moments match
        let mapped: Vec<f64> = phi.iter().map(|&p| cal.apply(p)).collect();
        assert_relative_eq!(mapped.iter().sum::<f64>() / 2.0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn calibration_identity_and_degenerate() {
        let v = [1.0, 2.0, 3.0];
        let cal = calibrate_phi(&v, &v).unwrap();
        assert_relative_eq!(cal.a, 1.0, epsilon = 1e-9);
        assert_relative_eq!(cal.b, 0.0, epsilon = 1e-9);
        let constant = [5.0, 5.0, 5.0];
        let cal = calibrate_phi(&constant, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cal.a, 1.0);
        assert_relative_eq!(cal.b, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_target_arithmetic() {
        let scaler = LabelScaler::fit(&[(0, 1.0), (0, 3.0)]).unwrap(); // mean 2, std 1
        // de-standardized alpha = a*1 + 2
        let r = residual_targets(&[4.6], &[1.1], &[0], &scaler).unwrap();
        assert_relative_eq!(r[0], 4.6 - 3.1, epsilon = 1e-12);
        // constant alpha_std of -2 -> de-standardized 0 -> r = y_tilde
        let r = residual_targets(&[4.6], &[-2.0], &[0], &scaler).unwrap();
        assert_relative_eq!(r[0], 4.6, epsilon = 1e-12);
    }

    #[test]
    fn model_file_round_trip() {
        let (x, y) = random_regression(50, 3, 10);
        let w = vec![1.0; 50];
        let cfg = ExposureConfig {
            max_depth: 3,
            max_rounds: 10,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (mut ens, _) = fit_exposure(&x, &y, &w, &v, &vr, &vw, &cfg).unwrap();
        ens.calibration = Some(calibrate_phi(&ens.predict(&x), &y).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.otgb");
        write_model(&path, &ens).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded, ens);
        assert_eq!(loaded.predict(&x), ens.predict(&x));
    }

    #[test]
    fn importance_csv_written() {
        let (x, y) = random_regression(50, 3, 11);
        let w = vec![1.0; 50];
        let cfg = ExposureConfig {
            max_depth: 2,
            max_rounds: 5,
            ..ExposureConfig::default()
        };
        let (v, vr, vw) = empty_val();
        let (ens, _) = fit_exposure(&x, &y, &w, &v, &vr, &vw, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("importance.csv");
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        write_feature_importance_csv(&path, &names, &ens).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("feature,total_gain\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
