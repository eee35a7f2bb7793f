//! Temporary probe: GBDT recovery ceiling for phi* with the real feature
//! pipeline, using a noisy phi* directly as target (oracle residuals).

use std::collections::{BTreeMap, HashMap};

use omnitrend::content::{fused_embeddings, ContentSample};
use omnitrend::context::{assemble_context_features, AuthorHistories};
use omnitrend::pipeline::{run_experiment, PipelineConfig, Variant};
use omnitrend::retrieval::{neighbor_stats, neighbor_weights};
use omnitrend::corpus::{chronological_split, SplitRole};
use omnitrend::exposure::{fit_exposure, ExposureConfig};
use omnitrend::pipeline::spearman;
use omnitrend::retrieval::{augment_context_features, EmbeddingIndex};
use omnitrend::synthgen::{generate_corpus, GeneratorConfig};
use omnitrend::tensor::Tensor;

fn main() {
    let cfg = GeneratorConfig::default_desk();
    let (mut posts, emb, truth) = generate_corpus(&cfg).unwrap();
    posts.sort_by_key(|p| (p.timestamp, p.post_id));
    let n = posts.len();
    let d = emb.dim;
    let split = chronological_split(&posts, (8, 1, 1)).unwrap();
    let role = |i: usize| split.role(posts[i].post_id).unwrap();
    let train_rows: Vec<usize> = (0..n).filter(|&i| role(i) == SplitRole::Train).collect();
    let val_rows: Vec<usize> = (0..n).filter(|&i| role(i) == SplitRole::Val).collect();
    let test_rows: Vec<usize> = (0..n).filter(|&i| role(i) == SplitRole::Test).collect();

    // raw-mean embeddings (stand-in for fused)
    let id_to_row: HashMap<u64, usize> = emb.row_index();
    let mut mean_emb = Tensor::zeros(n, d);
    for (i, p) in posts.iter().enumerate() {
        let r = id_to_row[&p.post_id];
        let mut acc = vec![0.0; d];
        for (present, t) in [
            (p.has_image, &emb.image),
            (p.has_text, &emb.text),
            (p.has_video, &emb.video),
        ] {
            if present {
                for (a, b) in acc.iter_mut().zip(t.row(r)) {
                    *a += b;
                }
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for a in acc.iter_mut() {
                *a /= norm;
            }
        } else {
            acc[0] = 1.0;
        }
        mean_emb.row_mut(i).copy_from_slice(&acc);
    }

    let (_, ctx) = assemble_context_features(&posts, &train_rows, 5, 10.0).unwrap();
    let hist = AuthorHistories::build(&posts);
    let mut indexes = BTreeMap::new();
    let plats: std::collections::BTreeSet<u32> = posts.iter().map(|p| p.platform_id).collect();
    for &pl in &plats {
        indexes.insert(pl, EmbeddingIndex::build(pl, &posts, &mean_emb, &hist).unwrap());
    }
    let aug =
        augment_context_features(&ctx, &posts, &mean_emb, &indexes, &train_rows, 10, 86400.0)
            .unwrap();

    // oracle target: phi* plus label noise (residual if alpha were perfect)
    let phi: HashMap<u64, f64> = truth
        .post_ids
        .iter()
        .copied()
        .zip(truth.phi_star.iter().copied())
        .collect();
    let target: Vec<f64> = posts
        .iter()
        .map(|p| (1.0 + p.y as f64).ln() - 0.0)
        .collect();
    let phi_t: Vec<f64> = posts.iter().map(|p| phi[&p.post_id]).collect();

    let gather = |rows: &[usize], m: &Tensor| {
        let mut t = Tensor::zeros(rows.len(), m.cols);
        for (k, &r) in rows.iter().enumerate() {
            t.row_mut(k).copy_from_slice(m.row(r));
        }
        t
    };
    let pick = |rows: &[usize], v: &[f64]| -> Vec<f64> { rows.iter().map(|&r| v[r]).collect() };

    for (label, tgt) in [("phi*+eps(y scale off)", &phi_t), ("ytilde", &target)] {
        let tr_x = gather(&train_rows, &aug.matrix);
        let va_x = gather(&val_rows, &aug.matrix);
        let tr_r = pick(&train_rows, tgt);
        let va_r = pick(&val_rows, tgt);
        let w = vec![1.0; tr_r.len()];
        let wv = vec![1.0; va_r.len()];
        let mut ecfg = ExposureConfig::default();
        if let Ok(e) = std::env::var("MINLEAF") {
            ecfg.min_samples_leaf = e.parse().unwrap();
        }
        let (ens, _) = fit_exposure(&tr_x, &tr_r, &w, &va_x, &va_r, &wv, &ecfg).unwrap();
        let te_x = gather(&test_rows, &aug.matrix);
        let pred: Vec<f64> = ens.predict(&te_x);
        let pt = pick(&test_rows, &phi_t);
        println!(
            "target {label:>22}: spearman(pred, phi* test) = {:.4}",
            spearman(&pred, &pt).unwrap().0
        );
        if label == "ytilde" {
            let mut order: Vec<usize> = (0..aug.names.len()).collect();
            order.sort_by(|&a, &b| ens.feature_gain[b].total_cmp(&ens.feature_gain[a]));
            for &j in order.iter().take(8) {
                println!("  gain {:<22} {:.1}", aug.names[j], ens.feature_gain[j]);
            }
        }
    }

    // ceiling check: oracle trend feature = time-local same-category mean of
    // phi* (+-18h window, self excluded, future allowed)
    {
        let mut oracle = vec![0.0; n];
        for i in 0..n {
            let (mut s, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i
                    && posts[j].category_id == posts[i].category_id
                    && (posts[j].timestamp - posts[i].timestamp).abs() < 64800
                {
                    s += phi_t[j];
                    c += 1.0;
                }
            }
            oracle[i] = if c > 0.0 { s / c } else { 0.0 };
        }
        let mut m = Tensor::zeros(n, aug.matrix.cols + 1);
        for i in 0..n {
            m.row_mut(i)[..aug.matrix.cols].copy_from_slice(aug.matrix.row(i));
            m.row_mut(i)[aug.matrix.cols] = oracle[i];
        }
        let tr_x = gather(&train_rows, &m);
        let va_x = gather(&val_rows, &m);
        let tr_r = pick(&train_rows, &target);
        let va_r = pick(&val_rows, &target);
        let w = vec![1.0; tr_r.len()];
        let wv = vec![1.0; va_r.len()];
        let mut ecfg = ExposureConfig::default();
        if let Ok(e) = std::env::var("MINLEAF") {
            ecfg.min_samples_leaf = e.parse().unwrap();
        }
        let (ens, _) = fit_exposure(&tr_x, &tr_r, &w, &va_x, &va_r, &wv, &ecfg).unwrap();
        let te_x = gather(&test_rows, &m);
        let pred: Vec<f64> = ens.predict(&te_x);
        let pt = pick(&test_rows, &phi_t);
        println!(
            "ytilde + oracle trend feature: spearman(pred, phi* test) = {:.4}  (oracle corr {:.4})",
            spearman(&pred, &pt).unwrap().0,
            spearman(&pick(&test_rows, &oracle), &pt).unwrap().0
        );
    }

    // fused-embedding neighbor quality (real pipeline content model)
    {
        let mut pcfg = PipelineConfig::default();
        pcfg.content.epochs = std::env::var("EPOCHS").map(|e| e.parse().unwrap()).unwrap_or(12);
        let out = run_experiment(&posts, &emb, None, Variant::Full, &pcfg, 7).unwrap();
        let params = out.content_params.as_ref().unwrap();
        let samples: Vec<ContentSample> = posts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = id_to_row[&p.post_id];
                ContentSample {
                    image: emb.image.row(r).to_vec(),
                    text: emb.text.row(r).to_vec(),
                    video: emb.video.row(r).to_vec(),
                    has_image: p.has_image,
                    has_text: p.has_text,
                    has_video: p.has_video,
                    target_std: 0.0,
                    weight: 1.0,
                    platform_id: p.platform_id,
                }
            })
            .collect();
        let fused = fused_embeddings(params, &samples);
        for (lab, embspace) in [("raw-mean", &mean_emb), ("fused", &fused)] {
            let mut idx2 = BTreeMap::new();
            for &pl in &plats {
                idx2.insert(pl, EmbeddingIndex::build(pl, &posts, embspace, &hist).unwrap());
            }
            let cat: HashMap<u64, u32> =
                posts.iter().map(|p| (p.post_id, p.category_id)).collect();
            let (mut dt, mut eff, mut same, mut cnt) = (0.0, 0.0, 0.0, 0.0);
            let mut ewy = Vec::new();
            let mut pstar = Vec::new();
            for &i in &test_rows {
                let p = &posts[i];
                let index = &idx2[&p.platform_id];
                let nbrs = index.query_past_topk(embspace.row(i), p.timestamp, 10);
                if nbrs.is_empty() {
                    continue;
                }
                let w = neighbor_weights(&nbrs, 86400.0).unwrap();
                let st = neighbor_stats(&nbrs, &w);
                dt += st[4] / 86400.0;
                eff += 1.0 / w.iter().map(|x| x * x).sum::<f64>();
                same += nbrs
                    .iter()
                    .zip(&w)
                    .map(|(nb, &wi)| if cat[&nb.post_id] == p.category_id { wi } else { 0.0 })
                    .sum::<f64>();
                cnt += 1.0;
                ewy.push(st[0]);
                pstar.push(phi[&p.post_id]);
            }
            println!(
                "{lab:>9}: dt {:.2}d eff {:.2} same-cat {:.3} corr(E_w[y],phi*) {:.4}",
                dt / cnt,
                eff / cnt,
                same / cnt,
                spearman(&ewy, &pstar).unwrap().0
            );
        }
    }

    // per-block correlations with phi* and the trend component on test
    let trend = omnitrend::synthgen::debug_trend_component(&cfg, &posts);
    for (j, name) in aug.names.iter().enumerate() {
        let col: Vec<f64> = test_rows.iter().map(|&r| aug.matrix.get(r, j)).collect();
        let pt = pick(&test_rows, &phi_t);
        let tt = pick(&test_rows, &trend);
        let (s, degen) = spearman(&col, &pt).unwrap();
        let (st, _) = spearman(&col, &tt).unwrap();
        if !degen && (s.abs() > 0.05 || st.abs() > 0.05) {
            println!("  corr({name}) phi* {s:.3}  trend {st:.3}");
        }
    }
}
