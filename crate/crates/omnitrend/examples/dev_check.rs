//! Temporary development harness.

use std::time::Instant;

use omnitrend::corpus::SplitRole;
use omnitrend::pipeline::{run_experiment, spearman, PipelineConfig, Variant};
use omnitrend::synthgen::{generate_corpus, GeneratorConfig};

fn main() {
    let gen_cfg = GeneratorConfig::default_desk();
    let t0 = Instant::now();
    let (posts, emb, truth) = generate_corpus(&gen_cfg).unwrap();
    println!("gen: {:.2?}", t0.elapsed());

    let mut cfg = PipelineConfig::default();
    if let Ok(e) = std::env::var("EPOCHS") {
        cfg.content.epochs = e.parse().unwrap();
    }
    if let Ok(e) = std::env::var("HIDDEN") {
        cfg.content.mlp_hidden = e.parse().unwrap();
    }
    if let Ok(e) = std::env::var("MINLEAF") {
        cfg.exposure.min_samples_leaf = e.parse().unwrap();
    }
    if let Ok(e) = std::env::var("DEPTH") {
        cfg.exposure.max_depth = e.parse().unwrap();
    }
    if std::env::var_os("VARIANTS").is_some() {
        let truth_phi: std::collections::HashMap<u64, f64> = truth
            .post_ids
            .iter()
            .copied()
            .zip(truth.phi_star.iter().copied())
            .collect();
        for v in [
            Variant::Full,
            Variant::NoContext,
            Variant::NoContent,
            Variant::NoRetrieval,
            Variant::NoContextFeatures,
        ] {
            let t0 = Instant::now();
            let mut srcs = Vec::new();
            let mut recs = Vec::new();
            for seed in [7u64, 8, 9] {
                let o = run_experiment(&posts, &emb, None, v, &cfg, seed).unwrap();
                let test: Vec<usize> = (0..o.post_ids.len())
                    .filter(|&i| o.roles[i] == SplitRole::Test)
                    .collect();
                let p_hat: Vec<f64> = test.iter().map(|&i| o.phi[i]).collect();
                let p_star: Vec<f64> =
                    test.iter().map(|&i| truth_phi[&o.post_ids[i]]).collect();
                srcs.push(o.report.splits["test"].src);
                recs.push(spearman(&p_hat, &p_star).unwrap().0);
                if seed == 7 {
                    let trend_by_id: std::collections::HashMap<u64, f64> = {
                        let t = omnitrend::synthgen::debug_trend_component(&gen_cfg, &posts);
                        posts.iter().map(|p| p.post_id).zip(t).collect()
                    };
                    let tr: Vec<f64> =
                        test.iter().map(|&i| trend_by_id[&o.post_ids[i]]).collect();
                    print!("    [trend rec {:.4}] ", spearman(&p_hat, &tr).unwrap().0);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "{:<22} src {:.4} [{:.4} {:.4} {:.4}]  phi rec {:.4}  ({:.2?})",
                v.id(),
                mean(&srcs),
                srcs[0],
                srcs[1],
                srcs[2],
                mean(&recs),
                t0.elapsed()
            );
        }
        return;
    }

    let t0 = Instant::now();
    let out = run_experiment(&posts, &emb, None, Variant::Full, &cfg, 7).unwrap();
    println!("full pipeline: {:.2?}", t0.elapsed());
    for (k, m) in &out.report.splits {
        println!("{k}: src {:.4} mse {:.4}", m.src, m.mse);
    }
    for (k, v) in &out.report.diagnostics {
        println!("{k}: {v:.4}");
    }

    // recovery vs ground truth on test
    let truth_alpha: std::collections::HashMap<u64, f64> = truth
        .post_ids
        .iter()
        .copied()
        .zip(truth.alpha_star.iter().copied())
        .collect();
    let truth_phi: std::collections::HashMap<u64, f64> = truth
        .post_ids
        .iter()
        .copied()
        .zip(truth.phi_star.iter().copied())
        .collect();
    let test: Vec<usize> = (0..out.post_ids.len())
        .filter(|&i| out.roles[i] == SplitRole::Test)
        .collect();
    let a_hat: Vec<f64> = test.iter().map(|&i| out.alpha[i]).collect();
    let a_star: Vec<f64> = test.iter().map(|&i| truth_alpha[&out.post_ids[i]]).collect();
    let p_hat: Vec<f64> = test.iter().map(|&i| out.phi[i]).collect();
    let p_star: Vec<f64> = test.iter().map(|&i| truth_phi[&out.post_ids[i]]).collect();
    println!("spearman(alpha_hat, alpha_star) = {:.4}", spearman(&a_hat, &a_star).unwrap().0);
    println!("spearman(phi_hat, phi_star)     = {:.4}", spearman(&p_hat, &p_star).unwrap().0);
    println!("spearman(alpha_hat, phi_hat)    = {:.4}", spearman(&a_hat, &p_hat).unwrap().0);
    println!("spearman(alpha_hat, phi_star)   = {:.4}", spearman(&a_hat, &p_star).unwrap().0);
    println!("spearman(alpha_star, phi_star)  = {:.4}", spearman(&a_star, &p_star).unwrap().0);
}
