//! Scratch probe for attack-efficacy tuning. Not part of the deliverable.

use pcollapse::attack::{pca_attack, AttackConfig};
use pcollapse::dataset::synthetic_shapes_corpus;
use pcollapse::diagnostics::{classify_collapse, posterior_stats, CollapseThresholds};
use pcollapse::vae::train::{train_toy_vae, VaeTrainConfig};

fn main() {
    let train = synthetic_shapes_corpus(2000, 32, 32, 3407).unwrap();
    let test = synthetic_shapes_corpus(12, 32, 32, 99).unwrap();

    let cfg = VaeTrainConfig { epochs: 6, kl_weight: 0.02, batch_size: 64, learning_rate: 1e-3, seed: 3407 };
    let vae = train_toy_vae(&train, &cfg).unwrap();
    println!("losses={:?}", vae.epoch_losses.iter().map(|x| (x * 10.0).round() / 10.0).collect::<Vec<_>>());

    // Posterior spread across images: is the encoder input-sensitive at all?
    let mut mu_norms = Vec::new();
    let mut sgs = Vec::new();
    for img in &test {
        let p = vae.encoder.encode(img).unwrap();
        let s = posterior_stats(&p).unwrap();
        mu_norms.push(s.mean_sq_mu);
        sgs.push(s.mean_sigma_sq);
    }
    println!("mean_sq_mu per image: {:?}", mu_norms.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("mean_sigma_sq per image: {:?}", sgs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    // Does mu differ between two different images (input sensitivity)?
    let pa = vae.encoder.encode(&test[0]).unwrap();
    let pb = vae.encoder.encode(&test[1]).unwrap();
    let diff: f64 = pa.mean.iter().zip(&pb.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pa.mean.len() as f64;
    println!("mean-sq diff of mu between two images: {diff:.5}");

    // Per-dim sigma^2 spread within one image (spatial variation).
    let vars: Vec<f64> = pa.log_variance.iter().map(|lv| lv.exp()).collect();
    let vmin = vars.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = vars.iter().cloned().fold(0.0, f64::max);
    println!("sigma^2 within one image: min {vmin:.4} max {vmax:.4}");

    // Recon quality.
    let mut psnrs = Vec::new();
    for img in &test {
        let r = pcollapse::vae::reconstruct(&vae.encoder, &vae.decoder, img, pcollapse::vae::ReconstructionMode::Mean, 0).unwrap();
        psnrs.push(pcollapse::metrics::psnr(img, &r).unwrap());
    }
    println!("clean recon psnr: {:?}", psnrs.iter().map(|x| (x * 10.0).round() / 10.0).collect::<Vec<_>>());

    // Attack check over the test set.
    let mut mu_r = Vec::new();
    let mut sg_r = Vec::new();
    let mut adv_psnr = Vec::new();
    for img in &test {
        let before = posterior_stats(&vae.encoder.encode(img).unwrap()).unwrap();
        let res = pca_attack(img, &vae.encoder, &AttackConfig::pca_minus()).unwrap();
        let after = posterior_stats(&res.posterior_after).unwrap();
        let v = classify_collapse(&before, &after, CollapseThresholds::default());
        mu_r.push((v.mu_ratio * 1000.0).round() / 1000.0);
        sg_r.push((v.sigma_ratio * 1000.0).round() / 1000.0);
        let r = pcollapse::vae::reconstruct(&vae.encoder, &vae.decoder, &res.adversarial, pcollapse::vae::ReconstructionMode::Mean, 0).unwrap();
        adv_psnr.push((pcollapse::metrics::psnr(img, &r).unwrap() * 10.0).round() / 10.0);
    }
    println!("PCA- mu ratios: {mu_r:?}");
    println!("PCA- sigma ratios: {sg_r:?}");
    println!("adv recon psnr: {adv_psnr:?}");
}
