// dev probe for sizing the ablation direction check; run with --ignored --nocapture
use gpgmnet_core::io::{generate_dataset, validate_manifest};
use gpgmnet_core::model::{param_count, BranchMask, ModelConfig, Modulation};
use gpgmnet_core::train::{heldout_psnr, load_pair, train, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn ablation_probe() {
    let dir = std::env::temp_dir().join("gpgmnet-ablation-probe");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest_path = generate_dataset(&dir, 3, 96, 96, 2, 2024).unwrap();
    let manifest = validate_manifest(&manifest_path).unwrap();
    let last = manifest.entries.last().unwrap();
    let heldout = load_pair(&last.lr_path, &last.hr_path).unwrap();

    let base = ModelConfig {
        scale: 2,
        channels: 16,
        cccb_width: 16,
        sscb_width: 16,
        n_jmrm: 1,
        dropout_p: 0.0,
        drop_block_keep: 1.0,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        lr: 2e-3,
        batch_size: 8,
        iterations: 500,
        seed: 7,
        checkpoint_every: 0,
        eval_every: 0,
        patch_lr: 40,
        pool_size: 8,
        grad_clip: None,
    };

    let variants: [(&str, BranchMask, Modulation); 4] = [
        ("both_gsmb", BranchMask::Both, Modulation::Gsmb),
        ("ccp_gsmb", BranchMask::CcpOnly, Modulation::Gsmb),
        ("ssp_gsmb", BranchMask::SspOnly, Modulation::Gsmb),
        ("both_gfm", BranchMask::Both, Modulation::Gfm),
    ];
    for (name, mask, modulation) in variants {
        let cfg = ModelConfig {
            branch_mask: mask,
            modulation,
            ..base.clone()
        };
        let t0 = Instant::now();
        let r = train(&cfg, &tcfg, &manifest, dir.join(name), None).unwrap();
        let db = heldout_psnr(&r.final_params, &cfg, &heldout).unwrap();
        println!(
            "{name}: params={} final_loss={:.4e} heldout={db:.3} dB ({:?})",
            param_count(&r.final_params),
            r.final_loss,
            t0.elapsed()
        );
    }
}
