// dev probe: initial full-batch loss per dataset seed; run with --ignored --nocapture
use gpgmnet_core::io::{generate_dataset, validate_manifest};
use gpgmnet_core::model::ModelConfig;
use gpgmnet_core::train::{train, TrainConfig};

#[test]
#[ignore]
fn seed_scan() {
    let cfg = ModelConfig {
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
        iterations: 1,
        seed: 7,
        checkpoint_every: 0,
        eval_every: 0,
        patch_lr: 40,
        pool_size: 8,
        grad_clip: None,
    };
    for ds_seed in [2024u64, 1, 7, 42, 123, 777, 31337, 90210] {
        let dir = std::env::temp_dir().join(format!("gpgmnet-seed-scan-{ds_seed}"));
        let _ = std::fs::remove_dir_all(&dir);
        let manifest_path = generate_dataset(&dir, 3, 96, 96, 2, ds_seed).unwrap();
        let manifest = validate_manifest(&manifest_path).unwrap();
        let r = train(&cfg, &tcfg, &manifest, dir.join("run"), None).unwrap();
        println!("dataset seed {ds_seed}: initial_loss={:.4e}", r.initial_loss);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
