//! key=value config files shared by the model and the trainer. One file
//! carries both; keys are routed by name. The two key sets are disjoint.

use gpgmnet_core::model::ModelConfig;
use gpgmnet_core::train::TrainConfig;
use gpgmnet_core::{Error, Result};
use std::path::Path;

pub const TRAIN_KEYS: [&str; 9] = [
    "lr",
    "batch_size",
    "iterations",
    "seed",
    "checkpoint_every",
    "eval_every",
    "patch_lr",
    "pool_size",
    "grad_clip",
];

pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w = w.trim().parse::<usize>().map_err(|e| format!("bad width: {e}"))?;
    let h = h.trim().parse::<usize>().map_err(|e| format!("bad height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be nonzero".into());
    }
    Ok((w, h))
}

/// Lines of `key = value`; blank lines and `#` comments skipped.
pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Loads both configs from one file; training keys are recognized by name,
/// everything else goes to the model config (which rejects unknown keys).
pub fn load_configs(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    let mut mc = ModelConfig::default();
    let mut tc = TrainConfig::default();
    if let Some(path) = path {
        for (k, v) in read_kv_file(path)? {
            if TRAIN_KEYS.contains(&k.as_str()) {
                tc.apply_kv(&k, &v)?;
            } else {
                mc.apply_kv(&k, &v)?;
            }
        }
    }
    mc.validate()?;
    tc.validate()?;
    Ok((mc, tc))
}

/// Model config only; training keys are rejected.
pub fn load_model_config(path: Option<&Path>) -> Result<ModelConfig> {
    let mut mc = ModelConfig::default();
    if let Some(path) = path {
        for (k, v) in read_kv_file(path)? {
            mc.apply_kv(&k, &v)?;
        }
    }
    mc.validate()?;
    Ok(mc)
}

pub fn echo_model_config(mc: &ModelConfig) {
    println!("# model config");
    println!("scale = {}", mc.scale);
    println!("n_jmrm = {}", mc.n_jmrm);
    println!("channels = {}", mc.channels);
    println!("n_cccb = {}", mc.n_cccb);
    println!("n_sscb = {}", mc.n_sscb);
    println!("prior_dim_c = {}", mc.prior_dim_c);
    println!("prior_dim_s = {}", mc.prior_dim_s);
    println!("modulation = {}", mc.modulation);
    println!("ccp_guided_filter = {}", mc.ccp_guided_filter);
    println!("branch_mask = {}", mc.branch_mask);
    println!("gf_radius = {}", mc.gf_radius);
    println!("gf_eps = {}", mc.gf_eps);
    println!("cccb_width = {}", mc.cccb_width);
    println!("sscb_width = {}", mc.sscb_width);
    println!("leaky_slope = {}", mc.leaky_slope);
    println!("dropout_p = {}", mc.dropout_p);
    println!("drop_block_size = {}", mc.drop_block_size);
    println!("drop_block_keep = {}", mc.drop_block_keep);
    println!("bn_momentum = {}", mc.bn_momentum);
    println!("bn_eps = {}", mc.bn_eps);
    println!("in_eps = {}", mc.in_eps);
}

pub fn echo_train_config(tc: &TrainConfig) {
    println!("# train config");
    println!("lr = {}", tc.lr);
    println!("batch_size = {}", tc.batch_size);
    println!("iterations = {}", tc.iterations);
    println!("seed = {}", tc.seed);
    println!("checkpoint_every = {}", tc.checkpoint_every);
    println!("eval_every = {}", tc.eval_every);
    println!("patch_lr = {}", tc.patch_lr);
    println!("pool_size = {}", tc.pool_size);
    match tc.grad_clip {
        Some(c) => println!("grad_clip = {c}"),
        None => println!("grad_clip = none"),
    }
}
