//! Whole-network assembly: priors extraction, the modulated residual
//! stack, upsampling, and the bicubic skip connection.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::blocks::*;
use super::params::{GradStore, ParamStore};
use super::{ModelConfig, Modulation};
use crate::error::{Error, Result};
use crate::image_ops::{bicubic_resize, guided_filter};
use crate::tensor::{
    add, concat_channels, concat_channels_backward, drop_block, dropout, global_avg_pool,
    global_avg_pool_backward, mask_backward, BnStats, Mode, Scalar, Shape, Tensor,
};

static GPEM_EVALS: AtomicUsize = AtomicUsize::new(0);

/// Number of priors-extraction evaluations since process start. Test
/// instrumentation for the one-vector-per-image contract.
pub fn gpem_eval_count() -> usize {
    GPEM_EVALS.load(Ordering::Relaxed)
}

fn err_too_small(op: &'static str, need: usize, h: usize, w: usize) -> Error {
    Error::shape(
        op,
        format!("input {h}x{w} too small for the pooling chain, needs >= {need}"),
    )
}

// ----------------------------------------------------------- CCP branch

#[derive(Debug)]
pub struct CcpCache<T: Scalar> {
    cccb: Vec<CccbCache<T>>,
    drop_mult: Option<Tensor<T>>,
    dropped: Tensor<T>,
    conv_out_shape: Shape,
}

/// Color-prior branch: guided filter (optional), compression chain,
/// dropout, 1x1 conv, global average pool.
pub fn ccp_branch<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, CcpCache<T>)> {
    let [_, c, h, w] = image.shape();
    if c != 3 {
        return Err(Error::shape("ccp_branch", format!("need 3 channels, got {c}")));
    }
    let need = 1usize << cfg.n_cccb;
    if h < need || w < need {
        return Err(err_too_small("ccp_branch", need, h, w));
    }
    let mut x = if cfg.ccp_guided_filter {
        guided_filter(image, cfg.filter_config())?
    } else {
        image.clone()
    };
    let mut chain = Vec::with_capacity(cfg.n_cccb);
    for i in 0..cfg.n_cccb {
        let (out, cache) = cccb_forward(
            x,
            p,
            &format!("gpem.ccp.cccb{i}"),
            cfg.leaky_slope,
            cfg.in_eps,
        )?;
        chain.push(cache);
        x = out;
    }
    let (dropped, drop_mult) = dropout(&x, cfg.dropout_p, mode, rng)?;
    let conv_out = conv_fwd(&dropped, p, "gpem.ccp.final", 1, 0)?;
    let v_c = global_avg_pool(&conv_out)?;
    let cache = CcpCache {
        cccb: chain,
        drop_mult,
        dropped,
        conv_out_shape: conv_out.shape(),
    };
    Ok((v_c, cache))
}

pub fn ccp_backward<T: Scalar>(
    cache: &CcpCache<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    d_vc: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<()> {
    let d_conv_out = global_avg_pool_backward(cache.conv_out_shape, d_vc)?;
    let mut d = conv_bwd(&cache.dropped, p, "gpem.ccp.final", 1, 0, &d_conv_out, grads)?;
    if let Some(mult) = &cache.drop_mult {
        d = mask_backward(mult, &d)?;
    }
    for (i, block) in cache.cccb.iter().enumerate().rev() {
        d = cccb_backward(
            block,
            p,
            &format!("gpem.ccp.cccb{i}"),
            cfg.leaky_slope,
            cfg.in_eps,
            &d,
            grads,
        )?;
    }
    // the chain starts at the (filtered) image: nothing learnable remains
    Ok(())
}

// ----------------------------------------------------------- SSP branch

#[derive(Debug)]
pub struct SspCache<T: Scalar> {
    sscb: Vec<SscbCache<T>>,
    db_mult: Option<Tensor<T>>,
    db_out: Tensor<T>,
    conv_out_shape: Shape,
}

/// Structure-prior branch: stride-2 compression chain, DropBlock, 3x3
/// conv, global average pool. Returns refreshed BN stats in train mode.
pub fn ssp_branch<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, SspCache<T>, Vec<(String, BnStats<T>)>)> {
    let [_, c, h, w] = image.shape();
    if c != 3 {
        return Err(Error::shape("ssp_branch", format!("need 3 channels, got {c}")));
    }
    let need = 1usize << cfg.n_sscb;
    if h < need || w < need {
        return Err(err_too_small("ssp_branch", need, h, w));
    }
    let mut x = image.clone();
    let mut chain = Vec::with_capacity(cfg.n_sscb);
    let mut bn_updates = Vec::new();
    for i in 0..cfg.n_sscb {
        let prefix = format!("gpem.ssp.sscb{i}");
        let (out, cache, stats) =
            sscb_forward(x, p, &prefix, mode, cfg.bn_momentum, cfg.bn_eps)?;
        if let Some(s) = stats {
            bn_updates.push((format!("{prefix}.bn"), s));
        }
        chain.push(cache);
        x = out;
    }
    let db = drop_block(&x, cfg.drop_block_size, cfg.drop_block_keep, mode, rng)?;
    let conv_out = conv_fwd(&db.out, p, "gpem.ssp.final", 1, 1)?;
    let v_s = global_avg_pool(&conv_out)?;
    let cache = SspCache {
        sscb: chain,
        db_mult: db.mult,
        db_out: db.out,
        conv_out_shape: conv_out.shape(),
    };
    Ok((v_s, cache, bn_updates))
}

pub fn ssp_backward<T: Scalar>(
    cache: &SspCache<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    d_vs: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<()> {
    let d_conv_out = global_avg_pool_backward(cache.conv_out_shape, d_vs)?;
    let mut d = conv_bwd(&cache.db_out, p, "gpem.ssp.final", 1, 1, &d_conv_out, grads)?;
    if let Some(mult) = &cache.db_mult {
        d = mask_backward(mult, &d)?;
    }
    for (i, block) in cache.sscb.iter().enumerate().rev() {
        d = sscb_backward(block, p, &format!("gpem.ssp.sscb{i}"), cfg.bn_eps, &d, grads)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- GPEM

#[derive(Debug)]
pub struct GpemCache<T: Scalar> {
    ccp: Option<CcpCache<T>>,
    ssp: Option<SspCache<T>>,
}

/// Global priors: concatenation of the color and structure vectors. A
/// masked branch contributes zeros so the vector length never changes.
pub fn gpem_forward<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, GpemCache<T>, Vec<(String, BnStats<T>)>)> {
    GPEM_EVALS.fetch_add(1, Ordering::Relaxed);
    let n = image.n();
    let mut bn_updates = Vec::new();
    let (v_c, ccp) = if cfg.branch_mask.ccp_active() {
        let (v, cache) = ccp_branch(image, p, cfg, mode, rng)?;
        (v, Some(cache))
    } else {
        (Tensor::zeros([n, cfg.prior_dim_c, 1, 1]), None)
    };
    let (v_s, ssp) = if cfg.branch_mask.ssp_active() {
        let (v, cache, updates) = ssp_branch(image, p, cfg, mode, rng)?;
        bn_updates.extend(updates);
        (v, Some(cache))
    } else {
        (Tensor::zeros([n, cfg.prior_dim_s, 1, 1]), None)
    };
    let v_g = concat_channels(&v_c, &v_s)?;
    v_g.check_finite("gpem_forward", "priors vector")?;
    Ok((v_g, GpemCache { ccp, ssp }, bn_updates))
}

pub fn gpem_backward<T: Scalar>(
    cache: &GpemCache<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    d_vg: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<()> {
    let (d_vc, d_vs) = concat_channels_backward(d_vg, cfg.prior_dim_c)?;
    if let Some(ccp) = &cache.ccp {
        ccp_backward(ccp, p, cfg, &d_vc, grads)?;
    }
    if let Some(ssp) = &cache.ssp {
        ssp_backward(ssp, p, cfg, &d_vs, grads)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- JMRM

#[derive(Debug)]
enum ModCache<T: Scalar> {
    Gsmb {
        spcb: SpcbCache<T>,
        gsmb: GsmbCache<T>,
    },
    Gfm(GfmCache<T>),
    Sft(SftCache<T>),
}

#[derive(Debug)]
pub struct JmrmCache<T: Scalar> {
    bb: BaseBlockCache<T>,
    modc: ModCache<T>,
}

/// One residual modulation module. `context` carries the priors vector
/// (GSMB/GFM) or the condition maps (SFT).
pub fn jmrm_forward<T: Scalar>(
    f: &Tensor<T>,
    context: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    index: usize,
) -> Result<(Tensor<T>, JmrmCache<T>)> {
    let (bb_out, bb) = base_block_forward(f.clone(), p, &format!("jmrm{index}.bb"))?;
    let (modulated, modc) = match cfg.modulation {
        Modulation::Gsmb => {
            let (s_j, spcb) = spcb_forward(bb_out.clone(), p, &format!("jmrm{index}.spcb"))?;
            let (out, gsmb) =
                gsmb_forward(bb_out, context, &s_j, p, &format!("jmrm{index}.gsmb"))?;
            (out, ModCache::Gsmb { spcb, gsmb })
        }
        Modulation::Gfm => {
            let (out, c) = gfm_forward(bb_out, context, p, &format!("jmrm{index}.gfm"))?;
            (out, ModCache::Gfm(c))
        }
        Modulation::Sft => {
            let (out, c) = sft_forward(bb_out, context, p, &format!("jmrm{index}.sft"))?;
            (out, ModCache::Sft(c))
        }
    };
    let out = add(&modulated, f)?;
    Ok((out, JmrmCache { bb, modc }))
}

/// Returns `(d_feature_in, d_context)`.
pub fn jmrm_backward<T: Scalar>(
    cache: &JmrmCache<T>,
    context: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    index: usize,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d_bb_out, d_context) = match (&cache.modc, cfg.modulation) {
        (ModCache::Gsmb { spcb, gsmb }, Modulation::Gsmb) => {
            let (d_f, d_vg, d_sj) =
                gsmb_backward(gsmb, p, &format!("jmrm{index}.gsmb"), dout, grads)?;
            let d_from_spcb = spcb_backward(spcb, p, &format!("jmrm{index}.spcb"), &d_sj, grads)?;
            (add(&d_f, &d_from_spcb)?, d_vg)
        }
        (ModCache::Gfm(c), Modulation::Gfm) => {
            let (d_f, d_vg) = gfm_backward(c, p, &format!("jmrm{index}.gfm"), dout, grads)?;
            (d_f, d_vg)
        }
        (ModCache::Sft(c), Modulation::Sft) => {
            let (d_f, d_cond) =
                sft_backward(c, context, p, &format!("jmrm{index}.sft"), dout, grads)?;
            (d_f, d_cond)
        }
        _ => return Err(Error::arg("jmrm_backward", "cache does not match config")),
    };
    let d_f_in = base_block_backward(&cache.bb, p, &format!("jmrm{index}.bb"), &d_bb_out, grads)?;
    Ok((add(&d_f_in, dout)?, d_context))
}

// ------------------------------------------------------------- network

#[derive(Debug)]
pub struct NetCache<T: Scalar> {
    input: Tensor<T>,
    gpem: Option<GpemCache<T>>,
    sft_head: Option<SftHeadCache<T>>,
    context: Tensor<T>,
    jmrm: Vec<JmrmCache<T>>,
    cb_in: Tensor<T>,
    up: Vec<UpStageCache<T>>,
    cl_in: Tensor<T>,
}

#[derive(Debug)]
pub struct NetForward<T: Scalar> {
    pub output: Tensor<T>,
    pub cache: NetCache<T>,
    /// Refreshed batch-norm running statistics keyed by norm prefix;
    /// apply with [`apply_bn_updates`] after a train-mode pass.
    pub bn_updates: Vec<(String, BnStats<T>)>,
}

/// Full forward pass. Input is a normalized-YUV `[n, 3, h, w]` tensor in
/// [0, 1]; output is `[n, 3, h*scale, w*scale]` in the same space.
pub fn gpgmnet_forward<T: Scalar, R: Rng>(
    input: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<NetForward<T>> {
    cfg.validate()?;
    let [_, c, h, w] = input.shape();
    if c != 3 {
        return Err(Error::shape(
            "gpgmnet_forward",
            format!("expected 3 input channels, got {c}"),
        ));
    }
    let min = cfg.min_input_side();
    if cfg.modulation != Modulation::Sft && (h < min || w < min) {
        return Err(err_too_small("gpgmnet_forward", min, h, w));
    }

    let mut bn_updates = Vec::new();
    let (context, gpem, sft_head) = if cfg.modulation == Modulation::Sft {
        let (cond, head) = sft_head_forward(input, p)?;
        (cond, None, Some(head))
    } else {
        let (v_g, cache, updates) = gpem_forward(input, p, cfg, mode, rng)?;
        bn_updates.extend(updates);
        (v_g, Some(cache), None)
    };

    let mut f = conv_fwd(input, p, "cf", 1, 1)?;
    let mut jmrm = Vec::with_capacity(cfg.n_jmrm);
    for j in 0..cfg.n_jmrm {
        let (out, cache) = jmrm_forward(&f, &context, p, cfg, j)?;
        jmrm.push(cache);
        f = out;
    }
    let cb_out = conv_fwd(&f, p, "cb", 1, 1)?;
    let (cl_in, up) = upsampler_forward(cb_out, p, cfg.scale)?;
    let cl_out = conv_fwd(&cl_in, p, "cl", 1, 1)?;
    let skip = bicubic_resize(input, cfg.scale, 1)?;
    let output = add(&cl_out, &skip)?;
    output.check_finite("gpgmnet_forward", "network output")?;

    Ok(NetForward {
        output,
        cache: NetCache {
            input: input.clone(),
            gpem,
            sft_head,
            context,
            jmrm,
            cb_in: f,
            up,
            cl_in,
        },
        bn_updates,
    })
}

/// Backward through a train-mode cache; returns parameter gradients.
pub fn gpgmnet_backward<T: Scalar>(
    cache: &NetCache<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    dout: &Tensor<T>,
) -> Result<GradStore<T>> {
    let mut grads = GradStore::new();
    // the bicubic skip has no parameters, so dout feeds the conv path as is
    let d_cl_in = conv_bwd(&cache.cl_in, p, "cl", 1, 1, dout, &mut grads)?;
    let d_cb_out = upsampler_backward(&cache.up, p, &d_cl_in, &mut grads)?;
    let mut d_f = conv_bwd(&cache.cb_in, p, "cb", 1, 1, &d_cb_out, &mut grads)?;

    let mut d_context: Option<Tensor<T>> = None;
    for (j, block) in cache.jmrm.iter().enumerate().rev() {
        let (d_in, d_ctx) =
            jmrm_backward(block, &cache.context, p, cfg, j, &d_f, &mut grads)?;
        d_f = d_in;
        d_context = Some(match d_context {
            None => d_ctx,
            Some(acc) => add(&acc, &d_ctx)?,
        });
    }

    if let Some(d_ctx) = d_context {
        match (&cache.gpem, &cache.sft_head) {
            (Some(gpem), None) => gpem_backward(gpem, p, cfg, &d_ctx, &mut grads)?,
            (None, Some(head)) => {
                sft_head_backward(head, p, &d_ctx, &mut grads)?;
            }
            _ => return Err(Error::arg("gpgmnet_backward", "cache does not match config")),
        }
    }

    conv_bwd(&cache.input, p, "cf", 1, 1, &d_f, &mut grads)?;
    Ok(grads)
}

/// Write refreshed running statistics back into the store.
pub fn apply_bn_updates<T: Scalar>(
    p: &mut ParamStore<T>,
    updates: &[(String, BnStats<T>)],
) -> Result<()> {
    for (prefix, stats) in updates {
        *p.get_mut(&format!("{prefix}.running_mean"))? = stats.mean.clone();
        *p.get_mut(&format!("{prefix}.running_var"))? = stats.var.clone();
    }
    Ok(())
}

/// Deterministic eval-mode inference; no RNG is consumed.
pub fn gpgmnet_infer<T: Scalar>(
    input: &Tensor<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    // eval mode draws nothing from the RNG; any source would do
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    Ok(gpgmnet_forward(input, p, cfg, Mode::Eval, &mut rng)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, param_count, zero_params, BranchMask};
    use crate::tensor::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            channels: 8,
            cccb_width: 6,
            sscb_width: 6,
            n_cccb: 2,
            n_sscb: 2,
            n_jmrm: 2,
            prior_dim_c: 3,
            prior_dim_s: 3,
            scale: 2,
            ..ModelConfig::default()
        }
    }

    fn rand_img(shape: Shape, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_tensor(shape, 0.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_params_reduce_to_bicubic() {
        let cfg = tiny_cfg();
        let p = zero_params(&cfg).unwrap();
        let img = rand_img([1, 3, 12, 12], 1);
        let out = gpgmnet_infer(&img, &p, &cfg).unwrap();
        let bic = bicubic_resize(&img, 2, 1).unwrap();
        assert_eq!(out, bic, "residual identity must be bit-exact");
    }

    #[test]
    fn priors_evaluated_once_regardless_of_depth() {
        let cfg = ModelConfig {
            n_jmrm: 4,
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(&cfg, &mut rng).unwrap();
        let img = rand_img([1, 3, 8, 8], 3);
        let before = gpem_eval_count();
        gpgmnet_infer(&img, &p, &cfg).unwrap();
        assert_eq!(gpem_eval_count() - before, 1);
    }

    #[test]
    fn eval_deterministic_and_shapes() {
        for scale in [2usize, 4] {
            let cfg = ModelConfig {
                scale,
                ..tiny_cfg()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let p = init_params(&cfg, &mut rng).unwrap();
            let img = rand_img([2, 3, 8, 12], 5);
            let a = gpgmnet_infer(&img, &p, &cfg).unwrap();
            let b = gpgmnet_infer(&img, &p, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), [2, 3, 8 * scale, 12 * scale]);
        }
    }

    #[test]
    fn masked_branch_zeroes_its_half() {
        let cfg = ModelConfig {
            branch_mask: BranchMask::CcpOnly,
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = init_params(&cfg, &mut rng).unwrap().cast::<f64>();
        let img = rand_img([1, 3, 8, 8], 7).cast::<f64>();
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let (vg, _, _) = gpem_forward(&img, &p, &cfg, Mode::Eval, &mut r).unwrap();
        assert_eq!(vg.shape(), [1, 6, 1, 1]);
        assert!(vg.data()[3..].iter().all(|&v| v == 0.0));
        assert!(vg.data()[..3].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = init_params(&cfg, &mut rng).unwrap();
        let img = rand_img([2, 3, 8, 8], 10);
        let before = p.get("gpem.ssp.sscb0.bn.running_var").unwrap().clone();
        let mut mrng = ChaCha8Rng::seed_from_u64(11);
        let fwd = gpgmnet_forward(&img, &p, &cfg, Mode::Train, &mut mrng).unwrap();
        assert!(!fwd.bn_updates.is_empty());
        apply_bn_updates(&mut p, &fwd.bn_updates).unwrap();
        let after = p.get("gpem.ssp.sscb0.bn.running_var").unwrap();
        assert_ne!(&before, after);
    }

    #[test]
    fn backward_covers_every_learnable_param() {
        for modulation in [Modulation::Gsmb, Modulation::Gfm, Modulation::Sft] {
            let cfg = ModelConfig {
                modulation,
                ..tiny_cfg()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let p = init_params(&cfg, &mut rng).unwrap();
            let img = rand_img([1, 3, 8, 8], 13);
            let mut mrng = ChaCha8Rng::seed_from_u64(14);
            let fwd = gpgmnet_forward(&img, &p, &cfg, Mode::Train, &mut mrng).unwrap();
            let dout = Tensor::filled(fwd.output.shape(), 1.0);
            let grads = gpgmnet_backward(&fwd.cache, &p, &cfg, &dout).unwrap();
            for (name, t) in p.iter() {
                if crate::model::is_buffer_name(name) {
                    continue;
                }
                let g = grads
                    .get(name)
                    .unwrap_or_else(|| panic!("{modulation:?}: no grad for {name}"));
                assert_eq!(g.shape(), t.shape(), "{name}");
            }
        }
    }

    #[test]
    fn full_net_grad_check_f64() {
        // all params of a snipped-down net, train mode, fixed masks
        let cfg = ModelConfig {
            channels: 4,
            cccb_width: 3,
            sscb_width: 3,
            n_cccb: 1,
            n_sscb: 1,
            n_jmrm: 1,
            prior_dim_c: 2,
            prior_dim_s: 2,
            scale: 2,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut p = init_params(&cfg, &mut rng).unwrap().cast::<f64>();
        // the reconstruction conv inits to zero; give it weight so the check
        // exercises gradient flow through every upstream layer
        let cl_shape = p.get("cl.weight").unwrap().shape();
        p.insert(
            "cl.weight",
            crate::tensor::gradcheck::random_tensor::<f64>(cl_shape, -0.3, 0.3, &mut rng),
        );
        let img = rand_img([1, 3, 6, 6], 16).cast::<f64>();
        let names: Vec<String> = p
            .names()
            .filter(|n| !crate::model::is_buffer_name(n))
            .cloned()
            .collect();
        let inputs: Vec<Tensor<f64>> =
            names.iter().map(|n| p.get(n).unwrap().clone()).collect();
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (n, t) in names.iter().zip(tensors) {
                q.insert(n.clone(), t.clone());
            }
            q
        };
        let report = crate::tensor::gradcheck::grad_check(
            |ins| {
                let mut mrng = ChaCha8Rng::seed_from_u64(77);
                Ok(gpgmnet_forward(&img, &rebuild(ins), &cfg, Mode::Train, &mut mrng)?.output)
            },
            |ins, dout| {
                let q = rebuild(ins);
                let mut mrng = ChaCha8Rng::seed_from_u64(77);
                let fwd = gpgmnet_forward(&img, &q, &cfg, Mode::Train, &mut mrng)?;
                let grads = gpgmnet_backward(&fwd.cache, &q, &cfg, dout)?;
                Ok(names
                    .iter()
                    .map(|n| grads.get(n).expect("grad").clone())
                    .collect())
            },
            &inputs,
            1e-5,
            1e-3,
            Some(12),
            17,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn param_count_smoke_for_tiny() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let p = init_params(&cfg, &mut rng).unwrap();
        assert!(param_count(&p) > 0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(6))]
        #[test]
        fn shape_contract_holds(h in 8usize..20, w in 8usize..20, scale_idx in 0usize..2) {
            let scale = [2usize, 4][scale_idx];
            let cfg = ModelConfig { scale, ..tiny_cfg() };
            let mut rng = ChaCha8Rng::seed_from_u64(19);
            let p = init_params(&cfg, &mut rng).unwrap();
            let img = rand_img([1, 3, h, w], 20);
            let out = gpgmnet_infer(&img, &p, &cfg).unwrap();
            proptest::prop_assert_eq!(out.shape(), [1, 3, h * scale, w * scale]);
        }
    }
}
